import os
from dataclasses import dataclass, fields
from functools import lru_cache

import environs

from utils import resource_path

ENV_PREFIX = "PENALTY_FLOW_"


@dataclass(frozen=True)
class Tolerances:
    """Every numerical tolerance used across the package, in one place."""

    graph_identity: float = 1e-10
    firm_nonexpansive: float = 1e-10
    cocoercive_margin: float = 1e-10
    psd: float = 1e-10
    orthonormal: float = 1e-12
    inner_residual: float = 1e-12
    inner_max_iter: int = 100_000
    lyapunov_relative: float = 1e-8
    euler_identity: float = 1e-15
    oracle_tol: float = 1e-12
    oracle_max_iter: int = 10_000_000
    grid_refinement: float = 1e-6
    max_nodes: int = 1_000_000


class Settings:
    def __init__(self):
        env = environs.Env()
        env_path = resource_path(".env")
        if os.path.exists(env_path):
            env.read_env(env_path, recurse=False)

        with env.prefixed(ENV_PREFIX):
            self.output_dir = env.str("OUTPUT_DIR", "output")
            self.log_dir = env.str("LOG_DIR", "logs")
            self.log_level = env.log_level("LOG_LEVEL", "INFO")
            self.db_url = env.str(
                "DB_URL", f"sqlite:///{os.path.join(self.output_dir, 'runs.db')}"
            )

            overrides = {}
            for field in fields(Tolerances):
                name = f"TOL_{field.name.upper()}"
                if field.type in (int, "int"):
                    value = env.int(name, None)
                else:
                    value = env.float(name, None)
                if value is not None:
                    overrides[field.name] = value
            self.tolerances = Tolerances(**overrides)

    def resolve_output(self, path, output_dir=None):
        """Relative output paths land under `output_dir`, or the configured output directory."""
        if os.path.isabs(path):
            return path
        return os.path.join(output_dir or self.output_dir, path)


@lru_cache(maxsize=1)
def get_settings():
    return Settings()


def get_tolerances():
    return get_settings().tolerances


def reset_settings():
    get_settings.cache_clear()
