import os
import sys

from cx_Freeze import Executable, setup

# cx_Freeze's module finder recurses deeply through numpy/scipy imports
sys.setrecursionlimit(5000)


# Ship every sample config next to the executable
def get_config_files():
    config_files = []
    for root, dirs, files in os.walk("configs"):
        for file in files:
            if file.endswith(".json"):
                source = os.path.join(root, file)
                config_files.append((source, source))
    return config_files


# Dependencies are automatically detected, but it might need fine tuning.
build_exe_options = {
    "packages": [
        "os",
        "sys",
        "numpy",
        "scipy",
        "sqlalchemy",
        "environs",
        "json",
        "csv",
        "logging",
    ],
    "excludes": ["tkinter", "pytest"],
    "include_files": [*get_config_files(), ".env.example"],
    "includes": [
        "operators",
        "schedules",
        "dynamics",
        "discrete",
        "diagnostics",
        "problems",
        "run_config",
    ],
    "build_exe": "dist",  # Output directory
    "optimize": 2,
}

setup(
    name="penalty-flow",
    version="0.1",
    description="Penalty-term forward-backward dynamics for constrained monotone inclusions",
    options={"build_exe": build_exe_options},
    executables=[
        Executable(
            "main.py",
            base=None,
            target_name="penalty-flow",
        )
    ],
)
