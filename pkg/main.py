import argparse
import json
import logging
import sys
import time

import numpy as np

from alchemy import delete_runs, get_run, get_runs_for_problem, init_db, record_run
from diagnostics import (
    TrajectoryTooShortError,
    build_report,
    check_lemma_fej1,
    check_lemma_fej4,
    check_strong_monotone,
    convergence_report,
)
from discrete import compare_discrete, run_discrete, write_discrete_csv
from dynamics import Trajectory, integrate, read_trajectory_csv, write_trajectory_csv
from logging_setup import enable_console, get_logger
from problems import GraphSampleError, sample_graph_points
from run_config import ConfigError, load_config, resolve_problem, resolve_x0
from schedules import classify
from settings import get_settings
from utils import config_digest, dump_json, format_duration

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_HYPOTHESIS = 2
EXIT_UNVERIFIED = 3

# domain errors are ValueError/RuntimeError subclasses; unknown builtins raise KeyError
HARD_ERRORS = (ValueError, RuntimeError, KeyError, OSError)

GRAPH_SAMPLE_SEED = 20240101
GRAPH_SAMPLE_SIZE = 64


def build_parser():
    parser = argparse.ArgumentParser(
        prog="penalty-flow",
        description="Penalty-term forward-backward dynamics: integrate, check hypotheses, verify Lyapunov inequalities.",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="mirror the log to stderr")
    parser.add_argument("--output-dir", help="directory for relative output paths")
    parser.add_argument("--no-archive", action="store_true", help="do not record the run in the archive")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="integrate and write trajectory CSV plus report JSON")
    run.add_argument("config")

    check = sub.add_parser("check", help="print the hypothesis report")
    check.add_argument("config")

    compare = sub.add_parser("compare-discrete", help="unit-step Euler against the discrete scheme")
    compare.add_argument("config")
    compare.add_argument(
        "--perturb-sampling",
        action="store_true",
        help="shift the discrete schedule sampling by one (test mode)",
    )

    diagnose = sub.add_parser("diagnose", help="re-analyze an existing trajectory CSV")
    diagnose.add_argument("config")
    diagnose.add_argument("--trajectory", help="trajectory CSV (defaults to outputs.trajectory_csv)")

    history = sub.add_parser("history", help="list archived runs of a problem")
    history.add_argument("problem", nargs="?", help="problem id, e.g. P1_strongly_monotone")
    history.add_argument("--run-id", type=int, help="show a single archived run")
    history.add_argument("--limit", type=int, default=20, help="newest runs to list (default 20)")
    history.add_argument("--delete", action="store_true", help="delete the listed runs from the archive")
    return parser


class PenaltyFlowCli:
    def __init__(self, argv=None):
        self.logger = get_logger(__name__)
        self.args = build_parser().parse_args(argv)
        self.settings = get_settings()
        if self.args.verbose:
            enable_console(logging.DEBUG)

    def output_path(self, path):
        return self.settings.resolve_output(path, self.args.output_dir)

    def run(self):
        command = self.args.command
        if command == "history":
            return self.cmd_history()
        handler = {
            "run": self.cmd_run,
            "check": self.cmd_check,
            "compare-discrete": self.cmd_compare_discrete,
            "diagnose": self.cmd_diagnose,
        }[command]

        cfg = None
        summary = {}
        try:
            cfg = load_config(self.args.config)
            code, summary = handler(cfg)
        except HARD_ERRORS as e:
            self.logger.error(f"Error in {command}: {e}")
            print(f"error: {e}", file=sys.stderr)
            code = EXIT_ERROR
            summary = {"error": str(e)}

        if not self.args.no_archive:
            self.archive(command, cfg, code, summary)
        return code

    def archive(self, command, cfg, code, summary):
        try:
            init_db(self.settings.db_url)
            digest = config_digest(cfg.to_dict()) if cfg is not None else "-"
            record_run(command, digest, cfg.problem_id if cfg is not None else None, code, summary)
        except Exception as e:
            # the archive never changes the exit code
            self.logger.error(f"Error archiving {command} run: {e}")

    def hypothesis_exit(self, hypotheses):
        failures = hypotheses.failures()
        for message in failures:
            print(message, file=sys.stderr)
        if failures:
            return EXIT_HYPOTHESIS
        if hypotheses.hfitz_unverified:
            print("H_fitz unverified for this penalty kind", file=sys.stderr)
            return EXIT_UNVERIFIED
        return EXIT_OK

    def analyze(self, tr, named, s, hypotheses):
        """Lemma checks and convergence report for a trajectory."""
        pr = named.instance
        gp = named.certificate
        lemma_reports = []
        if pr.B.kind == "dist_sq_gradient":
            lemma_reports.append(check_lemma_fej1(tr, gp, pr, s))
            if hypotheses.product_ok:
                lemma_reports.append(check_lemma_fej4(tr, gp, pr, s))
            if pr.gamma > 0:
                lemma_reports.append(check_strong_monotone(tr, gp, pr, s))
        else:
            self.logger.warning("Lemma checks skipped: no gap bound for this penalty kind")

        points = None
        try:
            points = sample_graph_points(named, np.random.default_rng(GRAPH_SAMPLE_SEED), GRAPH_SAMPLE_SIZE)
        except GraphSampleError as e:
            self.logger.warning(f"Characterization gap skipped: {e}")

        convergence = None
        try:
            convergence = convergence_report(
                tr, named.solution, s, strong_expected=named.strongly_monotone, graph_points=points
            )
        except TrajectoryTooShortError as e:
            self.logger.warning(f"Convergence report skipped: {e}")

        extra = {"problem": named.id, "steps": tr.steps, "nodes": len(tr), "max_step_lipschitz": tr.max_step_lipschitz}
        return build_report(lemma_reports, convergence, hypotheses, extra)

    def cmd_run(self, cfg):
        named = resolve_problem(cfg)
        pr, s = named.instance, cfg.schedule
        hypotheses = classify(s, pr.mu, pr.B.kind)
        x0 = resolve_x0(cfg, named)

        started = time.perf_counter()
        tr = integrate(pr, s, x0, cfg.integrator.t_end, cfg.integrator.options(reference=named.certificate))
        self.logger.info(f"Integration took {format_duration(time.perf_counter() - started)}")
        write_trajectory_csv(tr, self.output_path(cfg.outputs["trajectory_csv"]))

        report = self.analyze(tr, named, s, hypotheses)
        if cfg.discrete is not None:
            run = run_discrete(pr, s, x0, cfg.discrete.N, cfg.discrete.use_h1)
            write_discrete_csv(run, self.output_path(cfg.outputs["discrete_csv"]))
            report["discrete"] = {"N": run.steps, "final": run.final.tolist(), "final_residual": float(run.residuals[-1])}
        dump_json(report, self.output_path(cfg.outputs["report_json"]))

        code = self.hypothesis_exit(hypotheses)
        if code == EXIT_UNVERIFIED:
            code = EXIT_OK
        return code, {"hypothesis_failures": hypotheses.failures(), "t_end": tr.t_end}

    def cmd_check(self, cfg):
        named = resolve_problem(cfg)
        hypotheses = classify(cfg.schedule, named.instance.mu, named.instance.B.kind)
        print(json.dumps(build_report([], hypotheses=hypotheses), sort_keys=True, indent=2))
        code = self.hypothesis_exit(hypotheses)
        return code, {"hypothesis_failures": hypotheses.failures()}

    def cmd_compare_discrete(self, cfg):
        if cfg.discrete is None:
            raise ConfigError("discrete", "section required for compare-discrete")
        named = resolve_problem(cfg)
        x0 = resolve_x0(cfg, named)
        offset = 1 if self.args.perturb_sampling else 0
        result = compare_discrete(named.instance, cfg.schedule, x0, cfg.discrete.N, sample_offset=offset)
        print(json.dumps(result.to_dict(), sort_keys=True, indent=2))
        return (EXIT_OK if result.passed else EXIT_ERROR), result.to_dict()

    def cmd_diagnose(self, cfg):
        named = resolve_problem(cfg)
        pr, s = named.instance, cfg.schedule
        path = self.args.trajectory or self.output_path(cfg.outputs["trajectory_csv"])
        times, states = read_trajectory_csv(path)
        if states.shape[1] != pr.dim:
            raise ConfigError("problem", f"trajectory has dimension {states.shape[1]}, the problem has {pr.dim}")
        tr = Trajectory.from_states(pr, s, times, states, reference_z=named.certificate.z)
        hypotheses = classify(s, pr.mu, pr.B.kind)
        report = self.analyze(tr, named, s, hypotheses)
        dump_json(report, self.output_path(cfg.outputs["report_json"]))
        code = self.hypothesis_exit(hypotheses)
        if code == EXIT_UNVERIFIED:
            code = EXIT_OK
        return code, {"trajectory": path, "nodes": len(tr)}

    def cmd_history(self):
        """Print archived runs as JSON; never archived itself."""
        if self.args.problem is None and self.args.run_id is None:
            print("error: history needs a problem id or --run-id", file=sys.stderr)
            return EXIT_ERROR
        init_db(self.settings.db_url)
        if self.args.run_id is not None:
            record = get_run(self.args.run_id)
            if record is None:
                print(f"error: no archived run {self.args.run_id}", file=sys.stderr)
                return EXIT_ERROR
            runs = [record]
        else:
            runs = get_runs_for_problem(self.args.problem)[: max(self.args.limit, 0)]
        print(json.dumps([r.to_dict() for r in runs], sort_keys=True, indent=2))
        if self.args.delete and runs:
            delete_runs([r.run_id for r in runs])
        return EXIT_OK


def main(argv=None):
    app = PenaltyFlowCli(argv)
    return app.run()


if __name__ == "__main__":
    sys.exit(main())
