"""Command line runner: ``degenlab <subcommand> --config FILE [--out DIR] [--seed S] [--threads K]``.

Subcommands run the stages they need, in order solve, diagnose, duality,
verify-lemmas, and write one CSV (or key = value text) per artifact plus
``manifest.txt`` listing every artifact with its SHA-256.  The first manifest
line is a timestamp; everything else is a deterministic function of the
config bytes and the seed.

Exit codes: 0 success, 2 config error, 3 solve failure, 4 failed check.

Numerical modules are imported lazily so that ``--threads`` can cap the
BLAS/OpenMP pools before numpy is loaded.
"""
from __future__ import annotations

import argparse
import csv
import datetime
import hashlib
import logging
import os
import sys

EXIT_OK, EXIT_CONFIG, EXIT_SOLVE, EXIT_CHECK = 0, 2, 3, 4
SUBCOMMANDS = ("solve", "diagnose", "duality", "verify-lemmas", "run")
THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS")

SOLUTION_FILE = "solution.csv"
EXCESS_FILE, HOLDER_FILE, RATE_FILE = "excess.csv", "holder.csv", "rate.csv"
FLOW_FILE, DUALITY_FILE = "flow.csv", "duality.txt"
LEMMA_FILE = "lemmas.csv"
MANIFEST_FILE = "manifest.txt"

log = logging.getLogger("degenlab")


class StageError(RuntimeError):
    def __init__(self, stage, code, msg):
        self.stage, self.code = stage, code
        super().__init__(msg)


def _writer(f):
    return csv.writer(f, lineterminator="\n")


class Pipeline:
    """Runs stages against one validated config and records the files written."""

    def __init__(self, cfg, out_dir):
        self.cfg = cfg
        self.out_dir = out_dir
        self.files = []
        self.states = None

    def _path(self, name):
        self.files.append(name)
        return os.path.join(self.out_dir, name)

    def _open(self, name):
        return open(self._path(name), "w", newline="\n", encoding="utf-8")

    # stages

    def problem(self, res=None):
        from .grid import Grid
        from .metric import build_metric
        from .solver import ProblemSpec, build_datum

        pr, sv = self.cfg.problem, self.cfg.solver
        return ProblemSpec(Grid(pr.n, res or pr.res), build_metric(pr.metric, pr.metric_params, pr.n), pr.p,
                           build_datum(pr.datum, pr.datum_params, pr.n, pr.big_n), sv.eps_schedule)

    def _continuation(self, spec):
        from .solver import SolveError, SolveOptions, eps_continuation

        sv = self.cfg.solver
        method = sv.method if sv.method != "auto" else ("newton" if spec.p >= 2 else "ncg")
        opts = SolveOptions(tol=sv.tol, max_iter=sv.max_iter, seed=sv.seed, method=method)
        try:
            return eps_continuation(spec, opts)
        except SolveError as exc:
            raise StageError("solve", EXIT_SOLVE, str(exc)) from None

    def solve(self):
        from .solver import write_checkpoint

        self.states = self._continuation(self.problem())
        write_checkpoint(self._path(SOLUTION_FILE), self.states[-1])

    def diagnose(self):
        from . import diagnostics as D
        from ._io import fmt

        dg = self.cfg.diagnostics
        sol = self.states[-1]
        m = sol.spec.metric
        n = sol.spec.grid.n
        with self._open(EXCESS_FILE) as f:
            w = _writer(f)
            w.writerow([f"x{a + 1}" for a in range(n)] + ["rho", "delta", "phi", "psi", "fraction", "regime"])
            for x0 in dg.centers:
                for rho in dg.radii:
                    for delta in dg.delta:
                        try:
                            r = D.excess(sol, m, x0, rho, delta, dg.nu)
                        except ValueError as exc:
                            raise StageError("diagnose", EXIT_CONFIG, str(exc)) from None
                        w.writerow([fmt(c) for c in x0] + [fmt(rho), fmt(delta), fmt(r.phi), fmt(r.psi_delta),
                                                           fmt(r.superlevel_fraction), r.regime])

        delta = dg.delta[0]
        fine = self._continuation(self.problem(dg.holder_fine_res))[-1]
        tab = D.holder_estimate(D.g_delta_field(sol, m, delta), D.g_delta_field(fine, m, delta),
                                dg.holder_alphas, dg.holder_max_dist)
        with self._open(HOLDER_FILE) as f:
            w = _writer(f)
            w.writerow(["alpha", "seminorm", "resolution"])
            for a, s, res in tab.rows():
                w.writerow([fmt(a), fmt(s), str(res)])

        with self._open(RATE_FILE) as f:
            w = _writer(f)
            w.writerow(["eps", "error", "slope"])
            # the last state of the schedule is the reference; three others are needed for a fit
            if len(self.states) >= 4:
                rep = D.convergence_rate(self.states[:-1], self.states[-1], m, delta, sol.spec.p)
                for e, err in zip(rep.eps, rep.errors):
                    w.writerow([fmt(e), fmt(err), fmt(rep.slope)])

    def duality(self):
        from . import transport as T
        from ._io import fmt

        sol = self.states[-1]
        flow = T.traffic_flow(sol)
        centers = flow.grid.centers.reshape(-1, flow.grid.n)
        sigma = flow.sigma.reshape(-1, flow.grid.n)
        with self._open(FLOW_FILE) as f:
            w = _writer(f)
            n = flow.grid.n
            w.writerow([f"x{a + 1}" for a in range(n)] + [f"sigma{a + 1}" for a in range(n)]
                       + ["speed", "congestion_cost", "fy_residual"])
            cols = zip(centers, sigma, flow.speed.ravel(), flow.congestion_cost.ravel(), flow.fy_residual.ravel())
            for c, s, sp, h, fy in cols:
                w.writerow([fmt(v) for v in (*c, *s, sp, h, fy)])
        with self._open(DUALITY_FILE) as f:
            f.write(f"p = {fmt(sol.spec.p)}\n")
            f.write(f"eps = {fmt(sol.eps)}\n")
            for k, v in T.duality_report(flow).items():
                f.write(f"{k} = {fmt(v)}\n")

    def verify_lemmas(self):
        from .lemmas import LemmaCase, run_lemma, write_csv

        lm = self.cfg.lemmas
        reports = [run_lemma(LemmaCase(i, p), lm.budget, lm.seed) for p in lm.p for i in lm.ids]
        with self._open(LEMMA_FILE) as f:
            write_csv(f, reports)
        failed = [f"{r.id}@p={r.p:g}" for r in reports if not r.passed]
        if failed:
            raise StageError("verify-lemmas", EXIT_CHECK, f"checks failed: {', '.join(failed)}")

    def run(self, stages):
        try:
            for stage in stages:
                log.info("stage %s", stage)
                getattr(self, stage.replace("-", "_"))()
        finally:
            write_manifest(self.out_dir, self.files, self.cfg)


def write_manifest(out_dir, files, cfg=None, now=None):
    from ._io import sha256_file

    now = now or datetime.datetime.now(datetime.timezone.utc)
    path = os.path.join(out_dir, MANIFEST_FILE)
    with open(path, "w", newline="\n", encoding="utf-8") as f:
        f.write(f"# generated = {now.isoformat(timespec='seconds')}\n")
        if cfg is not None and getattr(cfg, "source_sha256", None):
            f.write(f"# config_sha256 = {cfg.source_sha256}\n")
        for name in files:
            f.write(f"{sha256_file(os.path.join(out_dir, name))}  {name}\n")
    return path


def read_manifest(path) -> dict:
    """``{file name: sha256}`` from a manifest; comment lines are skipped."""
    out = {}
    with open(path, encoding="utf-8") as f:
        for line in f:
            if line.startswith("#") or not line.strip():
                continue
            digest, name = line.rstrip("\n").split("  ", 1)
            out[name] = digest
    return out


def stages_for(command, cfg):
    from .config import ConfigError, ensure_section

    if command == "run":
        stages = cfg.stages()
        if not stages:
            raise ConfigError("the config enables no stage")
        return stages
    if command == "verify-lemmas":
        ensure_section(cfg, "lemmas")
        return ["verify-lemmas"]
    if cfg.problem is None:
        raise ConfigError(f"{command} needs a [problem] section")
    if command == "solve":
        return ["solve"]
    ensure_section(cfg, "diagnostics" if command == "diagnose" else "duality")
    return ["solve", command]


def build_parser():
    ap = argparse.ArgumentParser(prog="degenlab", description="Regularized solves, diagnostics and inequality checks.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="run configuration file")
    common.add_argument("--out", help="output directory (overrides [output] directory)")
    common.add_argument("--seed", type=int, help="seed for solver and lemma sampler (overrides the config)")
    common.add_argument("--threads", type=int, help="cap on BLAS/OpenMP worker threads")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        sub.add_parser(name, parents=[common])
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads is not None:
        if args.threads < 1:
            print("degenlab: config error: --threads must be positive", file=sys.stderr)
            return EXIT_CONFIG
        for var in THREAD_VARS:
            os.environ[var] = str(args.threads)

    from .config import ConfigError, check_writable, load_config

    try:
        cfg = load_config(args.config)
        with open(args.config, "rb") as f:
            cfg.source_sha256 = hashlib.sha256(f.read()).hexdigest()
        if args.seed is not None:
            if args.seed < 0:
                raise ConfigError("--seed must be nonnegative")
            if cfg.solver is not None:
                cfg.solver.values["seed"] = args.seed
            if cfg.lemmas is not None:
                cfg.lemmas.values["seed"] = args.seed
        stages = stages_for(args.command, cfg)
        out_dir = args.out or cfg.output.directory
        check_writable(out_dir)
    except ConfigError as exc:
        print(f"degenlab: config error: {args.config}: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    pipe = Pipeline(cfg, out_dir)
    try:
        pipe.run(stages)
    except StageError as exc:
        print(f"degenlab: stage {exc.stage} failed: {exc}", file=sys.stderr)
        return exc.code
    log.info("wrote %d files to %s", len(pipe.files), out_dir)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
