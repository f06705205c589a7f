"""lgm-cmprsk command line: simulate | fit | check.

Exit codes: 0 success, 1 numerical failure, 2 usage or I/O error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
import time
from pathlib import Path

from . import report
from .config import RunConfig, load_config
from .data import (
    JointDataset,
    LongitudinalRecord,
    SurvivalRecord,
    load_longitudinal_csv,
    load_survival_csv,
    validate_joint_dataset,
    write_longitudinal_csv,
    write_survival_csv,
)
from .errors import ConfigError, LgmError, NumericalError, StageError
from .inference import fit
from .simulate import simulate_example1, simulate_example5

log = logging.getLogger("lgm_cmprsk")

EXIT_OK, EXIT_NUMERIC, EXIT_USAGE = 0, 1, 2
RNG_DESCRIPTION = "numpy PCG64, one SeedSequence(seed).spawn(N) child stream per individual"


class UsageError(Exception):
    pass


def _out_dir(args, cfg: RunConfig) -> Path:
    out = Path(args.out) if args.out else (cfg.output.dir or Path("."))
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise UsageError(f"cannot create output directory {out}: {exc}") from None
    return out


def simulate_dataset(cfg: RunConfig, legacy=False):
    """(dataset, effective SimConfig) for the config's generator."""
    if cfg.simulate is None:
        raise ConfigError("config has no [simulate] section")
    sim = cfg.simulate
    if legacy:
        sim = dataclasses.replace(sim, legacy_appendix=True)
    gen = simulate_example1 if cfg.generator == "example1" else simulate_example5
    return gen(sim), sim


def cmd_simulate(args) -> int:
    cfg = load_config(args.config)
    data, sim = simulate_dataset(cfg, args.legacy_appendix)
    out = _out_dir(args, cfg)
    write_longitudinal_csv(out / "longitudinal.csv", data.longitudinal)
    write_survival_csv(out / "survival.csv", data.survival)
    truth = {
        "generator": cfg.generator,
        "parameters": sim.truth(),
        "rng": RNG_DESCRIPTION,
        "n_longitudinal_rows": len(data.longitudinal),
        "n_survival_rows": len(data.survival),
    }
    report.write_json(out / "truth.json", truth)
    print(f"wrote {len(data.survival)} survival and {len(data.longitudinal)} longitudinal rows to {out}")
    return EXIT_OK


def rescale_time(data: JointDataset) -> JointDataset:
    """Divide every time by the largest observed time."""
    t_max = max(max(r.time for r in data.survival), max(r.time for r in data.longitudinal))
    longs = [LongitudinalRecord(r.individual_id, r.time / t_max, r.value, r.covariates)
             for r in data.longitudinal]
    survs = [SurvivalRecord(r.individual_id, r.time / t_max, r.cause, r.covariates) for r in data.survival]
    return validate_joint_dataset(longs, survs, data.n_causes)


def load_fit_data(cfg: RunConfig, out: Path) -> JointDataset:
    if cfg.model is None:
        raise ConfigError("config has no [model] section")
    if cfg.data is not None:
        d = cfg.data
        family, n_causes, late = d.family, d.n_causes, d.on_late_observation
        lpath, spath = d.longitudinal, d.survival
    elif cfg.simulate is not None:
        family = cfg.model.longitudinal_blocks[0].family
        n_causes, late = cfg.simulate.n_causes, "error"
        lpath, spath = out / "longitudinal.csv", out / "survival.csv"
    else:
        raise ConfigError("config needs a [data] section (or [simulate] output in --out)")
    for p in (lpath, spath):
        if not Path(p).is_file():
            raise FileNotFoundError(f"input file not found: {p}")
    longs = load_longitudinal_csv(lpath, family)
    survs = load_survival_csv(spath, n_causes)
    return validate_joint_dataset(longs, survs, n_causes, on_late_observation=late)


def cmd_fit(args) -> int:
    cfg = load_config(args.config)
    out = _out_dir(args, cfg)
    data = load_fit_data(cfg, out)
    if args.rescale_time:
        data = rescale_time(data)
    opts = cfg.options
    if args.threads is not None:
        opts = dataclasses.replace(opts, threads=args.threads)
    t0 = time.perf_counter()
    res = fit(cfg.model, data, opts)
    elapsed = time.perf_counter() - t0
    report.write_json(out / "summary.json", report.summary_dict(res))
    report.write_latent_csv(out / "latent.csv", res)
    report.write_hyper_csv(out / "hyper.csv", res)
    report.write_curves_csv(out / "curves.csv", res, data, cfg.output.time_points, cfg.output.group_by)
    report.write_json(out / "timing.json", {"wall_time_s": elapsed})
    print(f"fit finished in {elapsed:.1f} s; outputs in {out}")
    return EXIT_OK


def cmd_check(args) -> int:
    from .check import format_table, run_check

    cfg = load_config(args.config)
    out = _out_dir(args, cfg)
    if args.threads is not None:
        cfg = dataclasses.replace(cfg, options=dataclasses.replace(cfg.options, threads=args.threads))
    verdict = run_check(cfg, workdir=out, legacy=args.legacy_appendix)
    report.write_json(out / "verdict.json", verdict)
    if cfg.output.report == "json":
        print(json.dumps(verdict, indent=2))
    else:
        print(format_table(verdict))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lgm-cmprsk", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)
    for name, fn, help_ in (
        ("simulate", cmd_simulate, "simulate a dataset; writes longitudinal.csv, survival.csv, truth.json"),
        ("fit", cmd_fit, "fit a model; writes summary.json, latent.csv, hyper.csv, curves.csv"),
        ("check", cmd_check, "run the acceptance checks; writes verdict.json"),
    ):
        s = sub.add_parser(name, help=help_)
        s.add_argument("--config", required=True, help="TOML run configuration")
        s.add_argument("--out", help="output directory (default: [output].dir or .)")
        s.add_argument("--threads", type=int, default=None, help="threads for grid evaluations")
        s.add_argument("--rescale-time", action="store_true", help="divide all times by the largest one")
        s.add_argument("--legacy-appendix", action="store_true",
                       help="simulate causes independently of the shared effect")
        s.set_defaults(func=fn)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads is not None and args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except StageError as exc:
        print(f"{'numerical failure' if isinstance(exc.cause, NumericalError) else 'error'}: {exc}",
              file=sys.stderr)
        return EXIT_NUMERIC if isinstance(exc.cause, NumericalError) else EXIT_USAGE
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (LgmError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
