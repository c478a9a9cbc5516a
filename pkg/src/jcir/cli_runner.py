"""Command-line front end: ``jcir <command> --config FILE [options]``.

Artifacts are named ``{command}-{seed}.{ext}`` and written atomically.
Exit status: 0 on success or passed gates, 2 on failed gates, 1 on errors.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import tempfile
from pathlib import Path
from typing import Optional

import numpy as np
from scipy import integrate

from . import asymptotics_harness as ah
from . import inference, malliavin_weights
from .affine_density import density_grid
from .cir_sim import SamplePath, mean_at, simulate_path, variance_at
from .config import COMMANDS, ConfigError, RunConfig, parse_config
from .seeding import derive_rng

EXIT_OK, EXIT_ERROR, EXIT_GATE = 0, 1, 2


class StageError(RuntimeError):
    """An error tagged with the module and phase in which it occurred."""

    def __init__(self, module: str, phase: str, exc: Exception):
        super().__init__(f"[{module}/{phase}] {type(exc).__name__}: {exc}")


def write_atomic(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _json(doc: dict) -> str:
    return json.dumps(doc, sort_keys=True, indent=2) + "\n"


def _stage(module: str, phase: str, fn, *args, **kw):
    try:
        return fn(*args, **kw)
    except Exception as exc:  # re-raised with a location tag
        raise StageError(module, phase, exc) from exc


# ---------------------------------------------------------------------------
# commands; each returns (artifacts {ext: text}, passed or None, summary line)


def _simulate(cfg: RunConfig, threads: int):
    o = cfg.options
    path = _stage(
        "cir_sim", "simulate", simulate_path, cfg.params, o["T"], o["steps"], o["scheme"],
        seed=cfg.seed, rng=derive_rng(cfg.seed, "simulate"), jump_timing=o["jump_timing"],
    )
    return {"csv": path.to_csv()}, None, f"simulated {path.steps} steps, Y_T = {path.y_T:.6g}"


def _density(cfg: RunConfig, threads: int):
    o, p = cfg.options, cfg.params
    x = p.y0 if o["x"] is None else o["x"]
    y_max = o["y_max"]
    if y_max is None:
        y_max = mean_at(p.with_y0(x), o["t"]) + 8.0 * math.sqrt(variance_at(p, o["t"], x)) + 1.0
    if not y_max > o["y_min"]:
        raise StageError("cli_runner", "validate", ValueError("y_max must exceed y_min"))
    y = np.linspace(max(o["y_min"], 0.0), y_max, o["points"])
    if y[0] == 0.0:
        y[0] = y_max * 1e-9  # the density is singular or zero at 0
    grid = _stage("affine_density", "invert", density_grid, p, o["t"], x, y)
    mass = float(integrate.trapezoid(grid.density, grid.y))
    return {"csv": grid.to_csv()}, None, f"density on {y.size} points, grid mass {mass:.6f}"


def _estimate(cfg: RunConfig, threads: int):
    o, p = cfg.options, cfg.params
    if o["input"]:
        path = _stage("cli_runner", "read", lambda: SamplePath.from_csv(Path(o["input"]).read_text()))
    else:
        path = _stage("cir_sim", "simulate", simulate_path, p, o["T"], o["steps"], o["scheme"],
                      seed=cfg.seed, rng=derive_rng(cfg.seed, "estimate"))
    doc = {"schema_version": ah.SCHEMA_VERSION, "observation": o["observation"], "true_b": p.b,
           "horizon": path.T}
    if o["observation"] == "continuous":
        res = _stage("inference", "mle", inference.mle_continuous, path, p.a, p.sigma)
        doc.update(b_hat=res.b_hat, jump_sum=inference.jump_sum(path), int_Y=path.int_Y)
    else:
        obs = inference.DiscreteObs.from_path(path, o["every"])
        res = _stage("inference", "mle", inference.mle_discrete, obs, p, o["interval"])
        doc.update(b_hat=res.b_hat, evaluations=res.iterations, bracket=list(res.bracket),
                   loglik=res.objective, n=obs.n, dt=obs.dt)
    return {"json": _json(doc)}, None, f"b_hat = {res.b_hat:.6g} ({o['observation']})"


def _experiment_config(cfg: RunConfig, threads: int, observation: str) -> ah.ExperimentConfig:
    o = cfg.options
    return ah.ExperimentConfig(
        cfg.params, observation=observation, u=o["u"], T=o["T"], steps=o["steps"], n=o["n"], dt=o["dt"],
        replications=o["replications"], seed=cfg.seed, scheme=o["scheme"],
        limit_replications=o["limit_replications"], v_horizon=o["v_horizon"], mean_tol=o["mean_tol"],
        var_tol=o["var_tol"], ks_alpha=o["ks_alpha"], allow_outside_a3=True, threads=threads,
    )


def _experiment(cfg: RunConfig, threads: int):
    o, p, name = cfg.options, cfg.params, cfg.options["name"]
    if name == "continuous-lan":
        rep = _stage("asymptotics_harness", name, ah.run_lan, _experiment_config(cfg, threads, "continuous"))
    elif name == "discrete-lan":
        rep = _stage("asymptotics_harness", name, ah.run_lan, _experiment_config(cfg, threads, "discrete"))
    elif name == "laq":
        rep = _stage("asymptotics_harness", name, ah.run_laq, _experiment_config(cfg, threads, "continuous"))
    elif name == "lamn":
        rep = _stage("asymptotics_harness", name, ah.run_lamn, _experiment_config(cfg, threads, "continuous"))
    elif name == "v-law":
        rep = _stage("asymptotics_harness", name, ah.v_law_check, p, o["replications"], cfg.seed, o["v_horizon"])
    elif name == "girsanov":
        if o["b_tilde"] is None:
            raise StageError("cli_runner", "validate", ValueError("girsanov needs options.b_tilde"))
        rep = _stage("asymptotics_harness", name, ah.girsanov_unit_mean, p, o["b_tilde"], o["T"],
                     o["replications"], cfg.seed, threads=threads)
    elif name == "ergodic":
        rep = _stage("asymptotics_harness", name, ah.ergodic_check, p, o["n"], o["dt"], cfg.seed)
    else:
        rep = _stage("asymptotics_harness", name, ah.stable_clt_check, p, cfg.seed, tuple(o["horizons"]),
                     o["replications"])
    doc = rep.to_dict()
    doc["config"] = cfg.to_dict()
    arts = {"json": _json(doc)}
    if rep.samples:
        arts["csv"] = rep.samples_csv()
    verdict = "PASS" if rep.passed else "FAIL"
    return arts, rep.passed, f"{name}: {verdict} (mean {rep.mean:.4g}, var {rep.var:.4g}, n {rep.n})"


def _malliavin(cfg: RunConfig, threads: int):
    o, p = cfg.options, cfg.params
    doc = {"schema_version": ah.SCHEMA_VERSION, "config": cfg.to_dict(), "gates": {}}
    arts = {}
    if o["mode"] in ("scan", "both"):
        scan = _stage("malliavin_weights", "scan", malliavin_weights.h_moment_scan, p, o["x"], o["deltas"],
                      o["paths"], cfg.seed, o["substeps"], o["method"], require_a3=False)
        arts["csv"] = scan.to_csv()
        mean_ok = all(abs(r.mean_H) <= 3.0 * r.se for r in scan.rows)
        doc["scan"] = [vars(r) for r in scan.rows]
        doc["slope"] = scan.slope
        doc["gates"]["mean_H"] = {"pass": mean_ok, "rule": "|E[H]| <= 3 SE at every step size"}
        doc["gates"]["slope"] = {"pass": scan.slope >= 3.0, "value": scan.slope, "tolerance": 3.0,
                                 "rule": "log-log slope of E[H^2] >= 3"}
    if o["mode"] in ("ibp", "both"):
        ibp = _stage("malliavin_weights", "ibp", malliavin_weights.ibp_check, p, o["x"], o["delta"], o["f"],
                     o["paths"], cfg.seed, o["substeps"])
        doc["ibp"] = vars(ibp)
        doc["gates"]["ibp"] = {"pass": abs(ibp.z) < 3.0, "value": ibp.z, "tolerance": 3.0, "rule": "|z| < 3"}
    passed = all(g["pass"] for g in doc["gates"].values())
    doc["pass"] = passed
    arts["json"] = _json(doc)
    return arts, passed, f"malliavin ({o['mode']}): {'PASS' if passed else 'FAIL'}"


_HANDLERS = {
    "simulate": _simulate,
    "density": _density,
    "estimate": _estimate,
    "experiment": _experiment,
    "malliavin": _malliavin,
}


def execute(cfg: RunConfig, out: Optional[str] = None, threads: int = 1) -> tuple[int, list[Path], str]:
    """Run one validated configuration; returns (exit status, artifact paths, summary)."""
    arts, passed, summary = _HANDLERS[cfg.command](cfg, threads)
    outdir = Path(out if out is not None else cfg.out)
    written = []
    for ext, text in arts.items():
        target = outdir / f"{cfg.command}-{cfg.seed}.{ext}"
        try:
            write_atomic(target, text)
        except OSError as exc:
            raise StageError("cli_runner", "write", exc) from exc
        written.append(target)
    status = EXIT_OK if passed is None or passed else EXIT_GATE
    return status, written, summary


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="jcir", description="Jump-type CIR simulation, densities and asymptotics.")
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", required=True, help="YAML run configuration")
    ap.add_argument("--seed", type=int, default=None, help="override the configured seed")
    ap.add_argument("--out", default=None, help="output directory (default: the configured one)")
    ap.add_argument("--threads", type=int, default=1, help="replication worker threads")
    ap.add_argument("--allow-outside-a3", action="store_true",
                    help="run discrete-observation work even if a/sigma^2 is below the threshold")
    return ap


def main(argv: Optional[list[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.threads < 1:
            raise ConfigError("--threads must be >= 1")
        text = Path(args.config).read_text()
        cfg = parse_config(text, args.allow_outside_a3, command=args.command)
        if args.seed is not None:
            if not 0 <= args.seed < 2**64:
                raise ConfigError("--seed must lie in [0, 2^64)")
            cfg = RunConfig(cfg.command, cfg.params, cfg.options, args.seed, cfg.out)
        status, written, summary = execute(cfg, args.out, args.threads)
    except (ConfigError, OSError, StageError) as exc:
        print(f"jcir: error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except Exception as exc:
        print(f"jcir: error: [cli_runner/execute] {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ERROR
    print(f"{summary} -> {', '.join(str(w) for w in written)}")
    return status


if __name__ == "__main__":
    sys.exit(main())
