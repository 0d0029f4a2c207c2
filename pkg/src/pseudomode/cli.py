"""Configuration-driven command line front end.

Subcommands: `audit` (structural conditions only), `run` (full sweep with CSV
and JSON artifacts), `selftest` (invariant suites), and `models`.  A run is
reproducible: identical config and seed produce byte-identical artifacts when
timing capture is disabled.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .conditions import NoSignChange, audit_conditions, detect_sign_change
from .models import BUILTIN_NAMES, ModelError, ModelProblem, builtin_model, load_model_file
from .synth import (GateEmpty, PipelineOptions, VERDICT_INCONCLUSIVE,
                    VERDICT_REFUSED_CONDITIONS, VERDICT_REFUSED_NO_SIGN_CHANGE,
                    VERDICT_VIOLATION, fit_loglog, run_single_lambda)


class ConfigError(Exception):
    pass


@dataclass
class RunConfig:
    model: dict = field(default_factory=lambda: {"builtin": "mizohata"})
    lambdas: list = field(default_factory=lambda: [64.0, 128.0, 256.0, 512.0])
    K: int = 4
    M_a: int = 4
    L: int = 1
    rho: float = 0.1
    kappa_exp: float | None = None
    N: int = 0
    nu: int = 0
    aperture: float = math.pi / 6
    grid: dict = field(default_factory=dict)
    eikonal: dict = field(default_factory=dict)
    transport: dict = field(default_factory=dict)
    seed: int = 20250810
    output_dir: str = "out"
    verbosity: int = 1
    workers: int = 1
    force: bool = False
    zero_timings: bool = False
    dump_field_slice: bool = True

    def validate(self):
        lam = list(self.lambdas)
        if any(l < 16 for l in lam):
            raise ConfigError("lambdas must all be >= 16")
        if any(b <= a for a, b in zip(lam, lam[1:])):
            raise ConfigError("lambdas must be strictly increasing")
        if not (0.0 < self.rho < 0.5):
            raise ConfigError("rho must lie in (0, 1/2)")
        if not (2 <= self.K <= 8):
            raise ConfigError("K must lie in [2, 8]")

    def pipeline_options(self) -> PipelineOptions:
        tr = dict(self.transport)
        if self.kappa_exp is not None:
            tr.setdefault("kappa_exp", self.kappa_exp)
        return PipelineOptions(K=self.K, M_a=self.M_a, L=self.L, rho=self.rho,
                               N=self.N, nu=self.nu, aperture=self.aperture,
                               eikonal=dict(self.eikonal), transport=tr,
                               grid=dict(self.grid), force=self.force,
                               zero_timings=self.zero_timings, seed=self.seed)

    def resolve_model(self) -> ModelProblem:
        ref = self.model
        if "builtin" in ref:
            return builtin_model(ref["builtin"], ref.get("params"))
        if "file" in ref:
            return load_model_file(ref["file"])
        raise ConfigError("config.model must carry either 'builtin' or 'file'")


def load_config(path: str | None, overrides: dict) -> RunConfig:
    data = {}
    if path:
        with open(path, "r", encoding="utf-8") as fh:
            try:
                data = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: invalid JSON: {exc.msg}")
    known = set(RunConfig.__dataclass_fields__)
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"{path or '<config>'}: unknown keys {sorted(unknown)}")
    cfg = RunConfig(**data)
    for key, val in overrides.items():
        if val is not None:
            setattr(cfg, key, val)
    env_out = os.environ.get("PSEUDOMODE_OUT")
    if env_out:
        cfg.output_dir = env_out
    cfg.validate()
    return cfg


# -- serialization helpers ------------------------------------------------------


def _fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return format(float(x), ".17g")


def write_csv(path: str, header: list, rows: list):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def write_json(path: str, obj):
    def default(o):
        if isinstance(o, (np.floating, np.integer)):
            return float(o)
        if isinstance(o, np.ndarray):
            return o.tolist()
        if isinstance(o, float) and math.isinf(o):
            return "inf"
        raise TypeError(f"not serializable: {type(o)}")

    def sanitize(o):
        if isinstance(o, dict):
            return {k: sanitize(v) for k, v in o.items()}
        if isinstance(o, (list, tuple)):
            return [sanitize(v) for v in o]
        if isinstance(o, float) and (math.isinf(o) or math.isnan(o)):
            return repr(o)
        return o

    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(sanitize(obj), fh, sort_keys=True, indent=1, default=default)
        fh.write("\n")


def _audit_payload(model, cfg):
    try:
        sc = detect_sign_change(model)
        sign = {"found": True, "t_cross": sc.t_cross, "direction": sc.direction,
                "order_estimate": sc.order_estimate, "I_prime": list(sc.I_prime)}
    except NoSignChange as exc:
        return {"model": model.label, "verdict": VERDICT_REFUSED_NO_SIGN_CHANGE,
                "sign_change": {"found": False, "reason": str(exc)}}, 2
    audit = audit_conditions(model, seed=cfg.seed)
    payload = {
        "model": model.label,
        "sign_change": sign,
        "conditions": {"kcond": audit.cond_kcond, "hessian": audit.cond_hessian,
                       "leaf": audit.cond_leaf, "dq": audit.cond_dq},
        "samples": audit.samples,
        "region": audit.region,
    }
    if audit.licensed():
        payload["verdict"] = "LICENSED"
        return payload, 0
    payload["verdict"] = VERDICT_REFUSED_CONDITIONS
    return payload, 2


def cmd_audit(cfg: RunConfig) -> int:
    model = cfg.resolve_model()
    os.makedirs(cfg.output_dir, exist_ok=True)
    payload, code = _audit_payload(model, cfg)
    write_json(os.path.join(cfg.output_dir, "audit.json"), payload)
    if cfg.verbosity:
        print(f"{model.label}: {payload['verdict']} (audit.json written to {cfg.output_dir})")
    return code


def _phase_dump_rows(traj):
    rows = []
    model = traj.model
    eig20 = traj.min_eig_im((2, 0))
    eig02 = traj.min_eig_im((0, 2))
    for i, t in enumerate(traj.grid):
        s = traj.states[i]
        row = [t, s.w0.real, s.w0.imag]
        row += list(s.x0) + list(s.xi0) + list(s.y0) + list(s.eta_aux)
        row += [eig20[i], eig02[i]]
        rows.append(row)
    header = ["t", "re_w0", "im_w0"]
    header += [f"x0_{i}" for i in range(model.nx)] + [f"xi0_{i}" for i in range(model.nx)]
    header += [f"y0_{j}" for j in range(model.ny)]
    aux = "zeta0" if traj.case == "offset" else "eta0"
    header += [f"{aux}_{j}" for j in range(model.ny)]
    header += ["eigmin_im_w20", "eigmin_im_w02"]
    return header, rows


def _field_slice_rows(u, model):
    """|u| on the (t, x_0) plane at the y-center, long format."""
    vals = np.abs(u.values)
    mid = tuple(len(a) // 2 for a in u.y_axes)
    sl = vals[(slice(None), slice(None)) + (mid if len(mid) else ())]
    if sl.ndim > 2:  # more than one x-axis: take the first
        sl = sl[(slice(None), slice(None)) + tuple(len(a) // 2 for a in u.x_axes[1:])]
    rows = []
    for i, t in enumerate(u.t_axis):
        for j, x in enumerate(u.x_axes[0]):
            rows.append([t, x, sl[i, j]])
    return ["t", "x", "abs_u"], rows


def _one_sweep_point(args):
    model, lam, popts, dump = args
    try:
        rep, traj, amp, u, Pu, resid = run_single_lambda(model, lam, popts, keep_fields=True)
        phase_hdr, phase_rows = _phase_dump_rows(traj)
        slice_rows = _field_slice_rows(u, model) if dump else None
        return {"ok": True, "report": rep, "phase": (phase_hdr, phase_rows),
                "slice": slice_rows, "lam": lam}
    except (GateEmpty, NoSignChange) as exc:
        return {"ok": False, "lam": lam, "error": type(exc).__name__, "message": str(exc)}


REPORT_HEADER = ["lambda", "norm_u_minusN", "norm_Pu_nu", "norm_u_minusNn", "norm_Au0",
                 "ratio", "residual_expansion", "residual_direct", "min_im_w0",
                 "t0_anchor", "usable_lo", "usable_hi", "wall_ms"]


def cmd_run(cfg: RunConfig) -> int:
    model = cfg.resolve_model()
    os.makedirs(cfg.output_dir, exist_ok=True)
    payload, code = _audit_payload(model, cfg)
    write_json(os.path.join(cfg.output_dir, "audit.json"), payload)
    if code != 0 and not cfg.force:
        summary = {"model": model.label, "verdict": payload["verdict"],
                   "slope": None, "r2": None, "lambdas": list(cfg.lambdas),
                   "reason": "construction refused by the condition audit"}
        write_json(os.path.join(cfg.output_dir, "summary.json"), summary)
        if cfg.verbosity:
            print(f"{model.label}: {payload['verdict']}")
        return 2

    popts = cfg.pipeline_options()
    jobs = [(model, float(lam), popts, cfg.dump_field_slice) for lam in cfg.lambdas]
    if cfg.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            results = list(pool.map(_one_sweep_point, jobs))
    else:
        results = [_one_sweep_point(j) for j in jobs]
    results.sort(key=lambda r: r["lam"])

    rows = []
    errors = []
    for res in results:
        if not res["ok"]:
            errors.append({"lambda": res["lam"], "error": res["error"],
                           "message": res["message"]})
            continue
        rep = res["report"]
        rows.append([rep.lam, rep.norms["u_minus_N"], rep.norms["Pu_nu"],
                     rep.norms["u_minus_N_minus_n"], rep.norms["Au_zero"], rep.ratio,
                     rep.residual_expansion, rep.residual_direct, rep.min_im_w0,
                     rep.t0_anchor, rep.usable[0], rep.usable[1], rep.wall_ms])
        hdr, prow = res["phase"]
        write_csv(os.path.join(cfg.output_dir, f"phase_{int(res['lam'])}.csv"), hdr, prow)
        if res["slice"] is not None:
            shdr, srows = res["slice"]
            write_csv(os.path.join(cfg.output_dir, f"field_slice_{int(res['lam'])}.csv"),
                      shdr, srows)
    write_csv(os.path.join(cfg.output_dir, "report.csv"), REPORT_HEADER, rows)

    summary = {"model": model.label, "lambdas": list(map(float, cfg.lambdas)),
               "params": {"N": cfg.N, "nu": cfg.nu, "K": cfg.K, "M_a": cfg.M_a,
                          "L": cfg.L, "rho": cfg.rho, "n": 1 + model.nx + model.ny,
                          "aperture": cfg.aperture},
               "errors": errors}
    if len(rows) >= 3:
        slope, r2 = fit_loglog([r[0] for r in rows], [r[5] for r in rows])
        verdict = VERDICT_VIOLATION if (slope <= -0.25 and r2 >= 0.9) else VERDICT_INCONCLUSIVE
        summary.update(slope=slope, r2=r2, verdict=verdict,
                       slope_threshold=-0.25, r2_threshold=0.9)
    else:
        summary.update(slope=None, r2=None, verdict=VERDICT_INCONCLUSIVE,
                       reason="fewer than three successful sweep points")
    write_json(os.path.join(cfg.output_dir, "summary.json"), summary)
    if cfg.verbosity:
        print(f"{model.label}: {summary['verdict']}"
              + (f" (slope {summary['slope']:.3f}, r2 {summary['r2']:.3f})"
                 if summary.get("slope") is not None else ""))
    return 0


def cmd_selftest(cfg: RunConfig) -> int:
    from .selftest import run_selftest

    results = run_selftest(verbose=cfg.verbosity > 0)
    bad = [name for name, ok, _ in results if not ok]
    return 0 if not bad else 1


def cmd_models() -> int:
    for name in BUILTIN_NAMES:
        m = builtin_model(name, {"j": 1} if name == "cpt_gen" else None)
        kind = "inf" if math.isinf(m.k) else int(m.k)
        print(f"{name:10s} nx={m.nx} ny={m.ny} k={kind} eta0={m.eta0.tolist()} "
              f"interval={list(m.interval)}")
    return 0


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="pseudomode",
                                 description="approximate-null-mode constructor and "
                                             "solvability-estimate stress tests")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in ("audit", "run", "selftest"):
        p = sub.add_parser(name)
        p.add_argument("--config", default=None, help="JSON config file")
        p.add_argument("--model", default=None, help="builtin model name")
        p.add_argument("--model-file", default=None, help="model definition JSON")
        p.add_argument("--lambda", dest="lambdas", default=None,
                       help="comma-separated sweep values")
        p.add_argument("--K", type=int, default=None)
        p.add_argument("--rho", type=float, default=None)
        p.add_argument("--L", type=int, default=None)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--workers", type=int, default=None)
        p.add_argument("--force", action="store_true", default=None)
        p.add_argument("--zero-timings", action="store_true", default=None)
        p.add_argument("-q", "--quiet", action="store_true")
    sub.add_parser("models")
    args = ap.parse_args(argv)

    if args.command == "models":
        return cmd_models()

    overrides = {"K": args.K, "rho": args.rho, "L": args.L, "seed": args.seed,
                 "output_dir": args.out, "workers": args.workers,
                 "force": args.force, "zero_timings": getattr(args, "zero_timings", None)}
    if args.lambdas:
        overrides["lambdas"] = [float(v) for v in args.lambdas.split(",")]
    if args.model:
        overrides["model"] = {"builtin": args.model}
    if args.model_file:
        overrides["model"] = {"file": args.model_file}
    if args.quiet:
        overrides["verbosity"] = 0
    try:
        cfg = load_config(args.config, overrides)
        if args.command == "audit":
            return cmd_audit(cfg)
        if args.command == "run":
            return cmd_run(cfg)
        if args.command == "selftest":
            return cmd_selftest(cfg)
    except (ConfigError, ModelError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 1


if __name__ == "__main__":
    sys.exit(main())
