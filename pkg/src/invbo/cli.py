"""Config-driven experiment driver: ``invbo synth|run|mig|bounds|verify --config PATH``."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import tempfile
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np
import yaml

from invbo import analysis, bo, verify
from invbo import domain as dom
from invbo import group as grp
from invbo.kernel import from_config as kernel_from_config
from invbo.objectives import SyntheticObjective, build_family, synthesize

CONFIG_SCHEMA = "invbo.config/1"
OUT_ENV = "INVBO_OUT_DIR"
COMMANDS = ("synth", "run", "mig", "bounds", "verify")

log = logging.getLogger("invbo")


class ConfigError(ValueError):
    pass


# -- config and io ----------------------------------------------------------


def load_config(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    with path.open() as fh:
        cfg = yaml.safe_load(fh) or {}
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a mapping")
    if cfg.get("schema") != CONFIG_SCHEMA:
        raise ConfigError(f"key 'schema': expected {CONFIG_SCHEMA!r}, got {cfg.get('schema')!r}")
    cfg["_dir"] = str(path.resolve().parent)
    cfg["_stem"] = path.stem
    return cfg


def section(cfg: dict, name: str) -> dict:
    sec = cfg.get(name)
    if not isinstance(sec, dict):
        raise ConfigError(f"key '{name}': missing or not a mapping")
    return sec


def require(sec: dict, key: str, where: str):
    if key not in sec:
        raise ConfigError(f"key '{where}.{key}' is required")
    return sec[key]


def output_dir(cfg: dict, override: str | None) -> Path:
    out = override or os.environ.get(OUT_ENV)
    if out:
        path = Path(out)
    elif cfg.get("out"):
        path = _resolve(cfg, str(cfg["out"])).resolve()  # relative to the config file
    else:
        path = Path("results") / cfg["_stem"]
    path.mkdir(parents=True, exist_ok=True)
    return path


def atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def dump_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=1, default=_json_default) + "\n"


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.generic):
        return o.item()
    raise TypeError(f"not serialisable: {type(o).__name__}")


def _fmt(v) -> str:
    return format(float(v), ".17g")


def seeds_of(sec: dict, where: str) -> list[int]:
    s = sec.get("seeds", [0])
    if isinstance(s, int):
        return list(range(s))
    if isinstance(s, dict) and "range" in s:
        return list(range(*s["range"]))
    if isinstance(s, list) and all(isinstance(x, int) for x in s):
        return s
    raise ConfigError(f"key '{where}.seeds': expected an int, a list of ints or {{range: [a, b]}}")


def kernels_of(sec: dict, where: str) -> dict:
    specs = require(sec, "kernels", where)
    if not isinstance(specs, dict) or not specs:
        raise ConfigError(f"key '{where}.kernels': expected a non-empty mapping name -> kernel")
    try:
        return {name: kernel_from_config(spec) for name, spec in specs.items()}
    except (ValueError, KeyError) as exc:
        raise ConfigError(f"key '{where}.kernels': {exc}") from exc


def _resolve(cfg: dict, p: str) -> Path:
    path = Path(p)
    return path if path.is_absolute() else Path(cfg["_dir"]) / path


# -- synth ------------------------------------------------------------------


def cmd_synth(cfg: dict, out: Path, jobs: int = 1) -> list[Path]:
    sec = section(cfg, "synth")
    try:
        kernel = kernel_from_config(require(sec, "kernel", "synth"))
    except (ValueError, KeyError) as exc:
        raise ConfigError(f"key 'synth.kernel': {exc}") from exc
    n = int(require(sec, "n", "synth"))
    domain = sec.get("domain", "hypercube:2")
    search = int(sec.get("search_count", 100_000))
    seeds = seeds_of(sec, "synth")
    args = [(kernel, n, s, domain, 1e-8, search) for s in seeds]
    if jobs > 1:
        with ProcessPoolExecutor(jobs) as ex:
            objs = list(ex.map(_synth_task, args))
    else:
        objs = [_synth_task(a) for a in args]
    manifest, paths = [], []
    for s, obj in zip(seeds, objs):
        path = out / f"objective_seed{s}.json"
        atomic_write(path, obj.dumps())
        paths.append(path)
        inv_err = _invariance_error(obj, kernel, np.random.default_rng(s))
        manifest.append({"seed": s, "file": path.name, "rkhs_norm": obj.rkhs_norm,
                         "optimum_value": obj.optimum.value, "optimum_point": obj.optimum.point,
                         "residual": obj.optimum.residual, "invariance_error": inv_err})
    atomic_write(out / "manifest.json", dump_json({"schema": "invbo.manifest/1", "objectives": manifest}))
    return paths


def _synth_task(args) -> SyntheticObjective:
    return synthesize(*args)


def _invariance_error(obj, kernel, rng) -> float | None:
    G = getattr(kernel, "group", None)
    if G is None:
        return None
    X = obj.domain.uniform(rng, 256)
    base = obj(X)
    return float(max(np.max(np.abs(obj(img) - base)) for img in G.images(X)))


# -- run --------------------------------------------------------------------


def _bo_config(sec: dict, seed: int) -> bo.BOConfig:
    opts = dict(sec.get("bo", {}))
    opts.pop("seed", None)
    if "fd_base" in opts and opts["fd_base"] is not None:
        opts["fd_base"] = tuple(float(v) for v in opts["fd_base"])
    try:
        return bo.BOConfig(seed=seed, **opts)
    except TypeError as exc:
        raise ConfigError(f"key 'run.bo': {exc}") from exc


def _run_task(task):
    name, kernel, algorithm, seed, obj_path, sec, group = task
    obj = SyntheticObjective.loads(Path(obj_path).read_text())
    cfg = _bo_config(sec, seed)
    try:
        trace = bo.run(obj, kernel, cfg, algorithm, group=group)
    except (bo.BOError, np.linalg.LinAlgError) as exc:
        return name, algorithm, seed, None, str(exc)
    trace.meta["kernel"] = name
    return name, algorithm, seed, trace, None


def _objective_path(cfg: dict, sec: dict, seed: int) -> Path:
    raw = str(require(sec, "objective", "run"))
    path = _resolve(cfg, raw.format(seed=seed))
    if not path.is_file():
        raise ConfigError(f"key 'run.objective': objective file not found: {path}")
    return path


def cmd_run(cfg: dict, out: Path, jobs: int = 1) -> dict:
    sec = section(cfg, "run")
    kernels = kernels_of(sec, "run")
    algorithms = sec.get("algorithms", ["mvr", "ucb"])
    seeds = seeds_of(sec, "run")
    tasks = []
    group = None
    if "constrained" in sec:
        c = sec["constrained"]
        group = grp.from_config(require(c, "group", "run.constrained"))
    for s in seeds:
        obj_path = str(_objective_path(cfg, sec, s))
        for name, k in kernels.items():
            for a in algorithms:
                tasks.append((name, k, a, s, obj_path, sec, group))
        if group is not None:
            c = sec["constrained"]
            cname = c.get("kernel", next(iter(kernels)))
            if cname not in kernels:
                raise ConfigError(f"key 'run.constrained.kernel': unknown kernel {cname!r}")
            for a in c.get("algorithms", algorithms):
                tasks.append((cname, kernels[cname], f"constrained_{a}", s, obj_path, sec, group))
    if jobs > 1:
        with ProcessPoolExecutor(jobs) as ex:
            results = list(ex.map(_run_task, tasks))
    else:
        results = [_run_task(t) for t in tasks]
    results.sort(key=lambda r: (r[0], r[1], r[2]))
    traces_dir = out / "traces"
    raw = ["# schema: invbo.raw/1", "kernel,algorithm,seed,t,simple_regret,cumulative_regret"]
    curves: dict[tuple[str, str], list[np.ndarray]] = {}
    failures = []
    for name, a, s, trace, err in results:
        if trace is None:
            log.warning("run %s/%s seed %d failed: %s", name, a, s, err)
            failures.append({"kernel": name, "algorithm": a, "seed": s, "error": err})
            continue
        atomic_write(traces_dir / f"{name}__{a}__seed{s}.csv", trace.to_csv())
        for t in range(trace.horizon):
            raw.append(f"{name},{a},{s},{t + 1},{_fmt(trace.simple_regret[t])},{_fmt(trace.cumulative_regret[t])}")
        curves.setdefault((name, a), []).append(trace.simple_regret)
    atomic_write(out / "raw.csv", "\n".join(raw) + "\n")
    agg = ["# schema: invbo.aggregate/1", "kernel,algorithm,t,n,mean,sd,median,q25,q75"]
    summary = {}
    for (name, a), rows in sorted(curves.items()):
        R = np.stack(rows)
        for t in range(R.shape[1]):
            col = R[:, t]
            sd = float(np.std(col, ddof=1)) if len(col) > 1 else 0.0
            q25, med, q75 = np.quantile(col, [0.25, 0.5, 0.75])
            agg.append(",".join([name, a, str(t + 1), str(len(col))] + [_fmt(v) for v in (col.mean(), sd, med, q25, q75)]))
        summary[f"{name}/{a}"] = {"seeds": len(rows), "final_median": float(np.median(R[:, -1])),
                                  "final_mean": float(R[:, -1].mean())}
    atomic_write(out / "aggregate.csv", "\n".join(agg) + "\n")
    report = {"schema": "invbo.run/1", "summary": summary, "failures": failures}
    atomic_write(out / "summary.json", dump_json(report))
    return report


# -- mig --------------------------------------------------------------------


def cmd_mig(cfg: dict, out: Path, jobs: int = 1) -> analysis.MIGReport:
    sec = section(cfg, "mig")
    kernels = kernels_of(sec, "mig")
    cand = sec.get("candidates", {})
    domain = dom.parse_domain(cand.get("domain", "hypercube:2"))
    rng = np.random.default_rng(int(cand.get("seed", 0)))
    X = dom.candidates(domain, cand.get("scheme", "grid"), int(cand.get("count", 400)), rng)
    T = int(require(sec, "T", "mig"))
    tau = float(require(sec, "tau", "mig"))
    reference = sec.get("reference")
    if jobs > 1 and len(kernels) > 1:
        with ProcessPoolExecutor(jobs) as ex:
            futs = {n: ex.submit(analysis.greedy_information_gain, k, X, T, tau) for n, k in kernels.items()}
            pairs = {n: f.result() for n, f in futs.items()}
        rep = analysis.MIGReport(tau, {n: p[0] for n, p in pairs.items()}, {n: p[1] for n, p in pairs.items()},
                                 reference)
    else:
        rep = analysis.empirical_mig(kernels, X, T, tau, reference)
    atomic_write(out / "mig.csv", rep.to_csv())
    summary = {"schema": "invbo.mig/1", "T": T, "tau": tau, "candidates": len(X), "reference": reference,
               "final_gamma": {n: float(g[-1]) for n, g in rep.gammas.items()},
               "final_ratio": {n: float(r[-1]) for n, r in rep.ratios().items()}}
    atomic_write(out / "mig.json", dump_json(summary))
    return rep


# -- bounds -----------------------------------------------------------------


def cmd_bounds(cfg: dict, out: Path, jobs: int = 1) -> dict:
    sec = section(cfg, "bounds")
    inputs = dict(require(sec, "inputs", "bounds"))
    sizes = sec.get("group_sizes", [inputs.pop("group_size", 1)])
    inputs.pop("group_size", None)
    space = sec.get("space", "hypercube")
    fraction = float(sec.get("budget_fraction", 1.0))
    rows = ["# schema: invbo.bounds/1", "group_size,lower_bound_T,upper_bound_T,lower_group_factor,upper_group_factor"]
    report = {"schema": "invbo.bounds/1", "space": space, "budget_fraction": fraction, "bounds": []}
    for g in sizes:
        try:
            bi = analysis.BoundInputs(group_size=int(g), **inputs)
        except TypeError as exc:
            raise ConfigError(f"key 'bounds.inputs': {exc}") from exc
        lo = analysis.lower_bound_T(bi, space, fraction)
        hi = analysis.upper_bound_T(bi.epsilon, int(g), bi.nu, bi.d)
        rows.append(",".join([str(g)] + [_fmt(v) for v in (lo.value, hi.value, lo.terms["group_factor"],
                                                             hi.terms["group_factor"])]))
        report["bounds"].append({"group_size": int(g), "lower": lo.to_dict(), "upper": hi.to_dict()})
    atomic_write(out / "bounds.csv", "\n".join(rows) + "\n")
    if "distinguishing" in sec:
        report["distinguishing"] = _distinguishing(sec["distinguishing"], out, jobs)
    atomic_write(out / "bounds.json", dump_json(report))
    return report


def _distinguishing(sec: dict, out: Path, jobs: int) -> dict:
    G = grp.from_config(require(sec, "group", "bounds.distinguishing"))
    nu = float(sec.get("nu", 2.5))
    w = float(require(sec, "width", "bounds.distinguishing"))
    fam = build_family(G, w, float(require(sec, "epsilon", "bounds.distinguishing")), nu)
    free = fam.free_members()
    i, j = int(sec.get("i", free[0])), int(sec.get("j", free[len(free) // 2]))
    res = analysis.distinguishing_experiment(
        fam, i, j, sec.get("algorithm", "mvr"), int(sec.get("T", 10)), float(sec.get("sigma", 0.2)),
        int(sec.get("trials", 100)), int(sec.get("seed", 0)), float(sec.get("delta", 0.1)),
        candidate_count=int(sec.get("candidate_count", 1000)), jobs=jobs)
    lines = ["# schema: invbo.distinguishing/1",
             "trial,seed,region_f,region_fprime,regret_f,regret_fprime,success_f,success_fprime"]
    for r in res.records:
        lines.append(",".join([str(r["trial"]), str(r["seed"]), str(r["region_f"]), str(r["region_fprime"]),
                               _fmt(r["regret_f"]), _fmt(r["regret_fprime"]),
                               str(int(r["success_f"])), str(int(r["success_fprime"]))]))
    atomic_write(out / "distinguishing.csv", "\n".join(lines) + "\n")
    return res.summary()


# -- verify -----------------------------------------------------------------


def cmd_verify(cfg: dict, out: Path, jobs: int = 1) -> list[verify.CheckResult]:
    opts = cfg.get("verify") or {}
    if not isinstance(opts, dict):
        raise ConfigError("key 'verify': expected a mapping of check name -> options")
    unknown = set(opts) - set(verify.CHECKS)
    if unknown:
        raise ConfigError(f"key 'verify.{sorted(unknown)[0]}': unknown check")
    results = verify.run_suite(opts)
    report = {"schema": "invbo.verify/1",
              "checks": [{"name": r.name, "ok": r.ok, "detail": r.detail, "counterexample": r.counterexample}
                         for r in results]}
    atomic_write(out / "verify.json", dump_json(report))
    return results


# -- entry point ------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="invbo", description=__doc__)
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", required=True, help="YAML experiment config")
    p.add_argument("--jobs", type=int, default=1, help="worker processes for independent runs")
    p.add_argument("--out", default=None, help=f"output directory (else ${OUT_ENV}, config 'out', results/<stem>)")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.jobs < 1:
        print("error: --jobs must be >= 1", file=sys.stderr)
        return 2
    try:
        cfg = load_config(args.config)
        out = output_dir(cfg, args.out)
        if args.command == "synth":
            paths = cmd_synth(cfg, out, args.jobs)
            print(f"wrote {len(paths)} objective(s) to {out}")
        elif args.command == "run":
            rep = cmd_run(cfg, out, args.jobs)
            for k, v in rep["summary"].items():
                print(f"{k}: median final simple regret {v['final_median']:.6g} over {v['seeds']} seeds")
            for f in rep["failures"]:
                print(f"failed: {f['kernel']}/{f['algorithm']} seed {f['seed']}: {f['error']}")
        elif args.command == "mig":
            rep = cmd_mig(cfg, out, args.jobs)
            for n, g in rep.gammas.items():
                print(f"{n}: gamma_{rep.horizon} = {g[-1]:.6g}")
        elif args.command == "bounds":
            rep = cmd_bounds(cfg, out, args.jobs)
            for b in rep["bounds"]:
                print(f"|G|={b['group_size']}: lower {b['lower']['value']:.6g}, upper {b['upper']['value']:.6g}")
        else:
            results = cmd_verify(cfg, out, args.jobs)
            for r in results:
                print(f"{'PASS' if r.ok else 'FAIL'} {r.name}: {r.detail}")
            bad = [r for r in results if not r.ok]
            if bad:
                print(f"counterexample ({bad[0].name}): {bad[0].counterexample}", file=sys.stderr)
                return 1
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
