"""Command line entry point: ``rwrange <subcommand> [options]``."""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from dataclasses import asdict
from pathlib import Path

from . import brownian as bm
from . import green as gr
from . import walk as wk
from .experiments import (
    EXPERIMENTS,
    ExperimentResult,
    ExperimentSpec,
    gamma_samples,
    green_at,
    mc_estimate,
    path_seed,
    run_all,
    write_result,
)
from .stepdist import load_step_law, ref_walk


def parse_value(text: str):
    """'3' -> 3, '1e-4' -> 1e-4, '1,2,4' -> [1, 2, 4], anything else stays a string."""
    text = text.strip()
    if "," in text:
        return [parse_value(t) for t in text.split(",") if t.strip()]
    for conv in (int, float):
        try:
            return conv(text)
        except ValueError:
            pass
    if text.lower() in ("true", "false"):
        return text.lower() == "true"
    return text


def read_config(path: str | Path) -> dict:
    """Flat ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected key = value")
        key, value = line.split("=", 1)
        out[key.strip().replace("-", "_")] = parse_value(value)
    return out


def _list(conv):
    def parse(text):
        return [conv(float(t)) if conv is int else conv(t) for t in text.split(",") if t.strip()]

    return parse


def _common(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("global options")
    g.add_argument("--law", help="step law file (dx dy num den per line); default: reference walk")
    g.add_argument("--seed", type=int, help="root seed (default 0)")
    g.add_argument("--workers", type=int, help="worker processes (default 1)")
    g.add_argument("--out", help="output directory, or a file path for single-file outputs")
    g.add_argument("--config", help="flat key = value file; command line flags take precedence")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rwrange", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("range", help="E|R(n)|/n against the expansion predictions")
    _common(p)
    p.add_argument("--n", type=_list(int))
    p.add_argument("--replicas", type=int)
    p.add_argument("--walk-stats", type=int, metavar="N", help="also write per-walk I_k / Gamma_k rows at horizon N")
    p.add_argument("--lambda", dest="lam", type=float, help="lambda for the Gamma columns of --walk-stats (default 0.05)")

    p = sub.add_parser("killed-range", help="killed-range mean identity and residual decay")
    _common(p)
    p.add_argument("--lambda", dest="lam", type=_list(float))
    p.add_argument("--replicas", type=int)

    p = sub.add_parser("clt", help="second-order fluctuations against -(2 pi)^2 gamma_2(1)")
    _common(p)
    p.add_argument("--n", type=int)
    p.add_argument("--replicas", type=int, help="walk replicas")
    p.add_argument("--gamma-paths", type=int)
    p.add_argument("--h", type=float)
    p.add_argument("--eps-schedule", type=_list(float))

    p = sub.add_parser("identities", help="exact and closed-form identity suite")
    _common(p)
    p.add_argument("--paths", type=int)
    p.add_argument("--hit-replicas", type=int)
    p.add_argument("--rescale-paths", type=int)

    p = sub.add_parser("hoelder", help="offset-Gamma deviation across offsets")
    _common(p)
    p.add_argument("--lambda", dest="lam", type=_list(float))
    p.add_argument("--replicas", type=int)

    p = sub.add_parser("green", help="G_lambda on a window, CSV x,y,G")
    _common(p)
    p.add_argument("--lambda", dest="lam", type=float, required=False)
    p.add_argument("--method", choices=("series", "fourier"))
    p.add_argument("--window", type=int)

    p = sub.add_parser("cx", help="c_X by quadrature, JSON")
    _common(p)

    p = sub.add_parser("gamma", help="per-path alpha and gamma values, CSV")
    _common(p)
    p.add_argument("--h", type=float)
    p.add_argument("--T", type=float)
    p.add_argument("--k", type=int)
    p.add_argument("--eps-schedule", type=_list(float))
    p.add_argument("--paths", type=int)

    p = sub.add_parser("couple", help="block coupling error growth, CSV B,n,D_rms,stderr,exponent_fit")
    _common(p)
    p.add_argument("--block", type=_list(int))
    p.add_argument("--n", type=_list(int))
    p.add_argument("--replicas", type=int)
    p.add_argument("--bridge", choices=("dp", "rejection"))

    p = sub.add_parser("all", help="run every experiment and summarise verdicts")
    _common(p)
    p.add_argument("--quick", action="store_true", help="reduced replica counts (minutes, not an acceptance run)")
    return parser


# options that are not experiment parameters
_TOP = ("law", "seed", "workers", "out", "replicas")
_RENAME = {"lam": "lambda", "block": "blocks"}


def _settings(args: argparse.Namespace) -> dict:
    """Config file values overlaid with explicit flags."""
    merged = read_config(args.config) if args.config else {}
    for key, value in vars(args).items():
        if key in ("command", "config", "quick") or value is None:
            continue
        merged[_RENAME.get(key, key)] = value
    return merged


def _spec(name: str, settings: dict, default_replicas: int) -> ExperimentSpec:
    params = {k: v for k, v in settings.items() if k not in _TOP}
    return ExperimentSpec(
        experiment=name,
        law=settings.get("law"),
        params=params,
        replicas=int(settings.get("replicas", default_replicas)),
        seed=int(settings.get("seed", 0)),
        workers=int(settings.get("workers", 1)),
        out=settings.get("out"),
    )


def _out_path(settings: dict, default_name: str) -> Path:
    out = Path(settings.get("out") or ".")
    if out.suffix:
        out.parent.mkdir(parents=True, exist_ok=True)
        return out
    out.mkdir(parents=True, exist_ok=True)
    return out / default_name


def _write_csv(path: Path, fields, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(fields))
        w.writeheader()
        w.writerows(rows)


def _load_law(settings):
    return load_step_law(settings["law"]) if settings.get("law") else ref_walk()


def _report(result: ExperimentResult, settings: dict) -> int:
    out = settings.get("out") or "."
    for p in write_result(result, out):
        print(p)
    for v in result.verdicts:
        print(f"{'PASS' if v.passed else 'FAIL'}  {v.name}  measured={v.measured:.6g}  target={v.target:.6g}  {v.detail}")
    return 0 if result.passed else 1


def cmd_experiment(name: str, settings: dict, default_replicas: int) -> int:
    return _report(EXPERIMENTS[name](_spec(name, settings, default_replicas)), settings)


def cmd_range(settings: dict) -> int:
    code = cmd_experiment("range", settings, 1000)
    n_stats = settings.get("walk_stats")
    if n_stats:
        law = _load_law(settings)
        lam = float(settings.get("lambda", 0.05))
        g = green_at(law, lam)[0]
        seed = int(settings.get("seed", 0))
        reps = int(settings.get("replicas", 1000))
        rows = []
        for i in range(reps):
            s = path_seed(seed, 0, i)
            rows.append(wk.walk_stats_row(wk.simulate_walk(law, n_stats, s), n_stats, g, s))
        path = _out_path({"out": settings.get("out")}, "walk_stats.csv")
        wk.write_walk_csv(path, rows, lam, g)
        print(path)
    return code


def cmd_green(settings: dict) -> int:
    law = _load_law(settings)
    lam = float(settings.get("lambda", 0.05))
    radius = int(settings.get("window", 10))
    if settings.get("method", "series") == "series":
        table = gr.green_series(law, lam, radius=radius)
    else:
        table = gr.green_fourier_table(law, lam, radius)
    rows = [{"x": int(x), "y": int(y), "G": repr(float(table[(x, y)]))} for x, y in table.sites().reshape(-1, 2)]
    path = _out_path(settings, "green.csv")
    _write_csv(path, ("x", "y", "G"), rows)
    print(path)
    return 0


def cmd_cx(settings: dict) -> int:
    law = _load_law(settings)
    est = gr.c_x(law)
    doc = {
        "law": settings.get("law") or law.name,
        "c_x": est.value,
        "bound": est.bound,
        "refinement_levels": [dict(asdict(q), value=v) for q, v in zip(gr.CX_LEVELS, est.levels)],
    }
    path = _out_path(settings, "cx.json")
    path.write_text(json.dumps(doc, indent=2))
    print(path)
    print(json.dumps(doc))
    return 0


GAMMA_COLUMNS = ("path_seed", "k", "eps", "alpha", "gamma_level", "gamma_extrapolated")


def cmd_gamma(settings: dict) -> int:
    t0 = time.perf_counter()
    h = float(settings.get("h", 1e-3))
    T = float(settings.get("T", 1.0))
    k = int(settings.get("k", 2))
    eps = tuple(settings.get("eps_schedule") or bm.schedule(h))
    paths = int(settings.get("paths", 10))
    seed = int(settings.get("seed", 0))
    samples = gamma_samples(paths, h, T, k, eps, seed, int(settings.get("workers", 1)))
    rows = []
    for smp in samples:
        for j, est in enumerate(smp["estimates"], start=1):
            for lev, e in enumerate(eps):
                rows.append(
                    {
                        "path_seed": smp["seed"],
                        "k": j,
                        "eps": e,
                        "alpha": repr(float(smp["alpha"][lev, j - 1])),
                        "gamma_level": repr(est.levels[lev]),
                        "gamma_extrapolated": repr(est.value),
                    }
                )
    path = _out_path(settings, "gamma.csv")
    _write_csv(path, GAMMA_COLUMNS, rows)
    spec = ExperimentSpec("gamma", None, {"h": h, "T": T, "k": k, "eps_schedule": list(eps), "paths": paths}, paths, seed)
    res = ExperimentResult("gamma", spec)
    if paths >= 2:
        for j in range(1, k + 1):
            res.estimates.append(mc_estimate(f"gamma{j}_mean", [s["estimates"][j - 1].value for s in samples]))
    res.runtime_s = time.perf_counter() - t0
    env = path.with_suffix(".json")
    env.write_text(res.to_json())
    print(path)
    print(env)
    return 0


def cmd_all(settings: dict, quick: bool) -> int:
    if quick:
        plan = [
            ("identities", 1, {"paths": 50, "hit_replicas": 20000, "rescale_paths": 10}),
            ("killed-range", 20000, {}),
            ("hoelder", 10000, {}),
            ("range", 200, {"n": [10**4, 10**5]}),
            ("clt", 200, {"n": 2**16, "gamma_paths": 200, "h": 1e-3}),
            ("couple", 50, {"n": [2**k for k in range(6, 11)]}),
        ]
    else:
        plan = [
            ("identities", 1, {}),
            ("killed-range", 10**5, {}),
            ("hoelder", 20000, {}),
            ("range", 10**4, {"n": [10**6]}),
            ("clt", 2000, {"n": 2**20, "gamma_paths": 2000, "h": 1e-4}),
            ("couple", 200, {}),
        ]
    specs = []
    for name, reps, params in plan:
        s = dict(params)
        s.update({k: v for k, v in settings.items() if k not in ("replicas",)})
        specs.append(_spec(name, s, reps))
    summary = run_all(specs)
    out = Path(settings.get("out") or ".")
    for r in summary.results:
        write_result(r, out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "summary.json").write_text(json.dumps(summary.to_dict(), indent=2, default=float))
    for r in summary.results:
        print(f"{'PASS' if r.passed else 'FAIL'}  {r.experiment}  ({r.runtime_s:.1f} s)")
    for name, err in summary.errors.items():
        print(f"ERROR {name}: {err}")
    if not summary.passed:
        print("failing: " + ", ".join(summary.failing), file=sys.stderr)
        return 1
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    settings = _settings(args)
    cmd = args.command
    if cmd == "range":
        return cmd_range(settings)
    if cmd == "killed-range":
        return cmd_experiment("killed-range", settings, 10**5)
    if cmd == "clt":
        if "replicas" in settings:
            settings.setdefault("walk_replicas", settings["replicas"])
        return cmd_experiment("clt", settings, 1000)
    if cmd == "identities":
        return cmd_experiment("identities", settings, 1)
    if cmd == "hoelder":
        return cmd_experiment("hoelder", settings, 20000)
    if cmd == "couple":
        return cmd_experiment("couple", settings, 200)
    if cmd == "green":
        return cmd_green(settings)
    if cmd == "cx":
        return cmd_cx(settings)
    if cmd == "gamma":
        return cmd_gamma(settings)
    if cmd == "all":
        return cmd_all(settings, args.quick)
    raise AssertionError(cmd)


if __name__ == "__main__":
    sys.exit(main())
