"""Command-line front end: classify and simulate market models.

Commands
--------
classify  -- deterministic NIP/NSA/NUPBR/RP verdicts, written as a JSON
             report with stable key order (byte-identical across reruns).
simulate  -- chain Monte Carlo: tradeoff refinement ladder, default
             arbitrage strategies, martingale diagnostics; emits the report
             plus plot-ready CSV files (no plotting dependency).
catalog   -- list or show the named model builders.
report    -- merge prior classify/simulate outputs into one table.

Exit codes: 0 on a definitive run, 2 when any notion is inconclusive,
1 on validation errors. Flags mirror the DIFFARB_* environment variables.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Optional

import numpy as np

from .arb_classifier import INCONCLUSIVE, classify, verdict_to_json
from .diffusion_model import DiffusionSpec, SpecValidationError, derive_natural_scale, load_model_spec
from .measure_kit import DEFAULT_QUAD, MeasureKitError, QuadConfig
from .mc_engine import (
    build_chain,
    estimate_tradeoff,
    martingale_diagnostic,
    run_strategy,
    sample_paths,
)
from .model_catalog import CATALOG, build_model, catalog_names

__all__ = ["RunConfig", "main", "cmd_classify", "cmd_simulate", "cmd_catalog", "cmd_report"]


@dataclass
class RunConfig:
    command: str
    model_path: Optional[str] = None
    catalog_name: Optional[str] = None
    params: Optional[dict] = None
    seed: int = 42
    grid: int = 512
    n_paths: int = 10_000
    levels: int = 3
    out: str = "out"
    tol: Optional[dict] = None
    run_id: Optional[str] = None
    dump_paths: bool = False

    def quad(self) -> QuadConfig:
        return DEFAULT_QUAD.override(**(self.tol or {}))


def _parse_value(text: str):
    t = text.strip()
    if t in ("inf", "+inf"):
        return math.inf
    if t == "-inf":
        return -math.inf
    try:
        return int(t)
    except ValueError:
        pass
    try:
        return float(t)
    except ValueError:
        pass
    if "/" in t:
        return float(Fraction(t))
    return t


def _parse_kv(text: str) -> dict:
    out = {}
    if not text:
        return out
    for item in text.split(","):
        if not item:
            continue
        if "=" not in item:
            raise ValueError(f"expected key=value, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = _parse_value(v)
    return out


def _env(name: str, fallback):
    return os.environ.get(f"DIFFARB_{name}", fallback)


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="diffarb", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def add_common(sp, with_model=True):
        if with_model:
            sp.add_argument("--model", default=_env("MODEL", None), help="path to a model-spec JSON document")
            sp.add_argument("--catalog", default=_env("CATALOG", None), help="catalog model name")
            sp.add_argument("--params", default=_env("PARAMS", ""), help="catalog parameters k=v,...")
        sp.add_argument("--seed", type=int, default=int(_env("SEED", 42)))
        sp.add_argument("--grid", type=int, default=int(_env("GRID", 512)))
        sp.add_argument("--paths", type=int, default=int(_env("PATHS", 10_000)))
        sp.add_argument("--levels", type=int, default=int(_env("LEVELS", 3)))
        sp.add_argument("--out", default=_env("OUT", "out"))
        sp.add_argument("--tol", default=_env("TOL", ""), help="tolerance overrides key=val,...")
        sp.add_argument("--id", dest="run_id", default=_env("ID", None), help="report label (default: the model id)")

    add_common(sub.add_parser("classify", help="deterministic verdicts"))
    sim = sub.add_parser("simulate", help="Monte Carlo cross-validation")
    add_common(sim)
    sim.add_argument("--dump-paths", action="store_true", help="also write a per-path CSV")
    cat = sub.add_parser("catalog", help="list or show catalog entries")
    cat.add_argument("action", choices=["list", "show"])
    cat.add_argument("name", nargs="?", default=None)
    rep = sub.add_parser("report", help="merge prior outputs into one table")
    add_common(rep, with_model=False)
    return p


def _config_from_args(args) -> RunConfig:
    return RunConfig(
        command=args.command,
        model_path=getattr(args, "model", None),
        catalog_name=getattr(args, "catalog", None),
        params=_parse_kv(getattr(args, "params", "") or ""),
        seed=args.seed,
        grid=args.grid,
        n_paths=args.paths,
        levels=args.levels,
        out=args.out,
        tol=_parse_kv(getattr(args, "tol", "") or ""),
        run_id=getattr(args, "run_id", None),
        dump_paths=bool(getattr(args, "dump_paths", False)),
    )


def _load_spec(cfg: RunConfig) -> DiffusionSpec:
    if cfg.model_path:
        with open(cfg.model_path) as fh:
            doc = json.load(fh)
        if "catalog" in doc:
            return build_model(doc["catalog"], doc.get("params", {}))
        return load_model_spec(doc)
    if cfg.catalog_name:
        return build_model(cfg.catalog_name, cfg.params or {})
    raise SpecValidationError("no model given: use --model <path> or --catalog <name>")


def _write_json(path: Path, obj: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2)
        fh.write("\n")


def _write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(repr(v) if isinstance(v, float) else str(v) for v in row) + "\n")


# ---------------------------------------------------------------------------
# classify
# ---------------------------------------------------------------------------


def cmd_classify(cfg: RunConfig) -> int:
    try:
        spec = _load_spec(cfg)
        verdict = classify(spec, cfg.quad())
    except (SpecValidationError, MeasureKitError, ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    label = cfg.run_id or spec.model_id
    report = verdict_to_json(spec, verdict)
    report["model_id"] = label
    report["seed"] = cfg.seed
    out = Path(cfg.out) / f"classify_{label}.json"
    _write_json(out, report)
    line = f"{label}: NIP {verdict.nip}, NSA {verdict.nsa}, NUPBR {verdict.nupbr}, RP {verdict.rp}"
    print(line)
    print(f"report: {out}")
    if INCONCLUSIVE in (verdict.nip, verdict.nsa, verdict.nupbr):
        return 2
    return 0


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------


def cmd_simulate(cfg: RunConfig) -> int:
    try:
        spec = _load_spec(cfg)
        if spec.horizon <= 0:
            raise SpecValidationError("horizon must be positive")
        view = derive_natural_scale(spec, cfg.quad())
        chain = build_chain(view, spec, N=cfg.grid)
    except (SpecValidationError, MeasureKitError, ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1

    T = spec.horizon
    batch = sample_paths(chain, cfg.n_paths, cfg.seed, T)
    tr = estimate_tradeoff(
        view, spec, n_paths=max(1000, cfg.n_paths // 4), seed=cfg.seed,
        base_grid=max(64, cfg.grid // 4), levels=cfg.levels,
    )

    strategies = []
    reflecting = [s for s, b in view.boundaries if b.kind == "reflecting"]
    accessible = [s for s, b in view.boundaries if b.accessible]
    if accessible:
        strategies.append(
            run_strategy(view, spec, "post_hitting_hold", chain=chain, n_paths=cfg.n_paths, seed=cfg.seed)
        )
    if reflecting:
        strategies.append(
            run_strategy(view, spec, "boundary_sit", chain=chain, n_paths=cfg.n_paths, seed=cfg.seed)
        )

    diagnostics = []
    if reflecting:
        diagnostics.append(
            martingale_diagnostic(view, spec, "U_minus_half_L", chain=chain, n_paths=min(cfg.n_paths, 5000), seed=cfg.seed)
        )
    diagnostics.append(
        martingale_diagnostic(
            view, spec, "discounted_price_drift", chain=chain, n_paths=min(cfg.n_paths, 5000), seed=cfg.seed
        )
    )

    label = cfg.run_id or spec.model_id
    report = {
        "model_id": label,
        "r": spec.r,
        "horizon": T,
        "seed": cfg.seed,
        "grid": cfg.grid,
        "n_paths": cfg.n_paths,
        "discarded_paths": int(batch.discarded.sum()),
        "tradeoff": {
            "grid_sizes": list(tr.grid_sizes),
            "estimates": list(tr.estimates),
            "ratios": list(tr.ratios),
            "divergence": tr.divergence,
        },
        "strategies": [
            {
                "name": s.name,
                "n_used": s.n_used,
                "mean": s.mean,
                "se": s.se,
                "min_payoff": s.min_payoff,
                "frac_positive": s.frac_positive,
                "wilson95": [s.wilson_low, s.wilson_high],
                "grid_step": s.grid_step,
            }
            for s in strategies
        ],
        "diagnostics": [
            {
                "target": d.target,
                "t_stat": d.t_stat,
                "mean": d.mean,
                "se": d.se,
                "n_samples": d.n_samples,
                "pass": bool(d.passes()),
            }
            for d in diagnostics
        ],
    }
    out_dir = Path(cfg.out)
    _write_json(out_dir / f"simulate_{label}.json", report)

    _write_csv(
        out_dir / f"kladder_{label}.csv",
        ["grid_size", "K_estimate", "ratio_to_previous"],
        [
            [n, k, tr.ratios[i - 1] if i > 0 else ""]
            for i, (n, k) in enumerate(zip(tr.grid_sizes, tr.estimates))
        ],
    )

    if strategies:
        pay = _strategy_histogram(view, spec, chain, cfg)
        _write_csv(out_dir / f"payoffs_{label}.csv", ["bin_left", "bin_right", "count"], pay)

    if cfg.dump_paths:
        rows = [
            [
                i,
                float(chain.grid[batch.terminal_state[i]]),
                float(chain.q_grid[batch.terminal_state[i]]),
                int(batch.discarded[i]),
            ]
            for i in range(batch.n_paths)
        ]
        _write_csv(
            out_dir / f"paths_{label}.csv",
            ["path", "terminal_u", "terminal_value", "discarded"],
            rows,
        )

    print(
        f"{label}: K ladder {['%.4g' % k for k in tr.estimates]} "
        f"divergence={tr.divergence}; discarded={report['discarded_paths']}"
    )
    for d in report["diagnostics"]:
        print(f"  diagnostic {d['target']}: t = {d['t_stat']:.2f} ({'ok' if d['pass'] else 'FAIL'})")
    for s in report["strategies"]:
        print(
            f"  strategy {s['name']}: mean {s['mean']:.4g} se {s['se']:.3g} "
            f"min {s['min_payoff']:.4g} P(>0) CI [{s['wilson95'][0]:.3g}, {s['wilson95'][1]:.3g}]"
        )
    print(f"reports in {out_dir}")
    return 0


def _strategy_histogram(view, spec, chain, cfg: RunConfig) -> list[list]:
    """Payoff histogram of the post-hitting-hold strategy, re-streamed
    deterministically from the recorded seed."""
    accessible = [s for s, b in view.boundaries if b.accessible]
    if not accessible:
        return []
    level = view.boundary_image(accessible[0])
    lv_idx = chain.state_of(level)
    batch = sample_paths(chain, cfg.n_paths, cfg.seed, spec.horizon, hit_levels=[lv_idx], stream=7)
    keep = batch.kept
    ht = batch.hit_time[lv_idx][keep]
    if chain.start_index == lv_idx:
        ht = np.zeros_like(ht)
    term = batch.terminal_state[keep]
    hit = np.isfinite(ht)
    pay = np.zeros(term.size)
    if chain.r != 0.0:
        pay[hit] = np.exp(-chain.r * spec.horizon) * chain.q_grid[term[hit]] - np.exp(
            -chain.r * ht[hit]
        ) * chain.q_grid[lv_idx]
    else:
        pay[hit] = chain.q_grid[term[hit]] - chain.q_grid[lv_idx]
    lo, hi = float(pay.min()), float(pay.max())
    if hi <= lo:
        hi = lo + 1.0
    counts, edges = np.histogram(pay, bins=40, range=(lo, hi))
    return [[float(edges[i]), float(edges[i + 1]), int(counts[i])] for i in range(40)]


# ---------------------------------------------------------------------------
# catalog / report
# ---------------------------------------------------------------------------


def cmd_catalog(action: str, name: Optional[str]) -> int:
    if action == "list":
        for n in catalog_names():
            entry = CATALOG[n]
            params = ", ".join(f"{k}={v[0]}" for k, v in entry.params.items())
            print(f"{n}: {params}")
        return 0
    if name is None or name not in CATALOG:
        print(f"error: unknown catalog model {name!r}", file=sys.stderr)
        return 1
    entry = CATALOG[name]
    print(f"name: {entry.name}")
    print("params:")
    for k, (default, rng) in entry.params.items():
        print(f"  {k}: default {default}, range {rng}")
    print(f"notes: {entry.rationale}")
    return 0


def cmd_report(cfg: RunConfig) -> int:
    out_dir = Path(cfg.out)
    rows = []
    classified = sorted(out_dir.glob("classify_*.json"))
    simulated = {p.name.replace("simulate_", ""): p for p in out_dir.glob("simulate_*.json")}
    if not classified and not simulated:
        print(f"error: no prior outputs in {out_dir}", file=sys.stderr)
        return 1
    for path in classified:
        with open(path) as fh:
            rep = json.load(fh)
        row = {
            "model_id": rep["model_id"],
            "r": rep["r"],
            "nip": rep["nip"],
            "nsa": rep["nsa"],
            "nupbr": rep["nupbr"],
            "rp": rep["rp"],
            "k_divergence": "",
            "arbitrage_detected": "",
            "diagnostics_ok": "",
        }
        sim_path = simulated.get(path.name.replace("classify_", ""))
        if sim_path is not None:
            with open(sim_path) as fh:
                sim = json.load(fh)
            row["k_divergence"] = sim["tradeoff"]["divergence"]
            pos = [s for s in sim["strategies"] if s["name"].startswith("post_hitting_hold")]
            if pos:
                row["arbitrage_detected"] = pos[0]["wilson95"][0] > 0
            row["diagnostics_ok"] = all(d["pass"] for d in sim["diagnostics"])
        rows.append(row)

    header = ["model_id", "r", "nip", "nsa", "nupbr", "rp", "k_divergence", "arbitrage_detected", "diagnostics_ok"]
    _write_csv(out_dir / "report_table.csv", header, [[row[h] for h in header] for row in rows])
    widths = {h: max(len(h), *(len(str(row[h])) for row in rows)) for h in header}
    print("  ".join(h.ljust(widths[h]) for h in header))
    for row in rows:
        print("  ".join(str(row[h]).ljust(widths[h]) for h in header))

    # summary grid: which notions admit reflecting boundaries, by rate regime
    print()
    print("summary (reflecting boundaries admitted among these rows):")
    refl = [r_ for r_ in rows if r_["model_id"].startswith(("sticky_reflected", "squared_bessel"))]
    for regime, sel in (("r = 0", lambda r_: r_["r"] == 0), ("r != 0", lambda r_: r_["r"] != 0)):
        hits = [r_ for r_ in refl if sel(r_)]
        cells = []
        for notion in ("nip", "nsa", "nupbr"):
            ok = any(r_[notion] == "holds" for r_ in hits)
            cells.append(f"{notion.upper()}: {'possible' if ok else 'not seen'}")
        print(f"  {regime:7s} " + " | ".join(cells))
    print(f"table: {out_dir / 'report_table.csv'}")
    return 0


def main(argv: Optional[list[str]] = None) -> int:
    args = _build_parser().parse_args(argv)
    if args.command == "catalog":
        return cmd_catalog(args.action, args.name)
    cfg = _config_from_args(args)
    if args.command == "classify":
        return cmd_classify(cfg)
    if args.command == "simulate":
        return cmd_simulate(cfg)
    if args.command == "report":
        return cmd_report(cfg)
    raise AssertionError("unreachable")


if __name__ == "__main__":
    sys.exit(main())
