"""Multi-seed execution, per-run summaries, result files and bundle comparison."""

from __future__ import annotations

import csv
import json
import statistics
from collections import defaultdict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from importlib import metadata
from pathlib import Path
from typing import Iterable, Optional, Sequence

from ..core import ROOT_ID, ConfigError, SimConfig
from ..metrics import (converged_window, delay_distribution, lifetime_estimate, mean_std,
                       pdr_in_window, root_stats_from_records, window_records)
from ..network import Network, RunResult
from .config import canonical_json, config_hash

SUMMARY_FILE = "summary.json"
MANIFEST_FILE = "manifest.json"
AGGREGATE_FILE = "aggregate.json"


class IncompatibleBundles(ValueError):
    pass


def code_version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "unknown"


def _group_means(values: dict) -> dict:
    return {g: statistics.fmean(v) for g, v in sorted(values.items()) if v}


def summarize(res: RunResult) -> dict:
    """Converged-window statistics of one run (JSON-ready, group keys as strings)."""
    cfg = res.config
    L = cfg.slotframe_length
    group_of = res.group_of
    lo, hi = converged_window(cfg.num_slotframes, L, cfg.converge_slotframe, cfg.max_delay_slots)
    recs = window_records(res.records, lo, hi)
    out = {
        "seed": cfg.seed,
        "sf": cfg.sf,
        "sf_max": cfg.sf_max,
        "sf_min": cfg.sf_min,
        "window_asn": [lo, hi],
        "generated": len(res.generated),
        "received": len(res.records),
        "pdr_e2e_raw": len(res.records) / len(res.generated) if res.generated else None,
    }
    try:
        out["pdr_e2e"] = pdr_in_window(res.generated, res.records, lo, hi)
    except ValueError:
        out["pdr_e2e"] = None
    if recs:
        st = root_stats_from_records(recs)
        on_time = sum(st.in_time.values()) / st.received
        dd = delay_distribution(recs, cfg.slot_duration, group_of)
        late_by_group = defaultdict(list)
        for src in sorted(st.in_time.keys() | st.delayed.keys()):
            late_by_group[group_of[src]].append(st.late_at_root(src))
        out.update(
            on_time_fraction=on_time,
            late_at_root=1.0 - on_time,
            group_mean_delay_s={str(g): v for g, v in dd.group_mean.items()},
            group_std_delay_s={str(g): v for g, v in dd.group_std.items()},
            group_late_at_root={str(g): v for g, v in _group_means(late_by_group).items()},
        )
    else:
        out.update(on_time_fraction=None, late_at_root=None, group_mean_delay_s={},
                   group_std_delay_s={}, group_late_at_root={})

    # latePaqs as held by each parent at the end of the run, averaged per child group
    lp = defaultdict(list)
    for (_node, child), (in_time, delayed) in res.late_final.items():
        if in_time + delayed:
            lp[group_of[child]].append(delayed / (in_time + delayed))
    out["group_latepaqs"] = {str(g): v for g, v in _group_means(lp).items()}

    life = lifetime_estimate(res.energy, cfg.charges_uc, cfg.battery_mah, cfg.slot_duration,
                             group_of, exclude=(ROOT_ID,))
    out["lifetime_years"] = life.network
    out["group_lifetime_years"] = {str(g): v for g, v in life.per_group.items()}

    cells = res.cell_per_slotframe[cfg.converge_slotframe:]
    out["mean_tx_cells"] = statistics.fmean(cells) if cells else None
    d2r = defaultdict(list)
    for n, v in res.d2r_mean.items():
        d2r[group_of[n]].append(v * cfg.slot_duration)
    out["group_d2r_s"] = {str(g): v for g, v in _group_means(d2r).items()}
    out["drops"] = dict(sorted(res.drops.items()))
    out["counters"] = dict(sorted(res.counters.items()))
    out["violations"] = dict(sorted(res.violations.items()))
    return out


def cell_bins(res: RunResult) -> list[float]:
    """Mean network-wide negotiated TX-cell count per bin of slotframes."""
    size = res.config.cell_bin_slotframes
    series = res.cell_per_slotframe
    return [statistics.fmean(series[i:i + size]) for i in range(0, len(series), size)]


def _fmt(x) -> str:
    return repr(float(x)) if isinstance(x, float) else str(x)


def _write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(x) for x in row])


def write_run(res: RunResult, outdir, summary: Optional[dict] = None) -> Path:
    """Write one run's files into ``outdir`` and return it."""
    cfg = res.config
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    slot = cfg.slot_duration
    _write_csv(out / "packets.csv", ("source", "origin_asn", "arrival_asn", "delay_s", "on_time"),
               ((r.source, r.origin_asn, r.arrival_asn, r.delay_slots * slot, int(r.on_time))
                for r in res.records))
    _write_csv(out / "latepaqs.csv", ("asn", "node", "child", "in_time", "delayed", "latepaqs"),
               res.late_rows)
    _write_csv(out / "cells.csv", ("bin_index", "tx_cell_count"), enumerate(cell_bins(res)))
    _write_csv(out / "events.csv", ("asn", "type", "node", "details"), res.events)
    summary = summary if summary is not None else summarize(res)
    (out / SUMMARY_FILE).write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    manifest = {
        "config_hash": config_hash(cfg),
        "seed": cfg.seed,
        "code_version": code_version(),
        "config": cfg.to_dict(),
    }
    (out / MANIFEST_FILE).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return out


def run_one(cfg: SimConfig) -> tuple[RunResult, dict]:
    res = Network(cfg).run()
    return res, summarize(res)


def _run_to_disk(args) -> dict:
    cfg, outdir = args
    res, summary = run_one(cfg)
    if outdir is not None:
        write_run(res, outdir, summary)
    return summary


def seed_list(cfg: SimConfig, seeds) -> list[int]:
    if isinstance(seeds, int):
        if seeds < 1:
            raise ConfigError("need at least one seed")
        return [cfg.seed + i for i in range(seeds)]
    return list(seeds)


def aggregate(summaries: Sequence[dict]) -> dict:
    """Mean and sample std across seeds of every scalar and per-group metric."""
    scalars = ("pdr_e2e", "pdr_e2e_raw", "on_time_fraction", "late_at_root", "lifetime_years",
               "mean_tx_cells")
    grouped = ("group_mean_delay_s", "group_std_delay_s", "group_late_at_root", "group_latepaqs",
               "group_lifetime_years", "group_d2r_s")
    out = {"seeds": [s["seed"] for s in summaries]}
    for key in scalars:
        vals = [s[key] for s in summaries if s.get(key) is not None]
        m, sd = mean_std(vals) if vals else (None, None)
        out[key] = {"mean": m, "std": sd, "n": len(vals)}
    for key in grouped:
        per = defaultdict(list)
        for s in summaries:
            for g, v in s.get(key, {}).items():
                per[g].append(v)
        out[key] = {g: dict(zip(("mean", "std"), mean_std(v))) for g, v in sorted(per.items(), key=lambda kv: int(kv[0]))}
    return out


@dataclass
class Bundle:
    """Results of one config over several seeds."""

    config: SimConfig
    summaries: list
    aggregate: dict = field(default_factory=dict)
    path: Optional[Path] = None


def run_experiment(cfg: SimConfig, seeds=10, out=None, workers: int = 1) -> Bundle:
    """Run ``cfg`` once per seed; optionally write ``out/seed_<n>/`` plus aggregate files."""
    cfg = cfg.validate()
    todo = []
    for seed in seed_list(cfg, seeds):
        run_dir = Path(out) / f"seed_{seed:04d}" if out is not None else None
        todo.append((cfg.replace(seed=seed), run_dir))
    if workers > 1 and len(todo) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            summaries = list(pool.map(_run_to_disk, todo))
    else:
        summaries = [_run_to_disk(t) for t in todo]
    bundle = Bundle(cfg, summaries, aggregate(summaries))
    if out is not None:
        root = Path(out)
        root.mkdir(parents=True, exist_ok=True)
        (root / AGGREGATE_FILE).write_text(json.dumps(bundle.aggregate, indent=2, sort_keys=True) + "\n")
        manifest = {
            "config_hash": config_hash(cfg),
            "seeds": bundle.aggregate["seeds"],
            "code_version": code_version(),
            "config": cfg.to_dict(),
        }
        (root / MANIFEST_FILE).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
        bundle.path = root
    return bundle


def load_bundle(path) -> Bundle:
    root = Path(path)
    try:
        manifest = json.loads((root / MANIFEST_FILE).read_text())
        summaries = [json.loads((d / SUMMARY_FILE).read_text())
                     for d in sorted(root.glob("seed_*")) if (d / SUMMARY_FILE).exists()]
    except (OSError, json.JSONDecodeError) as exc:
        raise IncompatibleBundles(f"{root}: not a results bundle ({exc})") from exc
    if not summaries:
        raise IncompatibleBundles(f"{root}: no per-seed summaries")
    cfg = SimConfig.from_dict(manifest["config"])
    return Bundle(cfg, summaries, aggregate(summaries), root)


# keys that must agree for two bundles to describe the same network and workload
_COMPARABLE = ("slotframe_length", "num_channels", "slot_duration", "max_delay", "num_slotframes",
               "packet_period", "packet_period_std", "payload_bytes", "groups", "group_size",
               "pdr_link", "links", "converge_slotframe")


def compare_runs(bundles: Sequence[Bundle]) -> dict:
    """Side-by-side table; values relative to the first bundle."""
    if len(bundles) < 2:
        raise IncompatibleBundles("need at least two bundles")
    base = bundles[0]
    ref = {k: getattr(base.config, k) for k in _COMPARABLE}
    for b in bundles[1:]:
        diff = [k for k in _COMPARABLE if getattr(b.config, k) != ref[k]]
        if diff:
            raise IncompatibleBundles(f"bundles differ in {diff}")
    keys = ("on_time_fraction", "pdr_e2e", "lifetime_years", "mean_tx_cells")
    rows = []
    for b in bundles:
        row = {"label": str(b.path) if b.path is not None else f"{b.config.sf}:{b.config.sf_max}"}
        for k in keys:
            row[k] = b.aggregate[k]["mean"]
            ref_k = base.aggregate[k]["mean"]
            row[f"{k}_delta"] = row[k] - ref_k if row[k] is not None and ref_k is not None else None
        b0 = base.aggregate["on_time_fraction"]["mean"]
        mine = row["on_time_fraction"]
        row["on_time_ratio"] = mine / b0 if b0 and mine is not None else None
        rows.append(row)
    return {"baseline": rows[0]["label"], "rows": rows}


def format_comparison(table: dict) -> str:
    def num(x, width, digits):
        return f"{x:{width}.{digits}f}" if x is not None else f"{'-':>{width}}"

    lines = [f"{'bundle':<40} {'on_time':>8} {'x base':>7} {'pdr':>8} {'life[y]':>8} {'cells':>7}"]
    for r in table["rows"]:
        lines.append(f"{r['label'][-40:]:<40} {num(r['on_time_fraction'], 8, 4)} "
                     f"{num(r['on_time_ratio'], 7, 2)} {num(r['pdr_e2e'], 8, 4)} "
                     f"{num(r['lifetime_years'], 8, 3)} {num(r['mean_tx_cells'], 7, 1)}")
    return "\n".join(lines)


def dump_summary(summary: dict) -> str:
    return canonical_json(summary)
