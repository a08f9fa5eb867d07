"""Small helpers shared by the experiment scripts."""
import argparse
import json
from pathlib import Path

import numpy as np

from dynavg.harness import SweepSpec, sweep


def parser(description: str, seeds: int) -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(description=description)
    p.add_argument("--seeds", type=int, default=seeds, help="number of master seeds")
    p.add_argument("--rounds", type=int, help="override the preset's horizon")
    p.add_argument("--out", help="directory for the JSON summary")
    return p


def run_grid(cfg, variants, seeds: int, axes=None):
    spec = SweepSpec(axes={**(axes or {}), "seed": list(range(seeds))}, variants=variants,
                     max_cells=10_000)
    return sweep(cfg, spec, write=False)


def grouped(res, key=lambda cell: cell.config.protocol.label):
    """Map key(cell) -> list of RunResult."""
    out = {}
    for cell, r in zip(res.cells, res.results):
        out.setdefault(key(cell), []).append(r)
    return out


def mean(results, fn) -> float:
    return float(np.mean([fn(r) for r in results]))


def table(rows: list[dict], cols: list[str]) -> None:
    widths = [max(len(c), *(len(fmt(r[c])) for r in rows)) for c in cols]
    print("  ".join(c.rjust(w) for c, w in zip(cols, widths)))
    for r in rows:
        print("  ".join(fmt(r[c]).rjust(w) for c, w in zip(cols, widths)))


def fmt(v) -> str:
    return f"{v:.4g}" if isinstance(v, float) else str(v)


def save(out, name: str, rows) -> None:
    if out:
        path = Path(out) / f"{name}.json"
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(rows, indent=1))
        print(f"wrote {path}")
