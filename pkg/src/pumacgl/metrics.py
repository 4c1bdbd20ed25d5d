"""Continual-learning metrics over a lower-triangular accuracy matrix, and reports."""

import csv
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .serialize import write_json

REPORT_VERSION = 1


class IncompleteMatrixError(ValueError):
    pass


@dataclass(eq=False)
class PerformanceMatrix:
    """m[i, j] = accuracy on task j after training through task i (0-based, j <= i)."""

    values: np.ndarray
    labels: list = field(default_factory=list)

    @classmethod
    def empty(cls, K, labels=None):
        return cls(np.full((K, K), np.nan), list(labels) if labels is not None else [f"T{i + 1}" for i in range(K)])

    @property
    def K(self) -> int:
        return self.values.shape[0]

    def set_row(self, i, accs):
        if len(accs) != i + 1:
            raise ValueError(f"row {i} needs {i + 1} accuracies")
        if not np.isnan(self.values[i, : i + 1]).all():
            raise ValueError(f"row {i} was already written")
        acc = np.asarray(accs, dtype=np.float64)
        if ((acc < 0) | (acc > 1)).any():
            raise ValueError("accuracies must lie in [0, 1]")
        self.values[i, : i + 1] = acc

    def row_complete(self, i) -> bool:
        return bool(np.isfinite(self.values[i, : i + 1]).all())

    @property
    def rows_done(self) -> int:
        n = 0
        while n < self.K and self.row_complete(n):
            n += 1
        return n

    def to_lists(self):
        return [[float(v) for v in self.values[i, : i + 1]] for i in range(self.rows_done)]

    @classmethod
    def from_lists(cls, rows, K=None, labels=None):
        m = cls.empty(K or len(rows), labels)
        for i, r in enumerate(rows):
            m.set_row(i, r)
        return m

    def __eq__(self, other):
        return isinstance(other, PerformanceMatrix) and np.array_equal(self.values, other.values, equal_nan=True)

    __hash__ = None


def accuracy(pred, truth, mask=None) -> float:
    pred, truth = np.asarray(pred), np.asarray(truth)
    mask = np.ones(truth.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    if not mask.any():
        raise ValueError("evaluation mask is empty")
    return float(np.mean(pred[mask] == truth[mask]))


def _m(M):
    return M.values if isinstance(M, PerformanceMatrix) else np.asarray(M, dtype=np.float64)


def ap(M, k) -> float:
    """Mean accuracy over row k (1-based) of the matrix."""
    v = _m(M)
    if not 1 <= k <= v.shape[0] or not np.isfinite(v[k - 1, :k]).all():
        raise IncompleteMatrixError(f"row {k} is incomplete")
    return float(sum(v[k - 1, :k].tolist()) / k)


def map_(M) -> float:
    """Mean of the AP trajectory AP_1..AP_K."""
    K = _m(M).shape[0]
    return float(sum(ap(M, k) for k in range(1, K + 1)) / K)


def bwt(M, k=None) -> float:
    """Average change on tasks 1..k-1 between when they were learnt and after task k."""
    v = _m(M)
    k = v.shape[0] if k is None else k
    if k < 2:
        raise ValueError("backward transfer needs at least two tasks")
    for i in range(1, k + 1):
        ap(v, i)
    return float(sum((v[k - 1, i] - v[i, i]) for i in range(k - 1)) / (k - 1))


def summarize(M) -> dict:
    K = _m(M).shape[0]
    return {
        "ap": [ap(M, k) for k in range(1, K + 1)],
        "map": map_(M),
        "bwt": bwt(M) if K > 1 else None,
        "final_ap": ap(M, K),
    }


# -- reports ------------------------------------------------------------------

def render_report(runs, out_dir):
    """Write per-run JSON, matrix and loss-curve CSVs, and a mean±std comparison table.

    Each run is a dict with keys ``name``, ``group``, ``seed``, ``matrix``
    (PerformanceMatrix) and optionally ``config`` and ``loss_curves``.
    """
    runs = list(runs)
    if not runs:
        raise ValueError("no completed runs to report")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    groups = defaultdict(list)
    for r in runs:
        M = r["matrix"]
        s = summarize(M)
        groups[r["group"]].append(s)
        write_json(out / f"{r['name']}.json", {
            "version": REPORT_VERSION,
            "name": r["name"],
            "group": r["group"],
            "seed": r["seed"],
            "matrix": M.to_lists(),
            "ap": s["ap"],
            "map": s["map"],
            "bwt": s["bwt"],
            "config": r.get("config", {}),
        })
        with open(out / f"{r['name']}_matrix.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            for i in range(M.K):
                w.writerow([repr(float(x)) if j <= i else "" for j, x in enumerate(M.values[i])])
        for t, curve in enumerate(r.get("loss_curves", [])):
            with open(out / f"{r['name']}_loss_task{t:02d}.csv", "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["epoch", "loss"])
                w.writerows((e, repr(float(v))) for e, v in enumerate(curve))

    lines = [f"{'group':<40} {'n':>3} {'AP%':>12} {'mAP%':>12} {'BWT%':>12}"]
    for g in sorted(groups):
        ss = groups[g]
        cells = [format_cell([s[key] for s in ss]) for key in ("final_ap", "map", "bwt")]
        lines.append(f"{g:<40} {len(ss):>3} " + " ".join(f"{c:>12}" for c in cells))
    (out / "table.txt").write_text("\n".join(lines) + "\n")
    return out


def format_cell(values) -> str:
    """Percent mean±std to one decimal (sample std; 0.0 for a single value)."""
    vals = [v for v in values if v is not None]
    if not vals:
        return "-"
    a = np.asarray(vals, dtype=np.float64) * 100.0
    std = float(a.std(ddof=1)) if a.size > 1 else 0.0
    return f"{a.mean():.1f}±{std:.1f}"
