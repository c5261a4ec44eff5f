"""Analysis instruments: first-layer filter variance, convergence detection,
the T = t * n * e convergence-time model, and CSV report emission.

Filter variance is the population variance of a branch's first convolutional
layer weights (bias excluded); higher variance indicates better-learnt
filters, and the mean over branches compares architectures.
"""

import csv
import math
from dataclasses import dataclass

from .layers import Conv2d
from .optim import TrainCurve
from .search import SearchTrace
from .tensor import tensor_variance


@dataclass(frozen=True)
class FilterVarianceEntry:
    branch: str
    layer: str
    variance: float


@dataclass(frozen=True)
class FilterVarianceReport:
    entries: tuple
    mean_variance: float = None  # None when there are no entries

    @staticmethod
    def from_entries(entries):
        entries = tuple(entries)
        mean = (sum(e.variance for e in entries) / len(entries)
                if entries else None)
        return FilterVarianceReport(entries, mean)


@dataclass(frozen=True)
class ConvergenceReport:
    t: float      # mean per-batch training time, seconds
    n: int        # number of training batches
    e: int        # convergence epochs
    total: int    # T = round(t * n * e), whole seconds


def filter_variance(net) -> FilterVarianceReport:
    """One entry per branch: variance of its first conv layer's weights."""
    entries = []
    for i, (layers, names) in enumerate(zip(net.branches,
                                            net.branch_layer_names)):
        for layer, name in zip(layers, names):
            if isinstance(layer, Conv2d):
                entries.append(FilterVarianceEntry(
                    f"branch{i + 1}", name, tensor_variance(layer.weights)))
                break
    return FilterVarianceReport.from_entries(entries)


def convergence_time(t: float, n: float, e: float) -> int:
    """Total convergence time T = t * n * e, rounded to the nearest second."""
    if t < 0 or n < 0 or e < 0:
        raise ValueError(f"convergence_time inputs must be >= 0, "
                         f"got ({t}, {n}, {e})")
    return int(math.floor(t * n * e + 0.5))


def detect_convergence(curve: TrainCurve, window: int = 10,
                       tol: float = 0.005):
    """First epoch from which every length-`window` test-error range stays
    strictly below tol; None if the curve never stabilizes (or is shorter
    than the window)."""
    if window < 1:
        raise ValueError(f"window must be >= 1, got {window}")
    errors = curve.test_errors()
    last_start = len(errors) - window  # 0-based index of the final window
    if last_start < 0:
        return None
    first = None
    for start in range(last_start, -1, -1):
        chunk = errors[start:start + window]
        if max(chunk) - min(chunk) < tol:
            first = start + 1  # epochs are 1-based
        else:
            break
    return first


def _fmt(value) -> str:
    if isinstance(value, float):
        return f"{value:.6g}"
    return str(value)


def _depths_text(depths) -> str:
    return ",".join(str(d) for d in depths)


def emit_report(report, path) -> None:
    """Serialize a report as CSV (LF endings, 6 significant digits);
    byte-deterministic for equal inputs."""
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        if isinstance(report, FilterVarianceReport):
            writer.writerow(["branch", "layer", "variance"])
            for entry in report.entries:
                writer.writerow([entry.branch, entry.layer,
                                 _fmt(entry.variance)])
            if report.entries:
                writer.writerow(["mean", "", _fmt(report.mean_variance)])
        elif isinstance(report, ConvergenceReport):
            writer.writerow(["t", "n", "e", "T"])
            writer.writerow([_fmt(report.t), report.n, report.e, report.total])
        elif isinstance(report, SearchTrace):
            writer.writerow(["round", "candidate_depths", "error", "chosen"])
            for rnd in report.rounds:
                decision = _depths_text(rnd.chosen) if rnd.chosen else "stop"
                for cand in rnd.candidates:
                    writer.writerow([rnd.number, _depths_text(cand.depths),
                                     _fmt(cand.error), decision])
            writer.writerow(["winner", _depths_text(report.winner),
                             _fmt(report.winner_error), ""])
        else:
            raise TypeError(f"cannot emit report of type {type(report).__name__}")
