"""Angular error and the five-number summary used in color constancy tables."""
import csv
import io
import math
from dataclasses import dataclass

import numpy as np

STAT_NAMES = ("mean", "median", "trimean", "best25", "worst25")
CSV_HEADER = ("algo", "mean", "med", "tri", "best25", "worst25", "n")


def angular_error(estimate, truth):
    """Angle in degrees between two illuminant vectors (scale-invariant)."""
    a = np.asarray(estimate, dtype=np.float64)
    b = np.asarray(truth, dtype=np.float64)
    na = np.linalg.norm(a, axis=-1)
    nb = np.linalg.norm(b, axis=-1)
    if np.any(na == 0) or np.any(nb == 0):
        raise ValueError("angular error is undefined for a zero vector")
    cos = np.clip((a * b).sum(axis=-1) / (na * nb), -1.0, 1.0)
    return np.degrees(np.arccos(cos))


@dataclass(frozen=True)
class ErrorStats:
    mean: float
    median: float
    trimean: float
    best25: float
    worst25: float
    n: int

    def values(self):
        return np.array([getattr(self, k) for k in STAT_NAMES])

    def csv_row(self, algo):
        return [algo] + [f"{getattr(self, k):.6f}" for k in STAT_NAMES] + [str(self.n)]

    def __str__(self):
        return ("mean {:.3f}  med {:.3f}  tri {:.3f}  best25 {:.3f}  worst25 {:.3f}  (n={})"
                .format(*(getattr(self, k) for k in STAT_NAMES), self.n))


def error_stats(errors):
    """Mean, median, trimean and best/worst-quarter means of per-image errors.

    Quartiles interpolate linearly at position ``q * (n - 1)`` of the sorted
    list; the best and worst quarters hold ``ceil(n / 4)`` values each.
    """
    e = np.sort(np.asarray(errors, dtype=np.float64).ravel())
    n = e.size
    if n == 0:
        raise ValueError("error_stats needs at least one error value")
    q1, q2, q3 = np.quantile(e, [0.25, 0.5, 0.75], method="linear")
    k = math.ceil(n / 4)
    return ErrorStats(
        mean=float(e.mean()),
        median=float(q2),
        trimean=float((q1 + 2 * q2 + q3) / 4),
        best25=float(e[:k].mean()),
        worst25=float(e[-k:].mean()),
        n=int(n),
    )


def aggregate_cameras(per_camera):
    """Geometric mean of each statistic across cameras; ``n`` is the total count."""
    stats = list(per_camera.values()) if isinstance(per_camera, dict) else list(per_camera)
    if not stats:
        raise ValueError("no cameras to aggregate")
    table = np.array([s.values() for s in stats])
    if np.any(table <= 0):
        raise ValueError("geometric mean needs strictly positive statistics")
    geo = np.exp(np.log(table).mean(axis=0))
    return ErrorStats(*(float(g) for g in geo), n=int(sum(s.n for s in stats)))


def per_camera_stats(errors, cameras):
    errors = np.asarray(errors, dtype=np.float64)
    out = {}
    for cam in sorted({c or "" for c in cameras}):
        mask = np.array([(c or "") == cam for c in cameras])
        out[cam] = error_stats(errors[mask])
    return out


def stats_csv(rows):
    """Render ``[(algo, ErrorStats), ...]`` as CSV text with the table column order."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for algo, stats in rows:
        writer.writerow(stats.csv_row(algo))
    return buf.getvalue()


def read_stats_csv(text):
    reader = csv.reader(io.StringIO(text))
    header = tuple(next(reader))
    if header != CSV_HEADER:
        raise ValueError(f"unexpected stats header {header}")
    out = []
    for row in reader:
        if row:
            out.append((row[0], ErrorStats(*map(float, row[1:6]), n=int(row[6]))))
    return out
