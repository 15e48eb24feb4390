"""Statistical illuminant estimators: gray-world, white-patch, shades-of-gray, gray-edge.

All functions take an ``(H, W, 3)`` array of nonnegative values. Pixels that
are zero in every channel are treated as masked and excluded.
"""
from dataclasses import dataclass

import numpy as np

from .tensor_nn import GRAY


@dataclass
class BaselineConfig:
    minkowski_p: float = 6.0
    edge_order: int = 1
    exclude_masked: bool = True

    def __post_init__(self):
        if not self.minkowski_p >= 1:
            raise ValueError(f"Minkowski p must be >= 1, got {self.minkowski_p}")
        if self.edge_order not in (1, 2):
            raise ValueError(f"edge order must be 1 or 2, got {self.edge_order}")


def _pixels(img, exclude_masked=True):
    x = np.asarray(getattr(img, "pixels", img), dtype=np.float64)
    if x.ndim != 3 or x.shape[2] != 3:
        raise ValueError(f"expected an (H, W, 3) image, got shape {x.shape}")
    flat = x.reshape(-1, 3)
    if exclude_masked:
        flat = flat[flat.any(axis=1)]
    if flat.shape[0] == 0:
        raise ValueError("image has no unmasked pixels")
    return flat


def _unit(v):
    v = np.asarray(v, dtype=np.float64)
    return v / np.linalg.norm(v)


def _minkowski(values, p):
    # scale by the per-channel max first so large p does not overflow
    peak = values.max(axis=0)
    safe = np.where(peak > 0, peak, 1.0)
    return safe * np.mean((values / safe) ** p, axis=0) ** (1.0 / p)


def gray_world(img, exclude_masked=True):
    return _unit(_pixels(img, exclude_masked).mean(axis=0))


def white_patch(img, exclude_masked=True):
    return _unit(_pixels(img, exclude_masked).max(axis=0))


def shades_of_gray(img, p=6.0, exclude_masked=True):
    if not p >= 1:
        raise ValueError(f"Minkowski p must be >= 1, got {p}")
    return _unit(_minkowski(_pixels(img, exclude_masked), p))


def edge_responses(img, order=1, exclude_masked=True):
    """Per-channel absolute derivative responses at interior pixels.

    Order 1 is the central-difference gradient magnitude, order 2 the
    absolute 5-point Laplacian. Responses whose stencil touches a masked
    pixel are dropped. Returns an ``(M, 3)`` array.
    """
    x = np.asarray(getattr(img, "pixels", img), dtype=np.float64)
    if x.ndim != 3 or x.shape[2] != 3:
        raise ValueError(f"expected an (H, W, 3) image, got shape {x.shape}")
    if x.shape[0] < 3 or x.shape[1] < 3:
        raise ValueError("gray-edge needs an image of at least 3x3 pixels")
    c = x[1:-1, 1:-1]
    up, down = x[:-2, 1:-1], x[2:, 1:-1]
    left, right = x[1:-1, :-2], x[1:-1, 2:]
    if order == 1:
        gy = (down - up) / 2
        gx = (right - left) / 2
        resp = np.sqrt(gx ** 2 + gy ** 2)
    elif order == 2:
        resp = np.abs(up + down + left + right - 4 * c)
    else:
        raise ValueError(f"edge order must be 1 or 2, got {order}")
    valid = np.ones(c.shape[:2], dtype=bool)
    if exclude_masked:
        for nb in (c, up, down, left, right):
            valid &= nb.any(axis=2)
    return resp[valid]


def gray_edge(img, order=1, p=1.0, exclude_masked=True):
    """Minkowski mean of edge responses, normalized.

    Returns ``(estimate, degenerate)``; ``degenerate`` is True and the
    estimate gray when no edge response is nonzero.
    """
    if not p >= 1:
        raise ValueError(f"Minkowski p must be >= 1, got {p}")
    resp = edge_responses(img, order, exclude_masked)
    if resp.shape[0] == 0 or not np.any(resp > 0):
        return GRAY.copy(), True
    est = _minkowski(resp, p)
    return _unit(est), False


ALGORITHMS = ("grayworld", "whitepatch", "sog", "ge1", "ge2")


def estimate(name, img, p=None):
    """Dispatch a baseline by its command-line name; returns a unit vector."""
    if name == "grayworld":
        return gray_world(img)
    if name == "whitepatch":
        return white_patch(img)
    if name == "sog":
        return shades_of_gray(img, 6.0 if p is None else p)
    if name in ("ge1", "ge2"):
        est, _ = gray_edge(img, order=int(name[-1]), p=1.0 if p is None else p)
        return est
    raise ValueError(f"unknown baseline {name!r}; expected one of {', '.join(ALGORITHMS)}")
