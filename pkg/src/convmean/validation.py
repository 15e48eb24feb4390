"""Input checks shared by the estimator classes."""
import numpy as np

from .data import Dataset, LabeledImage, unit_illuminant


def check_images(X, min_shape=(1, 1)):
    """Normalize ``X`` to a list of ``(H, W, 3)`` float arrays.

    Accepts a 4-D array, a sequence of 3-D arrays or LabeledImages, or a
    Dataset. Values must be finite and nonnegative.
    """
    if isinstance(X, Dataset):
        X = [im.pixels for im in X]
    elif isinstance(X, np.ndarray):
        if X.ndim == 3:
            raise ValueError("expected a collection of images; wrap a single image as X[None]")
        if X.ndim != 4:
            raise ValueError(f"expected a 4-D image array (n, H, W, 3), got shape {X.shape}")
    images = []
    for i, img in enumerate(X):
        if isinstance(img, LabeledImage):
            img = img.pixels
        arr = np.asarray(img)
        if arr.ndim != 3 or arr.shape[2] != 3:
            raise ValueError(f"image {i}: expected shape (H, W, 3), got {arr.shape}")
        if arr.shape[0] < min_shape[0] or arr.shape[1] < min_shape[1]:
            raise ValueError(f"image {i}: {arr.shape[1]}x{arr.shape[0]} is smaller than "
                             f"{min_shape[1]}x{min_shape[0]}")
        arr = arr.astype(np.float64, copy=False)
        if not np.all(np.isfinite(arr)) or arr.min() < 0:
            raise ValueError(f"image {i}: values must be finite and nonnegative")
        images.append(arr)
    if not images:
        raise ValueError("no images given")
    return images


def check_illuminants(y, n=None):
    """Return ``y`` as an ``(n, 3)`` array of unit vectors."""
    if isinstance(y, Dataset):
        y = y.illuminants()
    y = np.asarray(y, dtype=np.float64)
    if y.ndim != 2 or y.shape[1] != 3:
        raise ValueError(f"illuminants must have shape (n, 3), got {y.shape}")
    if n is not None and y.shape[0] != n:
        raise ValueError(f"got {n} images but {y.shape[0]} illuminants")
    return np.stack([unit_illuminant(v, f"illuminant {i}") for i, v in enumerate(y)])


def to_uint8(img):
    """Quantize a 0..255 real image; values above 255 are rescaled by the maximum first."""
    arr = np.asarray(img, dtype=np.float64)
    peak = arr.max()
    if peak > 255:
        arr = arr * (255.0 / peak)
    return np.clip(np.rint(arr), 0, 255).astype(np.uint8)
