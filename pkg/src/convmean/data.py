"""Datasets on disk, thumbnails, input normalization, augmentation, synthetic scenes.

A dataset directory holds binary PPM (P6, maxval 255) images plus a
``ground_truth.csv`` with header ``id,r,g,b[,camera]``. Image arrays are
``(H, W, 3)``; sizes quoted as ``48x32`` are width x height, so the working
thumbnail is a ``(32, 48, 3)`` array.
"""
import csv
import logging
import os
import re
from dataclasses import dataclass, field

import numpy as np

from .exceptions import DataError, FormatError

logger = logging.getLogger(__name__)

THUMB_SHAPE = (32, 48)
GT_FILENAME = "ground_truth.csv"


@dataclass(eq=False)
class LabeledImage:
    pixels: np.ndarray
    gt: np.ndarray
    id: str
    camera: str = None

    def __post_init__(self):
        pixels = np.asarray(self.pixels)
        if pixels.ndim != 3 or pixels.shape[2] != 3:
            raise DataError(f"{self.id}: pixels must be (H, W, 3), got {pixels.shape}")
        if pixels.dtype != np.uint8:
            if pixels.min() < 0 or pixels.max() > 255:
                raise DataError(f"{self.id}: pixel values outside 0..255")
            pixels = np.rint(pixels).astype(np.uint8)
        self.pixels = pixels
        self.gt = unit_illuminant(self.gt, self.id)

    @property
    def shape(self):
        return self.pixels.shape


def unit_illuminant(v, name="illuminant"):
    v = np.asarray(v, dtype=np.float64).reshape(-1)
    if v.shape != (3,) or not np.all(np.isfinite(v)):
        raise DataError(f"{name}: illuminant must be 3 finite values, got {v}")
    norm = np.linalg.norm(v)
    if norm == 0:
        raise DataError(f"{name}: illuminant is the zero vector")
    return v / norm


class Dataset:
    """Images ordered by id."""

    def __init__(self, images):
        images = sorted(images, key=lambda im: im.id)
        ids = [im.id for im in images]
        if len(set(ids)) != len(ids):
            dupes = sorted({i for i in ids if ids.count(i) > 1})
            raise DataError(f"duplicate image ids: {', '.join(dupes)}")
        self.images = images

    def __len__(self):
        return len(self.images)

    def __iter__(self):
        return iter(self.images)

    def __getitem__(self, index):
        return self.images[index]

    def __repr__(self):
        return f"Dataset(n={len(self)})"

    @property
    def ids(self):
        return [im.id for im in self.images]

    @property
    def cameras(self):
        return [im.camera for im in self.images]

    def illuminants(self):
        return np.stack([im.gt for im in self.images]) if self.images else np.zeros((0, 3))

    def subset(self, indices):
        return Dataset([self.images[i] for i in indices])

    def thumbnails(self):
        return Dataset([make_thumbnail(im) for im in self.images])


# -- PPM ---------------------------------------------------------------------

_TOKEN = re.compile(rb"\s*(?:#[^\n]*\n\s*)*(\S+)")


def read_ppm(path_or_bytes):
    """Decode a binary P6 PPM with maxval 255 into a ``(H, W, 3)`` uint8 array."""
    if isinstance(path_or_bytes, (bytes, bytearray)):
        blob = bytes(path_or_bytes)
    else:
        with open(path_or_bytes, "rb") as fh:
            blob = fh.read()
    pos = 0
    tokens = []
    for _ in range(4):
        m = _TOKEN.match(blob, pos)
        if not m:
            raise FormatError("truncated PPM header")
        tokens.append(m.group(1))
        pos = m.end()
    if tokens[0] != b"P6":
        raise FormatError(f"not a binary PPM (magic {tokens[0]!r})")
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise FormatError("non-numeric PPM header field") from None
    if maxval != 255:
        raise FormatError(f"only 8-bit PPM is supported (maxval {maxval})")
    if width <= 0 or height <= 0:
        raise FormatError(f"invalid PPM size {width}x{height}")
    # exactly one whitespace byte separates the header from the raster
    pos += 1
    size = width * height * 3
    raster = blob[pos:pos + size]
    if len(raster) != size:
        raise FormatError(f"PPM raster has {len(raster)} bytes, expected {size}")
    return np.frombuffer(raster, dtype=np.uint8).reshape(height, width, 3).copy()


def encode_ppm(pixels):
    pixels = np.asarray(pixels)
    if pixels.ndim != 3 or pixels.shape[2] != 3:
        raise FormatError(f"PPM needs an (H, W, 3) array, got {pixels.shape}")
    if pixels.dtype != np.uint8:
        pixels = np.clip(np.rint(pixels), 0, 255).astype(np.uint8)
    h, w, _ = pixels.shape
    return b"P6\n%d %d\n255\n" % (w, h) + np.ascontiguousarray(pixels).tobytes()


def write_ppm(path, pixels):
    with open(path, "wb") as fh:
        fh.write(encode_ppm(pixels))


def to_ppm_pixels(values):
    """Scale a nonnegative real map to 0..255 by its maximum (grayscale maps are replicated)."""
    values = np.asarray(values, dtype=np.float64)
    if values.ndim == 2:
        values = values[..., None]
    if values.shape[2] == 1:
        values = np.repeat(values, 3, axis=2)
    peak = values.max()
    scaled = values / peak if peak > 0 else np.zeros_like(values)
    return np.clip(np.rint(255 * scaled), 0, 255).astype(np.uint8)


# -- dataset directories -------------------------------------------------------

def read_ground_truth(path):
    """Parse ``ground_truth.csv`` into ``{id: (gt, camera)}``."""
    rows = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header[:4]] != ["id", "r", "g", "b"]:
            raise DataError(f"{path}: header must start with id,r,g,b")
        for lineno, row in enumerate(reader, start=2):
            if not row or not any(cell.strip() for cell in row):
                continue
            if len(row) not in (4, 5):
                raise DataError(f"{path}:{lineno}: expected 4 or 5 fields, got {len(row)}")
            image_id = row[0].strip()
            try:
                rgb = [float(x) for x in row[1:4]]
            except ValueError:
                raise DataError(f"{path}:{lineno}: unparsable illuminant for id {image_id!r}") from None
            if image_id in rows:
                raise DataError(f"{path}:{lineno}: duplicate id {image_id!r}")
            camera = row[4].strip() or None if len(row) == 5 else None
            rows[image_id] = (unit_illuminant(rgb, image_id), camera)
    return rows


def load_dataset(directory):
    """Load every ``*.ppm`` in ``directory`` with its ground-truth row."""
    gt_path = os.path.join(directory, GT_FILENAME)
    if not os.path.isfile(gt_path):
        raise DataError(f"{directory}: missing {GT_FILENAME}")
    rows = read_ground_truth(gt_path)
    images = []
    for name in sorted(os.listdir(directory)):
        stem, ext = os.path.splitext(name)
        if ext.lower() != ".ppm":
            continue
        if stem not in rows:
            raise DataError(f"image {stem!r} has no row in {GT_FILENAME}")
        try:
            pixels = read_ppm(os.path.join(directory, name))
        except FormatError as exc:
            raise DataError(f"image {stem!r}: {exc}") from None
        gt, camera = rows[stem]
        images.append(LabeledImage(pixels, gt, stem, camera))
    if not images:
        raise DataError(f"{directory}: no .ppm images found")
    logger.debug("loaded %d images from %s", len(images), directory)
    return Dataset(images)


def save_dataset(dataset, directory):
    os.makedirs(directory, exist_ok=True)
    with_camera = any(im.camera for im in dataset)
    with open(os.path.join(directory, GT_FILENAME), "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["id", "r", "g", "b"] + (["camera"] if with_camera else []))
        for im in dataset:
            row = [im.id] + [repr(float(c)) for c in im.gt]
            if with_camera:
                row.append(im.camera or "")
            writer.writerow(row)
    for im in dataset:
        write_ppm(os.path.join(directory, im.id + ".ppm"), im.pixels)


# -- normalization and resizing ------------------------------------------------

def normalize_input(img):
    """Divide by the image's global maximum so the brightest value becomes 1."""
    pixels = img.pixels if isinstance(img, LabeledImage) else img
    x = np.asarray(pixels, dtype=np.float64)
    peak = x.max()
    if not peak > 0:
        raise DataError("image is entirely zero (fully masked)")
    return x / peak


def _axis_weights(in_size, out_size, start, count):
    # half-pixel centres: src = (dst + 0.5) * in/out - 0.5, clamped to the edge
    dst = np.arange(start, start + count, dtype=np.float64)
    src = (dst + 0.5) * (in_size / out_size) - 0.5
    src = np.clip(src, 0.0, in_size - 1)
    lo = np.floor(src).astype(np.intp)
    hi = np.minimum(lo + 1, in_size - 1)
    frac = src - lo
    return lo, hi, frac


def bilinear_resize(pixels, out_h, out_w, window=None):
    """Bilinear resize of an ``(H, W, C)`` array to ``(out_h, out_w)``.

    ``window=(row, col, height, width)`` evaluates only that sub-block of the
    resized image; values equal the corresponding block of the full resize.
    Output is float64.
    """
    x = np.asarray(pixels)
    h, w = x.shape[:2]
    r0, c0, wh, ww = window if window is not None else (0, 0, out_h, out_w)
    rlo, rhi, rf = _axis_weights(h, out_h, r0, wh)
    clo, chi, cf = _axis_weights(w, out_w, c0, ww)
    # gather the four corner samples before widening to float
    rf = rf[:, None, None]
    cf = cf[None, :, None]
    top = x[np.ix_(rlo, clo)] * (1 - cf) + x[np.ix_(rlo, chi)] * cf
    bottom = x[np.ix_(rhi, clo)] * (1 - cf) + x[np.ix_(rhi, chi)] * cf
    return top * (1 - rf) + bottom * rf


def quantize(values):
    return np.clip(np.rint(values), 0, 255).astype(np.uint8)


def make_thumbnail(img, shape=THUMB_SHAPE):
    """Bilinear resize of the whole frame to the working resolution."""
    h, w = img.pixels.shape[:2]
    if h < shape[0] or w < shape[1]:
        raise DataError(f"{img.id}: {w}x{h} is smaller than the {shape[1]}x{shape[0]} thumbnail")
    if (h, w) == tuple(shape):
        return img
    small = quantize(bilinear_resize(img.pixels, *shape))
    return LabeledImage(small, img.gt, img.id, img.camera)


def augment_patch(img, rng, scale_range=(0.125, 1.0), shape=THUMB_SHAPE):
    """Random rescale followed by a random crop at the working resolution.

    The scale is drawn uniformly from ``scale_range`` and raised to the
    smallest value whose rounded size still holds a full patch.
    """
    h, w = img.pixels.shape[:2]
    ph, pw = shape
    if h < ph or w < pw:
        raise DataError(f"{img.id}: {w}x{h} is smaller than a {pw}x{ph} patch")
    s = rng.uniform(*scale_range)
    s = max(s, ph / h, pw / w)
    rh, rw = max(int(round(h * s)), ph), max(int(round(w * s)), pw)
    r0 = int(rng.integers(0, rh - ph + 1))
    c0 = int(rng.integers(0, rw - pw + 1))
    patch = bilinear_resize(img.pixels, rh, rw, window=(r0, c0, ph, pw))
    return LabeledImage(quantize(patch), img.gt, img.id, img.camera)


# -- synthetic von Kries scenes ------------------------------------------------

@dataclass
class MondrianSpec:
    height: int = 256
    width: int = 384
    min_patches: int = 20
    max_patches: int = 40
    reflectance_range: tuple = (0.05, 1.0)
    # r and b drawn from this box with g fixed at 1, before unit normalization
    illuminant_range: tuple = (0.4, 1.0)
    id_prefix: str = "synth"
    camera: str = None


@dataclass
class Scene:
    reflectance: np.ndarray
    illuminant: np.ndarray
    radiance: np.ndarray = field(init=False)

    def __post_init__(self):
        self.illuminant = unit_illuminant(self.illuminant)
        self.radiance = self.reflectance * self.illuminant


def random_mondrian(rng, spec):
    lo, hi = spec.reflectance_range
    refl = np.empty((spec.height, spec.width, 3))
    refl[:] = rng.uniform(lo, hi, size=3)
    n = int(rng.integers(spec.min_patches, spec.max_patches + 1))
    for _ in range(n):
        ph = int(rng.integers(spec.height // 16, spec.height // 3 + 1))
        pw = int(rng.integers(spec.width // 16, spec.width // 3 + 1))
        r = int(rng.integers(0, spec.height - ph + 1))
        c = int(rng.integers(0, spec.width - pw + 1))
        refl[r:r + ph, c:c + pw] = rng.uniform(lo, hi, size=3)
    return refl


def random_illuminant(rng, spec):
    lo, hi = spec.illuminant_range
    return unit_illuminant([rng.uniform(lo, hi), 1.0, rng.uniform(lo, hi)])


def render(scene):
    """Max-normalize and quantize a scene's radiance to 8 bits."""
    return quantize(255.0 * scene.radiance / scene.radiance.max())


def _image_rngs(seed, n):
    if isinstance(seed, np.random.Generator):
        seed = int(seed.integers(0, 2**63))
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    return [np.random.default_rng(child) for child in ss.spawn(n)]


def synth_generate(seed, n, spec=None):
    """Generate ``n`` Mondrian scenes lit by random illuminants.

    Each image has its own RNG stream spawned from ``seed`` so images can be
    produced independently.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    spec = spec or MondrianSpec()
    images = []
    for i, rng in enumerate(_image_rngs(seed, n)):
        scene = Scene(random_mondrian(rng, spec), random_illuminant(rng, spec))
        images.append(LabeledImage(render(scene), scene.illuminant,
                                   f"{spec.id_prefix}_{i:05d}", spec.camera))
    return Dataset(images)
