"""The Convolutional Mean network: parameters, forward/backward, weight files."""
import enum
import struct
from dataclasses import dataclass

import numpy as np

from . import tensor_nn as nn
from .exceptions import FormatError, ShapeError

MAGIC = b"CMW1"
FORMAT_VERSION = 1
HEADER_SIZE = 8

# thumbnail working resolution as an (H, W) array shape: 48 wide, 32 high
INPUT_SHAPE = (32, 48)


class Variant(enum.IntEnum):
    """Network layouts; the integer value is the CMW1 variant byte."""
    CM = 0
    CM_A_NoMaxPool = 1
    CM_B_NoReLU = 2
    CM_C_SingleConv = 3
    CM_D_ChromaInput = 4

    @property
    def cli_name(self):
        return _CLI_NAMES[self]

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        if isinstance(value, str):
            key = value.strip().lower()
            for variant, name in _CLI_NAMES.items():
                if key in (name, variant.name.lower()):
                    return variant
            raise ValueError(f"unknown variant {value!r}; expected one of "
                             f"{', '.join(_CLI_NAMES.values())}")
        return cls(int(value))


_CLI_NAMES = {
    Variant.CM: "cm",
    Variant.CM_A_NoMaxPool: "cm-a",
    Variant.CM_B_NoReLU: "cm-b",
    Variant.CM_C_SingleConv: "cm-c",
    Variant.CM_D_ChromaInput: "cm-d",
}


def kernel_shapes(variant):
    """``(f1, f2, f3)`` kernel shapes; f2 is None for the single-conv variant."""
    variant = Variant.parse(variant)
    if variant is Variant.CM_C_SingleConv:
        return (3, 3, 3, 38), None, (1, 1, 38, 3)
    return (3, 3, 3, 7), (3, 3, 7, 14), (1, 1, 14, 3)


def param_count(variant=Variant.CM):
    return sum(int(np.prod(s)) for s in kernel_shapes(variant) if s is not None)


@dataclass(frozen=True, eq=False)
class CmParams:
    f1: np.ndarray
    f2: np.ndarray
    f3: np.ndarray
    variant: Variant = Variant.CM

    def __post_init__(self):
        variant = Variant.parse(self.variant)
        object.__setattr__(self, "variant", variant)
        for name, arr, shape in zip(("f1", "f2", "f3"), (self.f1, self.f2, self.f3),
                                    kernel_shapes(variant)):
            if shape is None:
                if arr is not None:
                    raise ShapeError(f"{variant.name} has no {name} bank")
                continue
            arr = np.array(arr, copy=True)
            if arr.shape != shape:
                raise ShapeError(f"{name} must have shape {shape}, got {arr.shape}")
            if arr.dtype not in (np.float32, np.float64):
                arr = arr.astype(np.float32)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def banks(self):
        """Present filter banks in file order."""
        return [k for k in (self.f1, self.f2, self.f3) if k is not None]

    @property
    def dtype(self):
        return self.f1.dtype

    def n_params(self):
        return sum(k.size for k in self.banks)

    def with_banks(self, banks):
        banks = list(banks)
        if self.f2 is None:
            f1, f3 = banks
            return CmParams(f1, None, f3, self.variant)
        return CmParams(*banks, variant=self.variant)

    def astype(self, dtype):
        return self.with_banks(k.astype(dtype) for k in self.banks)

    def flat(self):
        return np.concatenate([k.ravel() for k in self.banks])

    def from_flat(self, vector):
        vector = np.asarray(vector)
        if vector.size != self.n_params():
            raise ShapeError(f"expected {self.n_params()} values, got {vector.size}")
        banks, start = [], 0
        for k in self.banks:
            banks.append(vector[start:start + k.size].reshape(k.shape).astype(k.dtype))
            start += k.size
        return self.with_banks(banks)


def init_kaiming(seed, variant=Variant.CM):
    """Kaiming-normal weights, std ``sqrt(2 / (kh*kw*cin))``, reproducible from ``seed``."""
    variant = Variant.parse(variant)
    rng = np.random.default_rng(seed)
    banks = []
    for shape in kernel_shapes(variant):
        if shape is None:
            banks.append(None)
            continue
        fan_in = shape[0] * shape[1] * shape[2]
        banks.append(rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape).astype(np.float32))
    return CmParams(*banks, variant=variant)


def to_chromaticity(x):
    """rgb chromaticity ``c / (r+g+b)``; all-zero pixels stay zero."""
    x = np.asarray(x, dtype=np.float64)
    total = x.sum(axis=-1, keepdims=True)
    return np.divide(x, total, out=np.zeros_like(x), where=total > 0)


def prepare_input(pixels, variant=Variant.CM):
    """Turn raw pixel values into network input for ``variant``.

    Divides by the global maximum (a single scalar over all channels) and,
    for the chromaticity variant, converts to rgb chromaticity afterwards.
    """
    from .data import normalize_input
    x = normalize_input(pixels)
    if Variant.parse(variant) is Variant.CM_D_ChromaInput:
        x = to_chromaticity(x)
    return x


@dataclass(eq=False)
class ForwardCache:
    params: CmParams
    x: np.ndarray
    conv1: np.ndarray
    g1: np.ndarray
    route1: np.ndarray
    conv2: np.ndarray
    g2: np.ndarray
    route2: np.ndarray
    conv3: np.ndarray
    relu3: np.ndarray
    pre_norm: np.ndarray
    estimate: np.ndarray
    degenerate: np.ndarray
    batched: bool

    @property
    def features(self):
        """Input to the 1x1 weighting conv (post-g2, or post-g1 for the single-conv net)."""
        return self.g1 if self.conv2 is None else self.g2


def _g(x, variant):
    route = None
    if variant is not Variant.CM_A_NoMaxPool:
        x, route = nn.maxpool2x2(x)
    if variant is not Variant.CM_B_NoReLU:
        x = nn.relu(x)
    return x, route


def _g_backward(grad, post, route, variant):
    if variant is not Variant.CM_B_NoReLU:
        grad = grad * (post > 0)
    if route is not None:
        grad = nn.maxpool2x2_backward(grad, route)
    return grad


def forward(params, image):
    """Run the network on one prepared image ``(H, W, 3)`` or a batch ``(N, H, W, 3)``.

    Returns ``(estimate, cache, degenerate)``. Estimates are unit vectors; a
    zero network response yields the gray vector with ``degenerate`` set.
    """
    image = np.asarray(image)
    batched = image.ndim == 4
    if image.ndim not in (3, 4) or image.shape[-1] != 3:
        raise ShapeError(f"expected image of shape (H, W, 3), got {image.shape}")
    x = image[None] if not batched else image
    x = x.astype(params.dtype, copy=False)
    v = params.variant

    conv1 = nn.conv2d(x, params.f1, pad=1)
    g1, route1 = _g(conv1, v)
    if params.f2 is None:
        conv2 = g2 = route2 = None
        feat = g1
    else:
        conv2 = nn.conv2d(g1, params.f2, pad=1)
        g2, route2 = _g(conv2, v)
        feat = g2
    conv3 = nn.conv2d(feat, params.f3, pad=0)
    relu3 = nn.relu(conv3)
    pre_norm = nn.global_avg_pool(relu3)
    estimate, degenerate = nn.l2_normalize(pre_norm)

    cache = ForwardCache(params, x, conv1, g1, route1, conv2, g2, route2,
                         conv3, relu3, pre_norm, estimate, degenerate, batched)
    if batched:
        return estimate, cache, degenerate
    return estimate[0], cache, bool(degenerate[0])


def backward(params, cache, d_estimate):
    """Parameter gradients of a scalar loss given ``d loss / d estimate``.

    For a batched cache ``d_estimate`` is ``(N, 3)`` and gradients are summed
    over the batch. Returns a CmParams-shaped container of gradients.
    """
    if cache.params is not params:
        raise ValueError("forward cache was produced with different parameters")
    d = np.asarray(d_estimate, dtype=params.dtype)
    if not cache.batched:
        d = d[None]
    n = cache.pre_norm.shape[0]
    if d.shape != (n, 3):
        raise ShapeError(f"expected upstream gradient of shape {(n, 3)}, got {d.shape}")
    v = params.variant

    # unit-normalization Jacobian (I - u u^T) / |v|; constant fallback has none
    u = cache.estimate
    norm = np.sqrt((cache.pre_norm.astype(np.float64) ** 2).sum(axis=1, keepdims=True))
    dv = (d - u * (u * d).sum(axis=1, keepdims=True)) / np.where(norm > 0, norm, 1.0)
    dv = np.where(cache.degenerate[:, None], 0.0, dv).astype(params.dtype)

    _, h, w, _ = cache.relu3.shape
    d_conv3 = np.broadcast_to(dv[:, None, None, :] / (h * w), cache.conv3.shape)
    d_conv3 = d_conv3 * (cache.conv3 > 0)
    g3, d_feat = nn.conv2d_backward(cache.features, params.f3, d_conv3, pad=0)

    if params.f2 is None:
        d_conv1 = _g_backward(d_feat, cache.g1, cache.route1, v)
        g2 = None
    else:
        d_conv2 = _g_backward(d_feat, cache.g2, cache.route2, v)
        g2, d_g1 = nn.conv2d_backward(cache.g1, params.f2, d_conv2, pad=1)
        d_conv1 = _g_backward(d_g1, cache.g1, cache.route1, v)
    g1, _ = nn.conv2d_backward(cache.x, params.f1, d_conv1, pad=1, need_input_grad=False)

    banks = [g1, g3] if g2 is None else [g1, g2, g3]
    return params.with_banks(b.astype(params.dtype, copy=False) for b in banks)


def predict(params, image):
    """Estimate for a prepared image or batch, without keeping a cache."""
    est, _, _ = forward(params, image)
    return est


def serialize(params):
    """Encode ``params`` in the CMW1 format (8-byte header + little-endian float32)."""
    header = MAGIC + bytes([FORMAT_VERSION, int(params.variant), 0, 0])
    body = b"".join(np.ascontiguousarray(k, dtype="<f4").tobytes() for k in params.banks)
    return header + body


def deserialize(blob):
    blob = bytes(blob)
    if len(blob) < HEADER_SIZE:
        raise FormatError(f"weight file too short ({len(blob)} bytes)")
    magic, version, variant_code, r0, r1 = struct.unpack("<4sBBBB", blob[:HEADER_SIZE])
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported CMW1 version {version}")
    if r0 or r1:
        raise FormatError("reserved header bytes must be zero")
    try:
        variant = Variant(variant_code)
    except ValueError:
        raise FormatError(f"unknown variant byte {variant_code}") from None
    expected = HEADER_SIZE + 4 * param_count(variant)
    if len(blob) != expected:
        raise FormatError(f"{variant.name} weight file must be {expected} bytes, got {len(blob)}")
    weights = np.frombuffer(blob, dtype="<f4", offset=HEADER_SIZE).astype(np.float32)
    banks, start = [], 0
    for shape in kernel_shapes(variant):
        if shape is None:
            banks.append(None)
            continue
        size = int(np.prod(shape))
        banks.append(weights[start:start + size].reshape(shape))
        start += size
    return CmParams(*banks, variant=variant)


def save(params, path):
    with open(path, "wb") as fh:
        fh.write(serialize(params))


def load(path):
    with open(path, "rb") as fh:
        return deserialize(fh.read())


def dump_feature_maps(params, image):
    """Intermediate maps for visualization.

    ``features`` are the activations fed to the 1x1 weighting conv,
    ``response`` the rectified 3-channel map that gets averaged, and
    ``focus`` its channel mean rescaled to [0, 1] (all zeros when flat).
    """
    image = np.asarray(image)
    if image.ndim != 3:
        raise ShapeError(f"expected a single (H, W, 3) image, got {image.shape}")
    _, cache, _ = forward(params, image)
    features = cache.features[0]
    response = cache.relu3[0]
    focus = response.mean(axis=-1, keepdims=True).astype(np.float64)
    lo, hi = focus.min(), focus.max()
    focus = (focus - lo) / (hi - lo) if hi > lo else np.zeros_like(focus)
    return features, response, focus
