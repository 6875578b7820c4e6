"""Multi-scale function images: sampling grids, normalization, NaN masking.

A rendered image holds one channel per sampling scale. Non-finite values are
masked out and zeroed; the surviving values are min-max normalized to [0, 1]
per channel. Images serialize to the FIMG binary block format used by the
dataset shards.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import RationalityError, SchemaMismatch
from .numeric import evaluate
from .tree import OpTree
from .vocab import Vocab

DEFAULT_SCALES = ((-0.1, 0.1), (-1.0, 1.0), (-10.0, 10.0))

_FIMG_MAGIC = b"FIMG"
_FIMG_VERSION = 1
_HEADER = struct.Struct("<4sHHIII")


@dataclass(frozen=True)
class RenderConfig:
    scales: tuple[tuple[float, float], ...] = DEFAULT_SCALES
    resolution: int = 64
    n_vars: int = 1
    noise_sigma: float = 0.0
    min_finite_fraction: float = 0.5
    min_variance: float = 1e-9

    def __post_init__(self):
        if not self.scales:
            raise ValueError("scales must be nonempty")
        if self.resolution < 2:
            raise ValueError("resolution must be at least 2")
        if not 0.0 < self.min_finite_fraction <= 1.0:
            raise ValueError("min_finite_fraction must lie in (0, 1]")


@dataclass(frozen=True)
class FuncImg:
    """Normalized image data, finite-point mask, and the scales that made it."""

    data: np.ndarray  # (n_scales, resolution, resolution) float
    mask: np.ndarray  # same shape, bool; True where the raw value was finite
    scale_meta: tuple[tuple[float, float], ...] | None = None
    n_vars: int = 1

    @property
    def n_scales(self) -> int:
        return int(self.data.shape[0])

    @property
    def resolution(self) -> int:
        return int(self.data.shape[1])


def meshgrid(scale: tuple[float, float], resolution: int, n_vars: int) -> np.ndarray:
    """Evaluation points for one scale: (resolution, 1) or (resolution^2, 2).

    Endpoints are inclusive; for two variables the rows enumerate the
    Cartesian square in row-major order (the second variable fastest).
    """
    lo, hi = scale
    axis = np.linspace(lo, hi, resolution)
    if n_vars == 1:
        return axis[:, None]
    if n_vars == 2:
        g0, g1 = np.meshgrid(axis, axis, indexing="ij")
        return np.column_stack([g0.ravel(), g1.ravel()])
    raise ValueError("n_vars must be 1 or 2")


def _raw_channels(tree: OpTree, cfg: RenderConfig, vocab: Vocab | None) -> np.ndarray:
    res = cfg.resolution
    channels = np.empty((len(cfg.scales), res, res), dtype=np.float64)
    for k, scale in enumerate(cfg.scales):
        values = evaluate(tree, meshgrid(scale, res, cfg.n_vars), vocab)
        if cfg.n_vars == 1:
            channels[k] = np.broadcast_to(values[:, None], (res, res))
        else:
            channels[k] = values.reshape(res, res)
    return channels


def render(
    tree: OpTree,
    cfg: RenderConfig,
    rng: np.random.Generator | None = None,
    vocab: Vocab | None = None,
) -> FuncImg:
    """Evaluate, mask, normalize, and optionally noise a function image.

    Raises RationalityError when every channel is mostly non-finite
    ("insufficient_domain") or numerically constant ("constant").
    """
    raw = _raw_channels(tree, cfg, vocab)
    mask = np.isfinite(raw)

    finite_fractions = mask.mean(axis=(1, 2))
    if np.all(finite_fractions < cfg.min_finite_fraction):
        raise RationalityError(
            "insufficient_domain",
            f"best channel is finite on {finite_fractions.max():.3f} of the grid",
        )
    with np.errstate(all="ignore"):
        variances = np.array([
            float(np.var(channel[m])) if m.any() else 0.0
            for channel, m in zip(raw, mask)
        ])
    variances = np.nan_to_num(variances, nan=np.inf)  # overflowing spread is anything but constant
    if np.all(variances < cfg.min_variance):
        raise RationalityError("constant", f"best channel variance {variances.max():.3g}")

    data = normalize_channels(raw, mask)
    img = FuncImg(data, mask, tuple(cfg.scales), cfg.n_vars)
    if cfg.noise_sigma > 0:
        if rng is None:
            raise ValueError("noise_sigma > 0 requires an rng")
        return add_noise(img, cfg.noise_sigma, rng)
    return img


def normalize_channels(raw: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Min-max normalize finite entries per channel; masked entries become 0."""
    data = np.zeros_like(raw)
    for k in range(raw.shape[0]):
        m = mask[k]
        if not m.any():
            continue
        finite = raw[k][m]
        lo, hi = float(finite.min()), float(finite.max())
        if hi > lo:
            span = hi - lo
            if np.isinf(span):
                # span exceeds float64 range; halving keeps the ratio exact
                data[k][m] = (raw[k][m] * 0.5 - lo * 0.5) / (hi * 0.5 - lo * 0.5)
            else:
                data[k][m] = (raw[k][m] - lo) / span
        # a flat channel stays all-zero: nothing to scale
    return data


def add_noise(img: FuncImg, sigma: float, rng: np.random.Generator) -> FuncImg:
    """Gaussian noise on masked-true entries only, clamped back to [0, 1]."""
    if sigma < 0:
        raise ValueError("sigma must be nonnegative")
    if sigma == 0:
        return img
    data = img.data.copy()
    noise = rng.normal(0.0, sigma, size=data.shape)
    data[img.mask] = np.clip(data[img.mask] + noise[img.mask], 0.0, 1.0)
    return FuncImg(data, img.mask, img.scale_meta, img.n_vars)


def fimg_to_bytes(img: FuncImg, flags: int = 0) -> bytes:
    """Serialize to the FIMG block: header, float32 data, packed mask bits."""
    n_scales, res, _ = img.data.shape
    header = _HEADER.pack(_FIMG_MAGIC, _FIMG_VERSION, flags, n_scales, res, img.n_vars)
    payload = img.data.astype("<f4").tobytes(order="C")
    bits = np.packbits(img.mask.reshape(-1).astype(np.uint8)).tobytes()
    return header + payload + bits


def fimg_block_size(n_scales: int, resolution: int) -> int:
    cells = n_scales * resolution * resolution
    return _HEADER.size + cells * 4 + (cells + 7) // 8


def fimg_from_bytes(
    blob: bytes,
    scales: tuple[tuple[float, float], ...] | None = None,
) -> FuncImg:
    if len(blob) < _HEADER.size:
        raise SchemaMismatch("FIMG block shorter than its header")
    magic, version, _flags, n_scales, res, n_vars = _HEADER.unpack_from(blob, 0)
    if magic != _FIMG_MAGIC:
        raise SchemaMismatch(f"bad magic {magic!r}")
    if version != _FIMG_VERSION:
        raise SchemaMismatch(f"unsupported FIMG version {version}")
    cells = n_scales * res * res
    expected = fimg_block_size(n_scales, res)
    if len(blob) < expected:
        raise SchemaMismatch(f"FIMG block truncated: {len(blob)} < {expected}")
    offset = _HEADER.size
    data = np.frombuffer(blob, dtype="<f4", count=cells, offset=offset)
    data = data.reshape(n_scales, res, res).astype(np.float64)
    offset += cells * 4
    packed = np.frombuffer(blob, dtype=np.uint8, count=(cells + 7) // 8, offset=offset)
    mask = np.unpackbits(packed, count=cells).astype(bool).reshape(n_scales, res, res)
    return FuncImg(
        data=data,
        mask=mask,
        scale_meta=tuple(scales) if scales else None,
        n_vars=int(n_vars),
    )


def write_fimg(path, img: FuncImg) -> None:
    with open(path, "wb") as fh:
        fh.write(fimg_to_bytes(img))


def read_fimg(path, scales=None) -> FuncImg:
    with open(path, "rb") as fh:
        return fimg_from_bytes(fh.read(), scales)
