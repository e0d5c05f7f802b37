"""Outer-product-friendly im2col, dense and bitmap-sparse.

The lowered matrix has one row per sliding-window position (Ho*Wo rows)
and one column per (kh, kw, c) kernel offset (Kh*Kw*C columns, channel
minor). Columns are generated one at a time by sliding a 1xB window over
the feature map in a zig-zag scan, where ``B = (R - Kw + S) / S`` equals
Wo: a single feature-map row contributes B consecutive entries to the
column before the window drops to the next row.

The sparse path works directly on the bitmap encoding and never touches
zeros. Per feature-map row and kernel column offset kw it:

* takes the row's bitmap word and its value slice (S1);
* masks out the window's bits and shifts them down to position 0 (S2);
* maintains a running count of the bits already shifted past the window
  start — that count IS the window's offset into the row's packed values
  (S3);
* population-counts the masked window to get the emitted value count
  (S4).

For stride 1 the window's values are one contiguous slice of the packed
value array; wider strides gather through per-position prefix popcounts.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

from .errors import ShapeError
from .formats import BitmapMatrix, encode_single

MAX_KERNEL_SPAN = 64  # row words are manipulated as Python ints; no real limit


@dataclass(frozen=True)
class ConvShape:
    """Valid-convolution geometry. R (the sliding-row size) equals W."""

    H: int
    W: int
    C: int
    N: int
    Kh: int
    Kw: int
    S: int = 1

    def __post_init__(self):
        for name in ("H", "W", "C", "N", "Kh", "Kw", "S"):
            if getattr(self, name) < 1:
                raise ShapeError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.Kh > self.H or self.Kw > self.W:
            raise ShapeError(
                f"kernel {self.Kh}x{self.Kw} exceeds map {self.H}x{self.W}"
            )
        if (self.H - self.Kh) % self.S or (self.W - self.Kw) % self.S:
            raise ShapeError(
                f"map {self.H}x{self.W}, kernel {self.Kh}x{self.Kw}, stride {self.S}: "
                "output dims are not integral (the zig-zag scheme requires exact tiling)"
            )

    @property
    def Ho(self) -> int:
        return (self.H - self.Kh) // self.S + 1

    @property
    def Wo(self) -> int:
        return (self.W - self.Kw) // self.S + 1

    @property
    def R(self) -> int:
        return self.W


def values_per_column(shape: ConvShape) -> int:
    """B = (R - Kw + S) / S: column entries emitted per feature-map row."""
    return (shape.R - shape.Kw + shape.S) // shape.S


def lowered_dims(shape: ConvShape) -> tuple[int, int]:
    return shape.Ho * shape.Wo, shape.Kh * shape.Kw * shape.C


def _as_map_stack(feature_map) -> np.ndarray:
    arr = np.asarray(feature_map, dtype=np.float32)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3:
        raise ShapeError(f"feature map must be 2-D or 3-D, got ndim={arr.ndim}")
    return arr


def dense_im2col_outer(feature_map, shape: ConvShape) -> np.ndarray:
    """Classical im2col matrix, produced column-by-column (zig-zag order).

    Output equals the row-major reference lowering exactly; only the
    generation order differs from the window-copy formulation.
    """
    arr = _as_map_stack(feature_map)
    if arr.shape != (shape.H, shape.W, shape.C):
        raise ShapeError(f"map is {arr.shape}, shape says {(shape.H, shape.W, shape.C)}")
    rows, cols = lowered_dims(shape)
    out = np.empty((rows, cols), dtype=np.float32)
    ho_span = (shape.Ho - 1) * shape.S + 1
    wo_span = (shape.Wo - 1) * shape.S + 1
    for kh in range(shape.Kh):
        for kw in range(shape.Kw):
            window = arr[kh:kh + ho_span:shape.S, kw:kw + wo_span:shape.S, :]
            for c in range(shape.C):
                j = (kh * shape.Kw + kw) * shape.C + c
                out[:, j] = window[:, :, c].reshape(rows)
    return out


@dataclass(frozen=True)
class LoweredColumn:
    """One condensed column of the lowered matrix.

    ``bits[m]`` marks a nonzero at lowered row m; ``values`` are those
    nonzeros in row order. ``s3_offsets[ho]`` is the S3 accumulator at the
    window start for output row ho: the number of set bits already shifted
    past in that feature-map row, i.e. the window's offset into the row's
    packed values.
    """

    index: int
    bits: np.ndarray        # bool, (Ho*Wo,)
    values: np.ndarray      # float32, (count,)
    count: int
    s3_offsets: np.ndarray  # int64, (Ho,)


class _RowPipeline:
    """S1-S4 state for one bitmap row: the word, its shifted-out-bit
    accumulator per kw, and per-position prefix popcounts for strided
    gathers."""

    __slots__ = ("word", "s3", "prefix", "values", "bits")

    def __init__(self, source: BitmapMatrix, r: int, max_kw: int):
        self.bits = source.bitmap[r]
        self.word = source.row_word(r)                      # S1
        self.values = source.row_values(r)                  # S1
        s3 = np.zeros(max_kw, dtype=np.int64)
        acc = 0
        for kw in range(max_kw):                            # S3: running
            s3[kw] = acc                                    # accumulator of
            acc += (self.word >> kw) & 1                    # shifted-out bits
        self.s3 = s3
        self.prefix = np.concatenate(([0], np.cumsum(self.bits)))[:-1]

    def window(self, kw: int, count_out: int, stride: int) -> tuple[np.ndarray, np.ndarray, int]:
        """(window bits, window values, s3 offset) for the 1xB window at kw."""
        offset = int(self.s3[kw])
        if stride == 1:
            masked = (self.word >> kw) & ((1 << count_out) - 1)   # S2
            n = masked.bit_count()                                # S4
            sel = np.array([(masked >> i) & 1 for i in range(count_out)], dtype=bool)
            return sel, self.values[offset:offset + n], offset
        positions = kw + np.arange(count_out) * stride
        sel = self.bits[positions]
        idx = self.prefix[positions[sel]]
        return sel, self.values[idx], offset


def sparse_im2col_bitmap(
    maps: Sequence[BitmapMatrix] | BitmapMatrix,
    shape: ConvShape,
) -> Iterator[LoweredColumn]:
    """Stream the lowered matrix's columns straight from the encoding.

    Expanding each column through its bits reproduces the matching column
    of :func:`dense_im2col_outer` on the decoded map; no dense lowered
    data is materialized here.
    """
    channel_maps = [maps] if isinstance(maps, BitmapMatrix) else list(maps)
    if len(channel_maps) != shape.C:
        raise ShapeError(f"got {len(channel_maps)} channel maps, shape says C={shape.C}")
    for ch in channel_maps:
        if (ch.rows, ch.cols) != (shape.H, shape.W):
            raise ShapeError(f"channel map is {ch.rows}x{ch.cols}, expected {shape.H}x{shape.W}")

    b = values_per_column(shape)
    rows_total = shape.Ho * shape.Wo
    pipelines: dict[tuple[int, int], _RowPipeline] = {}

    def pipeline(c: int, r: int) -> _RowPipeline:
        key = (c, r)
        if key not in pipelines:
            pipelines[key] = _RowPipeline(channel_maps[c], r, shape.Kw)
        return pipelines[key]

    for kh in range(shape.Kh):
        for kw in range(shape.Kw):
            for c in range(shape.C):
                j = (kh * shape.Kw + kw) * shape.C + c
                bits = np.zeros(rows_total, dtype=bool)
                chunks = []
                offsets = np.zeros(shape.Ho, dtype=np.int64)
                for ho in range(shape.Ho):
                    pipe = pipeline(c, ho * shape.S + kh)
                    sel, vals, offsets[ho] = pipe.window(kw, b, shape.S)
                    bits[ho * shape.Wo:(ho + 1) * shape.Wo] = sel
                    chunks.append(vals)
                values = (np.concatenate(chunks) if chunks
                          else np.zeros(0, dtype=np.float32)).astype(np.float32)
                yield LoweredColumn(index=j, bits=bits, values=values,
                                    count=len(values), s3_offsets=offsets)


def flatten_weights(weights) -> BitmapMatrix:
    """Bitmap-encode filters flattened to (N, Kh*Kw*C), channel minor."""
    arr = np.asarray(weights, dtype=np.float32)
    if arr.ndim == 2:
        flat = arr
    elif arr.ndim == 4:
        flat = arr.reshape(arr.shape[0], -1)
    else:
        raise ShapeError(f"weights must be (N, Kh, Kw, C) or pre-flattened 2-D, got ndim={arr.ndim}")
    return encode_single(flat)
