"""Bitmap sparse matrix formats and warp-tile condensing.

Bit conventions used across the whole package:

* within a bitmap row, bit k corresponds to column k;
* rows are stored top to bottom;
* whenever bits are packed into bytes (serialization), packing is
  least-significant-bit first (``np.packbits(..., bitorder="little")``),
  so advancing a sliding window by one column is literally a shift by one.

Dense matrices are plain float32 ndarrays. Values are copied verbatim by
every transform in this module; nothing here rounds or rescales (the one
exception is the explicit ``fp16_round`` flag on :func:`encode`).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .errors import ConfigError, CorruptEncodingError, EmptyInputError, ShapeError

DEFAULT_TILE = 32

#: Allowed condensed-lane lengths per outer-product side. The A side feeds
#: the multiplier in chunks of 8, the B side in chunks of 16, so the levels
#: are the chunk multiples up to the full tile width.
A_SIDE_LEVELS = (8, 16, 24, 32)
B_SIDE_LEVELS = (16, 32)


def _as_float32_matrix(dense) -> np.ndarray:
    arr = np.asarray(dense, dtype=np.float32)
    if arr.ndim != 2:
        raise ShapeError(f"expected a 2-D matrix, got ndim={arr.ndim}")
    return arr


def row_bits_to_int(bits: np.ndarray) -> int:
    """Pack a boolean row into an int, bit k == column k (LSB-first)."""
    out = 0
    for k in np.nonzero(np.asarray(bits))[0]:
        out |= 1 << int(k)
    return out


def int_to_row_bits(word: int, width: int) -> np.ndarray:
    """Inverse of :func:`row_bits_to_int` for a row of ``width`` columns."""
    if word < 0:
        raise ConfigError("bitmap words are unsigned")
    return np.array([(word >> k) & 1 for k in range(width)], dtype=bool)


@dataclass(frozen=True)
class BitmapMatrix:
    """Single-level bitmap encoding: occupancy bits + packed nonzeros.

    ``values`` holds the nonzeros in row-major scan order and
    ``row_offsets[r]`` is the index of row r's first value. The terminal
    offset is implicit and equals ``len(values)``.
    """

    rows: int
    cols: int
    bitmap: np.ndarray       # bool, shape (rows, cols)
    values: np.ndarray       # float32, row-major nonzero order
    row_offsets: np.ndarray  # int64, shape (rows,)

    def __post_init__(self):
        if self.bitmap.shape != (self.rows, self.cols):
            raise CorruptEncodingError("bitmap shape does not match declared dims")
        counts = self.bitmap.sum(axis=1, dtype=np.int64)
        if int(counts.sum()) != len(self.values):
            raise CorruptEncodingError(
                f"popcount {int(counts.sum())} != value count {len(self.values)}"
            )
        expected = np.concatenate(([0], np.cumsum(counts)[:-1])) if self.rows else np.zeros(0, np.int64)
        if not np.array_equal(self.row_offsets, expected):
            raise CorruptEncodingError("row_offsets inconsistent with per-row popcounts")

    def row_word(self, r: int) -> int:
        """Row r's occupancy bits as an int (bit k == column k)."""
        return row_bits_to_int(self.bitmap[r])

    def row_values(self, r: int) -> np.ndarray:
        start = int(self.row_offsets[r])
        stop = start + int(self.bitmap[r].sum())
        return self.values[start:stop]

    def to_dense(self) -> np.ndarray:
        out = np.zeros((self.rows, self.cols), dtype=np.float32)
        out[self.bitmap] = self.values
        return out

    @property
    def nnz(self) -> int:
        return len(self.values)


def encode_single(dense) -> BitmapMatrix:
    """Encode a dense matrix into the single-level bitmap format."""
    arr = _as_float32_matrix(dense)
    bitmap = arr != 0
    counts = bitmap.sum(axis=1, dtype=np.int64)
    offsets = np.concatenate(([0], np.cumsum(counts)[:-1])) if arr.shape[0] else np.zeros(0, np.int64)
    return BitmapMatrix(
        rows=arr.shape[0],
        cols=arr.shape[1],
        bitmap=bitmap,
        values=arr[bitmap].astype(np.float32),
        row_offsets=offsets,
    )


@dataclass(frozen=True)
class TwoLevelBitmapMatrix:
    """Tiled encoding: a warp-bitmap over tiles plus per-tile element bitmaps.

    ``warp_bitmap[i, j]`` is 0 iff tile (i, j) is entirely zero; only set
    tiles appear in ``tiles``. ``rows``/``cols`` are the logical (unpadded)
    dims; tiles at the right/bottom edge are zero-padded to full size.
    ``value_order`` is "row" or "col": the packing order of each tile's
    values ("col" for operands consumed column-by-column on the A side,
    "row" for the B side).
    """

    rows: int
    cols: int
    tile_rows: int
    tile_cols: int
    grid_rows: int
    grid_cols: int
    warp_bitmap: np.ndarray  # bool, (grid_rows, grid_cols)
    tiles: Mapping[tuple[int, int], "TilePayload"]
    value_order: str = "row"

    def tile_dense(self, gi: int, gj: int) -> np.ndarray:
        """Materialize one tile as a dense (tile_rows, tile_cols) block."""
        payload = self.tiles.get((gi, gj))
        block = np.zeros((self.tile_rows, self.tile_cols), dtype=np.float32)
        if payload is not None:
            scatter = block.T if self.value_order == "col" else block
            scatter[payload.bitmap.T if self.value_order == "col" else payload.bitmap] = payload.values
        return block

    @property
    def nnz(self) -> int:
        return sum(len(t.values) for t in self.tiles.values())


@dataclass(frozen=True)
class TilePayload:
    bitmap: np.ndarray  # bool, (tile_rows, tile_cols)
    values: np.ndarray  # float32, packed per the parent's value_order

    def __post_init__(self):
        if int(self.bitmap.sum()) != len(self.values):
            raise CorruptEncodingError("tile popcount does not match its value count")


def _pack_tile_values(block: np.ndarray, value_order: str) -> np.ndarray:
    if value_order == "row":
        return block[block != 0].astype(np.float32)
    if value_order == "col":
        bt = block.T
        return bt[bt != 0].astype(np.float32)
    raise ConfigError(f"value_order must be 'row' or 'col', got {value_order!r}")


def encode(
    dense,
    tile_rows: int = DEFAULT_TILE,
    tile_cols: int = DEFAULT_TILE,
    value_order: str = "row",
    fp16_round: bool = False,
) -> TwoLevelBitmapMatrix:
    """Encode a dense matrix into the two-level (warp + element) format.

    Dimensions that are not tile multiples are zero-padded internally; the
    logical dims are recorded so :func:`decode` restores them exactly.
    """
    arr = _as_float32_matrix(dense)
    if arr.shape[0] == 0 or arr.shape[1] == 0:
        raise EmptyInputError(f"cannot encode a {arr.shape[0]}x{arr.shape[1]} matrix")
    if tile_rows < 1 or tile_cols < 1:
        raise ConfigError("tile dims must be >= 1")
    if fp16_round:
        arr = arr.astype(np.float16).astype(np.float32)

    rows, cols = arr.shape
    grid_rows = -(-rows // tile_rows)
    grid_cols = -(-cols // tile_cols)
    padded = np.zeros((grid_rows * tile_rows, grid_cols * tile_cols), dtype=np.float32)
    padded[:rows, :cols] = arr

    warp = np.zeros((grid_rows, grid_cols), dtype=bool)
    tiles: dict[tuple[int, int], TilePayload] = {}
    for gi in range(grid_rows):
        for gj in range(grid_cols):
            block = padded[
                gi * tile_rows:(gi + 1) * tile_rows,
                gj * tile_cols:(gj + 1) * tile_cols,
            ]
            bm = block != 0
            if bm.any():
                warp[gi, gj] = True
                tiles[(gi, gj)] = TilePayload(bitmap=bm, values=_pack_tile_values(block, value_order))

    return TwoLevelBitmapMatrix(
        rows=rows, cols=cols,
        tile_rows=tile_rows, tile_cols=tile_cols,
        grid_rows=grid_rows, grid_cols=grid_cols,
        warp_bitmap=warp, tiles=tiles, value_order=value_order,
    )


def decode(enc: TwoLevelBitmapMatrix) -> np.ndarray:
    """Exact elementwise inverse of :func:`encode` (padding stripped)."""
    for pos, payload in enc.tiles.items():
        if not enc.warp_bitmap[pos]:
            raise CorruptEncodingError(f"tile {pos} stored but its warp bit is 0")
    for pos in zip(*np.nonzero(enc.warp_bitmap)):
        if (int(pos[0]), int(pos[1])) not in enc.tiles:
            raise CorruptEncodingError(f"warp bit set at {pos} but no tile stored")
    out = np.zeros((enc.grid_rows * enc.tile_rows, enc.grid_cols * enc.tile_cols), dtype=np.float32)
    for (gi, gj) in enc.tiles:
        out[
            gi * enc.tile_rows:(gi + 1) * enc.tile_rows,
            gj * enc.tile_cols:(gj + 1) * enc.tile_cols,
        ] = enc.tile_dense(gi, gj)
    return out[:enc.rows, :enc.cols]


@dataclass(frozen=True)
class CondensedTile:
    """One warp tile's lanes condensed for the outer-product pipeline.

    Lane i is column i of the tile on the A side (nonzeros pushed to the
    top) or row i on the B side (nonzeros pushed to the left). ``lanes``
    stores each lane as a full 32-wide float row: the first
    ``lane_counts[i]`` entries are the original nonzeros in position order,
    everything after is zero padding; ``lane_lengths[i]`` is the quantized
    padded length actually fed to the multiplier.
    """

    side: str                 # "A" or "B"
    lanes: np.ndarray         # float32 (n_lanes, tile_width)
    lane_bitmaps: np.ndarray  # uint64 (n_lanes,), bit p == position p
    lane_counts: np.ndarray   # int64
    lane_lengths: np.ndarray  # int64, quantized padded length per lane

    def __post_init__(self):
        for i in range(len(self.lane_counts)):
            if int(self.lane_counts[i]) != int(self.lane_bitmaps[i]).bit_count():
                raise CorruptEncodingError(f"lane {i}: count does not match its bitmap popcount")

    def lane(self, i: int) -> tuple[np.ndarray, int, int, int]:
        """(values, bitmap word, count, padded length) for lane i."""
        return self.lanes[i], int(self.lane_bitmaps[i]), int(self.lane_counts[i]), int(self.lane_lengths[i])


def quantize_length(count: int, levels: Sequence[int], skip_empty: bool = True) -> int:
    """Smallest allowed lane length >= count; empty lanes skip to 0."""
    if count == 0 and skip_empty:
        return 0
    for level in levels:
        if level >= max(count, 1):
            return level
    raise ConfigError(f"no quantization level >= {count} in {levels}")


def condense(
    block: np.ndarray,
    side: str,
    quantum_levels: Sequence[int] | None = None,
    skip_empty: bool = True,
) -> CondensedTile:
    """Condense a dense 32x32 block into per-lane padded vectors.

    ``side`` selects lane orientation: "A" condenses columns upward, "B"
    condenses rows leftward. ``quantum_levels`` defaults to the side's
    standard set; it must be ascending and end at the tile width.
    """
    arr = _as_float32_matrix(block)
    if arr.shape[0] != arr.shape[1]:
        raise ShapeError(f"condense expects a square tile, got {arr.shape}")
    width = arr.shape[0]
    if side == "A":
        levels = tuple(quantum_levels) if quantum_levels is not None else A_SIDE_LEVELS
        lanes_src = arr.T  # lane i = column i
    elif side == "B":
        levels = tuple(quantum_levels) if quantum_levels is not None else B_SIDE_LEVELS
        lanes_src = arr
    else:
        raise ConfigError(f"side must be 'A' or 'B', got {side!r}")
    if list(levels) != sorted(levels) or levels[-1] != width:
        raise ConfigError(f"quantum levels must ascend and end at {width}: {levels}")

    n = lanes_src.shape[0]
    lanes = np.zeros((n, width), dtype=np.float32)
    bitmaps = np.zeros(n, dtype=np.uint64)
    counts = np.zeros(n, dtype=np.int64)
    lengths = np.zeros(n, dtype=np.int64)
    for i in range(n):
        nz = np.nonzero(lanes_src[i])[0]
        counts[i] = len(nz)
        bitmaps[i] = row_bits_to_int(lanes_src[i] != 0)
        lanes[i, :len(nz)] = lanes_src[i][nz]
        lengths[i] = quantize_length(len(nz), levels, skip_empty=skip_empty)
    return CondensedTile(side=side, lanes=lanes, lane_bitmaps=bitmaps,
                         lane_counts=counts, lane_lengths=lengths)
