"""Outer-product SpGEMM on bitmap-encoded operands.

The three primitive phases are separate, composable functions:

* :func:`multiply_bitmap` — 1-bit cross product of two lane bitmaps,
  yielding the partial product's position bitmap;
* :func:`multiply_value` — value cross product of two condensed lanes
  (padding zeros included);
* :func:`merge` — gather/accumulate/scatter of a partial product into
  the resident 32x32 accumulator tile.

:func:`warp_spgemm` chains them over a sequence of reduction lanes and
records a step trace; :func:`device_spgemm` tiles whole matrices into
32x32 warp tiles, skipping tile pairs whose warp bit is 0 on either
side.

Sub-step accounting: one 32x32x1 outer-product set decomposes into
(32/8) x (32/16) = 8 value instructions; a condensed set executes
(padded_a/8) x (padded_b/16) of them. Instruction index within a set is
``a_chunk * 2 + b_chunk``, and surviving instructions run in ascending
index order (merge order is pinned for reproducibility: floating-point
accumulation is not associative).
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, CorruptEncodingError, ShapeError
from .formats import (
    DEFAULT_TILE,
    CondensedTile,
    TwoLevelBitmapMatrix,
    condense,
    int_to_row_bits,
)

A_CHUNK = 8
B_CHUNK = 16
SET_BASELINE = (DEFAULT_TILE // A_CHUNK) * (DEFAULT_TILE // B_CHUNK)  # 8


def substep_count(padded_a: int, padded_b: int) -> int:
    """Value instructions executed for one set, given quantized lane lengths."""
    return (padded_a // A_CHUNK) * (padded_b // B_CHUNK)


def _ceil_div(a: int, b: int) -> int:
    return -(-a // b)


@dataclass(frozen=True)
class PartialProduct:
    """One outer-product step: position bitmap plus condensed value block.

    ``condensed_values`` is k_a x k_b including quantization padding; only
    the leading lane_count_a x lane_count_b sub-block corresponds to set
    bits of ``product_bitmap`` (enumerated in (row, col) lexicographic
    order).
    """

    product_bitmap: np.ndarray    # bool (32, 32)
    condensed_values: np.ndarray  # float32 (k_a, k_b)
    k_a: int
    k_b: int
    lane_count_a: int
    lane_count_b: int

    def __post_init__(self):
        if self.condensed_values.shape != (self.k_a, self.k_b):
            raise ShapeError(
                f"value block {self.condensed_values.shape} does not match ({self.k_a}, {self.k_b})"
            )


@dataclass(frozen=True)
class Accumulator:
    """Resident output block owned by one warp."""

    tile: np.ndarray  # float32 (32, 32)

    def __post_init__(self):
        if self.tile.shape != (DEFAULT_TILE, DEFAULT_TILE):
            raise ShapeError(f"accumulator must be 32x32, got {self.tile.shape}")

    @staticmethod
    def zeros() -> "Accumulator":
        return Accumulator(np.zeros((DEFAULT_TILE, DEFAULT_TILE), dtype=np.float32))


def multiply_bitmap(a_bits: int, b_bits: int, width: int = DEFAULT_TILE) -> np.ndarray:
    """1-bit cross product: bit (r, c) == a_bits(r) AND b_bits(c)."""
    a = int_to_row_bits(a_bits, width)
    b = int_to_row_bits(b_bits, width)
    return np.outer(a, b)


def multiply_value(a_lane: np.ndarray, b_lane: np.ndarray) -> np.ndarray:
    """Value cross product of two condensed lanes (padding rows/cols are zero)."""
    return np.outer(np.asarray(a_lane, dtype=np.float32),
                    np.asarray(b_lane, dtype=np.float32))


def merge(partial: PartialProduct, acc: Accumulator) -> Accumulator:
    """Accumulate a partial product into the output tile.

    Gathers the cells addressed by the product bitmap, adds the condensed
    values, and scatters the sums back; every other cell is untouched.
    Pure: returns a new Accumulator.
    """
    bitmap = partial.product_bitmap
    pop = int(bitmap.sum())
    if pop != partial.lane_count_a * partial.lane_count_b:
        raise CorruptEncodingError(
            f"product popcount {pop} != {partial.lane_count_a} x {partial.lane_count_b}"
        )
    if pop == 0:
        return acc
    rows = np.nonzero(bitmap.any(axis=1))[0]
    cols = np.nonzero(bitmap.any(axis=0))[0]
    if len(rows) != partial.lane_count_a or len(cols) != partial.lane_count_b:
        raise CorruptEncodingError("product bitmap is not the outer product of two lanes")
    tile = acc.tile.copy()
    tile[np.ix_(rows, cols)] += partial.condensed_values[
        :partial.lane_count_a, :partial.lane_count_b
    ]
    return Accumulator(tile)


class StepTrace:
    """Columnar per-set execution record.

    One row per (output tile, reduction index) set: executed sub-steps,
    the dense baseline for that set's logical shape, and whether the set
    was skipped wholesale by a zero warp bit. ``dual_side`` records
    whether both operands carried bitmaps (it decides BOHMMA accounting
    downstream).
    """

    COLUMNS = ("tile_row", "tile_col", "k_index",
               "executed_substeps", "baseline_substeps", "skipped_by_warp_bit")

    def __init__(self, dual_side: bool = True):
        self.dual_side = dual_side
        self._chunks: list[np.ndarray] = []
        self._data: np.ndarray | None = None

    def add_block(self, tile_row: int, tile_col: int, k_start: int,
                  executed: np.ndarray, baseline: np.ndarray,
                  warp_skipped: bool) -> None:
        n = len(executed)
        if n == 0:
            return
        block = np.empty((n, 6), dtype=np.int64)
        block[:, 0] = tile_row
        block[:, 1] = tile_col
        block[:, 2] = np.arange(k_start, k_start + n)
        block[:, 3] = executed
        block[:, 4] = baseline
        block[:, 5] = 1 if warp_skipped else 0
        self._chunks.append(block)
        self._data = None

    def extend(self, other: "StepTrace") -> None:
        self._chunks.extend(other._chunks)
        self._data = None

    @property
    def data(self) -> np.ndarray:
        if self._data is None:
            self._data = (np.concatenate(self._chunks, axis=0) if self._chunks
                          else np.empty((0, 6), dtype=np.int64))
        return self._data

    def column(self, name: str) -> np.ndarray:
        return self.data[:, self.COLUMNS.index(name)]

    def __len__(self) -> int:
        return self.data.shape[0]

    @property
    def executed_total(self) -> int:
        return int(self.column("executed_substeps").sum())

    @property
    def baseline_total(self) -> int:
        return int(self.column("baseline_substeps").sum())

    @property
    def live_set_count(self) -> int:
        """Sets not skipped by a warp bit (BOHMMA candidates on dual-side runs)."""
        return int((self.column("skipped_by_warp_bit") == 0).sum())

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(self.COLUMNS)
            for row in self.data:
                writer.writerow([int(v) for v in row])


def _lane_seq(lanes) -> list[tuple[np.ndarray, int, int, int]]:
    if isinstance(lanes, CondensedTile):
        return [lanes.lane(i) for i in range(len(lanes.lane_counts))]
    return [lane if isinstance(lane, tuple) else tuple(lane) for lane in lanes]


def warp_spgemm(a_lanes, b_lanes, acc: Accumulator | None = None) -> tuple[Accumulator, StepTrace]:
    """Run one warp tile's reduction over K condensed lane pairs.

    ``a_lanes``/``b_lanes`` are CondensedTiles (all 32 lanes, in order) or
    explicit sequences of ``(values, bitmap, count, padded_length)``
    lanes. Lane k of A must pair with lane k of B.
    """
    a_seq = _lane_seq(a_lanes)
    b_seq = _lane_seq(b_lanes)
    if len(a_seq) != len(b_seq):
        raise ShapeError(f"lane count mismatch: {len(a_seq)} vs {len(b_seq)}")
    if acc is None:
        acc = Accumulator.zeros()

    executed = np.zeros(len(a_seq), dtype=np.int64)
    for k, ((av, abits, acnt, alen), (bv, bbits, bcnt, blen)) in enumerate(zip(a_seq, b_seq)):
        steps = substep_count(alen, blen)
        executed[k] = steps
        if steps == 0 or acnt == 0 or bcnt == 0:
            continue
        partial = PartialProduct(
            product_bitmap=multiply_bitmap(abits, bbits),
            condensed_values=multiply_value(av[:alen], bv[:blen]),
            k_a=alen, k_b=blen,
            lane_count_a=acnt, lane_count_b=bcnt,
        )
        acc = merge(partial, acc)

    trace = StepTrace(dual_side=True)
    trace.add_block(0, 0, 0, executed,
                    np.full(len(a_seq), SET_BASELINE, dtype=np.int64), False)
    return acc, trace


def _tile_lane_counts(block: np.ndarray, axis: int) -> np.ndarray:
    # axis=0: per-column counts (A side), axis=1: per-row counts (B side)
    return np.count_nonzero(block, axis=axis).astype(np.int64)


def device_spgemm(
    a_enc: TwoLevelBitmapMatrix,
    b_enc: TwoLevelBitmapMatrix,
    c: np.ndarray | None = None,
    k_tile: int = 16,
) -> tuple[np.ndarray, StepTrace]:
    """Full SpGEMM: D = A x B (+ C), tiled into 32x32 warp tiles.

    Both operands must be encoded with 32x32 tiles. Tile pairs with a
    zero warp bit on either side contribute no executed sub-steps but
    still appear in the trace (skipped_by_warp_bit=1) so the dense
    baseline stays shape-only. Merges run in ascending k order; the
    result equals the sequential composition of the warp-level phases
    bit-for-bit.
    """
    if a_enc.tile_rows != DEFAULT_TILE or a_enc.tile_cols != DEFAULT_TILE \
            or b_enc.tile_rows != DEFAULT_TILE or b_enc.tile_cols != DEFAULT_TILE:
        raise ShapeError("device_spgemm requires 32x32 tiling on both operands")
    if a_enc.cols != b_enc.rows:
        raise ShapeError(f"inner dims differ: A is {a_enc.rows}x{a_enc.cols}, "
                         f"B is {b_enc.rows}x{b_enc.cols}")
    if k_tile < 1:
        raise ConfigError("k_tile must be >= 1")
    m, k_dim, n = a_enc.rows, a_enc.cols, b_enc.cols
    if c is not None:
        c = np.asarray(c, dtype=np.float32)
        if c.shape != (m, n):
            raise ShapeError(f"bias is {c.shape}, expected ({m}, {n})")

    # per-tile dense blocks and lane popcounts, built once per operand tile
    a_cache: dict[tuple[int, int], tuple[np.ndarray, np.ndarray]] = {}
    b_cache: dict[tuple[int, int], tuple[np.ndarray, np.ndarray]] = {}

    out = np.zeros((m, n), dtype=np.float32)
    trace = StepTrace(dual_side=True)
    zeros32 = np.zeros(DEFAULT_TILE, dtype=np.int64)

    for ti in range(a_enc.grid_rows):
        lr = min(DEFAULT_TILE, m - ti * DEFAULT_TILE)
        for tj in range(b_enc.grid_cols):
            lc = min(DEFAULT_TILE, n - tj * DEFAULT_TILE)
            baseline = _ceil_div(lr, A_CHUNK) * _ceil_div(lc, B_CHUNK)
            acc = np.zeros((DEFAULT_TILE, DEFAULT_TILE), dtype=np.float32)
            if c is not None:
                acc[:lr, :lc] = c[ti * 32:ti * 32 + lr, tj * 32:tj * 32 + lc]

            for gk in range(a_enc.grid_cols):
                lk = min(DEFAULT_TILE, k_dim - gk * DEFAULT_TILE)
                base_vec = np.full(lk, baseline, dtype=np.int64)
                if not (a_enc.warp_bitmap[ti, gk] and b_enc.warp_bitmap[gk, tj]):
                    trace.add_block(ti, tj, gk * DEFAULT_TILE, zeros32[:lk], base_vec, True)
                    continue

                if (ti, gk) not in a_cache:
                    blk = a_enc.tile_dense(ti, gk)
                    a_cache[(ti, gk)] = (blk, _tile_lane_counts(blk, axis=0))
                if (gk, tj) not in b_cache:
                    blk = b_enc.tile_dense(gk, tj)
                    b_cache[(gk, tj)] = (blk, _tile_lane_counts(blk, axis=1))
                a_blk, a_pc = a_cache[(ti, gk)]
                b_blk, b_pc = b_cache[(gk, tj)]

                executed = (-(-a_pc[:lk] // A_CHUNK)) * (-(-b_pc[:lk] // B_CHUNK))
                trace.add_block(ti, tj, gk * DEFAULT_TILE, executed, base_vec, False)

                for k0 in range(0, lk, k_tile):
                    for k in range(k0, min(k0 + k_tile, lk)):
                        if executed[k] == 0:
                            continue
                        acc += np.outer(a_blk[:, k], b_blk[k, :])

            out[ti * 32:ti * 32 + lr, tj * 32:tj * 32 + lc] = acc[:lr, :lc]

    return out, trace


def condensed_tile_pair(
    a_block: np.ndarray, b_block: np.ndarray
) -> tuple[CondensedTile, CondensedTile]:
    """Condense a dense A tile per column and a dense B tile per row."""
    return condense(a_block, "A"), condense(b_block, "B")
