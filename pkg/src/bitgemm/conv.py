"""Sparse convolution lowered onto the outer-product SpGEMM pipeline.

The lowered activations form operand A (M = Ho*Wo rows), the flattened
filters transposed form operand B (Kh*Kw*C x N), so activation lanes use
the A-side quantization {8,16,24,32} and weight lanes the B-side {16,32}.

Three modes share one execution path and produce identical outputs; they
differ only in which operand's sparsity is allowed to shrink step counts:

* ``dense``   — nothing condensed; every set runs its full baseline.
* ``single``  — only the weight operand is condensed (weight warp bits
  skip whole tiles, empty weight lanes skip sets).
* ``dual``    — both operands condensed; activation lanes are produced
  implicitly from the bitmap encoding, one warp lane at a time, so no
  dense lowered matrix is ever materialized.

Activation lanes in dual mode come from the same mask/shift/offset
mechanics as :mod:`bitgemm.im2col`, vectorized through per-row prefix
popcounts; the sequential reference pipeline lives in that module.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ConfigError, ShapeError
from .formats import BitmapMatrix, encode
from .im2col import ConvShape
from .spgemm import A_CHUNK, B_CHUNK, DEFAULT_TILE, StepTrace, _ceil_div

MODES = ("dense", "single", "dual")
_MODE_ALIASES = {"single-sparse": "single", "dual-sparse": "dual"}


class AllocationMeter:
    """Counts float32 elements of lowered-activation storage held at once.

    The implicitness claim is checked against ``peak``: it must stay at
    warp-lane scale regardless of the lowered matrix's full size.
    """

    def __init__(self):
        self.current = 0
        self.peak = 0
        self.total_charged = 0

    def charge(self, n: int) -> None:
        self.current += n
        self.total_charged += n
        if self.current > self.peak:
            self.peak = self.current

    def release(self, n: int) -> None:
        self.current -= n


@dataclass(frozen=True)
class ConvProblem:
    shape: ConvShape
    activations: Sequence[BitmapMatrix]  # one H x W encoding per channel
    weights: BitmapMatrix                # N x (Kh*Kw*C), channel minor
    mode: str = "dual"

    def __post_init__(self):
        mode = _MODE_ALIASES.get(self.mode, self.mode)
        object.__setattr__(self, "mode", mode)
        if mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if len(self.activations) != self.shape.C:
            raise ShapeError(
                f"{len(self.activations)} channel maps for C={self.shape.C}"
            )
        for ch in self.activations:
            if (ch.rows, ch.cols) != (self.shape.H, self.shape.W):
                raise ShapeError(
                    f"channel map {ch.rows}x{ch.cols} != {self.shape.H}x{self.shape.W}"
                )
        k_g = self.shape.Kh * self.shape.Kw * self.shape.C
        if self.weights.rows != self.shape.N or self.weights.cols != k_g:
            raise ShapeError(
                f"weights are {self.weights.rows}x{self.weights.cols}, "
                f"expected {self.shape.N}x{k_g}"
            )


def parse_layer(obj: dict) -> dict:
    """Validate a layer-config JSON object and normalize its mode."""
    required = ("name", "H", "W", "C", "N", "Kh", "Kw", "S", "act_density", "wgt_density", "mode")
    missing = [key for key in required if key not in obj]
    if missing:
        raise ConfigError(f"layer config missing keys: {missing}")
    out = dict(obj)
    for key in ("H", "W", "C", "N", "Kh", "Kw", "S"):
        value = obj[key]
        if not isinstance(value, int) or isinstance(value, bool) or value < 1:
            raise ConfigError(f"layer {obj.get('name')!r}: {key} must be a positive int, got {value!r}")
    for key in ("act_density", "wgt_density"):
        density = float(obj[key])
        if not 0.0 <= density <= 1.0:
            raise ConfigError(f"layer {obj.get('name')!r}: {key}={density} outside [0, 1]")
        out[key] = density
    mode = _MODE_ALIASES.get(obj["mode"], obj["mode"])
    if mode not in MODES:
        raise ConfigError(f"layer {obj.get('name')!r}: mode must be one of {MODES}")
    out["mode"] = mode
    # raises ShapeError for non-integral output geometry
    ConvShape(H=out["H"], W=out["W"], C=out["C"], N=out["N"],
              Kh=out["Kh"], Kw=out["Kw"], S=out["S"])
    return out


class _ChannelGather:
    """Per-channel gather tables: bitmap, packed values, and per-row
    exclusive prefix popcounts (the vectorized S3 accumulator)."""

    __slots__ = ("bitmap", "values", "starts")

    def __init__(self, ch: BitmapMatrix):
        self.bitmap = ch.bitmap
        self.values = ch.values
        prefix = np.concatenate(
            (np.zeros((ch.rows, 1), dtype=np.int64), np.cumsum(ch.bitmap, axis=1)),
            axis=1,
        )[:, :-1]
        self.starts = prefix + ch.row_offsets[:, None]

    def lane(self, r: np.ndarray, q: np.ndarray, width: int) -> tuple[np.ndarray, int]:
        """32-wide activation lane for map positions (r[i], q[i])."""
        vec = np.zeros(DEFAULT_TILE, dtype=np.float32)
        hit = self.bitmap[r, q]
        if hit.any():
            vec[:width][hit] = self.values[self.starts[r, q][hit]]
        return vec, int(hit.sum())


def spconv(
    problem: ConvProblem,
    meter: AllocationMeter | None = None,
) -> tuple[np.ndarray, StepTrace]:
    """Run one convolution problem; returns ((Ho*Wo) x N output, trace).

    Output is identical across modes (the arithmetic never changes, only
    the step accounting); merge order is ascending lowered-column index.
    """
    shape = problem.shape
    m = shape.Ho * shape.Wo
    k_g = shape.Kh * shape.Kw * shape.C
    n = shape.N
    n_tiles = _ceil_div(n, DEFAULT_TILE)
    bands = _ceil_div(m, DEFAULT_TILE)

    # operand B: flattened filters transposed to (K_g, N), padded to tile cols
    b_dense = problem.weights.to_dense().T
    b_padded = np.zeros((k_g, n_tiles * DEFAULT_TILE), dtype=np.float32)
    b_padded[:, :n] = b_dense
    if problem.mode in ("single", "dual"):
        b_enc = encode(b_dense, DEFAULT_TILE, DEFAULT_TILE, value_order="row")
        b_warp = b_enc.warp_bitmap
    else:
        b_warp = np.ones((_ceil_div(k_g, DEFAULT_TILE), n_tiles), dtype=bool)
    # per-lane weight popcounts within each column tile
    b_counts = np.zeros((k_g, n_tiles), dtype=np.int64)
    for nt in range(n_tiles):
        sub = b_padded[:, nt * DEFAULT_TILE:(nt + 1) * DEFAULT_TILE]
        b_counts[:, nt] = np.count_nonzero(sub, axis=1)

    gathers = [_ChannelGather(ch) for ch in problem.activations]
    out = np.zeros((m, n), dtype=np.float32)
    trace = StepTrace(dual_side=(problem.mode == "dual"))

    for band in range(bands):
        lr = min(DEFAULT_TILE, m - band * DEFAULT_TILE)
        rows_m = np.arange(band * DEFAULT_TILE, band * DEFAULT_TILE + lr)
        ho = rows_m // shape.Wo
        wo = rows_m % shape.Wo
        a_full_chunks = _ceil_div(lr, A_CHUNK)

        accs = [np.zeros((DEFAULT_TILE, DEFAULT_TILE), dtype=np.float32) for _ in range(n_tiles)]
        executed = np.zeros((n_tiles, k_g), dtype=np.int64)
        skipped = np.zeros((n_tiles, k_g), dtype=bool)

        for kh in range(shape.Kh):
            r_idx = ho * shape.S + kh
            for kw in range(shape.Kw):
                q_idx = wo * shape.S + kw
                for c in range(shape.C):
                    k = (kh * shape.Kw + kw) * shape.C + c
                    gk = k // DEFAULT_TILE
                    live_tiles = [nt for nt in range(n_tiles) if b_warp[gk, nt]]
                    if problem.mode in ("single", "dual"):
                        for nt in range(n_tiles):
                            skipped[nt, k] = not b_warp[gk, nt]
                    if not live_tiles:
                        continue

                    if meter is not None:
                        meter.charge(DEFAULT_TILE)
                    a_vec, pc_a = gathers[c].lane(r_idx, q_idx, lr)
                    if problem.mode == "dual":
                        a_chunks = _ceil_div(pc_a, A_CHUNK) if pc_a else 0
                    else:
                        a_chunks = a_full_chunks

                    for nt in live_tiles:
                        lc = min(DEFAULT_TILE, n - nt * DEFAULT_TILE)
                        if problem.mode == "dense":
                            steps = a_full_chunks * _ceil_div(lc, B_CHUNK)
                        else:
                            pc_b = int(b_counts[k, nt])
                            b_chunks = _ceil_div(pc_b, B_CHUNK) if pc_b else 0
                            steps = a_chunks * b_chunks
                        executed[nt, k] = steps
                        if pc_a:
                            accs[nt] += np.outer(
                                a_vec, b_padded[k, nt * DEFAULT_TILE:(nt + 1) * DEFAULT_TILE]
                            )
                    if meter is not None:
                        meter.release(DEFAULT_TILE)

        for nt in range(n_tiles):
            lc = min(DEFAULT_TILE, n - nt * DEFAULT_TILE)
            baseline = a_full_chunks * _ceil_div(lc, B_CHUNK)
            base_vec = np.full(k_g, baseline, dtype=np.int64)
            # contiguous runs sharing the skip flag become separate blocks
            k = 0
            while k < k_g:
                flag = bool(skipped[nt, k])
                stop = k
                while stop < k_g and bool(skipped[nt, stop]) == flag:
                    stop += 1
                trace.add_block(band, nt, k, executed[nt, k:stop], base_vec[k:stop], flag)
                k = stop
            out[band * DEFAULT_TILE:band * DEFAULT_TILE + lr, nt * DEFAULT_TILE:nt * DEFAULT_TILE + lc] = \
                accs[nt][:lr, :lc]

    return out, trace
