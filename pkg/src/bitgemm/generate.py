"""Deterministic random input generation.

All randomness flows through numpy's PCG64 so fixtures are reproducible
from a 64-bit seed alone; the algorithm name is recorded in CSV headers
by the bench harness. Nonzero values are uniform in [-1, 1] with exact
zeros redrawn, so occupancy is exactly what the density mask says.
"""
from __future__ import annotations

import numpy as np

from .conv import ConvProblem
from .errors import ConfigError
from .formats import BitmapMatrix, encode_single
from .im2col import ConvShape, flatten_weights

RNG_ALGORITHM = "numpy-PCG64"


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


def _nonzero_uniform(rng: np.random.Generator, count: int) -> np.ndarray:
    vals = rng.uniform(-1.0, 1.0, size=count).astype(np.float32)
    while True:
        zeros = vals == 0.0
        if not zeros.any():
            return vals
        vals[zeros] = rng.uniform(-1.0, 1.0, size=int(zeros.sum())).astype(np.float32)


def random_matrix(rows: int, cols: int, density: float, rng: np.random.Generator) -> np.ndarray:
    """Each element is independently nonzero with probability ``density``."""
    if not 0.0 <= density <= 1.0:
        raise ConfigError(f"density {density} outside [0, 1]")
    if rows < 1 or cols < 1:
        raise ConfigError("dims must be >= 1")
    mask = rng.random((rows, cols)) < density
    out = np.zeros((rows, cols), dtype=np.float32)
    out[mask] = _nonzero_uniform(rng, int(mask.sum()))
    return out


def random_map(h: int, w: int, c: int, density: float, rng: np.random.Generator) -> np.ndarray:
    """(H, W, C) feature-map stack at the given density."""
    if not 0.0 <= density <= 1.0:
        raise ConfigError(f"density {density} outside [0, 1]")
    mask = rng.random((h, w, c)) < density
    out = np.zeros((h, w, c), dtype=np.float32)
    out[mask] = _nonzero_uniform(rng, int(mask.sum()))
    return out


def clustered_matrix(
    rows: int,
    cols: int,
    density: float,
    rng: np.random.Generator,
    tile: int = 32,
    live_tile_fraction: float = 0.15,
) -> np.ndarray:
    """Sparse matrix whose nonzeros are confined to a fraction of tiles.

    Used to build fixtures where whole-warp skipping dominates: with
    ``live_tile_fraction`` f, at least (1 - f) of the warp bitmap is zero
    by construction.
    """
    if not 0.0 < live_tile_fraction <= 1.0:
        raise ConfigError("live_tile_fraction must be in (0, 1]")
    grid_r = -(-rows // tile)
    grid_c = -(-cols // tile)
    n_tiles = grid_r * grid_c
    n_live = max(1, int(n_tiles * live_tile_fraction))
    live = rng.choice(n_tiles, size=n_live, replace=False)
    out = np.zeros((rows, cols), dtype=np.float32)
    # spread the global nonzero budget evenly over the live tiles
    budget = int(round(rows * cols * density))
    for rank, t in enumerate(np.sort(live)):
        share = budget // n_live + (1 if rank < budget % n_live else 0)
        if share == 0:
            continue
        gi, gj = divmod(int(t), grid_c)
        r0, c0 = gi * tile, gj * tile
        hh = min(tile, rows - r0)
        ww = min(tile, cols - c0)
        share = min(share, hh * ww)
        pos = rng.choice(hh * ww, size=share, replace=False)
        out[r0 + pos // ww, c0 + pos % ww] = _nonzero_uniform(rng, share)
    return out


def random_conv_problem(
    layer: dict, rng: np.random.Generator
) -> tuple[ConvProblem, np.ndarray, np.ndarray]:
    """Instantiate a validated layer config with random operands.

    Returns the problem plus the dense activation stack and dense weight
    matrix it was built from (callers feed those to reference checks).
    """
    shape = ConvShape(H=layer["H"], W=layer["W"], C=layer["C"], N=layer["N"],
                      Kh=layer["Kh"], Kw=layer["Kw"], S=layer["S"])
    stack = random_map(shape.H, shape.W, shape.C, layer["act_density"], rng)
    activations = [encode_single(stack[:, :, c]) for c in range(shape.C)]
    weights_dense = random_matrix(shape.N, shape.Kh * shape.Kw * shape.C,
                                  layer["wgt_density"], rng)
    weights = flatten_weights(weights_dense.reshape(shape.N, shape.Kh, shape.Kw, shape.C))
    return ConvProblem(shape=shape, activations=activations, weights=weights,
                       mode=layer["mode"]), stack, weights_dense


def bitmap_matrix_from_dense(dense) -> BitmapMatrix:
    return encode_single(dense)
