"""Binary containers for fixtures.

Two file types, both little-endian throughout:

``.dstc`` — a TwoLevelBitmapMatrix. Header: magic ``DSTC``, then
version, rows, cols, tile_rows, tile_cols as u32. Payload: the warp
bitmap packed LSB-first in row-major tile order, then for each set warp
bit (row-major): the tile's element bitmap packed row-major LSB-first,
followed by its values as float32. Files always store tile values in
row-major order; :func:`load_dstc` re-packs to the requested in-memory
order, so the bytes do not depend on which GEMM side produced them.

``.dmat`` — a dense feature-map stack. Header: magic ``DMAT``, then
rows, cols, channels as u32. Payload: float32, row-major, channel-minor
(i.e. C order of an (rows, cols, channels) array).
"""
from __future__ import annotations

import struct

import numpy as np

from .errors import CorruptEncodingError
from .formats import TilePayload, TwoLevelBitmapMatrix, encode

DSTC_MAGIC = b"DSTC"
DMAT_MAGIC = b"DMAT"
DSTC_VERSION = 1


def _pack_bits(bits: np.ndarray) -> bytes:
    return np.packbits(bits.reshape(-1).astype(np.uint8), bitorder="little").tobytes()


def _unpack_bits(raw: bytes, count: int) -> np.ndarray:
    arr = np.frombuffer(raw, dtype=np.uint8)
    return np.unpackbits(arr, count=count, bitorder="little").astype(bool)


def save_dstc(path, enc: TwoLevelBitmapMatrix) -> None:
    with open(path, "wb") as fh:
        fh.write(DSTC_MAGIC)
        fh.write(struct.pack("<5I", DSTC_VERSION, enc.rows, enc.cols, enc.tile_rows, enc.tile_cols))
        fh.write(_pack_bits(enc.warp_bitmap))
        for gi in range(enc.grid_rows):
            for gj in range(enc.grid_cols):
                if not enc.warp_bitmap[gi, gj]:
                    continue
                payload = enc.tiles[(gi, gj)]
                fh.write(_pack_bits(payload.bitmap))
                # canonical on-disk order is row-major regardless of the
                # in-memory packing
                block = enc.tile_dense(gi, gj)
                fh.write(block[payload.bitmap].astype("<f4").tobytes())


def load_dstc(path, value_order: str = "row") -> TwoLevelBitmapMatrix:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != DSTC_MAGIC:
            raise CorruptEncodingError(f"bad magic {magic!r}, expected {DSTC_MAGIC!r}")
        header = fh.read(20)
        if len(header) != 20:
            raise CorruptEncodingError("truncated header")
        version, rows, cols, tile_rows, tile_cols = struct.unpack("<5I", header)
        if version != DSTC_VERSION:
            raise CorruptEncodingError(f"unsupported version {version}")
        if rows == 0 or cols == 0 or tile_rows == 0 or tile_cols == 0:
            raise CorruptEncodingError("zero-sized dims in header")

        grid_rows = -(-rows // tile_rows)
        grid_cols = -(-cols // tile_cols)
        warp_bytes = (grid_rows * grid_cols + 7) // 8
        raw = fh.read(warp_bytes)
        if len(raw) != warp_bytes:
            raise CorruptEncodingError("truncated warp bitmap")
        warp = _unpack_bits(raw, grid_rows * grid_cols).reshape(grid_rows, grid_cols)

        tile_bits = tile_rows * tile_cols
        tile_bytes = (tile_bits + 7) // 8
        tiles: dict[tuple[int, int], TilePayload] = {}
        for gi in range(grid_rows):
            for gj in range(grid_cols):
                if not warp[gi, gj]:
                    continue
                raw = fh.read(tile_bytes)
                if len(raw) != tile_bytes:
                    raise CorruptEncodingError(f"truncated bitmap for tile ({gi}, {gj})")
                bm = _unpack_bits(raw, tile_bits).reshape(tile_rows, tile_cols)
                nnz = int(bm.sum())
                if nnz == 0:
                    raise CorruptEncodingError(f"warp bit set for empty tile ({gi}, {gj})")
                raw = fh.read(4 * nnz)
                if len(raw) != 4 * nnz:
                    raise CorruptEncodingError(f"truncated values for tile ({gi}, {gj})")
                vals = np.frombuffer(raw, dtype="<f4").astype(np.float32)
                if value_order == "col":
                    block = np.zeros((tile_rows, tile_cols), dtype=np.float32)
                    block[bm] = vals
                    vals = block.T[bm.T]
                tiles[(gi, gj)] = TilePayload(bitmap=bm, values=vals)
        trailing = fh.read(1)
        if trailing:
            raise CorruptEncodingError("trailing bytes after last tile")

    return TwoLevelBitmapMatrix(
        rows=rows, cols=cols, tile_rows=tile_rows, tile_cols=tile_cols,
        grid_rows=grid_rows, grid_cols=grid_cols,
        warp_bitmap=warp, tiles=tiles, value_order=value_order,
    )


def save_dmat(path, stack: np.ndarray) -> None:
    """Write an (rows, cols) or (rows, cols, channels) float array."""
    arr = np.asarray(stack, dtype=np.float32)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3:
        raise CorruptEncodingError(f"expected 2-D or 3-D data, got ndim={arr.ndim}")
    rows, cols, channels = arr.shape
    with open(path, "wb") as fh:
        fh.write(DMAT_MAGIC)
        fh.write(struct.pack("<3I", rows, cols, channels))
        fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def load_dmat(path) -> np.ndarray:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != DMAT_MAGIC:
            raise CorruptEncodingError(f"bad magic {magic!r}, expected {DMAT_MAGIC!r}")
        header = fh.read(12)
        if len(header) != 12:
            raise CorruptEncodingError("truncated header")
        rows, cols, channels = struct.unpack("<3I", header)
        raw = fh.read()
    expected = 4 * rows * cols * channels
    if len(raw) != expected:
        raise CorruptEncodingError(f"payload is {len(raw)} bytes, expected {expected}")
    return np.frombuffer(raw, dtype="<f4").reshape(rows, cols, channels).astype(np.float32)


def save_matrix(path, dense, tile: int = 32, value_order: str = "row") -> None:
    """Convenience: encode a dense matrix and write it as .dstc."""
    save_dstc(path, encode(dense, tile, tile, value_order=value_order))
