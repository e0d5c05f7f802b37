"""Bitmap-encoded sparse GEMM and convolution on an outer-product tile engine.

The package has three layers: encodings (`formats`, `io`), kernels
(`spgemm`, `im2col`, `conv`) and accounting (`costmodel`, `bench`).
Everything computes real values in float32 while a step trace records
what a 32x32 outer-product tile engine would have issued and skipped.
"""
from .conv import MODES, AllocationMeter, ConvProblem, parse_layer, spconv
from .costmodel import (
    CostConfig,
    CostReport,
    bank_load_lower_bound,
    simulate_accumulation,
    total_cost,
)
from .errors import (
    BitgemmError,
    ConfigError,
    CorruptEncodingError,
    EmptyInputError,
    ShapeError,
)
from .formats import (
    A_SIDE_LEVELS,
    B_SIDE_LEVELS,
    DEFAULT_TILE,
    BitmapMatrix,
    CondensedTile,
    TwoLevelBitmapMatrix,
    condense,
    decode,
    encode,
    encode_single,
    quantize_length,
)
from .im2col import ConvShape, dense_im2col_outer, flatten_weights, sparse_im2col_bitmap
from .io import load_dmat, load_dstc, save_dmat, save_dstc
from .spgemm import (
    Accumulator,
    PartialProduct,
    StepTrace,
    device_spgemm,
    merge,
    multiply_bitmap,
    multiply_value,
    warp_spgemm,
)

__version__ = "0.1.0"

__all__ = [
    "A_SIDE_LEVELS",
    "B_SIDE_LEVELS",
    "DEFAULT_TILE",
    "MODES",
    "Accumulator",
    "AllocationMeter",
    "BitgemmError",
    "BitmapMatrix",
    "CondensedTile",
    "ConfigError",
    "ConvProblem",
    "ConvShape",
    "CorruptEncodingError",
    "CostConfig",
    "CostReport",
    "EmptyInputError",
    "PartialProduct",
    "ShapeError",
    "StepTrace",
    "TwoLevelBitmapMatrix",
    "bank_load_lower_bound",
    "condense",
    "decode",
    "dense_im2col_outer",
    "device_spgemm",
    "encode",
    "encode_single",
    "flatten_weights",
    "load_dmat",
    "load_dstc",
    "merge",
    "multiply_bitmap",
    "multiply_value",
    "parse_layer",
    "quantize_length",
    "save_dmat",
    "save_dstc",
    "simulate_accumulation",
    "sparse_im2col_bitmap",
    "spconv",
    "total_cost",
    "warp_spgemm",
]
