from .blocks import TransformerBlockSpec, block_forward, identity_block, init_block
from .quant import QuantizedWeights, QuantizationError, dequantize, fake_quantize, quantize
from .tensor import Tensor
from .trace import OpTrace, TraceEntry, UnknownOperatorError, taxonomy, trace_summary

__all__ = [
    "OpTrace", "QuantizationError", "QuantizedWeights", "Tensor", "TraceEntry",
    "TransformerBlockSpec", "UnknownOperatorError", "block_forward", "dequantize",
    "fake_quantize", "identity_block", "init_block", "quantize", "taxonomy", "trace_summary",
]
