"""Instruction-guided time series editing.

Time series and natural-language instructions are embedded onto a shared
unit hypersphere by contrastively trained encoders; a conditional decoder
turns linearly interpolated embeddings back into series, so the
interpolation weight acts as an editing-strength dial.
"""

__version__ = "0.1.0"
