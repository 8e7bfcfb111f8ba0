"""Interpolated editing: embed, blend, decode at a grid of strengths.

The blend z_w = (1-w) z_x + w z_c stays affine (never renormalized): the
endpoints must reproduce decode(z_x, z_c) and decode(z_c, z_c) bit-exactly,
and convexity keeps ||z_w|| <= 1 anyway. The instruction embedding always
occupies the decoder's second slot, at every w.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import InputError
from .model import Embedding


def interpolate(z_x, z_c, w):
    """z_w = (1-w) z_x + w z_c for unit-norm inputs; not renormalized."""
    zx = z_x.values if isinstance(z_x, Embedding) else np.asarray(z_x, dtype=np.float64)
    zc = z_c.values if isinstance(z_c, Embedding) else np.asarray(z_c, dtype=np.float64)
    if zx.shape != zc.shape or zx.ndim != 1:
        raise InputError(f"embeddings must share one shape, got {zx.shape} and {zc.shape}")
    if not 0.0 <= w <= 1.0:
        raise InputError(f"interpolation weight must lie in [0, 1], got {w}")
    for name, z in (("z_x", zx), ("z_c", zc)):
        if abs(np.linalg.norm(z) - 1.0) > 1e-6:
            raise InputError(f"{name} must be unit-norm, got norm {np.linalg.norm(z)}")
    return Embedding(values=(1.0 - w) * zx + w * zc, modality="interpolated")


@dataclass
class EditRequest:
    series: np.ndarray
    instruction: str
    weights: list
    normalization: str = "none"  # or "dataset-stats"

    def __post_init__(self):
        self.series = np.asarray(self.series, dtype=np.float64)
        weights = [float(w) for w in self.weights]
        if not weights:
            raise InputError("weights must be non-empty")
        for w in weights:
            if not 0.0 <= w <= 1.0:
                raise InputError(f"weight {w} outside [0, 1]")
        if any(b <= a for a, b in zip(weights, weights[1:])):
            raise InputError(f"weights must be strictly increasing, got {weights}")
        if self.normalization not in ("none", "dataset-stats"):
            raise InputError(f"unknown normalization mode {self.normalization!r}")
        if not isinstance(self.instruction, str) or not self.instruction:
            raise InputError("instruction must be a non-empty string")
        self.weights = weights


@dataclass
class EditResult:
    weights: list
    series: list  # one length-T array per weight
    z_norms: list  # ||z_w|| per weight
    z_x: Embedding
    z_c: Embedding
    instruction: str = ""
    extras: dict = field(default_factory=dict)


def edit(model, request, stats=None):
    """Decode interpolate(z_x, z_c, w) against z_c for each requested w."""
    x = request.series
    if x.ndim != 1 or x.shape[0] != model.config.T:
        raise InputError(
            f"series length {x.shape} does not match model T={model.config.T}"
        )
    if request.normalization == "dataset-stats":
        if stats is None:
            raise InputError("dataset-stats normalization requested but no stats supplied")
        x = stats.standardize(x)
    z_x = model.encode_series(x)
    z_c = model.encode_instruction(request.instruction)
    outputs, norms = [], []
    for w in request.weights:
        z_w = interpolate(z_x, z_c, w)
        decoded = model.decode(z_w, z_c)
        if request.normalization == "dataset-stats":
            decoded = stats.destandardize(decoded)
        outputs.append(decoded)
        norms.append(float(np.linalg.norm(z_w.values)))
    return EditResult(
        weights=list(request.weights),
        series=outputs,
        z_norms=norms,
        z_x=z_x,
        z_c=z_c,
        instruction=request.instruction,
    )
