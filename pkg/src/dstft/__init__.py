"""Differentiable short-time Fourier transform.

Window lengths and frame positions are real-valued parameters with analytic
gradients, so they can be fitted by gradient descent to any differentiable
loss on the spectrogram.

Modules
-------
window      contracted, L1-normalized Hann / Gaussian tapers and their derivatives
transform   plans, the forward transform and the classical STFT
grad        backward pass from a complex cotangent to plan parameters
objectives  entropy, kurtosis, coverage, NLTV, tracking and classification losses
optimize    Adam / gradient-descent fitting and grid sweeps
signals     synthetic scenarios, datasets and file I/O
tracking    ridge and weighted-average frequency tracks
verify      naive-sum and finite-difference oracles, timing probes
pipelines   tuned end-to-end experiments shared by the CLI, demos and tests
cli         ``dstft`` command-line tool
"""

from .grad import ParamGradients, backward
from .optimize import OptimConfig, OptimResult, fit, sweep_theta
from .signals import SyntheticScenario, generate, load, save
from .transform import (
    DstftPlan,
    LengthField,
    PositionField,
    Signal,
    TfMatrix,
    classical_stft,
    forward,
    make_plan,
    resolve_positions,
)
from .window import WindowKind, WindowSpec

__version__ = "0.1.0"

__all__ = [
    "DstftPlan",
    "LengthField",
    "OptimConfig",
    "OptimResult",
    "ParamGradients",
    "PositionField",
    "Signal",
    "SyntheticScenario",
    "TfMatrix",
    "WindowKind",
    "WindowSpec",
    "backward",
    "classical_stft",
    "fit",
    "forward",
    "generate",
    "load",
    "make_plan",
    "resolve_positions",
    "save",
    "sweep_theta",
]
