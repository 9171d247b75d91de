"""Two-mode squeezed vacuum homodyne simulator and squeezing-spectrum analysis."""

from .dsp import FrequencyBin, Spectrum
from .model import Branch, Quadrature, SqueezerParams, paper_like
from .synth import TraceSet, synthesize

__all__ = [
    "Branch",
    "FrequencyBin",
    "Quadrature",
    "Spectrum",
    "SqueezerParams",
    "TraceSet",
    "paper_like",
    "synthesize",
]

__version__ = "0.1.0"
