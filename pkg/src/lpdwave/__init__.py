"""Background-mimicking radar waveform toolkit.

Synthesis of signal corpora, adversarial waveform generator training with
an ambiguity-surface shaping loss, and adversary-side detectability
evaluation (cyclostationary and learned detectors, ROC reporting).
"""

__version__ = "0.1.0"

from . import ambiguity, corpus, detection, frames, iqfile, nn, rng, training

__all__ = [
    "ambiguity", "corpus", "detection", "frames", "iqfile", "nn", "rng",
    "training", "__version__",
]
