"""tkit: memory-efficient RNN-Transducer training at desk scale.

Core pieces: full and sampled transducer losses with analytic gradients,
CTC auxiliary losses whose posteriors drive negative-label sampling,
CTC-constrained decoding, and an analytic training-memory model.  The
``SampledTransducer`` estimator is the high-level entry point; the
functional modules underneath are usable on their own.
"""

__version__ = "0.1.0"

from tkit.estimator import SampledTransducer

__all__ = ["SampledTransducer", "__version__"]
