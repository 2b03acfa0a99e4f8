"""dialokit: a desk-scale knowledge-grounded dialogue pipeline.

Pieces: corpus model and synthetic data, reference-based text metrics,
consensus candidate selection, dialogue augmentation, a flow-planning
transformer language model with hand-written backprop, a staged response
scoring cascade, surface post-processing, and an HTTP chat service.
"""

__version__ = "0.1.0"
