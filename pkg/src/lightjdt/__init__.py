"""Lightweight joint detection and tracking on a small numpy autodiff core.

Main entry points:

- :mod:`lightjdt.tensor` for the tape and MAC counter
- :mod:`lightjdt.butterfly` and :mod:`lightjdt.encoder` for the butterfly FFN
- :mod:`lightjdt.model`, :mod:`lightjdt.train` and :mod:`lightjdt.tracker` for the toy tracker
- :mod:`lightjdt.profiler` and :mod:`lightjdt.graphs` for params/MACs accounting
- :mod:`lightjdt.moteval` for CLEAR-MOT scoring
"""
__version__ = "0.1.0"
