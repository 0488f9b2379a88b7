"""Contextual affect regression over text, visual and audio streams.

Everything runs on a float64 numpy reverse-mode autodiff core
(:mod:`ctxaffect.tensor`); :mod:`ctxaffect.pipeline` ties the stages together
and :mod:`ctxaffect.cli` exposes them on the command line.
"""

__version__ = "0.1.0"
