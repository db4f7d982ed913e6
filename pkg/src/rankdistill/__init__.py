"""Desk-scale multi-teacher distillation lab for answer-sentence ranking.

Built on an in-repo float64 autodiff core so every gradient claim can be
checked against finite differences.
"""

__version__ = "0.1.0"
