"""Ensemble teacher-student training with simultaneous EMA teacher updates.

A desk-scale library and CLI for unsupervised domain adaptation experiments
on a synthetic multi-domain sequence-labelling benchmark: CTC training from
scratch, confidence-based teacher selection and filtering, exponential
moving-average teacher updates, and the baseline regimes sts / kaizen /
ets / mets / stu.
"""

__version__ = "0.1.0"
