"""Dialogue state tracking as value generation plus slot assignment.

The pipeline decomposes state tracking into three model-backed steps:
generate the values a turn mentions, judge candidate value sets with a
three-way estimator, and name the domain-slot each value fills.  On top
of those sit deterministic corpus handling, negative-sample synthesis
for the estimator, estimator-filtered self-training over unlabeled
dialogues, and the TLA/JGA/F1 evaluation stack.
"""

__version__ = "0.1.0"
