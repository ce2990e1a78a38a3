"""Model-serving sidecar for the dialogue state tracking pipeline.

Serves three tiny transformer models (a sequence-to-sequence value
generator, a three-class value estimator, and a domain-slot generator)
behind the pipeline's HTTP wire protocol, and implements its trainer
hook in both command and HTTP form.  Checkpoints are built locally from
corpus text — no model hub access is required.
"""

__version__ = "0.1.0"
