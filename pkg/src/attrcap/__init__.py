"""Attribute-conditioned image captioning toolkit.

Subpackages cover the full pipeline: caption ingestion and stemming
(:mod:`attrcap.corpus`), TF-IDF attribute extraction
(:mod:`attrcap.semantics`), neural-network primitives
(:mod:`attrcap.nncore`), the attribute predictor (:mod:`attrcap.attrnet`),
the factorized caption decoder (:mod:`attrcap.scnlstm`), evaluation
metrics (:mod:`attrcap.metrics`), binary artifact formats
(:mod:`attrcap.storage`), and the command line interface
(:mod:`attrcap.cli`).
"""

__version__ = "0.1.0"
