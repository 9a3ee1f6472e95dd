"""Desk-scale contrastive embedding trainer.

Trains small transformer encoders as sentence embedders through a
four-stage pipeline (token-level pretraining, pair SFT, weakly-supervised
contrastive training under a scheduled attention mask, supervised
multi-task fine-tuning with dynamic hard negative mining), with
cross-lingual pair generation, Matryoshka truncated-dimension
embeddings, and an exact retrieval/STS evaluation harness.
"""

__version__ = "0.1.0"
