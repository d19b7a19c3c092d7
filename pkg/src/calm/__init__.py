"""Class-anchor alignment head with a verified numeric core.

Subpackages:
    tensor     float64 autodiff primitives and the gradient checker
    anchors    class-anchor sets and anchor probability distributions
    cvae       cross-modal variational autoencoder and its two losses
    objective  total training loss and its ablation variants
    optim      AdamW with decoupled weight decay
    trainer    seeded training loop, checkpoints, metrics log
    data_io    binary embedding stores, manifests, synthetic corpora
    evaluate   text-to-video retrieval metrics
    cli        operator commands (gen-data / train / eval / gradcheck / ablate)
"""

__version__ = "0.1.0"
