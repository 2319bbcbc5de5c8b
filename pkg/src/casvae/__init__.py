"""Cascade variational autoencoder for unsupervised star/galaxy separation.

Subpackages: ``nn`` (dense layers, batch norm, Adam), ``divergence``
(two-peak prior surrogates and the quadrature oracle), ``models``,
``synthdata``, ``manifold``, ``evaluation``, plus the experiment runner
behind the ``casvae`` command.
"""

__version__ = "0.1.0"
