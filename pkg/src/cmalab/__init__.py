"""Finite-difference laboratory for complex Monge-Ampere equations on tori and boxes.

Submodules: ``geometry`` (pointwise Hermitian tensors), ``grids`` and
``stencils`` (fields and difference operators), ``ma`` (the discrete operator),
``solver`` (Newton, continuation, regularization), ``geodesic``, ``oracles``
and ``cli``. Nothing heavy is imported here so the thread limit set by the
command line takes effect before numpy loads.
"""

__version__ = "0.1.0"
