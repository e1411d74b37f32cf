"""Polynomials in z and z-bar with exact differentiation.

A monomial z^a zbar^b is keyed by the pair of exponent tuples ``(a, b)``.
Used to build test metrics and test functions whose partials are known exactly.
"""
from __future__ import annotations

from collections import defaultdict
from typing import Iterable, Mapping

import numpy as np

Key = tuple[tuple[int, ...], tuple[int, ...]]


class Poly:
    def __init__(self, n: int, terms: Mapping[Key, complex] | None = None):
        self.n = n
        self.terms: dict[Key, complex] = {}
        for key, c in (terms or {}).items():
            if c != 0:
                self.terms[key] = complex(c)

    @classmethod
    def constant(cls, n: int, c: complex) -> Poly:
        return cls(n, {((0,) * n, (0,) * n): c})

    @classmethod
    def monomial(cls, n: int, a: Iterable[int], b: Iterable[int], c: complex = 1.0) -> Poly:
        return cls(n, {(tuple(a), tuple(b)): c})

    @classmethod
    def z(cls, n: int, k: int) -> Poly:
        a = [0] * n
        a[k] = 1
        return cls.monomial(n, a, [0] * n)

    @classmethod
    def zbar(cls, n: int, k: int) -> Poly:
        b = [0] * n
        b[k] = 1
        return cls.monomial(n, [0] * n, b)

    def __add__(self, other: Poly | complex) -> Poly:
        other = self._coerce(other)
        out = defaultdict(complex, self.terms)
        for key, c in other.terms.items():
            out[key] += c
        return Poly(self.n, out)

    __radd__ = __add__

    def __neg__(self) -> Poly:
        return Poly(self.n, {k: -c for k, c in self.terms.items()})

    def __sub__(self, other: Poly | complex) -> Poly:
        return self + (-self._coerce(other))

    def __rsub__(self, other: complex) -> Poly:
        return self._coerce(other) - self

    def __mul__(self, other: Poly | complex) -> Poly:
        other = self._coerce(other)
        out: dict[Key, complex] = defaultdict(complex)
        for (a1, b1), c1 in self.terms.items():
            for (a2, b2), c2 in other.terms.items():
                key = (tuple(x + y for x, y in zip(a1, a2)), tuple(x + y for x, y in zip(b1, b2)))
                out[key] += c1 * c2
        return Poly(self.n, out)

    __rmul__ = __mul__

    def _coerce(self, other: Poly | complex) -> Poly:
        if isinstance(other, Poly):
            if other.n != self.n:
                raise ValueError("dimension mismatch")
            return other
        return Poly.constant(self.n, other)

    def conj(self) -> Poly:
        return Poly(self.n, {(b, a): np.conj(c) for (a, b), c in self.terms.items()})

    def is_real(self, tol: float = 0.0) -> bool:
        diff = self - self.conj()
        return all(abs(c) <= tol for c in diff.terms.values())

    def dz(self, k: int) -> Poly:
        out = {}
        for (a, b), c in self.terms.items():
            if a[k]:
                a2 = list(a)
                a2[k] -= 1
                out[(tuple(a2), b)] = c * a[k]
        return Poly(self.n, out)

    def dzbar(self, k: int) -> Poly:
        out = {}
        for (a, b), c in self.terms.items():
            if b[k]:
                b2 = list(b)
                b2[k] -= 1
                out[(a, tuple(b2))] = c * b[k]
        return Poly(self.n, out)

    def d(self, word: Iterable[tuple[int, bool]]) -> Poly:
        """Apply a sequence of derivatives; each letter is ``(index, barred)``."""
        p = self
        for k, bar in word:
            p = p.dzbar(k) if bar else p.dz(k)
        return p

    def __call__(self, z) -> complex:
        z = np.asarray(z, dtype=complex)
        zb = np.conj(z)
        total = 0j
        for (a, b), c in self.terms.items():
            total += c * np.prod(z ** np.array(a)) * np.prod(zb ** np.array(b))
        return complex(total)


def random_poly(n: int, degree: int, rng: np.random.Generator, scale: float = 1.0,
                real: bool = False, min_degree: int = 0) -> Poly:
    """Random polynomial with total degree in [min_degree, degree]."""
    terms = {}
    for a in _exponents(n, degree):
        for b in _exponents(n, degree - sum(a)):
            if sum(a) + sum(b) < min_degree:
                continue
            terms[(a, b)] = scale * (rng.standard_normal() + 1j * rng.standard_normal())
    p = Poly(n, terms)
    if real:
        p = (p + p.conj()) * 0.5
    return p


def _exponents(n: int, max_total: int) -> list[tuple[int, ...]]:
    if n == 0:
        return [()]
    out = []
    for first in range(max_total + 1):
        for rest in _exponents(n - 1, max_total - first):
            out.append((first,) + rest)
    return out
