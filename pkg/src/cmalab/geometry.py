"""Exact Hermitian tensor algebra at a point.

Index conventions (all arrays are complex):

* ``g[i, j]``        = g_{i jbar}
* ``dg[i, j, k]``    = d g_{i jbar} / d z_k
* ``ddg[i, j, k, l]``= d^2 g_{i jbar} / d z_k d zbar_l
* ``hdg[i, j, k, l]``= d^2 g_{i jbar} / d z_k d z_l   (optional, holomorphic second partials)
* ``ginv[i, j]``     = g^{i jbar}, so that g^{i jbar} g_{k jbar} = delta_{ik}

Christoffel symbols are returned as ``gamma[l, j, k]`` = Gamma^l_{jk}, torsion as
``T[k, i, j]`` = T^k_{ij} and curvature as ``R[i, j, k, l]`` = R_{i jbar k lbar}.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .errors import DegenerateMetricError, PreconditionError
from .poly import Poly

COND_LIMIT = 1e12
IDENTITY_TOL = 1e-10


@dataclass(frozen=True)
class ChartJet:
    """Metric values and partial derivatives at a single point."""

    g: np.ndarray
    dg: np.ndarray
    ddg: np.ndarray | None = None
    hdg: np.ndarray | None = None
    point: np.ndarray | None = None
    check: bool = field(default=True, repr=False, compare=False)

    def __post_init__(self):
        g = np.asarray(self.g, dtype=complex)
        object.__setattr__(self, "g", g)
        object.__setattr__(self, "dg", np.asarray(self.dg, dtype=complex))
        if self.ddg is not None:
            object.__setattr__(self, "ddg", np.asarray(self.ddg, dtype=complex))
        if self.hdg is not None:
            object.__setattr__(self, "hdg", np.asarray(self.hdg, dtype=complex))
        n = g.shape[0]
        if g.shape != (n, n) or self.dg.shape != (n, n, n):
            raise ValueError("inconsistent jet shapes")
        if self.ddg is not None and self.ddg.shape != (n,) * 4:
            raise ValueError("inconsistent ddg shape")
        if self.check:
            scale = max(1.0, np.abs(g).max())
            if np.abs(g - g.conj().T).max() > 1e-12 * scale:
                raise ValueError("g is not Hermitian")
            if np.linalg.eigvalsh(0.5 * (g + g.conj().T)).min() <= 0:
                raise ValueError("g is not positive definite")
            if self.ddg is not None:
                sym = np.conj(self.ddg.transpose(1, 0, 3, 2))
                if np.abs(self.ddg - sym).max() > 1e-10 * max(1.0, np.abs(self.ddg).max()):
                    raise ValueError("ddg violates ddg[i,j,k,l] = conj(ddg[j,i,l,k])")

    @property
    def n(self) -> int:
        return self.g.shape[0]


@dataclass(frozen=True)
class AnalyticMetric:
    """A metric given by a closed-form jet evaluator on C^n."""

    n: int
    evaluator: Callable[[np.ndarray], ChartJet]
    name: str = "metric"
    kahler: bool | None = None

    def jet(self, point) -> ChartJet:
        return self.evaluator(np.asarray(point, dtype=complex))


@dataclass(frozen=True)
class QuadraticChange:
    """Holomorphic change w = A z + Q(z, z) about the base point z = 0.

    ``quad[r, a, b]`` is symmetric in ``(a, b)`` and ``w_r = sum_s A[r, s] z_s +
    sum_{a,b} quad[r, a, b] z_a z_b``.
    """

    linear: np.ndarray
    quad: np.ndarray

    def __post_init__(self):
        lin = np.asarray(self.linear, dtype=complex)
        q = np.asarray(self.quad, dtype=complex)
        object.__setattr__(self, "linear", lin)
        object.__setattr__(self, "quad", q)
        n = lin.shape[0]
        if lin.shape != (n, n) or q.shape != (n, n, n):
            raise ValueError("inconsistent change shapes")
        if np.abs(q - q.transpose(0, 2, 1)).max() > 0:
            raise ValueError("quadratic coefficients must be symmetric in the lower indices")

    @classmethod
    def identity(cls, n: int) -> QuadraticChange:
        return cls(np.eye(n), np.zeros((n, n, n)))

    @property
    def n(self) -> int:
        return self.linear.shape[0]

    def __call__(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=complex)
        return self.linear @ z + np.einsum("rab,a,b->r", self.quad, z, z)


def inverse_metric(g: np.ndarray) -> np.ndarray:
    """Return g^{i jbar} with a condition-number guard."""
    cond = np.linalg.cond(g)
    if not np.isfinite(cond) or cond > COND_LIMIT:
        raise DegenerateMetricError(f"metric condition number {cond:.3g} exceeds {COND_LIMIT:g}")
    return np.linalg.inv(g).T


def christoffel(jet: ChartJet) -> np.ndarray:
    ginv = inverse_metric(jet.g)
    return np.einsum("lm,kmj->ljk", ginv, jet.dg)


def torsion(jet: ChartJet) -> np.ndarray:
    gam = christoffel(jet)
    return gam - gam.transpose(0, 2, 1)


def curvature(jet: ChartJet) -> np.ndarray:
    if jet.ddg is None:
        raise PreconditionError("curvature needs mixed second partials")
    ginv = inverse_metric(jet.g)
    quad = np.einsum("pq,kqi,lpj->ijkl", ginv, jet.dg, np.conj(jet.dg))
    return -jet.ddg.transpose(2, 3, 0, 1) + quad


def ricci_traces(jet: ChartJet) -> tuple[np.ndarray, np.ndarray]:
    """First and second Ricci tensors ``(R_{k lbar}, S_{i jbar})``."""
    ginv = inverse_metric(jet.g)
    R = curvature(jet)
    first = np.einsum("ij,ijkl->kl", ginv, R)
    second = np.einsum("kl,ijkl->ij", ginv, R)
    return first, second


def _dginv(jet: ChartJet, barred: bool) -> np.ndarray:
    """Partials of g^{i jbar}; last index is the differentiation direction."""
    ginv_plain = np.linalg.inv(jet.g)
    if barred:
        dG = np.conj(jet.dg.transpose(1, 0, 2))
    else:
        dG = jet.dg
    d = -np.einsum("ab,bcp,cd->adp", ginv_plain, dG, ginv_plain)
    return d.transpose(1, 0, 2)


def christoffel_dbar(jet: ChartJet) -> np.ndarray:
    """``out[l, j, k, p]`` = d Gamma^l_{jk} / d zbar_p."""
    if jet.ddg is None:
        raise PreconditionError("needs mixed second partials")
    ginv = inverse_metric(jet.g)
    return (np.einsum("lmp,kmj->ljkp", _dginv(jet, True), jet.dg)
            + np.einsum("lm,kmjp->ljkp", ginv, jet.ddg))


def christoffel_d(jet: ChartJet) -> np.ndarray:
    """``out[l, j, k, p]`` = d Gamma^l_{jk} / d z_p (needs holomorphic second partials)."""
    if jet.hdg is None:
        raise PreconditionError("needs holomorphic second partials")
    ginv = inverse_metric(jet.g)
    return (np.einsum("lmp,kmj->ljkp", _dginv(jet, False), jet.dg)
            + np.einsum("lm,kmjp->ljkp", ginv, jet.hdg))


def bianchi_defect(jet: ChartJet) -> np.ndarray:
    """R_{i jbar k lbar} - R_{k jbar i lbar} - g_{m lbar} d_{jbar} T^m_{ki}.

    This vanishes identically; it is a test instrument.
    """
    R = curvature(jet)
    dbar = christoffel_dbar(jet)
    dT = dbar - dbar.transpose(0, 2, 1, 3)  # dT[m, k, i, j] = dbar_j T^m_{ki}
    term = np.einsum("ml,mkij->ijkl", jet.g, dT)
    return R - R.transpose(2, 1, 0, 3) - term


def normalize_frame(jet: ChartJet) -> QuadraticChange:
    """Linear change w = A z after which the metric at the base point is the identity."""
    inverse_metric(jet.g)
    L = np.linalg.cholesky(jet.g)
    return QuadraticChange(L.T, np.zeros((jet.n,) * 3))


def pullback_jet(jet: ChartJet, change: QuadraticChange) -> ChartJet:
    """Express the jet in the coordinates w given by ``change``.

    g and dg are transformed exactly by the chain rule. ddg and hdg are
    transformed only for purely linear changes; otherwise they are dropped
    (set to None) because they would need third-order data of the change.
    """
    n = jet.n
    if change.n != n:
        raise ValueError("dimension mismatch between jet and change")
    B = np.linalg.inv(change.linear)  # dz/dw at the base point
    # d^2 z_r / dw_i dw_k
    z2 = -2.0 * np.einsum("rs,sab,ai,bk->rik", B, change.quad, B, B)
    g_new = np.einsum("rs,ri,sj->ij", jet.g, B, np.conj(B))
    dg_new = (np.einsum("rs,rik,sj->ijk", jet.g, z2, np.conj(B))
              + np.einsum("rsp,pk,ri,sj->ijk", jet.dg, B, B, np.conj(B)))
    ddg_new = hdg_new = None
    if not np.any(change.quad):
        if jet.ddg is not None:
            ddg_new = np.einsum("rspq,pk,ql,ri,sj->ijkl", jet.ddg, B, np.conj(B), B, np.conj(B))
        if jet.hdg is not None:
            hdg_new = np.einsum("rspq,pk,ql,ri,sj->ijkl", jet.hdg, B, B, B, np.conj(B))
    return ChartJet(g_new, dg_new, ddg_new, hdg_new, check=False)


def special_coordinates(jet: ChartJet, variant: str = "primary") -> QuadraticChange:
    """Quadratic coordinate change killing selected first derivatives of g.

    ``primary``:   afterwards d g_{i ibar}/dw_k = 0 and d g_{i jbar}/dw_j = T^j_{ji} (i != j).
    ``alternate``: afterwards d g_{i jbar}/dw_j = 0 and d g_{i ibar}/dw_k = T^i_{ki} (i != k).
    """
    n = jet.n
    if np.abs(jet.g - np.eye(n)).max() > IDENTITY_TOL:
        raise PreconditionError("metric at the base point must be the identity; apply normalize_frame")
    dg = jet.dg
    q = np.zeros((n, n, n), dtype=complex)
    for r in range(n):
        for m in range(n):
            if m == r:
                q[r, r, r] = 0.5 * dg[r, r, r]
            elif variant == "primary":
                q[r, m, r] = q[r, r, m] = 0.5 * dg[r, r, m]
            elif variant == "alternate":
                q[r, m, r] = q[r, r, m] = 0.5 * dg[m, r, r]
            else:
                raise ValueError(f"unknown variant {variant!r}")
    return QuadraticChange(np.eye(n), q)


def special_coordinate_defects(jet: ChartJet, variant: str = "primary") -> float:
    """Max violation of the special-coordinate conditions after the change."""
    T = torsion(jet)
    new = pullback_jet(jet, special_coordinates(jet, variant))
    d = new.dg
    n = jet.n
    worst = np.abs(new.g - np.eye(n)).max()
    for i in range(n):
        for k in range(n):
            if variant == "primary":
                worst = max(worst, abs(d[i, i, k]))
                if i != k:
                    worst = max(worst, abs(d[i, k, k] - T[k, k, i]))
            else:
                worst = max(worst, abs(d[i, k, k]) if i != k else abs(d[i, i, i]))
                if i != k:
                    worst = max(worst, abs(d[i, i, k] - T[i, k, i]))
    return float(worst)


# --- covariant derivatives of a scalar ---------------------------------------

Letter = tuple[int, bool]
ScalarPartials = Callable[[Sequence[Letter]], complex]


class _Covariant:
    """Covariant derivatives (Chern connection) of a scalar up to third order."""

    def __init__(self, jet: ChartJet, vp: ScalarPartials):
        self.n = jet.n
        self.vp = vp
        self.gam = christoffel(jet)
        self.dbar = christoffel_dbar(jet)
        self.dhol = christoffel_d(jet) if jet.hdg is not None else None

    def conn(self, c: Letter, a: Letter) -> np.ndarray:
        if c[1] != a[1]:
            return np.zeros(self.n, dtype=complex)
        col = self.gam[:, c[0], a[0]]
        return np.conj(col) if a[1] else col

    def dconn(self, c: Letter, a: Letter, d: Letter) -> np.ndarray:
        if c[1] != a[1]:
            return np.zeros(self.n, dtype=complex)
        if not a[1]:
            src = self.dbar if d[1] else self.dhol
            if src is None:
                raise PreconditionError("needs holomorphic second partials of g")
            return src[:, c[0], a[0], d[0]]
        src = self.dhol if d[1] else self.dbar
        if src is None:
            raise PreconditionError("needs holomorphic second partials of g")
        return np.conj(src[:, c[0], a[0], d[0]])

    def v1(self, a: Letter) -> complex:
        return self.vp([a])

    def v2(self, a: Letter, b: Letter) -> complex:
        C = self.conn(b, a)
        return self.vp([a, b]) - sum(C[l] * self.vp([(l, a[1])]) for l in range(self.n))

    def _d_v2(self, a: Letter, b: Letter, c: Letter) -> complex:
        C = self.conn(b, a)
        dC = self.dconn(b, a, c)
        out = self.vp([a, b, c])
        for l in range(self.n):
            out -= dC[l] * self.vp([(l, a[1])]) + C[l] * self.vp([(l, a[1]), c])
        return out

    def v3(self, a: Letter, b: Letter, c: Letter) -> complex:
        out = self._d_v2(a, b, c)
        Ca = self.conn(c, a)
        Cb = self.conn(c, b)
        for l in range(self.n):
            out -= Ca[l] * self.v2((l, a[1]), b) + Cb[l] * self.v2(a, (l, b[1]))
        return out


def curvature_20(jet: ChartJet) -> np.ndarray:
    """``out[j, k, i, m]`` = g(R(d_j, d_k) d_i, d_mbar); zero for the Chern connection."""
    gam = christoffel(jet)
    dgam = christoffel_d(jet)
    # R^p_{jki} = d_j Gamma^p_{ki} - d_k Gamma^p_{ji} + Gamma^q_{ki} Gamma^p_{jq} - Gamma^q_{ji} Gamma^p_{kq}
    Rp = (np.einsum("pkij->pjki", dgam) - np.einsum("pjik->pjki", dgam)
          + np.einsum("qki,pjq->pjki", gam, gam) - np.einsum("qji,pkq->pjki", gam, gam))
    return np.einsum("pm,pjki->jkim", jet.g, Rp)


def commutation_defects(jet: ChartJet, v: ScalarPartials) -> dict[str, float]:
    """Max-norm defects of the covariant-derivative commutation formulas.

    ``v(word)`` returns the exact partial derivative of the test function at the
    base point; ``word`` is a sequence of ``(index, barred)`` letters. Formulas
    involving purely holomorphic third derivatives need ``jet.hdg``; they are
    skipped when it is absent.
    """
    n = jet.n
    cv = _Covariant(jet, v)
    T = torsion(jet)
    R = curvature(jet)
    ginv = inverse_metric(jet.g)
    R20 = curvature_20(jet) if jet.hdg is not None else None
    out = {k: 0.0 for k in ("mixed_2", "holo_2", "antiholo_3", "mixed_3", "mixed_3_cyclic")}
    if R20 is not None:
        out.update(holo_3=0.0, holo_3_cyclic=0.0, curvature_20=float(np.abs(R20).max()))
        dgam = christoffel_d(jet)
        dT = dgam - dgam.transpose(0, 2, 1, 3)  # dT[l, i, k, j] = d_j T^l_{ik}
        # full covariant derivative nabla_j T^l_{ik}
        nablaT = (dT + np.einsum("ljp,pik->likj", cv.gam, T)
                  - np.einsum("pji,lpk->likj", cv.gam, T) - np.einsum("pjk,lip->likj", cv.gam, T))

    def upd(key, val):
        out[key] = max(out[key], abs(val))

    rng = range(n)
    for i in rng:
        I, Ib = (i, False), (i, True)
        for j in rng:
            J, Jb = (j, False), (j, True)
            upd("mixed_2", cv.v2(I, Jb) - cv.v2(Jb, I))
            upd("holo_2", cv.v2(I, J) - cv.v2(J, I) - sum(T[l, i, j] * cv.v1((l, False)) for l in rng))
            for k in rng:
                K, Kb = (k, False), (k, True)
                upd("antiholo_3", cv.v3(I, Jb, Kb) - cv.v3(I, Kb, Jb)
                    - sum(np.conj(T[l, j, k]) * cv.v2(I, (l, True)) for l in rng))
                curv = sum(ginv[l, m] * R[k, j, i, m] * cv.v1((l, False)) for l in rng for m in rng)
                upd("mixed_3", cv.v3(I, Jb, K) - cv.v3(I, K, Jb) + curv)
                curv = sum(ginv[l, m] * R[i, j, k, m] * cv.v1((l, False)) for l in rng for m in rng)
                upd("mixed_3_cyclic", cv.v3(I, Jb, K) - cv.v3(K, I, Jb) + curv
                    - sum(T[l, i, k] * cv.v2((l, False), Jb) for l in rng))
                if R20 is not None:
                    curv = sum(ginv[l, m] * R20[j, k, i, m] * cv.v1((l, False)) for l in rng for m in rng)
                    tors = sum(T[l, j, k] * cv.v2(I, (l, False)) for l in rng)
                    upd("holo_3", cv.v3(I, J, K) - cv.v3(I, K, J) - curv - tors)
                    extra = sum(T[l, i, k] * cv.v2((l, False), J) + nablaT[l, i, k, j] * cv.v1((l, False))
                                for l in rng)
                    upd("holo_3_cyclic", cv.v3(I, J, K) - cv.v3(K, I, J) - curv - tors - extra)
    return {k: float(v) for k, v in out.items()}


# --- analytic metric constructors -------------------------------------------

def poly_metric(entries: Sequence[Sequence[Poly]], name: str = "poly", kahler: bool | None = None) -> AnalyticMetric:
    """Metric with polynomial entries ``entries[i][j]`` = g_{i jbar}."""
    n = len(entries)
    for i in range(n):
        for j in range(n):
            diff = entries[i][j] - entries[j][i].conj()
            if any(abs(c) > 1e-14 for c in diff.terms.values()):
                raise ValueError("polynomial metric is not Hermitian")
    d1 = [[[entries[i][j].dz(k) for k in range(n)] for j in range(n)] for i in range(n)]
    d2 = [[[[d1[i][j][k].dzbar(l) for l in range(n)] for k in range(n)] for j in range(n)] for i in range(n)]
    h2 = [[[[d1[i][j][k].dz(l) for l in range(n)] for k in range(n)] for j in range(n)] for i in range(n)]

    def evaluate(z: np.ndarray) -> ChartJet:
        g = np.array([[entries[i][j](z) for j in range(n)] for i in range(n)])
        dg = np.array([[[d1[i][j][k](z) for k in range(n)] for j in range(n)] for i in range(n)])
        ddg = np.array([[[[d2[i][j][k][l](z) for l in range(n)] for k in range(n)]
                         for j in range(n)] for i in range(n)])
        hdg = np.array([[[[h2[i][j][k][l](z) for l in range(n)] for k in range(n)]
                         for j in range(n)] for i in range(n)])
        return ChartJet(g, dg, ddg, hdg, point=z)

    return AnalyticMetric(n, evaluate, name, kahler)


def kahler_potential_metric(potential: Poly, name: str = "kahler") -> AnalyticMetric:
    """g_{i jbar} = d_i dbar_j of a real potential."""
    if not potential.is_real(1e-14):
        raise ValueError("potential must be real")
    n = potential.n
    entries = [[potential.dz(i).dzbar(j) for j in range(n)] for i in range(n)]
    return poly_metric(entries, name, kahler=True)


def conformal_metric(phi: Poly, name: str = "conformal") -> AnalyticMetric:
    """g = exp(phi) * identity with phi a real polynomial."""
    if not phi.is_real(1e-14):
        raise ValueError("conformal factor exponent must be real")
    n = phi.n
    d1 = [phi.dz(k) for k in range(n)]
    d1b = [phi.dzbar(k) for k in range(n)]
    d2 = [[d1[k].dzbar(l) for l in range(n)] for k in range(n)]
    h2 = [[d1[k].dz(l) for l in range(n)] for k in range(n)]
    eye = np.eye(n)

    def evaluate(z: np.ndarray) -> ChartJet:
        e = np.exp(phi(z).real)
        p = np.array([d(z) for d in d1])
        pb = np.array([d(z) for d in d1b])
        pkl = np.array([[d(z) for d in row] for row in d2])
        hkl = np.array([[d(z) for d in row] for row in h2])
        dg = e * np.einsum("ij,k->ijk", eye, p)
        ddg = e * np.einsum("ij,kl->ijkl", eye, pkl + np.outer(p, pb))
        hdg = e * np.einsum("ij,kl->ijkl", eye, hkl + np.outer(p, p))
        return ChartJet(e * eye, dg, ddg, hdg, point=z)

    return AnalyticMetric(n, evaluate, name, kahler=(n == 1) or None)


def flat_metric(n: int) -> AnalyticMetric:
    eye = np.eye(n)

    def evaluate(z: np.ndarray) -> ChartJet:
        return ChartJet(eye, np.zeros((n,) * 3), np.zeros((n,) * 4), np.zeros((n,) * 4), point=z)

    return AnalyticMetric(n, evaluate, "flat", kahler=True)


def hermitian_linear_metric(n: int, rng: np.random.Generator, scale: float = 0.3,
                            quad_scale: float = 0.1, name: str = "hermitian-linear") -> AnalyticMetric:
    """Identity plus random Hermitian first- and second-order terms (generically non-Kahler)."""
    entries = [[Poly.constant(n, 1.0 if i == j else 0.0) for j in range(n)] for i in range(n)]
    for i in range(n):
        for j in range(i, n):
            p = Poly(n)
            for k in range(n):
                p = p + scale * complex(*rng.standard_normal(2)) * Poly.z(n, k)
                p = p + scale * complex(*rng.standard_normal(2)) * Poly.zbar(n, k)
                for l in range(n):
                    p = p + quad_scale * complex(*rng.standard_normal(2)) * Poly.z(n, k) * Poly.zbar(n, l)
            if i == j:
                p = (p + p.conj()) * 0.5
            entries[i][j] = entries[i][j] + p
            if i != j:
                entries[j][i] = entries[i][j].conj()
    return poly_metric(entries, name, kahler=None)


def metric_corpus(n: int = 2, count: int = 20, seed: int = 0) -> list[tuple[AnalyticMetric, np.ndarray]]:
    """Fixed corpus of (metric, evaluation point) pairs covering five families."""
    rng = np.random.default_rng(seed)
    out: list[tuple[AnalyticMetric, np.ndarray]] = []
    families = ["flat", "conformal", "kahler", "hermitian-linear", "off-diagonal"]
    i = 0
    while len(out) < count:
        fam = families[i % len(families)]
        i += 1
        point = 0.2 * (rng.standard_normal(n) + 1j * rng.standard_normal(n))
        if fam == "flat":
            metric = flat_metric(n)
        elif fam == "conformal":
            phi = random_real_poly(n, 3, rng, 0.2)
            metric = conformal_metric(phi, f"conformal-{i}")
        elif fam == "kahler":
            pot = sum((Poly.z(n, k) * Poly.zbar(n, k) for k in range(n)), Poly(n))
            pot = pot + random_real_poly(n, 4, rng, 0.05, min_degree=3)
            metric = kahler_potential_metric(pot, f"kahler-{i}")
        elif fam == "hermitian-linear":
            metric = hermitian_linear_metric(n, rng, name=f"hermitian-linear-{i}")
        else:
            metric = off_diagonal_metric(n, complex(*rng.standard_normal(2)) * 0.5, f"off-diagonal-{i}")
        out.append((metric, point))
    return out


def off_diagonal_metric(n: int, c: complex = 1.0, name: str = "off-diagonal") -> AnalyticMetric:
    """Non-Kahler: g = identity plus g_{1 2bar} = conj(c) zbar_1, g_{2 1bar} = c z_1.

    A term |z_2|^2 / 4 is added to g_{1 1bar} so that curvature is nonzero.
    """
    entries = [[Poly.constant(n, 1.0 if i == j else 0.0) for j in range(n)] for i in range(n)]
    entries[0][1] = np.conj(c) * Poly.zbar(n, 0) + entries[0][1]
    entries[1][0] = entries[0][1].conj()
    entries[0][0] = entries[0][0] + 0.25 * Poly.z(n, 1) * Poly.zbar(n, 1)
    return poly_metric(entries, name, kahler=False)


def random_real_poly(n: int, degree: int, rng: np.random.Generator, scale: float,
                     min_degree: int = 1) -> Poly:
    from .poly import random_poly
    return random_poly(n, degree, rng, scale, real=True, min_degree=min_degree)


def is_kahler_jet(jet: ChartJet, tol: float = 1e-12) -> bool:
    """Kahler symmetry d_i g_{j lbar} = d_j g_{i lbar} at the point."""
    return bool(np.abs(jet.dg.transpose(0, 1, 2) - jet.dg.transpose(2, 1, 0)).max() <= tol)


def normalized(jet: ChartJet) -> ChartJet:
    """Jet expressed in a frame where g is the identity at the base point."""
    new = pullback_jet(jet, normalize_frame(jet))
    return replace(new, g=0.5 * (new.g + new.g.conj().T))


# --- corpus reports ----------------------------------------------------------

def identity_report(metric: AnalyticMetric, point) -> dict:
    """Identity defects for one metric at one point."""
    jet = metric.jet(point)
    T = torsion(jet)
    R = curvature(jet)
    row = {
        "name": metric.name,
        "kahler": bool(metric.kahler),
        "bianchi": float(np.abs(bianchi_defect(jet)).max()),
        "torsion_antisymmetry": float(np.abs(T + T.transpose(0, 2, 1)).max()),
        "curvature_hermitian": float(np.abs(np.conj(R) - R.transpose(1, 0, 3, 2)).max()),
        "torsion_norm": float(np.abs(T).max()),
    }
    return row


def special_coordinate_report(count: int = 50, n: int = 2, seed: int = 1) -> list[dict]:
    """Special-coordinate defects (both variants) on normalized jets from the corpus families."""
    rng = np.random.default_rng(seed)
    corpus = metric_corpus(n, 10, seed)
    rows = []
    for k in range(count):
        metric, _ = corpus[k % len(corpus)]
        point = 0.3 * (rng.standard_normal(n) + 1j * rng.standard_normal(n))
        jet = normalized(metric.jet(point))
        rows.append({"name": metric.name,
                     "primary": special_coordinate_defects(jet, "primary"),
                     "alternate": special_coordinate_defects(jet, "alternate")})
    return rows
