"""Behaviour of the solution at the spectral origin.

Square profiles: M(i eta) = i v(eta) with 1/v = eta + Sym v, and the limit v0 = v(0)
governs the 1/sqrt(omega) blow-up of the density.

Rectangular profiles (p > n): an atom of mass <u> = 1 - n/p at zero, where
1/u = 1 + S(1/(S^t u)), and a holomorphic b(z) with -1/b = z^2 - S^t(1/(1 + S b))
near zero. M1 = z a - u/z and M2 = z b with z^2 a = u - 1/(1 + S b).
Profiles with p < n are handled through their transpose.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import lu_factor, lu_solve, svdvals

from .config import DEFAULTS
from .profile import SymmetrizedProfile, VarianceProfile, symmetrize
from .qve import SolverError, density, richardson, solve_batch


class GuardError(RuntimeError):
    """Integration of b stopped by a guard (singular operator, residual, sign)."""


@dataclass
class HardEdgeStructure:
    v0: np.ndarray
    singular_coefficient: float
    residual: float
    p: int

    @property
    def v1(self):
        return self.v0[: self.p]

    @property
    def v2(self):
        return self.v0[self.p:]

    def to_json(self) -> dict:
        return {"kind": "hard", "v0": self.v0.tolist(), "point_mass": 0.0,
                "delta_pi": 0.0, "singular_coefficient": self.singular_coefficient}


@dataclass
class JFunctional:
    value: float
    gradient_norm: float


@dataclass
class SoftEdgeStructure:
    u: np.ndarray
    b0: np.ndarray
    point_mass: float
    residual: float
    iterations: int
    J_history: list = field(default_factory=list)
    J_monotone: bool = True
    delta_pi: float | None = None
    delta_star: float | None = None
    b_series: np.ndarray | None = None
    transposed: bool = False

    def to_json(self) -> dict:
        return {"kind": "soft", "u": self.u.tolist(), "b0": self.b0.tolist(),
                "point_mass": self.point_mass, "delta_pi": self.delta_pi,
                "delta_star": self.delta_star, "singular_coefficient": None,
                "transposed": self.transposed}


# square case

def hard_edge_ladder(top=DEFAULTS["hard_edge_eta_top"], bottom=DEFAULTS["hard_edge_eta_min"]):
    """Half-decade geometric ladder 1, 0.316, 0.1, ... down to bottom."""
    k = int(round(2 * np.log10(top / bottom)))
    return np.logspace(np.log10(top), np.log10(bottom), k + 1)


def _hard_residual(sym, v):
    return float(np.abs(1.0 / v - sym.apply(v)).max())


def solve_hard_edge(sym: SymmetrizedProfile, tol=DEFAULTS["zero_tol"], ladder=None,
                    newton_iter=50) -> HardEdgeStructure:
    """Limit v0 of v(eta) as eta -> 0 on the imaginary axis.

    v(eta) is followed down the eta ladder with warm starts (M(i eta) = i v),
    extrapolated linearly to eta = 0 and then polished by Newton steps on
    v * Sym(v) = 1 with the balance <v1> = <v2> fixing the scaling direction.
    """
    if not isinstance(sym, SymmetrizedProfile):
        sym = symmetrize(sym)
    p, n = sym.p, sym.n
    if p != n:
        raise ValueError("hard edge requires a square profile")
    ladder = hard_edge_ladder() if ladder is None else np.asarray(ladder, float)
    M = None
    vs = []
    for eta in ladder:
        M, res, _, conv = solve_batch(sym, np.array([1j * eta]), M, tol=min(tol * 10, 1e-10))
        if not conv[0]:
            raise SolverError(f"imaginary-axis solve failed at eta = {eta}", float(res[0]))
        vs.append(M[0].imag.copy())
    v = richardson(ladder[-2], vs[-2], ladder[-1], vs[-1]) if len(vs) > 1 else vs[-1]
    v = np.maximum(v, 1e-300)

    Sd = sym.dense()
    bal = np.concatenate([np.full(p, 1.0 / p), np.full(n, -1.0 / n)])
    for _ in range(newton_iter):
        F = v * (Sd @ v) - 1.0
        if _hard_residual(sym, v) <= tol:
            break
        J = np.diag(Sd @ v) + v[:, None] * Sd
        A = np.vstack([J, bal])
        rhs = np.concatenate([-F, [-(bal @ v)]])
        step = np.linalg.lstsq(A, rhs, rcond=None)[0]
        v = v + step
        if np.any(v <= 0):
            raise SolverError("hard-edge Newton left the positive cone")
    # (c v1, v2 / c) leaves v * Sym(v) unchanged; pick c to balance the halves
    c = np.sqrt(v[p:].mean() / v[:p].mean())
    v = np.concatenate([c * v[:p], v[p:] / c])
    r = _hard_residual(sym, v)
    if r > tol:
        raise SolverError(f"hard-edge residual {r:.3g} above {tol:.3g}", r)
    return HardEdgeStructure(v, float(v[:p].mean() / np.pi), r, p)


def saturated_at_zero(sym: SymmetrizedProfile, hard: HardEdgeStructure) -> np.ndarray:
    """Dense v0 Sym v0, the saturated operator at the origin."""
    v = hard.v0
    return v[:, None] * sym.dense() * v[None, :]


def expansion_at_zero(sym: SymmetrizedProfile, hard: HardEdgeStructure, z):
    """First-order prediction i v0 - z v0 (1 + F0)^{-1} v0 of M(z) near zero.

    1 + F0 annihilates e_- = (1, -1); v0 is orthogonal to it, so the inverse is
    taken on the complement by adding the projector onto e_-.
    """
    p, n = sym.p, sym.n
    v = hard.v0
    F0 = saturated_at_zero(sym, hard)
    e = np.concatenate([np.ones(p), -np.ones(n)])
    P = np.outer(e, e) / (e @ e)
    x = np.linalg.solve(np.eye(p + n) + F0 + P, v)
    z = np.asarray(z, dtype=complex)
    return 1j * v - z[..., None] * (v * x)


# rectangular case

def J_value(profile: VarianceProfile, u) -> JFunctional:
    s = profile.s
    p = profile.p
    u = np.asarray(u, float)
    col = s.T @ u
    val = (np.log(col).sum() + (u - np.log(u)).sum()) / p
    grad = (s @ (1.0 / col) + 1.0 - 1.0 / u) / p
    return JFunctional(float(val), float(np.abs(grad).max()))


def minimize_J(profile: VarianceProfile, tol=DEFAULTS["zero_tol"], max_iter=DEFAULTS["max_iter"],
               burn_in=10) -> SoftEdgeStructure:
    """u from the contraction u <- 1/(1 + S(1/(S^t u))) started at the all-ones vector.

    J is recorded along the iterates as a Lyapunov monitor.
    """
    p, n = profile.p, profile.n
    if p <= n:
        raise ValueError("u is defined for p > n")
    s = profile.s
    if np.any(s.sum(axis=1) == 0) or np.any(s.sum(axis=0) == 0):
        raise ValueError("profile has a zero row or column")
    u = np.ones(p)
    hist = [J_value(profile, u).value]
    res = np.inf
    it = 0
    for it in range(1, max_iter + 1):
        u = 1.0 / (1.0 + s @ (1.0 / (s.T @ u)))
        hist.append(J_value(profile, u).value)
        # stop on the residual of the defining equation, not on the step size
        res = float(np.abs(1.0 / u - 1.0 - s @ (1.0 / (s.T @ u))).max())
        if res <= tol:
            break
    else:
        raise SolverError(f"u iteration did not reach {tol:.3g}", res)
    tail = np.asarray(hist[burn_in:])
    mono = bool(np.all(np.diff(tail) <= 1e-12 * (1 + np.abs(tail[:-1])))) if tail.size > 1 else True
    fixed = res
    b0 = 1.0 / (s.T @ u)
    return SoftEdgeStructure(u=u, b0=b0, point_mass=float(u.mean()), residual=fixed,
                             iterations=it, J_history=hist, J_monotone=mono)


class BFunction:
    """Holomorphic b near zero, integrated along rays from b(0) = 1/(S^t u).

    The derivative is b' = 2 z b (1 - L(b))^{-1} b with
    L(b) v = b S^t((1 + S b)^{-2} S(b v)). Each accepted RK4 step must keep the
    algebraic residual below tol; otherwise the step is halved.
    """

    def __init__(self, profile: VarianceProfile, u, radius, tol=1e-9,
                 step=DEFAULTS["rk4_step"], min_step=DEFAULTS["rk4_min_step"],
                 guard=DEFAULTS["sigma_min_guard"]):
        self.profile = profile
        self.u = np.asarray(u, float)
        self.S = profile.s
        self.b0 = 1.0 / (self.S.T @ self.u)
        self.radius = float(radius)
        self.tol = tol
        self.step = step
        self.min_step = min_step
        self.guard = guard
        self.series = None
        self.a_series = None
        self.series_radius = None

    def algebraic_residual(self, z, b) -> float:
        S = self.S
        return float(np.abs(b + 1.0 / (z * z - S.T @ (1.0 / (1.0 + S @ b)))).max())

    def _operator(self, b):
        S = self.S
        w = 1.0 + S @ b
        return (b[:, None] * (S.T * w ** -2)) @ S * b[None, :]

    def derivative(self, z, b, check=False):
        n = b.size
        A = np.eye(n) - self._operator(b)
        if check:
            smin = svdvals(A)[-1]
            if smin < self.guard:
                raise GuardError(f"1 - L(b) nearly singular (sigma_min = {smin:.3g}) at z = {z}")
        return b * lu_solve(lu_factor(A), 2 * z * b)

    def _rk4(self, z, b, d, h, k1):
        k2 = d * self.derivative(z + d * h / 2, b + h / 2 * k1)
        k3 = d * self.derivative(z + d * h / 2, b + h / 2 * k2)
        k4 = d * self.derivative(z + d * h, b + h * k3)
        return b + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)

    def integrate_ray(self, theta, t_end, record=False):
        """Integrate from 0 to t_end e^{i theta}; returns (t_reached, b, path).

        Step doubling controls the local error (one step of size h against two
        of size h/2, local extrapolation of the pair); a step is accepted only
        if that error is below tol * h and the algebraic residual stays below
        tol. Integration stops early when a guard fires or h < min_step.
        """
        d = np.exp(1j * theta)
        t = 0.0
        b = self.b0.astype(complex)
        h = self.step
        path = [(0.0, b.copy())] if record else None
        while t < t_end - 1e-15:
            h = min(h, t_end - t)
            z = t * d
            try:
                k1 = d * self.derivative(z, b, check=True)
            except GuardError:
                return t, b, path
            accepted = False
            while h >= self.min_step:
                try:
                    big = self._rk4(z, b, d, h, k1)
                    half = self._rk4(z, b, d, h / 2, k1)
                    zm = z + d * h / 2
                    small = self._rk4(zm, half, d, h / 2, d * self.derivative(zm, half))
                except (np.linalg.LinAlgError, ValueError):
                    h /= 2
                    continue
                err = np.abs(small - big).max() / 15
                nb = small + (small - big) / 15
                zn = (t + h) * d
                ok = np.all(np.isfinite(nb)) and err <= 0.1 * self.tol * h
                ok = ok and self.algebraic_residual(zn, nb) <= self.tol
                if ok and zn.imag > 0:
                    ok = (zn * nb).imag.min() > -self.tol
                if ok:
                    accepted = True
                    break
                h /= 2
            if not accepted:
                return t, b, path
            t += h
            b = nb
            if record:
                path.append((t, b.copy()))
            grow = 2.0 if err < 0.005 * self.tol * h else 1.0
            h = min(h * grow, self.step)
        return t_end, b, path

    def __call__(self, z):
        z = complex(z)
        r = abs(z)
        if r > self.radius * (1 + 1e-12):
            raise ValueError(f"|z| = {r:.3g} outside the validity disk of radius {self.radius:.3g}")
        if r == 0:
            return self.b0.astype(complex)
        if self.series is not None and r <= self.series_radius:
            return _eval_series(self.series, z * z)
        t, b, _ = self.integrate_ray(np.angle(z), r)
        if t < r:
            raise GuardError(f"integration stopped at |z| = {t:.3g} < {r:.3g}")
        return b

    def build_series(self, points=DEFAULTS["series_points"], fraction=0.7):
        """Taylor coefficients in w = z^2 of b and of u - 1/(1 + S b) via a Cauchy circle."""
        rz = fraction * self.radius
        r = rz * rz
        K = int(points)
        vals = np.empty((K, self.b0.size), complex)
        for k in range(K):
            theta = np.pi * k / K
            t, b, _ = self.integrate_ray(theta, rz)
            if t < rz:
                raise GuardError(f"series circle not reachable on ray {theta:.3f}")
            vals[k] = b
        scale = r ** -np.arange(K)
        self.series = np.fft.fft(vals, axis=0) / K * scale[:, None]
        gvals = self.u[None, :] - 1.0 / (1.0 + vals @ self.S.T)
        self.a_series = np.fft.fft(gvals, axis=0) / K * scale[:, None]
        # evaluation is restricted to the inner half of the circle so aliasing stays small
        self.series_radius = 0.5 * self.radius
        return self.series


def _eval_series(coef, w):
    out = np.zeros(coef.shape[1], complex)
    for c in coef[::-1]:
        out = out * w + c
    return out


def solve_b(profile: VarianceProfile, u, radius, tol=1e-9, series=True, **kwargs) -> BFunction:
    """b on the disk of the given radius; optionally with its Taylor series."""
    bf = BFunction(profile, u, radius, tol=tol, **kwargs)
    if series:
        bf.build_series()
    return bf


def b_prime_at_zero(bf: BFunction) -> np.ndarray:
    return bf.derivative(0.0, bf.b0.astype(complex))


def compute_a(profile: VarianceProfile, u, bf: BFunction, z):
    """a(z) with z^2 a = u - 1/(1 + S b(z)); the double zero at the origin is removed."""
    z = complex(z)
    u = np.asarray(u, float)
    if abs(z) > bf.radius * (1 + 1e-12):
        raise ValueError("z outside the validity disk of b")
    if bf.a_series is not None and abs(z) <= bf.series_radius:
        coef = bf.a_series[1:]
        return _eval_series(coef, z * z)
    b = bf(z)
    return (u - 1.0 / (1.0 + profile.s @ b)) / (z * z)


def reconstruct(profile: VarianceProfile, u, bf: BFunction, z):
    """(M1, M2) = (z a - u/z, z b) near zero."""
    z = complex(z)
    a = compute_a(profile, u, bf, z)
    return np.concatenate([z * a - np.asarray(u) / z, z * bf(z)])


def estimate_delta_star(profile: VarianceProfile, u, rays=DEFAULTS["fan_rays"],
                        radius=DEFAULTS["fan_radius"], tol=1e-9, **kwargs) -> float:
    """Smallest reach over a fan of rays on which integration of b survives every guard."""
    bf = BFunction(profile, u, radius, tol=tol, **kwargs)
    reach = radius
    for k in range(int(rays)):
        t, _, _ = bf.integrate_ray(2 * np.pi * k / rays, reach)
        reach = min(reach, t)
    return float(reach)


def estimate_gap(profile: VarianceProfile, curve=None, grid=None, **kwargs) -> float:
    """Lower edge of the absolutely continuous part for a rectangular profile."""
    if profile.p == profile.n:
        raise ValueError("square profile: no gap at zero")
    if curve is None:
        curve = density(profile, grid, **kwargs)
    edge = curve.lower_edge()
    if not np.isfinite(edge):
        raise ValueError("density has empty support")
    return edge


def analyze(profile: VarianceProfile, tol=DEFAULTS["zero_tol"], with_gap=True, grid=None,
            with_delta_star=False):
    """Hard-edge or soft-edge structure of the profile at zero."""
    p, n = profile.p, profile.n
    if p == n:
        return solve_hard_edge(symmetrize(profile), tol)
    work = profile if p > n else profile.transpose()
    soft = minimize_J(work, tol)
    if p < n:
        soft.transposed = True
        soft.point_mass = 0.0
    if with_delta_star:
        soft.delta_star = estimate_delta_star(work, soft.u)
    if with_gap:
        soft.delta_pi = estimate_gap(profile, grid=grid)
    return soft
