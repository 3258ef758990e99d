"""Solver for the symmetrized quadratic vector equation and the density it induces.

The unknown is the vector M = (M1, M2) in the upper half-plane solving

    -1/M = z + Sym(M),   Sym(v) = (S v2, S^t v1),

for Im z > 0. The Gram-plane Stieltjes transform is m(zeta) = M1(sqrt zeta)/sqrt zeta.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from .config import DEFAULTS
from .profile import SymmetrizedProfile, VarianceProfile, real_matmul, symmetrize


class SolverError(RuntimeError):
    """Raised when the iteration budget is exhausted; carries the best residual."""

    def __init__(self, msg, best_residual=np.inf):
        super().__init__(msg)
        self.best_residual = best_residual


@dataclass(frozen=True)
class SpectralPoint:
    """A point of the symmetrized plane (z) or of the Gram plane (zeta = z^2)."""

    value: complex
    plane: str = "z"

    def __post_init__(self):
        if self.plane not in ("z", "zeta"):
            raise ValueError(f"unknown plane {self.plane!r}")
        object.__setattr__(self, "value", complex(self.value))

    @classmethod
    def from_zeta(cls, zeta):
        return cls(zeta, "zeta")

    @property
    def z(self) -> complex:
        if self.plane == "z":
            return self.value
        return gram_to_sym(self.value)

    @property
    def zeta(self) -> complex:
        return self.value if self.plane == "zeta" else self.value ** 2


def gram_to_sym(zeta):
    """sqrt on the branch with Im sqrt(zeta) > 0 whenever Im zeta > 0."""
    r = np.sqrt(np.asarray(zeta, dtype=complex))
    r = np.where(r.imag < 0, -r, r)
    return complex(r) if r.ndim == 0 else r


def _as_point(z) -> SpectralPoint:
    return z if isinstance(z, SpectralPoint) else SpectralPoint(z, "z")


def _as_sym(obj) -> SymmetrizedProfile:
    if isinstance(obj, SymmetrizedProfile):
        return obj
    if isinstance(obj, VarianceProfile):
        return symmetrize(obj)
    raise TypeError(f"expected a profile, got {type(obj).__name__}")


@dataclass
class QveSolution:
    m_sym: np.ndarray
    residual_inf: float
    iterations: int
    point: SpectralPoint
    p: int

    @property
    def z(self) -> complex:
        return self.point.z

    @property
    def m1(self):
        return self.m_sym[: self.p]

    @property
    def m2(self):
        return self.m_sym[self.p:]

    def gram(self):
        """Gram-plane pair (m, m2) = (M1, M2) / z."""
        return self.m1 / self.z, self.m2 / self.z

    def to_json(self) -> dict:
        return {
            "z": [self.z.real, self.z.imag],
            "residual_inf": self.residual_inf,
            "iterations": self.iterations,
            "m_sym_re": self.m_sym.real.tolist(),
            "m_sym_im": self.m_sym.imag.tolist(),
        }


def solve_batch(sym, z, M0=None, tol=DEFAULTS["tol"], max_iter=DEFAULTS["max_iter"],
                depth=DEFAULTS["anderson_depth"], alpha_init=DEFAULTS["alpha_init"],
                alpha_min=DEFAULTS["alpha_min"], alpha_max=DEFAULTS["alpha_max"],
                alpha_grow=DEFAULTS["alpha_grow"], patience=10, cooldown=5):
    """Solve at many spectral points at once.

    Each row of the state is one point. The base step is the damped map
    M <- M + alpha (G(M) - M) with G(M) = -1/(z + Sym M) and a per-point
    adaptive alpha. With depth > 0 the step is Anderson-mixed over the last
    `depth` iterates; a mixed step that leaves the upper half-plane is
    replaced by the plain damped step. A point whose best residual has not
    improved for `patience` iterations has its history cleared and takes
    `cooldown` plain damped steps, which breaks Anderson stagnation.

    Returns (M, residual, iterations, converged); residual is
    sup |M + 1/(z + Sym M)| per point.
    """
    sym = _as_sym(sym)
    z = np.atleast_1d(np.asarray(z, dtype=complex))
    if np.any(z.imag <= 0):
        raise ValueError("spectral points need Im z > 0")
    G, N = z.size, sym.dim
    M = np.empty((G, N), complex)
    if M0 is None:
        M[:] = (-1.0 / z)[:, None]
    else:
        M[:] = M0
    res = np.full(G, np.inf)
    its = np.zeros(G, int)

    act = np.arange(G)
    Ma = M.copy()
    za = z[:, None]
    alpha = np.full((G, 1), float(alpha_init))
    prev = np.full(G, np.inf)
    best = np.full(G, np.inf)
    since = np.zeros(G, int)
    cool = np.zeros(G, int)
    dX, dF = [], []
    x_old = f_old = None

    for _ in range(max_iter + 1):
        w = za + sym.apply(Ma)
        g = -1.0 / w
        f = g - Ma
        r = np.abs(f).max(axis=1)
        d = np.abs(-1.0 / Ma - w).max(axis=1)
        res[act] = r
        done = np.maximum(r, d) <= tol
        if done.any():
            M[act[done]] = Ma[done]
            keep = ~done
            act, Ma, za, f, r = act[keep], Ma[keep], za[keep], f[keep], r[keep]
            alpha, prev = alpha[keep], prev[keep]
            best, since, cool = best[keep], since[keep], cool[keep]
            dX = [x[keep] for x in dX]
            dF = [x[keep] for x in dF]
            if x_old is not None:
                x_old, f_old = x_old[keep], f_old[keep]
        if act.size == 0 or its[act].max() >= max_iter:
            break
        its[act] += 1

        worse = r > prev
        alpha = np.where(worse[:, None], np.maximum(alpha / 2, alpha_min),
                         np.minimum(alpha * alpha_grow, alpha_max))
        prev = r
        improved = r < best
        best = np.where(improved, r, best)
        since = np.where(improved, 0, since + 1)
        stuck = since >= patience
        cool = np.where(stuck, cooldown, np.maximum(cool - 1, 0))
        since[stuck] = 0
        step = Ma + alpha * f
        if depth > 0:
            if x_old is not None:
                dX.append(Ma - x_old)
                dF.append(f - f_old)
                if len(dX) > depth:
                    dX.pop(0)
                    dF.pop(0)
                reset = worse | (cool > 0)
                if reset.any():
                    # restart the history of points whose residual grew or stalled
                    for k in range(len(dX)):
                        dX[k][reset] = 0
                        dF[k][reset] = 0
            x_old, f_old = Ma, f
            if dX:
                DF = np.stack(dF, axis=1)
                DX = np.stack(dX, axis=1)
                A = DF.conj() @ DF.transpose(0, 2, 1)
                b = DF.conj() @ f[:, :, None]
                reg = 1e-12 * np.trace(A, axis1=1, axis2=2).real + 1e-300
                A = A + reg[:, None, None] * np.eye(A.shape[1])
                gamma = np.linalg.solve(A, b)
                mixed = step - ((DX + alpha[:, :, None] * DF).transpose(0, 2, 1) @ gamma)[:, :, 0]
                ok = np.all(mixed.imag > 0, axis=1) & np.all(np.isfinite(mixed), axis=1) & (cool == 0)
                step = np.where(ok[:, None], mixed, step)
        Ma = step

    if act.size:
        M[act] = Ma
    converged = np.ones(G, bool)
    converged[act] = False
    return M, res, its, converged


def solve_at(sym, z, tol=DEFAULTS["tol"], warm_start: QveSolution | None = None,
             **kwargs) -> QveSolution:
    """Solve the symmetrized equation at a single point with Im z > 0."""
    sym = _as_sym(sym)
    pt = _as_point(z)
    zz = pt.z
    if zz.imag <= 0:
        raise ValueError("spectral point must satisfy Im z > 0")
    M0 = None if warm_start is None else warm_start.m_sym[None, :]
    M, res, its, conv = solve_batch(sym, np.array([zz]), M0, tol=tol, **kwargs)
    if not conv[0]:
        raise SolverError(f"no convergence at z = {zz}", best_residual=float(res[0]))
    return QveSolution(M[0], float(res[0]), int(its[0]), pt, sym.p)


def gram_residual(profile: VarianceProfile, m, zeta) -> float:
    """sup |m + 1/(zeta - S(1/(1 + S^t m)))| for a Gram-plane candidate m."""
    S = profile.s
    inner = 1.0 / (1.0 + real_matmul(m, S))
    return float(np.abs(m + 1.0 / (zeta - real_matmul(inner, S.T))).max())


def solve_gram_at(profile: VarianceProfile, zeta, tol=DEFAULTS["tol"], **kwargs) -> QveSolution:
    """Solve in the Gram plane; the returned solution exposes m, m2 through .gram()."""
    pt = zeta if isinstance(zeta, SpectralPoint) else SpectralPoint.from_zeta(zeta)
    if pt.zeta.imag <= 0:
        raise ValueError("Gram-plane point must satisfy Im zeta > 0")
    sym = symmetrize(profile)
    inner_tol = tol
    warm = None
    for _ in range(6):
        sol = solve_at(sym, pt, tol=inner_tol, warm_start=warm, **kwargs)
        m, _ = sol.gram()
        if gram_residual(profile, m, pt.zeta) <= tol:
            return sol
        warm = sol
        inner_tol = max(inner_tol / 10, 1e-15)
    raise SolverError(f"Gram residual above {tol} at zeta = {pt.zeta}",
                      best_residual=gram_residual(profile, m, pt.zeta))


def residual(profile, candidate, point) -> float:
    """Sup-norm of the perturbation d for which the candidate solves the perturbed equation.

    For a candidate of length p+n and a symmetrized point z this is
    d = -1/g - z - Sym(g). For a candidate of length p at a Gram-plane
    point it is d = -1/g - zeta + S(1/(1 + S^t g)).
    """
    sym = _as_sym(profile)
    g = np.asarray(candidate, dtype=complex)
    if np.any(g == 0):
        raise ValueError("candidate has a zero component")
    pt = _as_point(point)
    if g.size == sym.dim and pt.plane == "z":
        return float(np.abs(-1.0 / g - pt.z - sym.apply(g)).max())
    if g.size == sym.p and pt.plane == "zeta":
        S = sym.profile.s
        inner = 1.0 / (1.0 + real_matmul(g, S))
        return float(np.abs(-1.0 / g - pt.zeta + real_matmul(inner, S.T)).max())
    raise ValueError("candidate length does not match the plane of the point")


# density

@dataclass
class DensityCurve:
    grid: np.ndarray
    values: np.ndarray
    point_mass: float
    support_intervals: list
    eta_used: float
    eta_ladder: tuple = ()
    tol: float = DEFAULTS["tol"]
    flags: np.ndarray = field(default=None)

    def __post_init__(self):
        self.grid = np.asarray(self.grid, float)
        self.values = np.asarray(self.values, float)
        if self.flags is None:
            self.flags = np.zeros(self.grid.size, bool)

    def _head(self):
        # mass below the first grid point, modelling pi ~ c/sqrt(omega) there
        return 2.0 * self.values[0] * self.grid[0]

    def total_mass(self) -> float:
        return float(self.point_mass + self._head() + np.trapezoid(self.values, self.grid))

    def cdf(self, x):
        """Distribution function of the measure at x >= 0 (linear between grid points)."""
        x = np.asarray(x, float)
        w0 = self.grid[0]
        cum = np.concatenate([[0.0], np.cumsum(np.diff(self.grid) * (self.values[1:] + self.values[:-1]) / 2)])
        cum = cum + self._head()
        below = 2.0 * self.values[0] * np.sqrt(w0 * np.clip(x, 0, w0))
        inside = np.interp(x, self.grid, cum)
        out = np.where(x < w0, below, inside)
        return self.point_mass + out

    def lower_edge(self) -> float:
        """Infimum of the detected support (nan if empty)."""
        return float(self.support_intervals[0][0]) if self.support_intervals else float("nan")

    def upper_edge(self) -> float:
        return float(self.support_intervals[-1][1]) if self.support_intervals else float("nan")

    def to_json(self) -> dict:
        return {
            "point_mass": self.point_mass,
            "support": [list(iv) for iv in self.support_intervals],
            "grid": self.grid.tolist(),
            "values": self.values.tolist(),
            "eta_ladder": list(self.eta_ladder),
            "tol": self.tol,
            "flagged": np.flatnonzero(self.flags).tolist(),
        }


def support_intervals(grid, values, threshold=DEFAULTS["support_threshold"],
                      merge_steps=DEFAULTS["support_merge_steps"]):
    """Closed intervals where values exceed threshold, merging small holes."""
    grid = np.asarray(grid, float)
    above = np.asarray(values) > threshold
    if not above.any():
        return []
    edges = np.diff(np.concatenate([[0], above.astype(int), [0]]))
    starts = np.flatnonzero(edges == 1)
    ends = np.flatnonzero(edges == -1) - 1
    h = np.median(np.diff(grid)) if grid.size > 1 else 0.0
    out = [[grid[starts[0]], grid[ends[0]]]]
    for a, b in zip(starts[1:], ends[1:]):
        if grid[a] - out[-1][1] <= merge_steps * h * (1 + 1e-9):
            out[-1][1] = grid[b]
        else:
            out.append([grid[a], grid[b]])
    return [(float(a), float(b)) for a, b in out]


def default_grid(profile: VarianceProfile, count=DEFAULTS["grid_count"],
                 margin=DEFAULTS["grid_margin"]):
    top = margin * 4 * profile.s_star
    return np.linspace(top / count, top, count)


def laurent_point_mass(profile: VarianceProfile, eta=1e-6, tol=DEFAULTS["tol"]) -> float:
    """Atom at zero read off from -zeta <m(zeta)> at zeta = i eta."""
    sol = solve_gram_at(profile, 1j * eta, tol=tol)
    m, _ = sol.gram()
    return float(np.real(-1j * eta * m.mean()))


def resolve_point_mass(profile: VarianceProfile) -> float:
    if profile.p <= profile.n:
        return 0.0
    from .zero import minimize_J
    try:
        return float(np.mean(minimize_J(profile).u))
    except (SolverError, ValueError):
        return laurent_point_mass(profile)


def richardson(eta1, f1, eta2, f2):
    """Linear extrapolation to eta = 0 from two ladder levels."""
    return (eta1 * f2 - eta2 * f1) / (eta1 - eta2)


def density(profile: VarianceProfile, grid=None, eta_ladder=DEFAULTS["eta_ladder"],
            tol=DEFAULTS["tol"], point_mass=None,
            threshold=DEFAULTS["support_threshold"],
            merge_steps=DEFAULTS["support_merge_steps"], **kwargs) -> DensityCurve:
    """Density of the absolutely continuous part on a grid of omega > 0.

    Im<m(omega + i eta)>/pi is computed along the decreasing eta ladder with
    warm starts, the atom at zero is subtracted and the last two levels are
    extrapolated linearly to eta = 0. Points whose solve did not converge,
    or whose ladder increments grow, are flagged rather than failing the run.
    """
    grid = default_grid(profile) if grid is None else np.asarray(grid, float)
    if grid.ndim != 1 or grid.size == 0 or np.any(grid <= 0) or np.any(np.diff(grid) <= 0):
        raise ValueError("grid must be increasing and positive")
    ladder = tuple(float(e) for e in eta_ladder)
    if not ladder or any(e <= 0 for e in ladder) or any(np.diff(ladder) >= 0):
        raise ValueError("eta ladder must be positive and decreasing")
    if point_mass is None:
        point_mass = resolve_point_mass(profile)

    sym = symmetrize(profile)
    flags = np.zeros(grid.size, bool)
    levels = []
    M = None
    for eta in ladder:
        zeta = grid + 1j * eta
        z = gram_to_sym(zeta)
        M, res, its, conv = solve_batch(sym, z, M, tol=tol, **kwargs)
        flags |= ~conv
        mean_m = M[:, : sym.p].mean(axis=1) / z
        atom = point_mass * eta / (grid ** 2 + eta ** 2)
        levels.append((mean_m.imag - atom) / np.pi)

    if len(ladder) == 1:
        values = levels[0]
    else:
        values = richardson(ladder[-2], levels[-2], ladder[-1], levels[-1])
    if len(ladder) >= 3:
        last = np.abs(levels[-1] - levels[-2])
        before = np.abs(levels[-2] - levels[-3])
        flags |= last > np.maximum(before, threshold)
    flags |= ~np.isfinite(values)
    values = np.where(np.isfinite(values), np.maximum(values, 0.0), 0.0)
    return DensityCurve(grid, values, float(point_mass),
                        support_intervals(grid, values, threshold, merge_steps),
                        ladder[-1], ladder, tol, flags)


def capacity(curve: DensityCurve, sigma2: float) -> float:
    """Integral of log(1 + omega/sigma2) against the measure (the atom contributes 0)."""
    if not sigma2 > 0:
        raise ValueError("sigma2 must be positive")
    w, v = curve.grid, curve.values
    body = np.trapezoid(np.log1p(w / sigma2) * v, w)
    # head below the grid with pi ~ c/sqrt(omega) and log(1+x) ~ x
    c = v[0] * np.sqrt(w[0])
    head = c * (2.0 / 3.0) * w[0] ** 1.5 / sigma2
    return float(body + head)


# I/O

def _fmt(x) -> str:
    return format(float(x), ".17g")


def write_density_csv(curve: DensityCurve, path) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["omega", "pi"])
        for w, v in zip(curve.grid, curve.values):
            wr.writerow([_fmt(w), _fmt(v)])


def read_density_csv(path):
    """Return (grid, values) from a density CSV."""
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return data[:, 0], data[:, 1]


def dumps_json(obj) -> str:
    """JSON with floats written to 17 significant digits."""
    return json.dumps(_round_trip(obj), indent=1, sort_keys=True)


def _round_trip(obj):
    if isinstance(obj, float):
        if not np.isfinite(obj):
            return repr(obj)
        return float(_fmt(obj))
    if isinstance(obj, (np.floating,)):
        return _round_trip(float(obj))
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.ndarray):
        return _round_trip(obj.tolist())
    if isinstance(obj, dict):
        return {str(k): _round_trip(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_round_trip(v) for v in obj]
    if isinstance(obj, complex):
        return [_round_trip(obj.real), _round_trip(obj.imag)]
    return obj


def write_density_json(curve: DensityCurve, path) -> None:
    with open(path, "w") as fh:
        fh.write(dumps_json(curve.to_json()))
