"""Stability operators of the vector equation and the rotation-inversion bound."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import eigh, svdvals
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components
from scipy.stats import unitary_group

from .config import DEFAULTS
from .profile import SymmetrizedProfile, VarianceProfile, symmetrize
from .qve import QveSolution, solve_at


class StabilityError(RuntimeError):
    pass


@dataclass
class SaturatedOperator:
    """F v = |M| Sym(|M| v) at a solved spectral point."""

    sym: SymmetrizedProfile
    absM: np.ndarray

    @property
    def p(self):
        return self.sym.p

    @property
    def block(self) -> np.ndarray:
        """The p x n block F with F v = (F v2, F^t v1)."""
        p = self.p
        return self.absM[:p, None] * self.sym.profile.s * self.absM[None, p:]

    def apply(self, v):
        return self.absM * self.sym.apply(self.absM * np.asarray(v))

    def dense(self) -> np.ndarray:
        return self.absM[:, None] * self.sym.dense() * self.absM[None, :]


def build_F(sym, solution: QveSolution) -> SaturatedOperator:
    if isinstance(sym, VarianceProfile):
        sym = symmetrize(sym)
    if np.any(solution.m_sym.imag <= 0):
        raise StabilityError("solution is not in the upper half-plane")
    return SaturatedOperator(sym, np.abs(solution.m_sym))


def norm_identity_rhs(solution: QveSolution, f) -> float:
    """1 - Im z <f |M|> / <f Im M / |M|>."""
    M = solution.m_sym
    a = np.abs(M)
    return float(1.0 - solution.z.imag * np.mean(f * a) / np.mean(f * M.imag / a))


@dataclass
class PerronResult:
    norm: float
    f: np.ndarray
    f_minus: np.ndarray
    iterations: int
    method: str
    identity_rhs: float | None = None
    identity_error: float | None = None


def _power_top(apply, x0, tol, max_iter):
    """Power iteration for a symmetric PSD map; stops on Rayleigh change and residual."""
    x = x0 / np.linalg.norm(x0)
    lam = 0.0
    for it in range(1, max_iter + 1):
        y = apply(x)
        new = float(x @ y)
        r = np.linalg.norm(y - new * x)
        if new > 0 and abs(new - lam) <= tol * new and r <= 1e2 * tol * new:
            return new, y / np.linalg.norm(y), it, True
        lam = new
        x = y / np.linalg.norm(y)
    return lam, x, max_iter, False


def perron(opr: SaturatedOperator, solution: QveSolution | None = None,
           tol=DEFAULTS["power_tol"], max_iter=DEFAULTS["power_max_iter"],
           fallback_dim=DEFAULTS["eigh_fallback_dim"],
           identity_tol=DEFAULTS["identity_tol"]) -> PerronResult:
    """Top singular pair of the block F, i.e. norm and positive eigenvector of F.

    With a solution at hand the exact norm formula is evaluated and a mismatch
    beyond identity_tol raises StabilityError.
    """
    F = opr.block
    p = F.shape[0]
    FFt = lambda x: F @ (F.T @ x)
    lam, f1, its, ok = _power_top(FFt, np.ones(p), tol, max_iter)
    method = "power"
    if not ok:
        if p > fallback_dim:
            raise StabilityError("power iteration did not converge")
        w, V = eigh(F @ F.T)
        lam, f1, method = float(w[-1]), V[:, -1], "eigh"
    f1 = f1 if f1.sum() >= 0 else -f1
    norm = float(np.sqrt(lam))
    f2 = F.T @ f1 / norm
    f = np.concatenate([f1, f2]) / np.sqrt(2)
    fm = np.concatenate([f1, -f2]) / np.sqrt(2)
    res = PerronResult(norm, f, fm, its, method)
    if solution is not None:
        rhs = norm_identity_rhs(solution, f)
        res.identity_rhs = rhs
        res.identity_error = abs(rhs - norm)
        if res.identity_error > identity_tol:
            raise StabilityError(f"norm identity violated by {res.identity_error:.3g}")
    return res


def gap(T, fallback_dim=DEFAULTS["eigh_fallback_dim"], tol=DEFAULTS["power_tol"],
        max_iter=DEFAULTS["power_max_iter"]) -> float:
    """Difference of the two largest eigenvalues of |T| for symmetric T (0 if missing)."""
    T = np.asarray(T)
    k = T.shape[0]
    if k <= fallback_dim:
        w = np.sort(np.abs(np.linalg.eigvalsh(T)))
        second = w[-2] if k > 1 else 0.0
        return float(max(w[-1] - second, 0.0))
    # deflated power iteration on T^2 (same ordering as |T|)
    sq = lambda x: T @ (T @ x)
    l1, v1, _, ok1 = _power_top(sq, np.ones(k), tol, max_iter)
    rng = np.random.default_rng(0)
    defl = lambda x: sq(x - v1 * (v1 @ x))
    l2, _, _, ok2 = _power_top(defl, rng.standard_normal(k), tol, max_iter)
    if not (ok1 and ok2):
        raise StabilityError("deflated power iteration did not converge")
    return float(max(np.sqrt(l1) - np.sqrt(max(l2, 0.0)), 0.0))


def spectral_gap(opr: SaturatedOperator, **kwargs) -> float:
    """Gap(F F^t)."""
    F = opr.block
    return gap(F @ F.T, **kwargs)


def gap_lower_bound(opr: SaturatedOperator, L: int) -> float:
    """Shape r_-^{8L} / r_+^{16} min(lam^6, lam^{10-8L}) of the gap lower bound (constant dropped)."""
    r_lo, r_hi = opr.absM.min(), opr.absM.max()
    lam = np.linalg.norm(opr.block, 2)
    return float(r_lo ** (8 * L) / r_hi ** 16 * min(lam ** 6, lam ** (10 - 8 * L)))


@dataclass
class StabilityReport:
    z: complex
    norm_F: float
    f: np.ndarray
    gap_FFt: float
    norm_B_inv_2: float
    norm_B_inv_inf: float
    inf_norm_estimate: bool
    identity_error: float | None
    norm_F_2_to_inf: float
    bound_rhs: float

    @property
    def bound_holds(self) -> bool:
        return bool(self.norm_B_inv_inf <= self.bound_rhs * (1 + 1e-10))

    def to_json(self) -> dict:
        return {
            "z": [self.z.real, self.z.imag],
            "norm_F": self.norm_F,
            "f": self.f.tolist(),
            "gap_FFt": self.gap_FFt,
            "norm_B_inv_2": self.norm_B_inv_2,
            "norm_B_inv_inf": self.norm_B_inv_inf,
            "norm_B_inv_inf_kind": "estimate" if self.inf_norm_estimate else "exact",
            "identity_error": self.identity_error,
            "norm_F_2_to_inf": self.norm_F_2_to_inf,
            "bound_rhs": self.bound_rhs,
            "bound_holds": self.bound_holds,
        }


def B_matrix(opr: SaturatedOperator, solution: QveSolution) -> np.ndarray:
    """Dense |M|^2/M^2 - F."""
    M = solution.m_sym
    D = np.abs(M) ** 2 / M ** 2
    return np.diag(D) - opr.dense()


def build_B_and_invert(opr: SaturatedOperator, solution: QveSolution,
                       exact_dim=DEFAULTS["exact_inf_norm_dim"],
                       sign_vectors=DEFAULTS["inf_norm_sign_vectors"], seed=0,
                       perron_result: PerronResult | None = None) -> StabilityReport:
    """Norms of the inverse of B in the l2 and sup norms.

    The sup-norm is exact (dense inverse) up to dimension exact_dim and a
    lower estimate from random sign vectors beyond.
    """
    B = B_matrix(opr, solution)
    N = B.shape[0]
    smin = svdvals(B)[-1]
    inv2 = np.inf if smin == 0 else float(1.0 / smin)
    if N <= exact_dim:
        Binv = np.linalg.solve(B, np.eye(N))
        invinf = float(np.abs(Binv).sum(axis=1).max())
        estimate = False
    else:
        rng = np.random.default_rng(seed)
        X = rng.choice([-1.0, 1.0], size=(N, sign_vectors))
        invinf = float(np.abs(np.linalg.solve(B, X)).max())
        estimate = True
    pr = perron(opr, solution) if perron_result is None else perron_result
    Fd = opr.dense()
    # 2 -> inf norm with the averaged l2 norm on the input side
    f2inf = float(np.sqrt(N) * np.linalg.norm(Fd, axis=1).max())
    D = np.abs(solution.m_sym) ** 2 / solution.m_sym ** 2
    rhs = float((1.0 / np.abs(D).min()) * (1.0 + f2inf * inv2))
    return StabilityReport(solution.z, pr.norm, pr.f, spectral_gap(opr), inv2, invinf, estimate,
                           pr.identity_error, f2inf, rhs)


def report_at(profile: VarianceProfile, z, tol=DEFAULTS["tol"]) -> StabilityReport:
    sym = symmetrize(profile)
    sol = solve_at(sym, z, tol=tol)
    opr = build_F(sym, sol)
    return build_B_and_invert(opr, sol)


# rotation-inversion

@dataclass
class RotationInversionInstance:
    U1: np.ndarray
    U2: np.ndarray
    A: np.ndarray


@dataclass
class RotationInversionResult:
    lhs: float
    rhs_core: float
    ratio: float
    rho: float
    v1: np.ndarray
    v2: np.ndarray
    singular: bool
    counterexample: bool


def support_connected(A) -> bool:
    """Connectivity of the bipartite support graph of A (irreducibility of AA* and A*A)."""
    A = np.asarray(A)
    p, n = A.shape
    if np.any(~(A != 0).any(axis=1)) or np.any(~(A != 0).any(axis=0)):
        return False
    adj = np.zeros((p + n, p + n), bool)
    adj[:p, p:] = A != 0
    adj[p:, :p] = (A != 0).T
    ncomp, _ = connected_components(csr_matrix(adj), directed=False)
    return ncomp == 1


def _perron_vec(T):
    w, V = np.linalg.eigh(T)
    v = np.abs(V[:, -1])
    return v / np.linalg.norm(v)


def rotation_inversion_check(inst: RotationInversionInstance,
                             singular_cond=DEFAULTS["singular_cond"],
                             rhs_zero=DEFAULTS["rhs_core_zero"]) -> RotationInversionResult:
    """lhs = |[[U1, A], [A*, U2]]^{-1}|_2, rhs_core = Gap(AA*) |1 - |A*A| <v1,U1v1><v2,U2v2>|.

    lhs * rhs_core should stay below a universal constant; an instance that is
    numerically singular while rhs_core is clearly positive is a counterexample.
    """
    U1, U2, A = (np.asarray(x) for x in (inst.U1, inst.U2, inst.A))
    p, n = A.shape
    if U1.shape != (p, p) or U2.shape != (n, n):
        raise ValueError("block sizes disagree")
    if np.any(A < 0) or np.iscomplexobj(A) and np.any(A.imag != 0):
        raise ValueError("A must be real and nonnegative")
    A = np.real(A)
    for U in (U1, U2):
        if np.abs(U.conj().T @ U - np.eye(U.shape[0])).max() > 1e-10:
            raise ValueError("diagonal blocks must be unitary")
    if not support_connected(A):
        raise ValueError("AA* and A*A must be irreducible")
    AAt = A @ A.T
    rho2 = float(np.linalg.eigvalsh(A.T @ A)[-1])
    if not 0 < rho2 <= 1 + 1e-12:
        raise ValueError("need 0 < |A*A| <= 1")
    v1 = _perron_vec(AAt)
    v2 = _perron_vec(A.T @ A)
    g = gap(AAt)
    overlap = (v1 @ U1 @ v1) * (v2 @ U2 @ v2)
    rhs_core = float(g * abs(1 - rho2 * overlap))

    H = np.block([[U1, A], [A.T, U2]])
    s = svdvals(H)
    singular = bool(s[-1] == 0 or s[0] / s[-1] > singular_cond)
    lhs = np.inf if singular else float(1.0 / s[-1])
    if singular:
        ratio = np.nan if rhs_core <= rhs_zero else np.inf
    else:
        ratio = lhs * rhs_core
    counter = singular and rhs_core > rhs_zero
    return RotationInversionResult(lhs, rhs_core, float(ratio), float(np.sqrt(rho2)), v1, v2,
                                   singular, bool(counter))


def phase_instance(phi: float) -> RotationInversionInstance:
    """1 x 1 blocks U1 = e^{i phi}, U2 = e^{-i phi}, A = 1."""
    return RotationInversionInstance(np.array([[np.exp(1j * phi)]]),
                                     np.array([[np.exp(-1j * phi)]]), np.array([[1.0]]))


def random_instance(rng, p, n) -> RotationInversionInstance:
    """Haar unitaries and |Gaussian| A scaled to a random |A*A| in (0, 1]."""
    U1 = unitary_group.rvs(p, random_state=rng) if p > 1 else np.exp(2j * np.pi * rng.random()) * np.ones((1, 1))
    U2 = unitary_group.rvs(n, random_state=rng) if n > 1 else np.exp(2j * np.pi * rng.random()) * np.ones((1, 1))
    A = np.abs(rng.standard_normal((p, n)))
    target = 1.0 - rng.random()  # in (0, 1]
    A *= np.sqrt(target) / np.linalg.norm(A, 2)
    return RotationInversionInstance(U1, U2, A)


def ri_sweep(count=10_000, max_dim=32, seed=0):
    """Random instances with p cycling through powers of two up to max_dim.

    Returns (rows, summary): rows are (dim, seed, lhs, rhs_core, ratio) with a
    per-instance stream derived from (seed, index); summary maps dim to the max ratio.
    """
    dims = [d for d in (2 ** k for k in range(1, 11)) if d <= max_dim] or [max_dim]
    rows = []
    summary = {d: 0.0 for d in dims}
    counter = 0
    for k in range(count):
        rng = np.random.default_rng([seed, k])
        p = dims[k % len(dims)]
        n = int(rng.integers(max(1, p // 2), p + 1))
        res = rotation_inversion_check(random_instance(rng, p, n))
        counter += res.counterexample
        rows.append((p, k, res.lhs, res.rhs_core, res.ratio))
        if np.isfinite(res.ratio):
            summary[p] = max(summary[p], res.ratio)
    return rows, summary, counter
