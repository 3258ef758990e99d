"""Variance profiles, assumption checks and the symmetrized operator."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import maximum_bipartite_matching

from .config import DEFAULTS


class ProfileError(ValueError):
    """Malformed variance profile or partition."""


def real_matmul(v, A):
    """Return v @ A for a real matrix A without promoting A to complex."""
    if np.iscomplexobj(v):
        # one contiguous real product; strided real/imag views are far slower
        k = v.shape[-1]
        lead = v.shape[:-1]
        flat = v.reshape(-1, k)
        out = np.concatenate([flat.real, flat.imag]) @ A
        rows = flat.shape[0]
        return (out[:rows] + 1j * out[rows:]).reshape(lead + (A.shape[1],))
    return v @ A


@dataclass(frozen=True)
class VarianceProfile:
    """p x n matrix of entry variances s_ik."""

    s: np.ndarray

    def __post_init__(self):
        s = np.array(self.s, dtype=float)
        if s.ndim != 2 or s.shape[0] < 1 or s.shape[1] < 1:
            raise ProfileError(f"profile must be a nonempty 2-d array, got shape {s.shape}")
        if not np.all(np.isfinite(s)):
            raise ProfileError("profile has non-finite entries")
        if np.any(s < 0):
            raise ProfileError("profile has negative entries")
        s.setflags(write=False)
        object.__setattr__(self, "s", s)

    @property
    def p(self) -> int:
        return self.s.shape[0]

    @property
    def n(self) -> int:
        return self.s.shape[1]

    @property
    def s_star(self) -> float:
        return float((self.p + self.n) * self.s.max())

    def transpose(self) -> "VarianceProfile":
        return VarianceProfile(self.s.T)

    def to_json(self) -> dict:
        return {"p": self.p, "n": self.n, "entries": self.s.ravel().tolist()}


@dataclass(frozen=True)
class SymmetrizedProfile:
    """The (p+n) x (p+n) map v -> (S v2, S^t v1), stored through S only."""

    profile: VarianceProfile

    @property
    def p(self) -> int:
        return self.profile.p

    @property
    def n(self) -> int:
        return self.profile.n

    @property
    def dim(self) -> int:
        return self.p + self.n

    def apply(self, v):
        """Apply to v of shape (..., p+n); leading axes are batch axes."""
        v = np.asarray(v)
        p = self.p
        S = self.profile.s
        out1 = real_matmul(v[..., p:], S.T)
        out2 = real_matmul(v[..., :p], S)
        return np.concatenate([out1, out2], axis=-1)

    __call__ = apply

    def dense(self) -> np.ndarray:
        p, n = self.p, self.n
        out = np.zeros((p + n, p + n))
        out[:p, p:] = self.profile.s
        out[p:, :p] = self.profile.s.T
        return out

    def norm_inf(self) -> float:
        s = self.profile.s
        return float(max(s.sum(axis=1).max(), s.sum(axis=0).max()))


def symmetrize(profile: VarianceProfile) -> SymmetrizedProfile:
    return SymmetrizedProfile(profile)


@dataclass
class AssumptionReport:
    s_star: float
    p: int
    n: int
    ratio: float
    comparable: bool
    primitivity: tuple | None = None      # (L1, L2, psi1, psi2)
    block_fid: tuple | None = None        # (K, phi, valid)
    rectangularity: float | None = None   # d* = |p/n - 1|
    lower_bound: float | None = None      # phi of the entrywise lower bound
    notes: list = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "s_star": self.s_star,
            "p": self.p,
            "n": self.n,
            "ratio": self.ratio,
            "comparable": self.comparable,
            "primitivity": None if self.primitivity is None else list(self.primitivity),
            "block_fid": None if self.block_fid is None else list(self.block_fid),
            "rectangularity": self.rectangularity,
            "lower_bound": self.lower_bound,
            "notes": list(self.notes),
        }


def _first_positive_power(T, max_L, scale):
    """Smallest L <= max_L with T^L entrywise positive, and scale * min(T^L)."""
    P = T.copy()
    for L in range(1, max_L + 1):
        if L > 1:
            P = P @ T
        lo = P.min()
        if lo > 0:
            return L, float(scale * lo)
    return None


def is_fully_indecomposable(Z) -> bool:
    """Full indecomposability of a square 0/1 pattern.

    Every pair of nonempty index sets I, J with #I + #J >= K must see a
    nonzero entry. Equivalently, each minor obtained by deleting one row and
    one column carries a perfect matching (Frobenius-Koenig).
    """
    Z = np.asarray(Z) != 0
    K = Z.shape[0]
    if Z.shape != (K, K) or K == 0:
        raise ProfileError("pattern must be a nonempty square matrix")
    if K == 1:
        return bool(Z[0, 0])
    idx = np.arange(K)
    for i in range(K):
        rows = idx != i
        for j in range(K):
            minor = Z[np.ix_(rows, idx != j)]
            match = maximum_bipartite_matching(csr_matrix(minor.astype(np.int8)), perm_type="column")
            if np.any(match < 0):
                return False
    return True


def _equal_partition(p, K):
    if K < 1 or p % K:
        raise ProfileError(f"K = {K} does not divide p = {p}")
    w = p // K
    return [np.arange(k * w, (k + 1) * w) for k in range(K)]


def _block_minima(s, partition):
    K = len(partition)
    out = np.empty((K, K))
    for a, I in enumerate(partition):
        for b, J in enumerate(partition):
            out[a, b] = s[np.ix_(I, J)].min()
    return out


def check_block_fid(profile: VarianceProfile, partition, Z, phi: float | None = None) -> bool:
    """Block full indecomposability of the profile for a given partition and pattern.

    If phi is None the largest admissible phi is inferred from the blocks
    flagged by Z; the check then fails only if Z is not fully indecomposable
    or some flagged block contains a zero entry.
    """
    s = profile.s
    p, n = profile.p, profile.n
    Z = np.asarray(Z)
    K = Z.shape[0]
    if Z.shape != (K, K):
        raise ProfileError("Z must be square")
    if len(partition) != K:
        raise ProfileError("partition and Z disagree on K")
    if p != n:
        raise ProfileError("block structure is defined for square profiles")
    if p % K:
        raise ProfileError(f"K = {K} does not divide p = {p}")
    sizes = {len(I) for I in partition}
    if sizes != {p // K}:
        raise ProfileError("partition cells must all have size p/K")
    cover = np.sort(np.concatenate([np.asarray(I, dtype=int) for I in partition]))
    if not np.array_equal(cover, np.arange(p)):
        raise ProfileError("partition must cover each index exactly once")
    if not is_fully_indecomposable(Z):
        return False
    mins = _block_minima(s, [np.asarray(I, dtype=int) for I in partition]) * (p + n)
    flagged = Z != 0
    if phi is None:
        phi = float(mins[flagged].min())
        return phi > 0
    return bool(np.all(mins[flagged] >= phi * (1 - 1e-12)))


def _detect_block_fid(profile, max_K):
    """Try contiguous equal partitions with K | p, K <= max_K; return (K, phi, True) or None."""
    p = profile.p
    for K in range(1, min(p, max_K) + 1):
        if p % K:
            continue
        part = _equal_partition(p, K)
        mins = _block_minima(profile.s, part)
        Z = (mins > 0).astype(int)
        if is_fully_indecomposable(Z):
            phi = float((profile.p + profile.n) * mins[Z != 0].min())
            return (K, phi, True)
    return None


def validate(profile: VarianceProfile, max_L: int = DEFAULTS["max_L"],
             r1: float = DEFAULTS["r1"], r2: float = DEFAULTS["r2"],
             max_K: int = DEFAULTS["fid_max_K"]) -> AssumptionReport:
    """Check the structural assumptions on a profile and report their constants."""
    if max_L < 1:
        raise ProfileError("max_L must be positive")
    s = profile.s
    p, n = profile.p, profile.n
    N = p + n
    ratio = p / n
    rep = AssumptionReport(s_star=profile.s_star, p=p, n=n, ratio=ratio,
                           comparable=bool(r1 <= ratio <= r2))
    if not rep.comparable:
        rep.notes.append(f"p/n = {ratio:g} outside [{r1:g}, {r2:g}]")

    first = _first_positive_power(s @ s.T, max_L, N)
    second = _first_positive_power(s.T @ s, max_L, N)
    if first is not None and second is not None:
        rep.primitivity = (first[0], second[0], first[1], second[1])
    else:
        rep.notes.append(f"no primitivity up to L = {max_L}")

    if p == n:
        rep.block_fid = _detect_block_fid(profile, max_K)
    else:
        rep.rectangularity = abs(ratio - 1.0)

    lo = N * s.min()
    if lo > 0:
        rep.lower_bound = float(lo)
    return rep


# constructors and I/O

def uniform(p: int, n: int, value: float | None = None) -> VarianceProfile:
    """Constant profile, by default s_ik = 1/(p+n) so that s* = 1."""
    v = 1.0 / (p + n) if value is None else value
    return VarianceProfile(np.full((p, n), v))


def random_profile(p: int, n: int, rng=None, low: float = 0.1) -> VarianceProfile:
    """Entries drawn uniformly from [low, 1]/(p+n); satisfies every lower-bound assumption."""
    rng = np.random.default_rng(rng)
    return VarianceProfile(rng.uniform(low, 1.0, (p, n)) / (p + n))


def block_profile(Z, width: int, phi: float = 1.0, off: float = 0.0) -> VarianceProfile:
    """Square profile with value phi/(p+n) on blocks where Z = 1 and off/(p+n) elsewhere."""
    Z = np.asarray(Z, dtype=float)
    pattern = np.kron(Z, np.ones((width, width)))
    p = pattern.shape[0]
    return VarianceProfile(np.where(pattern > 0, phi, off) / (2 * p))


def load_profile(path) -> VarianceProfile:
    path = Path(path)
    text = path.read_text()
    if path.suffix.lower() == ".json":
        obj = json.loads(text)
        try:
            p, n = int(obj["p"]), int(obj["n"])
            entries = np.asarray(obj["entries"], dtype=float)
        except (KeyError, TypeError, ValueError) as exc:
            raise ProfileError(f"bad profile JSON: {exc}") from exc
        if entries.size != p * n:
            raise ProfileError(f"expected {p * n} entries, found {entries.size}")
        return VarianceProfile(entries.reshape(p, n))
    try:
        s = np.loadtxt(path, delimiter=",", ndmin=2)
    except ValueError as exc:
        raise ProfileError(f"bad profile CSV: {exc}") from exc
    return VarianceProfile(s)


def save_profile(profile: VarianceProfile, path) -> None:
    path = Path(path)
    if path.suffix.lower() == ".json":
        path.write_text(json.dumps(profile.to_json()))
    else:
        np.savetxt(path, profile.s, delimiter=",", fmt="%.17g")
