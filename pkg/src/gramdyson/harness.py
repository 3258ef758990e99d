"""Monte Carlo sampling of Gram matrices and statistical checks against the deterministic solution."""

from __future__ import annotations

import csv
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .config import DEFAULTS
from .profile import VarianceProfile
from .qve import DensityCurve, capacity, density, dumps_json, solve_gram_at

DISTRIBUTIONS = ("gaussian-real", "gaussian-complex", "rademacher")
SCHEMA_VERSION = 1


@dataclass(frozen=True)
class SampleSpec:
    profile: VarianceProfile
    distribution: str = DEFAULTS["distribution"]
    seed: int = DEFAULTS["seed"]
    trials: int = DEFAULTS["trials"]

    def __post_init__(self):
        if self.distribution not in DISTRIBUTIONS:
            raise ValueError(f"unknown distribution {self.distribution!r}")
        if self.trials < 1:
            raise ValueError("trials must be positive")


def trial_rng(seed: int, trial: int) -> np.random.Generator:
    """Independent stream per (seed, trial), mixed through SeedSequence."""
    return np.random.default_rng([int(seed) & (2 ** 64 - 1), int(trial)])


def sample(spec: SampleSpec, trial: int) -> np.ndarray:
    rng = trial_rng(spec.seed, trial)
    s = spec.profile.s
    sd = np.sqrt(s)
    shape = s.shape
    if spec.distribution == "gaussian-real":
        return rng.standard_normal(shape) * sd
    if spec.distribution == "gaussian-complex":
        g = rng.standard_normal(shape + (2,)) / np.sqrt(2)
        return (g[..., 0] + 1j * g[..., 1]) * sd
    return np.where(rng.random(shape) < 0.5, -1.0, 1.0) * sd


@dataclass
class EmpiricalSpectrum:
    eigenvalues: np.ndarray
    zero_count: int
    vectors: np.ndarray | None = field(default=None, repr=False)


def kernel_threshold(eigenvalues, rel=DEFAULTS["kernel_rel_threshold"]) -> float:
    top = float(np.max(np.abs(eigenvalues))) if len(eigenvalues) else 0.0
    return rel * (1.0 + top)


def spectrum(X, vectors=False, rel=DEFAULTS["kernel_rel_threshold"]) -> EmpiricalSpectrum:
    """Eigenvalues of XX* in ascending order; optionally the eigenvectors too.

    Without vectors and n < p the smaller X*X is diagonalized and padded with zeros.
    """
    X = np.asarray(X)
    if not np.all(np.isfinite(X)):
        raise ValueError("X has non-finite entries")
    p, n = X.shape
    U = None
    if vectors or n >= p:
        G = X @ X.conj().T
        if vectors:
            lam, U = np.linalg.eigh(G)
        else:
            lam = np.linalg.eigvalsh(G)
    else:
        small = np.linalg.eigvalsh(X.conj().T @ X)
        lam = np.sort(np.concatenate([np.zeros(p - n), small]))
    zc = int(np.sum(lam < kernel_threshold(lam, rel)))
    return EmpiricalSpectrum(lam, zc, U)


def resolvent(spec: EmpiricalSpectrum, zeta) -> np.ndarray:
    """(XX* - zeta)^{-1} assembled from the eigendecomposition."""
    if spec.vectors is None:
        raise ValueError("spectrum was computed without eigenvectors")
    d = _inv_shift(spec.eigenvalues, zeta)
    U = spec.vectors
    return (U * d) @ U.conj().T


def resolvent_diag(spec: EmpiricalSpectrum, zeta) -> np.ndarray:
    """R_ii = sum_a |u_a(i)|^2 / (lambda_a - zeta)."""
    if spec.vectors is None:
        raise ValueError("spectrum was computed without eigenvectors")
    return (np.abs(spec.vectors) ** 2) @ _inv_shift(spec.eigenvalues, zeta)


def _inv_shift(lam, zeta):
    zeta = complex(zeta)
    if zeta.imag <= 0 and np.min(np.abs(lam - zeta)) <= 1e-6:
        raise ValueError(f"zeta = {zeta} too close to the spectrum")
    return 1.0 / (lam - zeta)


def averaging_vectors(p: int, seed: int) -> np.ndarray:
    """All-ones, alternating and a seeded random sign vector (rows)."""
    alt = np.where(np.arange(p) % 2 == 0, 1.0, -1.0)
    rnd = np.where(np.random.default_rng([int(seed), 2 ** 31]).random(p) < 0.5, -1.0, 1.0)
    return np.vstack([np.ones(p), alt, rnd])


def local_law_errors(R: np.ndarray, m: np.ndarray, W: np.ndarray):
    """(max_ij |R_ij - m_i delta_ij|, max_w |p^{-1} sum_i w_i (R_ii - m_i)|)."""
    p = m.size
    diff = R.copy()
    diff[np.diag_indices(p)] -= m
    entry = float(np.abs(diff).max())
    avg = float(np.abs(W @ (np.diag(R) - m)).max() / p)
    return entry, avg


def ks_distance(eigenvalues, curve: DensityCurve, rel=DEFAULTS["kernel_rel_threshold"]) -> float:
    """Kolmogorov-Smirnov distance to the measure, with the kernel counted as exact zeros."""
    lam = np.sort(np.asarray(eigenvalues, float))
    p = lam.size
    lam = np.where(lam < kernel_threshold(lam, rel), 0.0, lam)
    x, first = np.unique(lam, return_index=True)
    below = first / p                                   # empirical F(x-)
    upto = np.searchsorted(lam, x, side="right") / p    # empirical F(x)
    F = curve.cdf(x)
    F_left = F - np.where(x == 0, curve.point_mass, 0.0)
    return float(max(np.abs(upto - F).max(), np.abs(below - F_left).max()))


def classical_index(curve: DensityCurve, p: int, tau: float) -> int:
    """i(tau) = ceil(p nu([0, tau])), clipped to 1..p.

    The numerical cdf is good to about 1e-6, so mass within that of an
    integer multiple of 1/p is rounded down.
    """
    return int(min(max(math.ceil(p * (float(curve.cdf(tau)) - 1e-6)), 1), p))


# configuration and reference values computed once per run

@dataclass
class Reference:
    curve: DensityCurve
    bulk: list            # [(zeta, m)]
    away: list
    taus: list            # [(tau, index)]
    skipped: list
    gap_zone: tuple | None
    outlier_zone: tuple
    capacity_det: float


def prepare(spec: SampleSpec, cfg: dict, curve: DensityCurve | None = None) -> Reference:
    prof = spec.profile
    p = prof.p
    if curve is None:
        curve = density(prof)
    skipped = []
    eta = p ** (-1.0 + cfg["eta_exponent"])
    bulk = []
    for x in cfg["bulk_zeta"]:
        x = float(np.real(x))
        if np.interp(x, curve.grid, curve.values) < cfg["support_threshold"]:
            skipped.append(f"bulk point {x:g} outside the support")
            continue
        zeta = complex(x, eta)
        bulk.append((zeta, solve_gram_at(prof, zeta).gram()[0]))
    away = []
    for zeta in cfg["away_zeta"]:
        zeta = complex(zeta)
        away.append((zeta, solve_gram_at(prof, zeta).gram()[0]))
    taus = []
    for tau in cfg["rigidity_tau"]:
        tau = float(tau)
        if np.interp(tau, curve.grid, curve.values) < cfg["support_threshold"]:
            skipped.append(f"rigidity point {tau:g} outside the bulk")
            continue
        taus.append((tau, classical_index(curve, p, tau)))
    gap_zone = None
    if prof.p > prof.n:
        dpi = curve.lower_edge()
        gap_zone = (cfg["gap_window"][0] * dpi, cfg["gap_window"][1] * dpi)
    if cfg.get("outlier_zone") is not None:
        outlier_zone = tuple(float(v) for v in cfg["outlier_zone"])
    else:
        edge = curve.upper_edge()
        outlier_zone = (cfg["outlier_window"][0] * edge, cfg["outlier_window"][1] * edge)
    return Reference(curve, bulk, away, taus, skipped, gap_zone, outlier_zone,
                     capacity(curve, cfg["sigma2"]))


def run_trial(spec: SampleSpec, ref: Reference, cfg: dict, trial: int) -> list:
    """All per-trial records (trial, quantity, key, value) for one sample."""
    prof = spec.profile
    p, n = prof.p, prof.n
    X = sample(spec, trial)
    need_vectors = bool(ref.bulk or ref.away)
    sp = spectrum(X, vectors=need_vectors, rel=cfg["kernel_rel_threshold"])
    lam = sp.eigenvalues
    W = averaging_vectors(p, spec.seed)
    rec = []
    for zeta, m in ref.bulk:
        e, a = local_law_errors(resolvent(sp, zeta), m, W)
        scale = p * zeta.imag
        rec.append((trial, "entrywise", _key(zeta), e * math.sqrt(scale)))
        rec.append((trial, "averaged", _key(zeta), a * scale))
    for zeta, m in ref.away:
        e, a = local_law_errors(resolvent(sp, zeta), m, W)
        rec.append((trial, "entrywise_away", _key(zeta), e * math.sqrt(p)))
        rec.append((trial, "averaged_away", _key(zeta), a * p))
    for tau, idx in ref.taus:
        dev = abs(lam[idx - 1] - tau)
        rec.append((trial, "rigidity", _key(tau), dev * p))
        if p == n:
            rec.append((trial, "rigidity_scaled", _key(tau), dev * p / (math.sqrt(tau) + 1.0 / p)))
    rec.append((trial, "zero_count", "", float(sp.zero_count)))
    if ref.gap_zone is not None:
        lo, hi = ref.gap_zone
        rec.append((trial, "gap_violations", "", float(np.sum((lam >= lo) & (lam <= hi)))))
    lo, hi = ref.outlier_zone
    rec.append((trial, "outliers", "", float(np.sum((lam >= lo) & (lam <= hi)))))
    rec.append((trial, "max_eigenvalue", "", float(lam[-1])))
    rec.append((trial, "ks_distance", "", ks_distance(lam, ref.curve, cfg["kernel_rel_threshold"])))
    rec.append((trial, "capacity", "", float(np.mean(np.log1p(np.maximum(lam, 0.0) / cfg["sigma2"])))))
    return rec


def _key(x) -> str:
    if isinstance(x, complex):
        return f"{x.real:.17g}{x.imag:+.17g}i"
    return f"{x:.17g}"


@dataclass
class VerificationReport:
    config: dict
    records: list
    summary: dict
    checks: dict
    notes: list

    @property
    def passed(self) -> bool:
        return all(c["pass"] for c in self.checks.values())

    def to_json(self) -> dict:
        return {"schema_version": SCHEMA_VERSION, "config": self.config, "summary": self.summary,
                "checks": self.checks, "notes": self.notes, "passed": self.passed}

    def write(self, json_path=None, csv_path=None) -> None:
        if json_path is not None:
            with open(json_path, "w") as fh:
                fh.write(dumps_json(self.to_json()))
        if csv_path is not None:
            with open(csv_path, "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["trial", "quantity", "zeta_or_tau", "value"])
                for t, q, k, v in self.records:
                    w.writerow([t, q, k, f"{v:.17g}"])


def _values(records, quantity, key=None):
    return np.array([v for _, q, k, v in records if q == quantity and (key is None or k == key)])


def _check(value, limit, kind="le"):
    ok = value <= limit if kind == "le" else value == limit
    return {"value": float(value), "limit": float(limit), "pass": bool(ok)}


def aggregate(spec: SampleSpec, ref: Reference, cfg: dict, records: list) -> VerificationReport:
    """Deterministic fold over records already sorted by trial."""
    prof = spec.profile
    p, n = prof.p, prof.n
    summary, checks = {}, {}
    for quantity in ("entrywise", "averaged", "entrywise_away", "averaged_away", "rigidity",
                     "rigidity_scaled", "ks_distance", "capacity", "max_eigenvalue"):
        keys = sorted({k for _, q, k, _ in records if q == quantity})
        for k in keys:
            vals = _values(records, quantity, k)
            name = quantity if not k else f"{quantity}@{k}"
            summary[name] = {"median": float(np.median(vals)),
                             "p95": float(np.percentile(vals, 95)),
                             "mean": float(np.mean(vals)), "max": float(np.max(vals))}
    limits = {"entrywise": cfg["entrywise_const"], "averaged": cfg["averaged_const"],
              "entrywise_away": cfg["away_entrywise_const"], "averaged_away": cfg["away_averaged_const"]}
    for quantity, limit in limits.items():
        for name, st in summary.items():
            if name.split("@")[0] == quantity:
                checks[f"{name} p95"] = _check(st["p95"], limit)
    for name, st in summary.items():
        if name.split("@")[0] == "rigidity":
            checks[f"{name} median"] = _check(st["median"], cfg["rigidity_const"])

    zc = _values(records, "zero_count")
    summary["zero_count"] = {"min": float(zc.min()), "max": float(zc.max())}
    if p != n:
        expected = max(p - n, 0)
        checks["kernel_dim"] = {"value": float(np.sum(zc == expected)), "limit": float(len(zc)),
                                "pass": bool(np.all(zc == expected))}
    if ref.gap_zone is not None:
        gv = _values(records, "gap_violations")
        checks["gap_violations"] = _check(gv.sum(), 0, "eq")
    ov = _values(records, "outliers")
    checks["outliers"] = _check(ov.sum(), 0, "eq")
    if p >= 200 and spec.distribution.startswith("gaussian"):
        checks["max_eigenvalue"] = _check(summary["max_eigenvalue"]["max"], 5 * prof.s_star)

    cap_mc = summary["capacity"]["mean"]
    rel = abs(cap_mc - ref.capacity_det) / abs(ref.capacity_det) if ref.capacity_det else abs(cap_mc)
    summary["capacity_det"] = ref.capacity_det
    summary["capacity_mc"] = cap_mc
    summary["capacity_rel_err"] = rel
    checks["capacity"] = _check(rel, cfg["capacity_rel_tol"])

    config = {"p": p, "n": n, "distribution": spec.distribution, "seed": spec.seed,
              "trials": spec.trials, "gap_zone": list(ref.gap_zone) if ref.gap_zone else None,
              "outlier_zone": list(ref.outlier_zone),
              "bulk_zeta": [_key(z) for z, _ in ref.bulk], "away_zeta": [_key(z) for z, _ in ref.away],
              "rigidity": [[t, i] for t, i in ref.taus]}
    for key in ("eta_exponent", "kernel_rel_threshold", "entrywise_const", "averaged_const",
                "away_entrywise_const", "away_averaged_const", "rigidity_const",
                "capacity_rel_tol", "sigma2"):
        config[key] = cfg[key]
    return VerificationReport(config, records, summary, checks, list(ref.skipped))


def thread_count(cfg=DEFAULTS) -> int:
    raw = os.environ.get(cfg["threads_env"], "")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def verify(spec: SampleSpec, cfg: dict | None = None, curve: DensityCurve | None = None,
           threads: int | None = None) -> VerificationReport:
    """Run all trials and all applicable checks; trials run on a thread pool."""
    cfg = dict(DEFAULTS) if cfg is None else {**DEFAULTS, **cfg}
    ref = prepare(spec, cfg, curve)
    threads = thread_count(cfg) if threads is None else max(1, int(threads))
    work = lambda t: run_trial(spec, ref, cfg, t)
    if threads == 1:
        per_trial = [work(t) for t in range(spec.trials)]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            per_trial = list(pool.map(work, range(spec.trials)))
    records = [r for rec in per_trial for r in rec]
    return aggregate(spec, ref, cfg, records)


def verify_local_law(spec, cfg=None, curve=None, threads=None) -> dict:
    rep = verify(spec, cfg, curve, threads)
    return {k: v for k, v in rep.checks.items() if k.startswith(("entrywise", "averaged"))}


def verify_rigidity(spec, cfg=None, curve=None, threads=None) -> dict:
    rep = verify(spec, cfg, curve, threads)
    return {k: v for k, v in rep.checks.items()
            if k.startswith(("rigidity", "kernel", "gap", "outliers"))}


def verify_capacity(spec: SampleSpec, sigma2: float, curve: DensityCurve | None = None,
                    threads=None):
    """(capacity_mc, capacity_det, rel_err)."""
    if not sigma2 > 0:
        raise ValueError("sigma2 must be positive")
    curve = density(spec.profile) if curve is None else curve
    det = capacity(curve, sigma2)

    def one(t):
        lam = spectrum(sample(spec, t)).eigenvalues
        return float(np.mean(np.log1p(np.maximum(lam, 0.0) / sigma2)))

    threads = thread_count() if threads is None else threads
    if threads == 1:
        vals = [one(t) for t in range(spec.trials)]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            vals = list(pool.map(one, range(spec.trials)))
    mc = float(np.mean(vals))
    rel = abs(mc - det) / abs(det) if det else abs(mc)
    return mc, det, rel
