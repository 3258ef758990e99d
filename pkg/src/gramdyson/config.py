"""Central table of tunable defaults.

Every numerical knob used by the library and the CLI is listed here once.
The CLI copies this table into the run manifest, overriding entries that
were set on the command line.
"""

DEFAULTS = {
    # profile
    "r1": 0.1,                      # lower comparability bound for p/n
    "r2": 10.0,                     # upper comparability bound for p/n
    "max_L": 8,                     # largest matrix power tried for primitivity
    "fid_max_K": 64,                # largest block count tried when detecting block structure
    # qve
    "tol": 1e-10,                   # residual sup-norm tolerance
    "max_iter": 100_000,            # iteration cap per spectral point
    "alpha_init": 0.5,              # initial damping
    "alpha_min": 0.05,
    "alpha_max": 1.0,
    "alpha_grow": 1.2,
    "anderson_depth": 5,            # 0 disables acceleration (plain damped iteration)
    "eta_ladder": (1e-2, 1e-3, 1e-4),
    "support_threshold": 1e-3,      # density level that counts as support
    "support_merge_steps": 2,       # merge support intervals closer than this many grid steps
    "grid_count": 2000,
    "grid_margin": 1.05,            # default grid stops at margin * 4 s*
    # zero
    "zero_tol": 1e-12,
    "hard_edge_eta_top": 1.0,
    "hard_edge_eta_min": 1e-8,
    "rk4_step": 0.05,
    "rk4_min_step": 1e-7,
    "sigma_min_guard": 1e-8,
    "fan_rays": 16,
    "fan_radius": 2.0,
    "series_points": 32,
    # stability
    "power_tol": 1e-12,             # relative Rayleigh-quotient change
    "power_max_iter": 20_000,
    "eigh_fallback_dim": 2000,
    "exact_inf_norm_dim": 1000,
    "inf_norm_sign_vectors": 20,
    "identity_tol": 1e-8,
    "singular_cond": 1e12,
    "rhs_core_zero": 1e-12,
    # harness
    "seed": 0,
    "trials": 50,
    "distribution": "gaussian-real",
    "sigma2": 1.0,
    "eta_exponent": 0.6,            # Im zeta = p^(-1+gamma) in the bulk
    "kernel_rel_threshold": 1e-8,
    "entrywise_const": 5.0,
    "averaged_const": 10.0,
    "away_entrywise_const": 5.0,
    "away_averaged_const": 10.0,
    "rigidity_const": 20.0,
    "capacity_rel_tol": 0.02,
    "gap_window": (0.2, 0.8),       # forbidden zone as fractions of delta_pi
    "outlier_window": (1.1, 5.0),   # forbidden zone as multiples of the right support edge
    "outlier_zone": None,           # absolute forbidden zone; overrides outlier_window when set
    "bulk_zeta": (1.0,),            # real parts of bulk spectral points
    "away_zeta": (3.0 + 0.5j,),
    "rigidity_tau": (1.0,),
    # cli
    "threads_env": "GRAMDYSON_THREADS",
}


def resolved(**overrides):
    """Return a copy of the defaults with non-None overrides applied."""
    cfg = dict(DEFAULTS)
    for key, val in overrides.items():
        if val is not None:
            cfg[key] = val
    return cfg
