"""Central numeric configuration.

Every scalar tolerance, cap and default used across the package lives in one
frozen record so that the numerical contract of the library is visible in a
single place.  Functions take the module-level ``TOL`` unless a caller passes
an override.
"""

from dataclasses import dataclass


@dataclass(frozen=True)
class Tolerances:
    # covariance matrices must be symmetric to this relative tolerance
    cov_symmetry_rtol: float = 1e-12
    # eigenvalues below -eig_clip_rtol * lambda_max are an error; negatives
    # above that are clipped to 0; the same threshold defines degeneracy
    eig_clip_rtol: float = 1e-10
    # mixture weights must sum to 1 within this absolute tolerance
    simplex_atol: float = 1e-12
    # truncated cells with less mass than this signal "negligible mass"
    negligible_mass: float = 1e-300
    # 1-d quantizer fixed point: stop when max location change < tol
    fixed_point_tol: float = 1e-12
    fixed_point_max_iters: int = 100_000
    # signature grid cells with standard-normal mass below this are pruned
    cell_mass_prune: float = 1e-12
    # quantizer lookup table is built up to this size by default
    table_n_max: int = 512
    # transport marginals must agree to this absolute tolerance
    marginal_atol: float = 1e-9
    # empirical W2 refuses cost matrices with more entries than this
    empirical_cost_cap: int = 4_000_000
    # propagation aborts if a mixture/atom set would exceed this size
    atom_cap: int = 100_000
    # full dropout-mask expansion refuses more outcomes per atom than this
    dropout_expand_cap: int = 4096
    # GP Gram matrices get this relative diagonal jitter before Cholesky
    gp_jitter: float = 1e-10
    # Lloyd clustering stops after this many sweeps at the latest
    lloyd_max_iters: int = 200
    # prior tuning defaults
    beta_default: float = 0.01
    fd_step: float = 1e-4
    step_size_default: float = 0.05
    step_decay: float = 0.99


TOL = Tolerances()
