"""Numerical tolerances shared by every stage of the construction."""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields, replace


@dataclass(frozen=True)
class Tolerances:
    tol_zero: float = 1e-10  # |f(x0)| screen for "is a zero"
    tol_grad: float = 1e-8  # ||grad f(x0)|| screen for "is critical"
    eps_pd: float = 1e-8  # relative; multiplied by (1 + ||H||_2)
    eps_rank: float = 1e-8  # relative; multiplied by (1 + sigma_max)
    gap_factor: float = 10.0  # required spectral gap, in units of eps_pd
    tol_newton: float = 1e-12
    newton_maxiter: int = 50
    tol_recon: float = 1e-8  # relative; multiplied by (1 + max|f|)
    tol_global: float = 1e-6  # relative; multiplied by (1 + max|f|)
    r0: float = 1.0
    r_min: float = 1e-4
    quad_nodes: int = 8
    seed: int = 42

    def with_overrides(self, **overrides) -> "Tolerances":
        names = {f.name for f in fields(self)}
        unknown = set(overrides) - names
        if unknown:
            raise ValueError(f"unknown tolerance(s): {', '.join(sorted(unknown))}")
        for k, v in overrides.items():
            if not v > 0:
                raise ValueError(f"tolerance {k} must be positive, got {v!r}")
        return replace(self, **overrides)

    def as_dict(self) -> dict:
        return asdict(self)


DEFAULT = Tolerances()
