"""Named simulation designs used by the acceptance experiments and scripts.

All observational designs use binary covariates without group effects, so
the logit score model is saturated and therefore correctly specified unless
covariates are deliberately withheld from it.
"""
from __future__ import annotations

from .dgp import DgpConfig
from .estimator import EstimatorOptions
from .montecarlo import McConfig


def confounded(num_groups: int = 200) -> DgpConfig:
    """Selection, homophily and coefficients all load on one binary covariate."""
    return DgpConfig(num_groups=num_groups)


def no_effect(num_groups: int = 200) -> DgpConfig:
    """Y equals a confounded intercept; there are no direct or peer effects."""
    return DgpConfig(num_groups=num_groups, tau0=(1.0, 0.0, 0.0, 0.0),
                     tau_loadings=((1.0,), (0.0,), (0.0,), (0.0,)),
                     tau_noise_sd=(0.5, 0.0, 0.0, 0.0))


def two_confounders(num_groups: int = 200) -> DgpConfig:
    """Two binary confounders; the second drives selection and homophily strongly."""
    return DgpConfig(num_groups=num_groups, covariate_laws=(0.5, 0.5),
                     selection=(-1.0, 1.0, 2.0), link_kernel=(-1.0, 2.5),
                     tau_loadings=((1.0, 1.0), (0.5, 0.5), (1.0, 1.0), (0.5, 0.5)))


def saturation(num_groups: int = 200) -> DgpConfig:
    """Randomized saturation experiment on interior saturations."""
    return DgpConfig(num_groups=num_groups, design="saturation", saturations=(0.25, 0.5, 0.75))


def one_sided(num_groups: int = 200) -> DgpConfig:
    """Randomized offers with covariate-dependent compliance."""
    return DgpConfig(num_groups=num_groups, design="one_sided", saturations=(0.25, 0.5, 0.75),
                     complier_coeffs=(0.5, 1.0))


def mc_designs(reps: int = 500, seed: int = 2024) -> dict[str, McConfig]:
    """Monte Carlo configurations keyed by name."""
    opts = EstimatorOptions()
    return {
        "confounded": McConfig(reps, confounded(), opts, seed,
                               ("bias", "coverage", "normality", "balance-size")),
        "no_effect": McConfig(reps, no_effect(), opts, seed + 1, ("bias", "ols-bias")),
        "misspecified": McConfig(reps, two_confounders(), opts, seed + 2, ("balance-size",),
                                 placebo_index=1, model_covariates=(0,)),
        "saturation": McConfig(reps, saturation(), opts, seed + 3, ("bias", "coverage"),
                               scores="exact"),
        "one_sided": McConfig(reps, one_sided(), opts, seed + 4, ("bias", "coverage"),
                              scores="exact"),
        "rate_small": McConfig(reps, confounded(100), opts, seed + 5, ("bias",), with_se=False),
        "rate_large": McConfig(reps, confounded(400), opts, seed + 6, ("bias",), with_se=False),
    }
