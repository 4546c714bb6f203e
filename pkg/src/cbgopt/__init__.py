"""Surrogate-assisted robust design optimization for fiber-coupled CBG devices.

Subpackages cover Gaussian-process surrogates (plain and bound-respecting
warped variants), expected-improvement Bayesian optimization, quasi-random and
tolerance-distribution sampling, Monte Carlo robustness analysis with robust
re-optimization, and a layered-dielectric electrostatics solver, all exercised
end to end against a built-in synthetic device oracle.
"""

__version__ = "0.1.0"
