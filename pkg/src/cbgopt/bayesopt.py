"""Sequential Bayesian optimization with expected-improvement acquisition.

The loop trains a GP surrogate of the target, proposes the next candidate by
maximizing the expected improvement over the incumbent best, evaluates the
black box there, and repeats until the evaluation budget is exhausted.  The
whole loop is deterministic for fixed arguments: initialization is a Sobol
batch and the acquisition maximizer is a multi-start compass search from
Sobol-placed starts.  Evaluator failures are recorded and excluded from
training; the failed point is blacklisted and the loop continues.
"""

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm

from . import gp
from .sampling import BoxDomain, sobol

#: Acquisition search: number of Sobol starts and step-halving limits.
N_ACQ_STARTS = 64
ACQ_COARSE_TOL = 1e-3
ACQ_FINE_TOL = 1e-4
DEFAULT_INIT_COUNT = 32
DEFAULT_REFIT_EVERY = 10


def expected_improvement(model: gp.GPModel, p, f_min: float) -> float:
    """Closed-form EI ``E[max(0, f_min - f(p))]`` under the GP posterior."""
    return float(ei_batch(model, np.asarray(p, dtype=float).reshape(1, -1), f_min)[0])


def ei_batch(model: gp.GPModel, points: np.ndarray, f_min: float) -> np.ndarray:
    mean, var = gp.predict_batch(model, points)
    std = np.sqrt(var)
    improve = f_min - mean
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(std > 0, improve / np.where(std > 0, std, 1.0), 0.0)
    ei = np.where(
        std > 0,
        improve * norm.cdf(z) + std * norm.pdf(z),
        np.maximum(improve, 0.0),
    )
    return np.maximum(ei, 0.0)


@dataclass
class BOState:
    """Optimization trace plus the live surrogate."""

    domain: BoxDomain
    seed: int
    points: list = field(default_factory=list)
    values: list = field(default_factory=list)
    failures: list = field(default_factory=list)
    extras: list = field(default_factory=list)
    surrogate: gp.GPModel | None = None
    budget: int = 0  # evaluations remaining

    @property
    def f_min(self) -> float:
        return float(np.min(self.values)) if self.values else np.inf

    @property
    def best_point(self) -> np.ndarray:
        return np.asarray(self.points[int(np.argmin(self.values))])

    @property
    def history(self) -> list:
        return list(zip(self.points, self.values))


def _compass_search(score, starts: np.ndarray, domain: BoxDomain, tol: float,
                    max_sweeps: int = 400):
    """Vectorized multi-start pattern search maximizing ``score`` inside the box.

    All starts advance together; each sweep scores every one-coordinate move of
    every start in a single batched call.
    """
    width = domain.width
    pts = np.clip(starts, domain.lower, domain.upper)
    best = score(pts)
    step = 0.25 * np.ones(pts.shape[0])
    n, dim = pts.shape
    for _ in range(max_sweeps):
        active = step >= tol
        if not np.any(active):
            break
        offsets = step[:, None, None] * width[None, :, None] * np.array([1.0, -1.0])
        # axes: (start, moved coordinate, coordinate, sign)
        cand = pts[:, None, :, None] + np.eye(dim)[None, :, :, None] * offsets[:, None, :, :]
        cand = np.clip(cand.transpose(0, 1, 3, 2).reshape(n, 2 * dim, dim),
                       domain.lower, domain.upper)
        sc = score(cand.reshape(-1, dim)).reshape(n, 2 * dim)
        idx = np.argmax(sc, axis=1)
        cand_best = sc[np.arange(n), idx]
        improved = (cand_best > best) & active
        pts[improved] = cand[np.arange(n), idx][improved]
        best[improved] = cand_best[improved]
        step[~improved & active] *= 0.5
    return pts, best


def propose(state: BOState) -> np.ndarray:
    """Approximate argmax of EI over the domain; deterministic given the state.

    The optimize loop guarantees at least dim+1 observations before the first
    proposal; the op itself only needs a trained surrogate.
    """
    if state.surrogate is None or state.surrogate.training.count < 1:
        raise ValueError("cannot propose from an untrained surrogate")
    domain = state.domain
    width = domain.width
    scale = np.maximum(np.abs(domain.lower), np.abs(domain.upper)) + 1.0
    if np.all(width < 1e-14 * scale):
        warnings.warn("domain is degenerate (zero width); proposing its center")
        return domain.center
    f_min = state.f_min
    model = state.surrogate

    def score(p):
        return ei_batch(model, p, f_min)

    starts = sobol(domain.dim, N_ACQ_STARTS, domain)
    pts, best = _compass_search(score, starts, domain, ACQ_COARSE_TOL)
    k = int(np.argmax(best))
    winner, _ = _compass_search(score, pts[k:k + 1].copy(), domain, ACQ_FINE_TOL)
    proposal = winner[0]

    # never re-propose an existing or blacklisted point (noise-free duplicates
    # would break the next factorization)
    taken = [np.asarray(p) for p in state.points] + [np.asarray(p) for p, _ in state.failures]
    if taken:
        dists = np.array([np.max(np.abs(proposal - t) / (width + 1e-300)) for t in taken])
        if np.min(dists) < 1e-9:
            spread = np.array(
                [min(np.max(np.abs(c - t) / (width + 1e-300)) for t in taken) for c in pts]
            )
            proposal = pts[int(np.argmax(spread))]
    return proposal


def _call_evaluator(evaluator, point: np.ndarray):
    out = evaluator(point)
    if isinstance(out, tuple):
        value, extras = out
    else:
        value, extras = out, {}
    return float(value), dict(extras)


def _refit(state: BOState, noise_sq: float, warm_params):
    training = gp.TrainingSet(np.asarray(state.points), np.asarray(state.values))
    if warm_params is None:
        state.surrogate = gp.fit(training, noise_sq)
    else:
        state.surrogate = gp.fit(training, noise_sq, n_starts=2, warm=warm_params)
    return state.surrogate.params


def optimize(
    evaluator,
    domain: BoxDomain,
    budget: int,
    init_count: int | None = None,
    seed: int = 0,
    noise_sq: float = 0.0,
    refit_every: int = DEFAULT_REFIT_EVERY,
    callback=None,
    resume: list | None = None,
) -> BOState:
    """Run the EI loop against a black-box evaluator.

    ``evaluator(point) -> value`` or ``(value, extras_dict)``.  Exactly
    ``budget`` evaluator calls are made (minus any replayed via ``resume``);
    the first ``init_count`` are a Sobol space-filling batch.  ``callback``
    receives ``(iteration, point, value, extras, best_so_far)`` after every
    observation, failed evaluations included (``value=None``).
    """
    if init_count is None:
        init_count = min(DEFAULT_INIT_COUNT, budget - 1)
    if not budget > init_count:
        raise ValueError(f"budget {budget} must exceed init_count {init_count}")
    if init_count < domain.dim + 1:
        raise ValueError(f"init_count {init_count} must be at least dim+1 = {domain.dim + 1}")

    state = BOState(domain=domain, seed=int(seed), budget=int(budget))
    warm = None
    calls = 0
    since_fit = 0

    def record(point, value, extras):
        nonlocal since_fit
        if value is None or not np.isfinite(value):
            state.failures.append((np.asarray(point, dtype=float), extras))
        else:
            state.points.append(np.asarray(point, dtype=float))
            state.values.append(float(value))
            state.extras.append(extras)
            since_fit += 1
        if callback is not None:
            callback(calls, point, value, extras, state.f_min)

    for point, value, extras in resume or []:
        if calls >= budget:
            break
        calls += 1
        state.budget -= 1
        record(point, value, extras)

    init_points = sobol(domain.dim, init_count, domain)
    for i in range(calls, init_count):
        point = init_points[i]
        calls += 1
        state.budget -= 1
        try:
            value, extras = _call_evaluator(evaluator, point)
        except Exception as exc:  # failed observation: blacklist and continue
            record(point, None, {"error": repr(exc)})
            continue
        record(point, value, extras)

    if len(state.values) < domain.dim + 1:
        raise ValueError(
            f"only {len(state.values)} successful initial evaluations; "
            f"need at least dim+1 = {domain.dim + 1}"
        )
    warm = _refit(state, noise_sq, None)
    since_fit = 0

    while calls < budget:
        if since_fit >= refit_every:
            warm = _refit(state, noise_sq, warm)
            since_fit = 0
        elif since_fit > 0:
            # fold new observations into the factorization at fixed hyperparameters
            training = gp.TrainingSet(np.asarray(state.points), np.asarray(state.values))
            state.surrogate = gp.build_model(training, state.surrogate.params)
        point = propose(state)
        calls += 1
        state.budget -= 1
        try:
            value, extras = _call_evaluator(evaluator, point)
        except Exception as exc:
            record(point, None, {"error": repr(exc)})
            continue
        record(point, value, extras)

    if since_fit > 0:
        training = gp.TrainingSet(np.asarray(state.points), np.asarray(state.values))
        state.surrogate = gp.build_model(training, state.surrogate.params)
    return state
