"""Bounded derivative-free global optimizer: cubic RBF surrogate plus a
weighted merit function over perturbation/uniform candidate clouds.

The loop evaluates a seeded Latin-hypercube design, then alternates between
fitting a cubic radial-basis interpolant (with linear tail) to all evaluated
points and proposing the candidate that minimizes

    w * (scaled surrogate value) + (1 - w) * (scaled negative distance
                                              to the evaluated set),

with the weight w and the Gaussian perturbation radius cycling through fixed
schedules so the search alternates between exploration and exploitation.
Every run is deterministic for a given seed.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import cdist
from scipy.stats import qmc

MERIT_WEIGHTS = (0.3, 0.5, 0.8, 0.95)
PERTURBATION_SCALES = (0.2, 0.1, 0.05, 0.02)  # fraction of the box span
N_GAUSSIAN_CANDIDATES = 300
N_UNIFORM_CANDIDATES = 200
RIDGE_LAMBDA = 1e-10
FALLBACK_PENALTY = 1.0e6  # when no finite objective has been seen yet
PENALTY_FACTOR = 1.0e3


class OptimizationError(ValueError):
    """Invalid optimization problem or surrogate input."""


@dataclass
class OptProblem:
    """Bounded minimization problem over a continuous box.

    ``objective`` maps a point (dim,) to a float; non-finite returns are
    treated as failed evaluations and recorded with a penalty value.
    """

    objective: callable
    lower: np.ndarray
    upper: np.ndarray
    max_evals: int = 150
    seed: int = 0
    initial_points: list = field(default_factory=list)

    def __post_init__(self):
        self.lower = np.atleast_1d(np.asarray(self.lower, dtype=float))
        self.upper = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if self.lower.shape != self.upper.shape:
            raise OptimizationError("lower and upper bounds must match")
        if not np.all(self.lower < self.upper):
            raise OptimizationError("bounds must satisfy lower < upper")
        self.initial_points = [np.asarray(p, dtype=float).reshape(self.dim)
                               for p in self.initial_points]
        for p in self.initial_points:
            if np.any(p < self.lower) or np.any(p > self.upper):
                raise OptimizationError("initial points must lie within bounds")
        if self.max_evals < self.dim + 1:
            raise OptimizationError("max_evals must be at least dim + 1")

    @property
    def dim(self) -> int:
        return len(self.lower)


@dataclass(frozen=True)
class EvalRecord:
    point: np.ndarray
    value: float
    eval_index: int
    wall_time: float


@dataclass(frozen=True)
class OptResult:
    best_point: np.ndarray
    best_value: float
    history: tuple[EvalRecord, ...]
    termination_reason: str

    def incumbent_curve(self) -> np.ndarray:
        """Best-so-far value after each evaluation (non-increasing)."""
        return np.minimum.accumulate([r.value for r in self.history])


def write_trace(history, path) -> None:
    """One evaluation per line: index, coordinates, value, wall time."""
    with open(path, "w", encoding="utf-8") as fh:
        dim = len(history[0].point) if history else 0
        cols = ["eval_index"] + [f"x{i+1}" for i in range(dim)] + ["value", "wall_time"]
        fh.write(",".join(cols) + "\n")
        for rec in history:
            xs = ",".join(f"{x:.10g}" for x in rec.point)
            fh.write(f"{rec.eval_index},{xs},{rec.value:.10g},{rec.wall_time:.6g}\n")


def initial_design(problem: OptProblem) -> np.ndarray:
    """Seeded Latin-hypercube design of size max(2*dim, 8), prepended with
    any user initial points (deduplicated)."""
    n = max(2 * problem.dim, 8)
    sampler = qmc.LatinHypercube(d=problem.dim, seed=problem.seed)
    unit = sampler.random(n)
    points = problem.lower + unit * (problem.upper - problem.lower)
    design = list(problem.initial_points)
    tol = 1e-12 * float(np.linalg.norm(problem.upper - problem.lower))
    for p in points:
        if all(np.linalg.norm(p - q) > tol for q in design):
            design.append(p)
    return np.array(design)


class CubicRbfSurrogate:
    """Cubic RBF interpolant with a linear polynomial tail.

    Inputs are scaled to the unit box before fitting, so conditioning does
    not depend on the physical parameter ranges. Exactly reproduces linear
    functions (the tail) and interpolates the training values.
    """

    def __init__(self, points: np.ndarray, weights: np.ndarray,
                 tail: np.ndarray, lower: np.ndarray, upper: np.ndarray,
                 ridged: bool = False):
        self._points = points  # unit-box coordinates
        self._weights = weights
        self._tail = tail      # [c0, c1..cd]
        self._lower = lower
        self._span = upper - lower
        self.ridged = ridged

    @classmethod
    def fit(cls, points, values, lower, upper) -> "CubicRbfSurrogate":
        pts = np.asarray(points, dtype=float)
        vals = np.asarray(values, dtype=float).reshape(-1)
        lower = np.asarray(lower, dtype=float)
        upper = np.asarray(upper, dtype=float)
        n, dim = pts.shape
        if len(np.unique(pts.round(decimals=12), axis=0)) < dim + 1:
            raise OptimizationError(
                f"surrogate needs at least {dim + 1} distinct points")
        z = (pts - lower) / (upper - lower)
        r = cdist(z, z)
        phi = r ** 3
        p = np.hstack([np.ones((n, 1)), z])
        m = n + dim + 1
        a = np.zeros((m, m))
        a[:n, :n] = phi
        a[:n, n:] = p
        a[n:, :n] = p.T
        rhs = np.concatenate([vals, np.zeros(dim + 1)])
        ridged = False
        try:
            sol = np.linalg.solve(a, rhs)
            residual = np.max(np.abs(phi @ sol[:n] + p @ sol[n:] - vals))
            scale = max(1.0, np.max(np.abs(vals)))
            if not np.all(np.isfinite(sol)) or residual > 1e-6 * scale:
                raise np.linalg.LinAlgError("inaccurate interpolation solve")
        except np.linalg.LinAlgError:
            a[:n, :n] += RIDGE_LAMBDA * np.eye(n)
            try:
                sol = np.linalg.solve(a, rhs)
            except np.linalg.LinAlgError as exc:
                raise OptimizationError(
                    "degenerate sample geometry: RBF system singular even "
                    "with ridge regularization") from exc
            ridged = True
        return cls(points=z, weights=sol[:n], tail=sol[n:], lower=lower,
                   upper=lower + (upper - lower), ridged=ridged)

    def __call__(self, x) -> np.ndarray | float:
        arr = np.asarray(x, dtype=float)
        single = arr.ndim == 1
        pts = np.atleast_2d(arr)
        z = (pts - self._lower) / self._span
        r = cdist(z, self._points)
        vals = (r ** 3) @ self._weights + self._tail[0] + z @ self._tail[1:]
        return float(vals[0]) if single else vals


def fit_surrogate(history, lower, upper) -> CubicRbfSurrogate:
    """Fit the cubic RBF interpolant to a sequence of evaluation records."""
    pts = np.array([rec.point for rec in history])
    vals = np.array([rec.value for rec in history])
    return CubicRbfSurrogate.fit(pts, vals, lower, upper)


@dataclass
class ProposalCycle:
    """Mutable proposal state: the weight/scale cycle position and the RNG."""

    rng: np.random.Generator
    iteration: int = 0


def _score_candidates(surrogate_values, distances, weight):
    s = np.asarray(surrogate_values, dtype=float)
    smin, smax = float(np.min(s)), float(np.max(s))
    scaled_s = np.ones_like(s) if smax == smin else (s - smin) / (smax - smin)
    d = np.asarray(distances, dtype=float)
    dmin, dmax = float(np.min(d)), float(np.max(d))
    scaled_d = np.ones_like(d) if dmax == dmin else (d - dmin) / (dmax - dmin)
    return weight * scaled_s + (1.0 - weight) * (1.0 - scaled_d)


def _propose(surrogate, evaluated: np.ndarray, best_point: np.ndarray,
             problem: OptProblem, state: ProposalCycle) -> np.ndarray:
    span = problem.upper - problem.lower
    idx = state.iteration % len(MERIT_WEIGHTS)
    weight = MERIT_WEIGHTS[idx]
    sigma = PERTURBATION_SCALES[idx] * span
    state.iteration += 1

    gaussian = best_point + state.rng.normal(0.0, 1.0, (N_GAUSSIAN_CANDIDATES,
                                                        problem.dim)) * sigma
    uniform = state.rng.uniform(problem.lower, problem.upper,
                                (N_UNIFORM_CANDIDATES, problem.dim))
    candidates = np.clip(np.vstack([gaussian, uniform]),
                         problem.lower, problem.upper)

    distances = cdist(candidates, evaluated).min(axis=1)
    scores = _score_candidates(surrogate(candidates), distances, weight)
    choice = candidates[int(np.argmin(scores))].copy()

    # never re-propose an evaluated point: nudge until clear of the set
    tie_eps = 1e-9 * float(np.linalg.norm(span))
    attempts = 0
    while cdist(choice[None, :], evaluated).min() < tie_eps:
        jitter = state.rng.uniform(-1.0, 1.0, problem.dim)
        choice = np.clip(choice + jitter * span * 1e-6 * (10.0 ** attempts),
                         problem.lower, problem.upper)
        attempts += 1
        if attempts > 8:  # pathological: every nudge clipped onto the set
            choice = state.rng.uniform(problem.lower, problem.upper)
    return choice


def propose_next(surrogate, history, problem: OptProblem,
                 cycle_state: ProposalCycle) -> np.ndarray:
    """Next point to evaluate, balancing surrogate value against spread."""
    pts = np.array([rec.point for rec in history])
    vals = np.array([rec.value for rec in history])
    best = pts[int(np.argmin(vals))]
    return _propose(surrogate, pts, best, problem, cycle_state)


def _penalty_value(values: list[float]) -> float:
    finite = [v for v in values if np.isfinite(v)]
    if not finite:
        return FALLBACK_PENALTY
    largest = max(finite)
    if largest <= 0.0:
        return FALLBACK_PENALTY
    return PENALTY_FACTOR * largest


def minimize(problem: OptProblem, *, batch_size: int = 1,
             workers: int = 1) -> OptResult:
    """Run the full optimization budget and return the minimum observed.

    Failed evaluations (non-finite objective returns) are recorded with a
    penalty value instead of crashing the loop. With ``batch_size > 1``,
    several proposals are generated per surrogate refit and may be evaluated
    concurrently by ``workers`` processes (the objective must be picklable);
    results are committed in proposal order, so the history is identical for
    any worker count.
    """
    if batch_size < 1:
        raise OptimizationError("batch_size must be >= 1")
    rng = np.random.default_rng(problem.seed)
    state = ProposalCycle(rng=rng)
    history: list[EvalRecord] = []
    values: list[float] = []

    def evaluate_batch(points):
        t0 = time.perf_counter()
        if workers > 1 and len(points) > 1:
            from concurrent.futures import ProcessPoolExecutor
            with ProcessPoolExecutor(max_workers=workers) as pool:
                raw = list(pool.map(problem.objective, points))
        else:
            raw = [problem.objective(p) for p in points]
        elapsed = time.perf_counter() - t0
        per_eval = elapsed / max(1, len(points))
        for p, r in zip(points, raw):
            try:
                v = float(r)
            except (TypeError, ValueError):
                v = np.nan
            if not np.isfinite(v):
                v = _penalty_value(values)
            values.append(v)
            history.append(EvalRecord(point=np.array(p, dtype=float), value=v,
                                      eval_index=len(history),
                                      wall_time=per_eval))

    design = initial_design(problem)[:problem.max_evals]
    for start in range(0, len(design), max(batch_size, 1)):
        evaluate_batch(design[start:start + max(batch_size, 1)])

    while len(history) < problem.max_evals:
        surrogate = fit_surrogate(history, problem.lower, problem.upper)
        pts = np.array([rec.point for rec in history])
        best = pts[int(np.argmin(values))]
        n_new = min(batch_size, problem.max_evals - len(history))
        batch = []
        exclusion = pts
        for _ in range(n_new):
            p = _propose(surrogate, exclusion, best, problem, state)
            batch.append(p)
            exclusion = np.vstack([exclusion, p[None, :]])
        evaluate_batch(batch)

    i_best = int(np.argmin(values))
    return OptResult(best_point=history[i_best].point.copy(),
                     best_value=values[i_best],
                     history=tuple(history),
                     termination_reason="max_evals")
