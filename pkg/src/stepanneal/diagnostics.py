"""Evidence metrics and quality oracles for annealed sampling runs.

Covers the three phenomena that justify step annealing, plus the distance
used to score sample quality against the exactly known conditionals:

* path straightness -- flow metric ``E_t ||(x1 - x0) - v(x_t, t)||^2``
  (0 = perfectly straight) and the diffusion analogue, the mean cosine
  between ``x0 - x_t`` and the marginal score (1 = straight);
* per-AR-step variance of repeated next-token draws;
* Bayes-predictor (conditional-mean) squared error per AR step;
* closed-form 2-Wasserstein distance between Gaussians
  ``W2^2 = ||mu1 - mu2||^2 + tr(S1 + S2 - 2 (S2^1/2 S1 S2^1/2)^1/2)``.

Empirical-vs-exact distances fit a Gaussian to the draws by moments (the
truth is Gaussian, so the fit is consistent) and always report a Monte Carlo
floor: the same-size-sample W2 of exact draws against their own truth.
Everything here is a pure computation, bitwise reproducible under fixed
seeds.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import spearmanr

from .annealing import StepScheduler, steps_at, total_nfe
from .denoiser import ExactDenoiser
from .generate import SequenceBatch, simulate_sequences
from .process import (
    ConditionalGaussian,
    GenerationOrder,
    TokenProcessSpec,
    conditional_solver,
    joint_covariance,
    sample_conditional,
)
from .samplers import SamplerConfig, TrajectoryRecord, sample_with_config
from .schedules import DIFFUSION, DiffusionSchedule, make_diffusion_grid, make_flow_grid

_NORM_EPS = 1e-300


# ---------------------------------------------------------------------------
# Gaussian W2
# ---------------------------------------------------------------------------


def _sym_sqrt(mat: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh(mat)
    vals = np.clip(vals, 0.0, None)
    return (vecs * np.sqrt(vals)) @ vecs.T


def _check_spd(cov: np.ndarray, name: str) -> np.ndarray:
    cov = np.asarray(cov, dtype=np.float64)
    if cov.ndim != 2 or cov.shape[0] != cov.shape[1]:
        raise ValueError(f"{name}: must be a square matrix")
    if not np.allclose(cov, cov.T, atol=1e-9):
        raise ValueError(f"{name}: must be symmetric")
    scale = max(float(np.trace(cov)) / cov.shape[0], 1.0)
    if float(np.linalg.eigvalsh(cov)[0]) < -1e-9 * scale:
        raise ValueError(f"{name}: must be positive semi-definite")
    return 0.5 * (cov + cov.T)


def w2_gaussian(
    mean1: np.ndarray, cov1: np.ndarray, mean2: np.ndarray, cov2: np.ndarray
) -> float:
    """Bures-Wasserstein distance between two Gaussians."""
    mean1 = np.asarray(mean1, dtype=np.float64).ravel()
    mean2 = np.asarray(mean2, dtype=np.float64).ravel()
    cov1 = _check_spd(cov1, "cov1")
    cov2 = _check_spd(cov2, "cov2")
    root2 = _sym_sqrt(cov2)
    inner = root2 @ cov1 @ root2
    cross = _sym_sqrt(0.5 * (inner + inner.T))
    w2sq = (
        float(np.sum((mean1 - mean2) ** 2))
        + float(np.trace(cov1) + np.trace(cov2) - 2.0 * np.trace(cross))
    )
    return float(np.sqrt(max(w2sq, 0.0)))


def gaussian_fit(draws: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Moment fit over draws of shape (N, D) (N > D recommended)."""
    draws = np.asarray(draws, dtype=np.float64)
    mean = draws.mean(axis=0)
    cov = np.cov(draws, rowvar=False, ddof=1)
    cov = np.atleast_2d(cov)
    return mean, 0.5 * (cov + cov.T)


def conditional_moments(cond: ConditionalGaussian) -> tuple[np.ndarray, np.ndarray]:
    """Flatten a conditional (m positions x d i.i.d. dims) to a single
    Gaussian: mean (m*d,), covariance ``kron(Sigma, I_d)``."""
    if cond.mean.ndim != 2:
        raise ValueError("cond: needs an unbatched (m, d) mean")
    d = cond.mean.shape[-1]
    return cond.mean.ravel(), np.kron(cond.covariance, np.eye(d))


def w2_to_truth(draws: np.ndarray, cond: ConditionalGaussian) -> float:
    """W2 between the moment fit of (N, m, d) draws and the exact conditional."""
    mean, cov = conditional_moments(cond)
    fit_mean, fit_cov = gaussian_fit(draws.reshape(draws.shape[0], -1))
    return w2_gaussian(fit_mean, fit_cov, mean, cov)


def w2_floor(
    cond: ConditionalGaussian,
    token_dim: int,
    n_draws: int,
    rng: np.random.Generator,
    repeats: int = 8,
) -> float:
    """Expected W2 of *exact* n_draws-sized samples against their own truth:
    the resolution limit of the empirical comparison."""
    values = []
    for _ in range(repeats):
        draws = sample_conditional(cond, token_dim, rng, size=n_draws)
        values.append(w2_to_truth(draws, cond))
    return float(np.mean(values))


# ---------------------------------------------------------------------------
# Straightness
# ---------------------------------------------------------------------------


def _interpolate_path(
    trajectory: TrajectoryRecord, t: float
) -> tuple[np.ndarray, float]:
    """State linearly interpolated on the recorded path at time ``t``, plus
    the interpolation weight's bracketing segment level (diffusion only)."""
    times = np.asarray(trajectory.times)
    states = trajectory.states
    j = int(np.searchsorted(-times, -t, side="right")) - 1
    j = min(max(j, 0), len(times) - 2)
    t_hi, t_lo = times[j], times[j + 1]
    w = (t - t_lo) / (t_hi - t_lo)
    x = w * states[j] + (1.0 - w) * states[j + 1]
    if trajectory.levels is None:
        return x, float("nan")
    lv_hi, lv_lo = trajectory.levels[j], trajectory.levels[j + 1]
    level = float(np.exp(w * np.log(lv_hi) + (1.0 - w) * np.log(lv_lo)))
    return x, min(level, 1.0)


def _stratified_times(
    t_max: float, t_draws: int, rng: np.random.Generator
) -> np.ndarray:
    u = rng.random(t_draws)
    return (np.arange(t_draws) + u) / t_draws * t_max


def straightness_flow(
    trajectory: TrajectoryRecord,
    oracle,
    cond: ConditionalGaussian,
    t_draws: int,
    rng: np.random.Generator,
) -> float:
    """Monte Carlo estimate of the squared deviation of the field from the
    straight chord noise -> data, averaged over uniform times (and over the
    trajectory batch).  0 for a perfectly straight path."""
    if trajectory.states is None:
        raise ValueError("trajectory: endpoints missing; record the path")
    x1, x0 = trajectory.states[0], trajectory.states[-1]
    chord = x1 - x0
    total = 0.0
    for t in _stratified_times(float(trajectory.times[0]), t_draws, rng):
        x_t, _ = _interpolate_path(trajectory, float(t))
        v = oracle.velocity(x_t, float(t), cond)
        sq = np.sum((chord - v) ** 2, axis=(-2, -1))
        total += float(np.mean(sq))
    return total / t_draws


def straightness_diffusion(
    trajectory: TrajectoryRecord,
    oracle,
    cond: ConditionalGaussian,
    t_draws: int,
    rng: np.random.Generator,
) -> float:
    """Mean cosine between the direction to the clean token and the marginal
    score along the recorded path (1 = straight).  Zero-norm draws are
    skipped and counted against the average."""
    if trajectory.states is None:
        raise ValueError("trajectory: endpoints missing; record the path")
    if trajectory.levels is None:
        raise ValueError("trajectory: diffusion straightness needs noise levels")
    x0 = trajectory.states[-1]
    total, used = 0.0, 0
    for t in _stratified_times(float(trajectory.times[0]), t_draws, rng):
        x_t, level = _interpolate_path(trajectory, float(t))
        score = oracle.score(x_t, level, cond)
        to_clean = (x0 - x_t).reshape(x_t.shape[0], -1)
        s = score.reshape(x_t.shape[0], -1)
        nu = np.linalg.norm(to_clean, axis=1)
        ns = np.linalg.norm(s, axis=1)
        keep = (nu > _NORM_EPS) & (ns > _NORM_EPS)
        if not np.any(keep):
            continue
        cosines = np.sum(to_clean[keep] * s[keep], axis=1) / (nu[keep] * ns[keep])
        total += float(np.sum(cosines))
        used += int(np.sum(keep))
    return total / used if used else float("nan")


@dataclass(eq=False)
class StraightnessReport:
    """Per-AR-step straightness averages."""

    metric: str  # "flow" | "diffusion"
    per_step: np.ndarray
    t_draws: int
    n_trajectories: int

    @property
    def spearman_to_step(self) -> float:
        rho, _ = spearmanr(np.arange(self.per_step.size), self.per_step)
        return float(rho)


def straightness_by_step(
    batch: SequenceBatch, t_draws: int, rng: np.random.Generator
) -> StraightnessReport:
    """Straightness per AR step over a batch generated with recorded paths."""
    if batch.trajectories is None or batch.conditionals is None:
        raise ValueError("batch: generate with record_paths=True")
    oracle = ExactDenoiser()
    flow = batch.trajectories[0].domain != DIFFUSION
    fn = straightness_flow if flow else straightness_diffusion
    vals = [
        fn(traj, oracle, cond, t_draws, rng)
        for traj, cond in zip(batch.trajectories, batch.conditionals)
    ]
    return StraightnessReport(
        metric="flow" if flow else "diffusion",
        per_step=np.asarray(vals),
        t_draws=t_draws,
        n_trajectories=batch.values.shape[0],
    )


# ---------------------------------------------------------------------------
# Sampling variance and probe error
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class VarianceReport:
    """Per-AR-step, per-dimension variance of repeated next-token draws,
    with the exact conditional variance (trace / group size) alongside."""

    empirical: np.ndarray  # (K, d)
    exact_per_dim: np.ndarray  # (K,)
    draws_per_step: int

    def __post_init__(self):
        if np.any(self.empirical < 0.0):
            raise ValueError("empirical: variances must be nonnegative")


def sampling_variance(
    spec: TokenProcessSpec,
    order: GenerationOrder,
    sampler_config: SamplerConfig,
    scheduler: StepScheduler,
    draws_per_step: int,
    seeds: tuple[int, int],
    *,
    schedule: DiffusionSchedule | None = None,
    start_index: int | None = None,
    flow_start_time: float = 1.0,
) -> VarianceReport:
    """Freeze a reference prefix, then at each AR step redraw the next group
    ``draws_per_step`` times through the annealed sampler."""
    if draws_per_step < 2:
        raise ValueError("draws_per_step: must be >= 2")
    prefix_seed, redraw_seed = seeds
    cov = joint_covariance(spec)
    oracle = ExactDenoiser()
    prefix_rng = np.random.default_rng(prefix_seed)
    redraw_rng = np.random.default_rng(redraw_seed)
    values = np.zeros((1, spec.token_count, spec.token_dim))
    observed: list[int] = []
    empirical, exact = [], []
    for k, group in enumerate(order.groups()):
        solver = conditional_solver(spec, observed, group, cov=cov)
        cond = solver.conditional(spec, values[0, observed, :])
        t_k = steps_at(scheduler, k)
        if sampler_config.domain == DIFFUSION:
            grid = make_diffusion_grid(schedule, t_k, start_index)
        else:
            grid = make_flow_grid(t_k, flow_start_time)
        draws, _ = sample_with_config(
            sampler_config, oracle, cond, grid, redraw_rng, n_samples=draws_per_step
        )
        empirical.append(draws.var(axis=0, ddof=1).mean(axis=0))  # (d,)
        exact.append(float(np.trace(cond.covariance)) / cond.size)
        committed = sample_conditional(cond, spec.token_dim, prefix_rng, size=1)
        values[0, list(group), :] = committed[0]
        observed.extend(group)
    return VarianceReport(
        empirical=np.asarray(empirical),
        exact_per_dim=np.asarray(exact),
        draws_per_step=draws_per_step,
    )


@dataclass(eq=False)
class ProbeReport:
    """Squared error of the conditional-mean (Bayes) predictor per AR step;
    its expectation is the conditional trace / group size."""

    mse: np.ndarray  # (K,)
    exact_per_dim: np.ndarray  # (K,)
    n_sequences: int


def probe_error(
    spec: TokenProcessSpec, order: GenerationOrder, seeds
) -> ProbeReport:
    """Per-step squared error of predicting the sampled group by the
    conditional mean, averaged over exactly sampled sequences."""
    seeds = list(seeds)
    if not seeds:
        raise ValueError("seeds: need at least one seed")
    rng = np.random.default_rng(seeds)
    n_seq = len(seeds)
    cov = joint_covariance(spec)
    values = np.zeros((n_seq, spec.token_count, spec.token_dim))
    observed: list[int] = []
    mse, exact = [], []
    for group in order.groups():
        solver = conditional_solver(spec, observed, group, cov=cov)
        cond = solver.conditional(spec, values[:, observed, :])
        draws = sample_conditional(cond, spec.token_dim, rng)
        mse.append(float(np.mean((draws - cond.mean) ** 2)))
        exact.append(float(np.trace(cond.covariance)) / cond.size)
        values[:, list(group), :] = draws
        observed.extend(group)
    return ProbeReport(
        mse=np.asarray(mse), exact_per_dim=np.asarray(exact), n_sequences=n_seq
    )


# ---------------------------------------------------------------------------
# Quality sweep across annealing policies
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SweepRow:
    label: str
    kind: str
    t_early: int
    t_late: int
    ar_step: int
    nfe: int
    w2: float
    w2_floor: float


@dataclass(frozen=True)
class SweepSummary:
    label: str
    kind: str
    t_early: int
    t_late: int
    total_nfe: int
    aggregate_w2: float
    mean_floor: float
    joint_moment_error: float


def scheduler_label(s: StepScheduler) -> str:
    if s.kind == "constant":
        return f"constant_{s.t_early}"
    return f"{s.kind}_{s.t_early}_{s.t_late}"


def quality_sweep(
    spec: TokenProcessSpec,
    order: GenerationOrder,
    sampler_config: SamplerConfig,
    scheduler_list: list[StepScheduler],
    seeds: tuple[int, int],
    *,
    draws_per_step: int = 256,
    schedule: DiffusionSchedule | None = None,
    start_index: int | None = None,
    flow_start_time: float = 1.0,
    floor_repeats: int = 8,
    joint_sequences: int = 0,
) -> tuple[list[SweepRow], list[SweepSummary]]:
    """Per-AR-step empirical-vs-exact W2 for each annealing policy.

    A reference prefix is drawn exactly from the process (one per AR step,
    shared by every policy), so the per-step distance isolates sampler
    discretization error.  Every policy reuses the same random stream at a
    given AR step (common random numbers): policies that agree on T(k)
    produce identical draws there, so differences reflect the annealing
    policy, not sampling noise.  With ``joint_sequences > 0`` each policy
    also runs that many full sequences end to end and reports the relative
    Frobenius error of the empirical joint covariance.
    """
    if any(s.ar_steps != order.step_count for s in scheduler_list):
        raise ValueError("scheduler_list: all policies must share the AR step count")
    prefix_seed, sweep_seed = seeds
    cov = joint_covariance(spec)
    oracle = ExactDenoiser()
    prefix_rng = np.random.default_rng(prefix_seed)
    rng = np.random.default_rng(sweep_seed)

    # Frozen reference prefix and per-step exact conditionals + floors.
    conds, floors = [], []
    values = np.zeros((1, spec.token_count, spec.token_dim))
    observed: list[int] = []
    for group in order.groups():
        solver = conditional_solver(spec, observed, group, cov=cov)
        cond = solver.conditional(spec, values[0, observed, :])
        conds.append(cond)
        floors.append(
            w2_floor(cond, spec.token_dim, draws_per_step, rng, repeats=floor_repeats)
        )
        committed = sample_conditional(cond, spec.token_dim, prefix_rng, size=1)
        values[0, list(group), :] = committed[0]
        observed.extend(group)

    rows: list[SweepRow] = []
    summaries: list[SweepSummary] = []
    calls = sampler_config.calls_per_step
    for scheduler in scheduler_list:
        label = scheduler_label(scheduler)
        w2s = []
        for k, cond in enumerate(conds):
            t_k = steps_at(scheduler, k)
            if sampler_config.domain == DIFFUSION:
                grid = make_diffusion_grid(schedule, t_k, start_index)
            else:
                grid = make_flow_grid(t_k, flow_start_time)
            cell_rng = np.random.default_rng([sweep_seed, 1 + k])
            draws, _ = sample_with_config(
                sampler_config, oracle, cond, grid, cell_rng,
                n_samples=draws_per_step,
            )
            w2 = w2_to_truth(draws, cond)
            w2s.append(w2)
            rows.append(
                SweepRow(
                    label=label,
                    kind=scheduler.kind,
                    t_early=scheduler.t_early,
                    t_late=scheduler.t_late,
                    ar_step=k,
                    nfe=t_k * calls,
                    w2=w2,
                    w2_floor=floors[k],
                )
            )
        joint_err = float("nan")
        if joint_sequences > 0:
            batch = simulate_sequences(
                spec, order, sampler_config, scheduler, schedule,
                n_sequences=joint_sequences,
                master_seed=int(rng.integers(2**31)),
                start_index=start_index,
                flow_start_time=flow_start_time,
            )
            flat = batch.values.transpose(0, 2, 1).reshape(-1, spec.token_count)
            emp = np.cov(flat, rowvar=False, ddof=1)
            joint_err = float(
                np.linalg.norm(emp - cov) / np.linalg.norm(cov)
            )
        summaries.append(
            SweepSummary(
                label=label,
                kind=scheduler.kind,
                t_early=scheduler.t_early,
                t_late=scheduler.t_late,
                total_nfe=total_nfe(scheduler, calls),
                aggregate_w2=float(np.mean(w2s)),
                mean_floor=float(np.mean(floors)),
                joint_moment_error=joint_err,
            )
        )
    return rows, summaries
