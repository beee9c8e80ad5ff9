"""Synthetic autoregressive token process with exact Gaussian conditionals.

Tokens live on an ``grid_height x grid_width`` lattice; each position carries
a ``token_dim``-dimensional value whose dimensions are i.i.d. draws from one
spatial Gaussian field, so the joint law is fully described by an ``n x n``
covariance (``n`` = number of positions) shared across dimensions.  Because
the joint is Gaussian, the next-token conditional at any point of the
generation order is available in closed form, as are the score, the
noise-prediction and the velocity of its diffused/interpolated marginals.
This closed-form family plays the role of a trained backbone plus denoising
head, which lets sampler behaviour be checked against exact truth.

Noisy marginals used throughout:

* discrete diffusion at signal product ``a`` (alpha-bar):
  ``x_a = sqrt(a) x0 + sqrt(1-a) eps`` giving marginal
  ``N(sqrt(a) mu, a Sigma + (1-a) I)``;
* flow interpolation at time ``t`` (0 = data, 1 = noise):
  ``x_t = (1-t) x0 + t eps`` giving marginal
  ``N((1-t) mu, (1-t)^2 Sigma + t^2 I)``.

Singular limits (``a -> 1``, ``t -> 0``) are handled by explicit branches
below ``_LIMIT_EPS``.

Specs, solvers and conditionals are immutable after construction and safe to
share across concurrent workers.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

_LIMIT_EPS = 1e-12


class NumericalError(RuntimeError):
    """Raised when a covariance factorization fails beyond repair."""


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=np.float64)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class TokenProcessSpec:
    """Parameters of the joint Gaussian token field."""

    grid_height: int = 4
    grid_width: int = 4
    token_dim: int = 4
    kernel: str = "rbf"
    length_scale: float = 2.0
    marginal_std: float = 1.0
    mean_field: np.ndarray | None = None
    jitter: float = 1e-8

    def __post_init__(self):
        if self.grid_height < 1 or self.grid_width < 1:
            raise ValueError("grid_height/grid_width: must be positive")
        if self.token_dim < 1:
            raise ValueError("token_dim: must be positive")
        if self.kernel not in ("rbf", "ar1"):
            raise ValueError(f"kernel: unknown kind {self.kernel!r}")
        if self.length_scale <= 0.0:
            raise ValueError("length_scale: must be positive")
        if self.marginal_std <= 0.0:
            raise ValueError("marginal_std: must be positive")
        if self.jitter <= 0.0:
            raise ValueError("jitter: must be positive")
        mean = self.mean_field
        if mean is None:
            mean = np.zeros(self.token_count)
        mean = _readonly(np.asarray(mean, dtype=np.float64).reshape(-1))
        if mean.size != self.token_count:
            raise ValueError("mean_field: need one value per grid position")
        object.__setattr__(self, "mean_field", mean)

    @property
    def token_count(self) -> int:
        return self.grid_height * self.grid_width

    def positions(self) -> np.ndarray:
        """(n, 2) array of (row, col) coordinates in position order."""
        rows, cols = np.divmod(np.arange(self.token_count), self.grid_width)
        return np.stack([rows, cols], axis=1).astype(np.float64)

    def to_json(self) -> str:
        return json.dumps(
            {
                "grid_height": self.grid_height,
                "grid_width": self.grid_width,
                "token_dim": self.token_dim,
                "kernel": self.kernel,
                "length_scale": self.length_scale,
                "marginal_std": self.marginal_std,
                "mean_field": np.asarray(self.mean_field).tolist(),
                "jitter": self.jitter,
            }
        )

    @staticmethod
    def from_json(text: str) -> "TokenProcessSpec":
        obj = json.loads(text)
        return TokenProcessSpec(
            grid_height=int(obj["grid_height"]),
            grid_width=int(obj["grid_width"]),
            token_dim=int(obj["token_dim"]),
            kernel=obj["kernel"],
            length_scale=float(obj["length_scale"]),
            marginal_std=float(obj["marginal_std"]),
            mean_field=np.asarray(obj["mean_field"], dtype=np.float64),
            jitter=float(obj["jitter"]),
        )


def default_spec(token_dim: int = 4) -> TokenProcessSpec:
    """The standard experiment field: 4x4 grid, rbf kernel, ell=2, sigma=1."""
    return TokenProcessSpec(token_dim=token_dim)


def joint_covariance(spec: TokenProcessSpec) -> np.ndarray:
    """Dense n x n position covariance (jitter included on the diagonal)."""
    pos = spec.positions()
    diff = pos[:, None, :] - pos[None, :, :]
    dist2 = np.sum(diff * diff, axis=-1)
    s2 = spec.marginal_std**2
    if spec.kernel == "rbf":
        cov = s2 * np.exp(-dist2 / (2.0 * spec.length_scale**2))
    else:  # ar1: exponential decay in grid distance
        cov = s2 * np.exp(-np.sqrt(dist2) / spec.length_scale)
    cov = cov + spec.jitter * np.eye(spec.token_count)
    try:
        np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        smallest = float(np.linalg.eigvalsh(cov)[0])
        raise NumericalError(
            f"joint covariance not positive definite after jitter "
            f"(smallest eigenvalue ~ {smallest:.3e})"
        ) from None
    return cov


@dataclass(frozen=True, eq=False)
class GenerationOrder:
    """Partition of the positions into the groups emitted per AR step."""

    permutation: tuple[int, ...]
    group_sizes: tuple[int, ...]

    def __post_init__(self):
        n = len(self.permutation)
        if sorted(self.permutation) != list(range(n)):
            raise ValueError("permutation: must be a bijection of 0..n-1")
        if any(g < 1 for g in self.group_sizes):
            raise ValueError("group_sizes: must all be positive")
        if sum(self.group_sizes) != n:
            raise ValueError("group_sizes: must sum to the position count")

    @property
    def step_count(self) -> int:
        return len(self.group_sizes)

    def groups(self) -> list[tuple[int, ...]]:
        out, start = [], 0
        for size in self.group_sizes:
            out.append(tuple(self.permutation[start : start + size]))
            start += size
        return out


def _split_sizes(n: int, group_count: int) -> tuple[int, ...]:
    if not 1 <= group_count <= n:
        raise ValueError("group_count: must lie in [1, token_count]")
    base, extra = divmod(n, group_count)
    return tuple(base + (1 if k < extra else 0) for k in range(group_count))


def random_order(
    spec: TokenProcessSpec, group_count: int, seed: int
) -> GenerationOrder:
    """Seeded uniform-random permutation with near-equal group sizes."""
    perm = np.random.default_rng(seed).permutation(spec.token_count)
    return GenerationOrder(
        permutation=tuple(int(p) for p in perm),
        group_sizes=_split_sizes(spec.token_count, group_count),
    )


def raster_order(spec: TokenProcessSpec, group_count: int) -> GenerationOrder:
    """Row-major order with near-equal group sizes."""
    return GenerationOrder(
        permutation=tuple(range(spec.token_count)),
        group_sizes=_split_sizes(spec.token_count, group_count),
    )


@dataclass(frozen=True, eq=False)
class ConditionalGaussian:
    """Exact next-token conditional: mean (m x d, or batched B x m x d) and a
    position covariance (m x m) shared by the i.i.d. token dimensions."""

    target_positions: tuple[int, ...]
    mean: np.ndarray
    covariance: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float64)
        cov = _readonly(self.covariance)
        m = len(self.target_positions)
        if mean.ndim not in (2, 3) or mean.shape[-2] != m:
            raise ValueError("mean: expected shape (m, d) or (batch, m, d)")
        if cov.shape != (m, m):
            raise ValueError("covariance: expected shape (m, m)")
        if not np.allclose(cov, cov.T, atol=1e-10):
            raise ValueError("covariance: must be symmetric")
        mean = mean.copy()
        mean.flags.writeable = False
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "covariance", cov)

    @property
    def size(self) -> int:
        return len(self.target_positions)


@dataclass(frozen=True, eq=False)
class ConditionalSolver:
    """Reusable pieces of one conditioning step: the regression weights from
    observed onto target positions and the (prefix-independent) conditional
    covariance.  Means for many prefixes can then be formed by matrix
    products, which is what the batched generation loop uses."""

    observed_positions: tuple[int, ...]
    target_positions: tuple[int, ...]
    weights: np.ndarray  # (m, o)
    covariance: np.ndarray  # (m, m)

    def mean(self, spec: TokenProcessSpec, observed_values: np.ndarray) -> np.ndarray:
        """Conditional mean for observed token values of shape (o, d) or
        (batch, o, d)."""
        obs_idx = np.asarray(self.observed_positions, dtype=int)
        tgt_idx = np.asarray(self.target_positions, dtype=int)
        mu_t = spec.mean_field[tgt_idx][:, None]
        observed_values = np.asarray(observed_values, dtype=np.float64)
        if obs_idx.size == 0:
            shape = observed_values.shape[:-2] + (tgt_idx.size, observed_values.shape[-1])
            return np.broadcast_to(mu_t, shape).copy()
        mu_o = spec.mean_field[obs_idx][:, None]
        return mu_t + self.weights @ (observed_values - mu_o)

    def conditional(
        self, spec: TokenProcessSpec, observed_values: np.ndarray
    ) -> ConditionalGaussian:
        mean = self.mean(spec, observed_values)
        if mean.ndim == 2:
            d = spec.token_dim
            mean = np.broadcast_to(mean, (len(self.target_positions), d)).copy()
        return ConditionalGaussian(
            target_positions=self.target_positions,
            mean=mean,
            covariance=self.covariance,
        )


def conditional_solver(
    spec: TokenProcessSpec,
    observed_positions,
    target_positions,
    cov: np.ndarray | None = None,
) -> ConditionalSolver:
    """Schur-complement conditioning, solved through a Cholesky factor of the
    observed block (never an explicit inverse)."""
    obs = tuple(int(p) for p in observed_positions)
    tgt = tuple(int(p) for p in target_positions)
    if set(obs) & set(tgt):
        raise ValueError("observed/target positions must be disjoint")
    all_pos = obs + tgt
    if len(set(all_pos)) != len(all_pos):
        raise ValueError("positions: duplicates are not allowed")
    if any(not 0 <= p < spec.token_count for p in all_pos):
        raise ValueError("positions: out of range for this grid")
    if cov is None:
        cov = joint_covariance(spec)
    tgt_idx = np.asarray(tgt, dtype=int)
    sigma_tt = cov[np.ix_(tgt_idx, tgt_idx)]
    if not obs:
        return ConditionalSolver(
            observed_positions=obs,
            target_positions=tgt,
            weights=np.zeros((len(tgt), 0)),
            covariance=sigma_tt,
        )
    obs_idx = np.asarray(obs, dtype=int)
    sigma_oo = cov[np.ix_(obs_idx, obs_idx)]
    sigma_to = cov[np.ix_(tgt_idx, obs_idx)]
    try:
        factor = cho_factor(sigma_oo, lower=True)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"observed block is singular: {exc}") from exc
    weights = cho_solve(factor, sigma_to.T).T
    cond_cov = sigma_tt - weights @ sigma_to.T
    cond_cov = 0.5 * (cond_cov + cond_cov.T)
    return ConditionalSolver(
        observed_positions=obs,
        target_positions=tgt,
        weights=weights,
        covariance=cond_cov,
    )


def conditional(
    spec: TokenProcessSpec,
    observed: list[tuple[int, np.ndarray]],
    targets,
    cov: np.ndarray | None = None,
) -> ConditionalGaussian:
    """Exact conditional of the targets given ``observed`` (position, value)
    pairs; with no observations this is the unconditional marginal."""
    obs_pos = [p for p, _ in observed]
    solver = conditional_solver(spec, obs_pos, targets, cov=cov)
    if observed:
        values = np.stack(
            [np.broadcast_to(np.asarray(v, dtype=np.float64), (spec.token_dim,))
             for _, v in observed]
        )
    else:
        values = np.zeros((0, spec.token_dim))
    return solver.conditional(spec, values)


# ---------------------------------------------------------------------------
# Noisy-marginal quantities (shared helpers)
# ---------------------------------------------------------------------------


def _solve_spd(mat: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Solve ``mat @ y = rhs`` for rhs of shape (..., m, d) via Cholesky."""
    try:
        factor = cho_factor(mat, lower=True)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"marginal covariance is singular: {exc}") from exc
    moved = np.moveaxis(rhs, -2, 0)  # (m, ..., d)
    flat = moved.reshape(moved.shape[0], -1)
    solved = cho_solve(factor, flat)
    return np.moveaxis(solved.reshape(moved.shape), 0, -2)


def _deviation(cond: ConditionalGaussian, x: np.ndarray, scale: float) -> np.ndarray:
    return np.asarray(x, dtype=np.float64) - scale * cond.mean


def exact_score(
    cond: ConditionalGaussian, x_t: np.ndarray, alpha_bar: float
) -> np.ndarray:
    """Gradient of the log-density of the diffused conditional at ``x_t``.

    The diffused marginal is ``N(sqrt(a) mu, a Sigma + (1-a) I)``, so the
    score is ``-(a Sigma + (1-a) I)^-1 (x_t - sqrt(a) mu)``, applied to each
    token dimension independently.
    """
    if not 0.0 < alpha_bar <= 1.0:
        raise ValueError("alpha_bar: must lie in (0, 1]")
    m = cond.size
    mat = alpha_bar * cond.covariance + (1.0 - alpha_bar) * np.eye(m)
    dev = _deviation(cond, x_t, np.sqrt(alpha_bar))
    return -_solve_spd(mat, dev)


def exact_eps(
    cond: ConditionalGaussian, x_t: np.ndarray, alpha_bar: float
) -> np.ndarray:
    """Posterior mean of the injected noise, ``E[eps | x_t]``.

    Equals ``-sqrt(1 - a) * score``; written in posterior-mean form
    ``sqrt(1-a) (a Sigma + (1-a) I)^-1 (x_t - sqrt(a) mu)`` so the
    ``a -> 1`` limit is 0 rather than 0/0.
    """
    if not 0.0 < alpha_bar <= 1.0:
        raise ValueError("alpha_bar: must lie in (0, 1]")
    if 1.0 - alpha_bar < _LIMIT_EPS:
        return np.zeros_like(np.asarray(x_t, dtype=np.float64) + cond.mean)
    return -np.sqrt(1.0 - alpha_bar) * exact_score(cond, x_t, alpha_bar)


def exact_x0_diffusion(
    cond: ConditionalGaussian, x_t: np.ndarray, alpha_bar: float
) -> np.ndarray:
    """Posterior mean of the clean token, ``E[x0 | x_t]``, at signal product
    ``alpha_bar`` (well defined for every ``alpha_bar`` in [0, 1])."""
    if not 0.0 <= alpha_bar <= 1.0:
        raise ValueError("alpha_bar: must lie in [0, 1]")
    if alpha_bar == 0.0:
        return cond.mean + np.zeros_like(np.asarray(x_t, dtype=np.float64))
    m = cond.size
    mat = alpha_bar * cond.covariance + (1.0 - alpha_bar) * np.eye(m)
    dev = _deviation(cond, x_t, np.sqrt(alpha_bar))
    return cond.mean + np.sqrt(alpha_bar) * (
        cond.covariance @ _solve_spd(mat, dev)
    )


def flow_score(cond: ConditionalGaussian, x_t: np.ndarray, t: float) -> np.ndarray:
    """Score of the interpolated marginal ``N((1-t) mu, (1-t)^2 Sigma + t^2 I)``."""
    if not 0.0 <= t <= 1.0:
        raise ValueError("t: must lie in [0, 1]")
    m = cond.size
    mat = (1.0 - t) ** 2 * cond.covariance + t**2 * np.eye(m)
    dev = _deviation(cond, x_t, 1.0 - t)
    return -_solve_spd(mat, dev)


def exact_velocity(
    cond: ConditionalGaussian, x_t: np.ndarray, t: float
) -> np.ndarray:
    """Bayes-optimal interpolation velocity ``E[eps - x0 | x_t]``.

    Both posterior means come from the same linear solve against the
    interpolated marginal covariance; at ``t = 0`` the state reveals nothing
    about the noise, so the limit is ``-x_t``.
    """
    if not 0.0 <= t <= 1.0:
        raise ValueError("t: must lie in [0, 1]")
    x_t = np.asarray(x_t, dtype=np.float64)
    if t < _LIMIT_EPS:
        return -x_t + np.zeros_like(cond.mean)
    m = cond.size
    mat = (1.0 - t) ** 2 * cond.covariance + t**2 * np.eye(m)
    dev = _deviation(cond, x_t, 1.0 - t)
    solved = _solve_spd(mat, dev)
    eps_post = t * solved
    x0_post = cond.mean + (1.0 - t) * (cond.covariance @ solved)
    return eps_post - x0_post


def sample_conditional(
    cond: ConditionalGaussian, token_dim: int, rng: np.random.Generator, size: int = 1
) -> np.ndarray:
    """Exact draws from the conditional, shape (size, m, d) (or the batch
    shape of a batched mean)."""
    m = cond.size
    try:
        chol = np.linalg.cholesky(cond.covariance)
    except np.linalg.LinAlgError:
        vals, vecs = np.linalg.eigh(cond.covariance)
        chol = vecs * np.sqrt(np.clip(vals, 0.0, None))
    if cond.mean.ndim == 3:
        batch = cond.mean.shape[0]
        z = rng.standard_normal((batch, m, token_dim))
        return cond.mean + chol @ z
    z = rng.standard_normal((size, m, token_dim))
    return cond.mean + chol @ z
