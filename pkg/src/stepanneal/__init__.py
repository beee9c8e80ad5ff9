"""Step-annealed diffusion sampling on an exactly solvable token process.

The package provides noise schedules and reverse-time grids
(:mod:`stepanneal.schedules`), a joint-Gaussian token field with closed-form
conditionals, scores and velocities (:mod:`stepanneal.process`,
:mod:`stepanneal.denoiser`), six reverse samplers
(:mod:`stepanneal.samplers`), the AR-step-to-diffusion-step annealing
policies (:mod:`stepanneal.annealing`), the autoregressive generation loop
(:mod:`stepanneal.generate`), and diagnostics for straightness, variance,
predictability and Gaussian W2 quality (:mod:`stepanneal.diagnostics`).
"""

from .annealing import (
    SCHEDULER_KINDS,
    StepScheduler,
    constant_scheduler,
    schedule_table,
    steps_at,
    total_nfe,
)
from .denoiser import (
    BiasedDenoiser,
    ExactDenoiser,
    eps_from_score,
    eps_from_velocity,
    flow_score_from_velocity,
    score_from_eps,
    velocity_from_eps,
    velocity_from_flow_score,
)
from .diagnostics import (
    ProbeReport,
    StraightnessReport,
    SweepRow,
    SweepSummary,
    VarianceReport,
    conditional_moments,
    gaussian_fit,
    probe_error,
    quality_sweep,
    sampling_variance,
    scheduler_label,
    straightness_by_step,
    straightness_diffusion,
    straightness_flow,
    w2_floor,
    w2_gaussian,
    w2_to_truth,
)
from .generate import (
    SequenceBatch,
    TokenSequence,
    batch_to_csv_rows,
    generate_sequence,
    simulate_sequences,
)
from .process import (
    ConditionalGaussian,
    ConditionalSolver,
    GenerationOrder,
    NumericalError,
    TokenProcessSpec,
    conditional,
    conditional_solver,
    default_spec,
    exact_eps,
    exact_score,
    exact_velocity,
    exact_x0_diffusion,
    flow_score,
    joint_covariance,
    random_order,
    raster_order,
    sample_conditional,
)
from .samplers import (
    DIFFUSION_SAMPLERS,
    FLOW_SAMPLERS,
    SAMPLER_KINDS,
    SamplerConfig,
    TrajectoryRecord,
    ddim_sample,
    ddpm_sample,
    dpm_solver_pp_sample,
    dpm_solver_sample,
    euler_flow_sample,
    euler_maruyama_sample,
    sample_with_config,
)
from .schedules import (
    DEFAULT_START_OFFSET,
    DIFFUSION,
    FLOW,
    DiffusionSchedule,
    TimeGrid,
    build_cosine_alpha_bar,
    build_linear_beta,
    make_diffusion_grid,
    make_flow_grid,
    with_levels,
)

__version__ = "0.1.0"
