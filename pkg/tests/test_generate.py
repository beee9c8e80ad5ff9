import numpy as np
import pytest

import stepanneal as sa


@pytest.fixture(scope="module")
def setup(spec, linear_schedule):
    order = sa.random_order(spec, 16, seed=0)
    cfg = sa.SamplerConfig(kind="ddim", eta=0.0)
    pol = sa.StepScheduler(kind="linear", t_early=50, t_late=5, ar_steps=16)
    return order, cfg, pol


class TestGenerateSequence:
    def test_bitwise_reproducible(self, spec, linear_schedule, setup):
        order, cfg, pol = setup
        a = sa.generate_sequence(spec, order, cfg, pol, linear_schedule,
                                 seed=7, start_index=950)
        b = sa.generate_sequence(spec, order, cfg, pol, linear_schedule,
                                 seed=7, start_index=950)
        np.testing.assert_array_equal(a.values, b.values)
        c = sa.generate_sequence(spec, order, cfg, pol, linear_schedule,
                                 seed=8, start_index=950)
        assert not np.array_equal(a.values, c.values)

    def test_step_counts_follow_scheduler(self, spec, linear_schedule, setup):
        order, cfg, pol = setup
        seq = sa.generate_sequence(spec, order, cfg, pol, linear_schedule,
                                   seed=1, start_index=950)
        assert seq.step_counts == tuple(
            sa.steps_at(pol, k) for k in range(16))
        assert seq.values.shape == (16, 4)
        assert np.all(np.isfinite(seq.values))

    def test_nfe_matches_scheduled_total(self, spec, linear_schedule, setup):
        order, cfg, pol = setup
        seq = sa.generate_sequence(spec, order, cfg, pol, linear_schedule,
                                   seed=1, start_index=950)
        assert seq.nfe == sa.total_nfe(pol, calls_per_step=1)

    def test_nfe_midpoint_solver(self, spec, linear_schedule, setup):
        order, _, pol = setup
        cfg = sa.SamplerConfig(kind="dpm_solver", order=2)
        seq = sa.generate_sequence(spec, order, cfg, pol, linear_schedule,
                                   seed=1, start_index=950)
        # 2 T(k) - 1 per AR step: one evaluation short of 2 T(k) at the
        # terminal transition of every grid.
        assert seq.nfe == sa.total_nfe(pol, calls_per_step=2) - pol.ar_steps

    def test_dirac_process_returns_mean_field(self, linear_schedule):
        mean_field = np.linspace(-1.0, 1.0, 16)
        tight = sa.TokenProcessSpec(marginal_std=1e-6, mean_field=mean_field,
                                    jitter=1e-16)
        order = sa.random_order(tight, 4, seed=0)
        for kind in ("constant", "linear"):
            pol = sa.StepScheduler(kind=kind, t_early=20, t_late=5, ar_steps=4)
            seq = sa.generate_sequence(
                tight, order, sa.SamplerConfig(kind="ddim"), pol,
                linear_schedule, seed=3, start_index=950)
            np.testing.assert_allclose(seq.values,
                                       np.tile(mean_field[:, None], (1, 4)),
                                       atol=1e-3)

    def test_flow_generation(self, spec, setup):
        order, _, pol = setup
        cfg = sa.SamplerConfig(kind="euler_flow")
        seq = sa.generate_sequence(spec, order, cfg, pol, seed=2)
        assert seq.nfe == sa.total_nfe(pol, calls_per_step=1)

    def test_ar1_kernel_field(self, linear_schedule):
        spec = sa.TokenProcessSpec(grid_height=3, grid_width=3, token_dim=2,
                                   kernel="ar1", length_scale=1.5)
        order = sa.random_order(spec, 3, seed=1)
        pol = sa.constant_scheduler(20, 3)
        seq = sa.generate_sequence(spec, order, sa.SamplerConfig(kind="ddim"),
                                   pol, linear_schedule, seed=5,
                                   start_index=950)
        assert seq.values.shape == (9, 2)
        assert np.all(np.isfinite(seq.values))

    def test_error_carries_ar_step_context(self, spec, linear_schedule, setup):
        order, cfg, _ = setup
        pol = sa.constant_scheduler(1000, 16)
        with pytest.raises(RuntimeError, match="AR step 0"):
            sa.generate_sequence(spec, order, cfg, pol, linear_schedule,
                                 seed=0, start_index=950)

    def test_scheduler_order_mismatch(self, spec, linear_schedule, setup):
        order, cfg, _ = setup
        pol = sa.constant_scheduler(10, 8)
        with pytest.raises(ValueError, match="ar_steps"):
            sa.generate_sequence(spec, order, cfg, pol, linear_schedule, seed=0)

    def test_record_paths(self, spec, linear_schedule, setup):
        order, cfg, pol = setup
        seq = sa.generate_sequence(spec, order, cfg, pol, linear_schedule,
                                   seed=4, start_index=950, record_paths=True)
        assert len(seq.trajectories) == 16
        assert len(seq.conditionals) == 16
        assert seq.trajectories[0].states is not None

    def test_json_export(self, spec, linear_schedule, setup):
        import json

        order, cfg, pol = setup
        seq = sa.generate_sequence(spec, order, cfg, pol, linear_schedule,
                                   seed=4, start_index=950)
        obj = json.loads(seq.to_json())
        assert obj["step_counts"] == list(seq.step_counts)
        assert len(obj["values"]) == 16


class TestSimulateSequences:
    def test_batched_determinism(self, spec, linear_schedule, setup):
        order, cfg, pol = setup
        a = sa.simulate_sequences(spec, order, cfg, pol, linear_schedule,
                                  n_sequences=8, master_seed=1, start_index=950)
        b = sa.simulate_sequences(spec, order, cfg, pol, linear_schedule,
                                  n_sequences=8, master_seed=1, start_index=950)
        np.testing.assert_array_equal(a.values, b.values)
        assert a.values.shape == (8, 16, 4)

    def test_csv_rows(self, spec, linear_schedule, setup):
        order, cfg, pol = setup
        batch = sa.simulate_sequences(spec, order, cfg, pol, linear_schedule,
                                      n_sequences=2, master_seed=1,
                                      start_index=950)
        rows = sa.batch_to_csv_rows(batch)
        assert len(rows) == 2 * 16 * 4
        seq_id, ar_step, position, dim, value = rows[0]
        assert (seq_id, position, dim) == (0, 0, 0)
        groups = batch.order.groups()
        assert position in groups[ar_step]

    def test_joint_moments_match_process(self, spec, cov, linear_schedule):
        # Full-resolution ancestral generation, one token per AR step:
        # empirical joint second moments converge to the exact field
        # covariance (the strongest end-to-end correctness check).
        order = sa.raster_order(spec, 16)
        cfg = sa.SamplerConfig(kind="ddpm")
        pol = sa.constant_scheduler(1000, 16)
        batch = sa.simulate_sequences(spec, order, cfg, pol, linear_schedule,
                                      n_sequences=20000, master_seed=5,
                                      start_index=999)
        flat = batch.values.transpose(0, 2, 1).reshape(-1, 16)
        emp = np.cov(flat, rowvar=False, ddof=1)
        assert np.linalg.norm(emp - cov) / np.linalg.norm(cov) < 0.05
