"""
Tests for the experiment harness.

Tests cover:
- Dataset collection protocol
- Task sampling and closed-loop trials
- The 15-action probe
- Result tables and CSV files
- The async task suite
"""

import csv
import os

import numpy as np
import pytest


def _summary(task, method, seed, mae_final, success, mae_prediction=None):
    from app.experiments import TrialSummary
    return TrialSummary(task=task, method=method, seed=seed, excavations=3, termination="success" if success else "cap",
                        success=success, mae_prediction=mae_prediction, mae_final=mae_final,
                        final_distances=[mae_final])


class TestEvalMae:
    """Test eval_mae."""

    def test_mean_distance(self):
        from app.experiments import eval_mae

        assert eval_mae([((0.0, 0.0), (3.0, 4.0)), ((1.0, 1.0), (1.0, 1.0))]) == pytest.approx(2.5)

    def test_empty(self):
        from app.experiments import eval_mae

        with pytest.raises(ValueError):
            eval_mae([])


class TestDataset:
    """Test the data collection protocol."""

    def test_trial_groups(self, small_settings):
        from app.experiments import TrialGroup, trial_group

        groups = [trial_group(t, small_settings) for t in range(6)]

        assert groups == [TrialGroup.SAME_ACTION] * 2 + [TrialGroup.SAME_OBSTACLE] * 2 + [TrialGroup.VARY_BOTH] * 2
        with pytest.raises(ValueError):
            trial_group(6, small_settings)

    def test_gen_dataset_protocol(self, small_settings):
        """Group structure, zero first deltas and record count."""
        from app.experiments import dataset_composition, gen_dataset

        records = gen_dataset(5, small_settings)

        assert len(records) == 6 * 3
        assert all(not r.dx.any() for r in records if r.step == 0)
        same_action = {r.action_index for r in records if r.trial < 2}
        assert len(same_action) == 1
        starts = {r.s_t for r in records if r.step == 0 and 2 <= r.trial < 4}
        assert len(starts) == 1
        counts = dataset_composition(records, small_settings)
        assert (counts['same_action'], counts['same_obstacle'], counts['vary_both']) == (2, 2, 2)
        assert counts['records'] == 18
        assert counts['zero_delta'] >= 6

    def test_gen_dataset_chains_positions(self, small_settings):
        """Each step starts where the previous one ended."""
        from app.experiments import gen_dataset

        records = gen_dataset(5, small_settings)
        for prev, cur in zip(records, records[1:]):
            if cur.trial == prev.trial:
                assert cur.s_t == prev.s_next

    def test_gen_dataset_deterministic(self, small_settings):
        from app.experiments import gen_dataset

        a = gen_dataset(9, small_settings)
        b = gen_dataset(9, small_settings)

        assert [(r.action_index, r.s_next) for r in a] == [(r.action_index, r.s_next) for r in b]
        np.testing.assert_array_equal(a[-1].x, b[-1].x)

    def test_place_obstacle_bounds(self, small_settings):
        """Positions stay in the lower two-thirds, clear of the walls."""
        from app.experiments import place_obstacle

        rng = np.random.default_rng(0)
        for _ in range(50):
            x, y = place_obstacle(rng, small_settings)
            assert 7.5 <= x <= 52.5
            assert 20.0 <= y <= 52.5


class TestTasks:
    """Test the task catalogue and instance sampling."""

    def test_catalogue_order(self, small_settings):
        from app.experiments import TASK_NAMES, task_catalogue

        catalogue = task_catalogue(small_settings)

        assert tuple(catalogue) == TASK_NAMES
        assert len(catalogue['multi_obstacle'].obstacles) == 4
        assert catalogue['single_sequential'].sequential
        assert catalogue['two_leg'].restricted_legs
        assert catalogue['unseen_obstacle'].obstacles[0].mass_ratio == 2.0

    def test_unknown_task(self, small_settings):
        from app.experiments import get_task

        with pytest.raises(KeyError, match="single_single"):
            get_task("juggling", small_settings)

    @pytest.mark.parametrize("name", ["single_single", "single_sequential", "multi_obstacle",
                                      "unseen_obstacle", "two_leg", "multi_unseen"])
    def test_instances_are_solvable(self, small_settings, name):
        """Targets sit downslope of their obstacles and obstacles do not overlap."""
        from app.experiments import get_task, sample_instance
        from app.planner import restrict_actions
        from app.utils.granular_sim import action_grid

        spec = get_task(name, small_settings)
        actions = action_grid(small_settings.simulator)
        if spec.restricted_legs:
            actions = restrict_actions(actions, small_settings.leg_positions)
        for seed in range(5):
            instance = sample_instance(spec, np.random.default_rng(seed), small_settings, actions)
            positions = np.array([o.pos for o in instance.obstacles])
            travel = instance.targets - positions
            assert len(instance.obstacles) == len(spec.obstacles)
            assert np.all(travel[:, 1] >= 4.0 - 1e-9)
            assert np.all(np.abs(travel[:, 0]) <= 4.0 + 1e-9)
            for a in range(len(positions)):
                for b in range(a + 1, len(positions)):
                    assert np.linalg.norm(positions[a] - positions[b]) >= 5.0
            assert (instance.second_targets is not None) == spec.sequential

    def test_unsatisfiable_placement(self, small_settings):
        """Impossible target constraints surface as SeedError."""
        from dataclasses import replace

        from app.experiments import SeedError, get_task, sample_instance
        from app.utils.granular_sim import action_grid

        settings = replace(small_settings, experiment=replace(small_settings.experiment,
                                                              min_target_travel=80.0, max_target_travel=90.0))

        with pytest.raises(SeedError):
            sample_instance(get_task("single_single", settings), np.random.default_rng(0), settings,
                            action_grid(settings.simulator))


class TestRunTrial:
    """Test closed-loop trials."""

    def test_oracle_trial(self, small_settings):
        """The oracle predicts every realized position exactly."""
        from app.experiments import Method, get_task, run_trial

        result = run_trial(get_task("single_single", small_settings), Method.ORACLE, 3, settings=small_settings)

        assert result.termination in {"success", "cap", "stop_no_improvement", "stop_stalled"}
        assert result.excavations == len(result.steps) <= 6
        assert result.success == all(d < 2.5 for d in result.final_distances)
        assert result.mae_final == pytest.approx(np.mean(result.final_distances))
        if result.excavations:
            assert result.mae_prediction == 0.0

    def test_baseline_trial(self, small_settings):
        from app.experiments import Method, get_task, run_trial

        result = run_trial(get_task("multi_obstacle", small_settings), Method.BASELINE, 4, settings=small_settings)

        assert result.mae_prediction is None
        assert result.termination in {"success", "cap", "stop_stalled", "baseline_exhausted"}
        assert all(s.predicted is None for s in result.steps)

    def test_deterministic(self, small_settings):
        from app.experiments import Method, get_task, run_trial

        spec = get_task("single_single", small_settings)
        a = run_trial(spec, Method.BASELINE, 8, settings=small_settings)
        b = run_trial(spec, Method.BASELINE, 8, settings=small_settings)

        assert [s.action_index for s in a.steps] == [s.action_index for s in b.steps]
        assert a.final_distances == b.final_distances

    def test_already_at_target(self, small_settings, shift_predictor):
        """A solved instance ends immediately without excavating."""
        from app.experiments import Method, TaskInstance, get_task, run_trial
        from app.utils.granular_sim import Obstacle

        instance = TaskInstance(obstacles=[Obstacle(id=0, pos=(30.0, 40.0))], targets=np.array([[30.0, 41.0]]))
        result = run_trial(get_task("single_single", small_settings), Method.GRAIN, 0, shift_predictor({}),
                           small_settings, instance=instance)

        assert result.termination == "success"
        assert result.excavations == 0
        assert result.mae_prediction is None

    def test_no_predicted_gain_stops(self, small_settings, shift_predictor):
        """A predictor that never moves anything stops the trial at once."""
        from app.experiments import Method, TaskInstance, get_task, run_trial
        from app.utils.granular_sim import Obstacle

        instance = TaskInstance(obstacles=[Obstacle(id=0, pos=(30.0, 30.0))], targets=np.array([[30.0, 40.0]]))
        result = run_trial(get_task("single_single", small_settings), Method.GRAIN, 0, shift_predictor({}),
                           small_settings, instance=instance)

        assert result.termination == "stop_no_improvement"
        assert result.excavations == 0

    def test_learned_method_needs_model(self, small_settings):
        from app.experiments import Method, get_task, run_trial

        with pytest.raises(ValueError):
            run_trial(get_task("single_single", small_settings), Method.GRAIN, 0, settings=small_settings)

    def test_snapshots_written(self, small_settings, temp_dir):
        from app.experiments import Method, get_task, run_trial

        result = run_trial(get_task("single_single", small_settings), Method.BASELINE, 2, settings=small_settings,
                           snapshot_dir=temp_dir)

        pgms = [f for f in os.listdir(temp_dir) if f.endswith('.pgm')]
        assert len(pgms) == result.excavations

    def test_plan_trace(self, small_settings, temp_dir):
        from app.experiments import Method, get_task, run_trial, write_plan_trace

        result = run_trial(get_task("single_single", small_settings), Method.ORACLE, 3, settings=small_settings)
        path = write_plan_trace(result, os.path.join(temp_dir, "trace.csv"))

        with open(path, newline='', encoding='utf-8') as f:
            rows = list(csv.reader(f))
        assert rows[0] == ['step', 'phase', 'action_index', 'pred_x_0', 'pred_y_0', 'true_x_0', 'true_y_0',
                           'score_0', 'status']
        assert len(rows) == result.excavations + 1
        if result.excavations:
            assert rows[-1][-1] == result.termination


class TestProbe:
    """Test the 15-action probe."""

    def test_oracle_probe_is_exact(self, small_settings, temp_dir):
        from app.experiments import probe_15_actions, write_probe_csv
        from app.planner import OracleDynamics

        result = probe_15_actions(OracleDynamics(small_settings.simulator), small_settings)

        assert len(result.rows) == 15
        assert result.mae == 0.0
        assert result.obstacle_pos == (30.0, 36.0)

        path = write_probe_csv(result, os.path.join(temp_dir, "probe.csv"))
        with open(path, newline='', encoding='utf-8') as f:
            rows = list(csv.reader(f))
        assert len(rows) == 17
        assert rows[-1][0] == 'mean'

    def test_sequential_flux_study(self, small_settings):
        from app.experiments import sequential_flux_study

        pairs = sequential_flux_study(3, 0, small_settings)

        assert len(pairs) == 3
        assert all(first >= 0.0 and second >= 0.0 for first, second in pairs)


class TestTables:
    """Test aggregation and CSV files."""

    def test_aggregate(self):
        from app.experiments import aggregate

        rows = aggregate([
            _summary("single_single", "grain", 1, 1.0, True, 0.5),
            _summary("single_single", "grain", 2, 3.0, False, 1.5),
            _summary("single_single", "baseline", 1, 2.0, True),
        ])

        assert [(r.task, r.method) for r in rows] == [("single_single", "grain"), ("single_single", "baseline")]
        assert rows[0].mae_final_mean == 2.0
        assert rows[0].mae_final_std == 1.0
        assert rows[0].mae_prediction_mean == 1.0
        assert rows[0].success_rate == 0.5
        assert rows[1].mae_prediction_mean is None

    def test_aggregate_from_csv_is_exact(self, temp_dir):
        """Rebuilding the table from trial CSVs reproduces it bit for bit."""
        from app.experiments import (aggregate, aggregate_from_csv,
                                     write_trials_csv)

        summaries = [_summary("multi_obstacle", "grain", s, 1.0 / (s + 3), s % 2 == 0, 0.1 * s + 1e-3)
                     for s in range(5)]
        summaries += [_summary("multi_obstacle", "baseline", s, 2.0 / 7.0 * s, False) for s in range(5)]
        grain = write_trials_csv(summaries[:5], os.path.join(temp_dir, "a.csv"))
        baseline = write_trials_csv(summaries[5:], os.path.join(temp_dir, "b.csv"))

        assert aggregate_from_csv([grain, baseline]) == aggregate(summaries)

    def test_aggregate_csv_columns(self, temp_dir):
        from app.experiments import (AGGREGATE_COLUMNS, aggregate,
                                     write_aggregate_csv)

        path = write_aggregate_csv(aggregate([_summary("two_leg", "baseline", 0, 4.0, False)]),
                                   os.path.join(temp_dir, "agg.csv"))

        with open(path, newline='', encoding='utf-8') as f:
            rows = list(csv.reader(f))
        assert rows[0] == AGGREGATE_COLUMNS
        assert rows[1][3] == "N/A"

    def test_format_table(self):
        from app.experiments import aggregate, format_table

        table = format_table(aggregate([_summary("two_leg", "baseline", 0, 4.0, True)]))

        assert "two_leg" in table
        assert "N/A" in table
        assert "100%" in table

    def test_trial_seeds_paired(self):
        """Seeds depend on task and trial number only."""
        from app.experiments import trial_seed

        assert trial_seed(0, 1, 2) == trial_seed(0, 1, 2)
        assert len({trial_seed(0, t, n) for t in range(3) for n in range(5)}) == 15


class TestTaskSuite:
    """Test the async task suite."""

    @pytest.mark.asyncio
    async def test_suite_writes_tables(self, small_settings, temp_dir):
        from app.experiments import Method, aggregate_from_csv, task_suite

        suite = await task_suite(0, tasks=["single_single"], methods=[Method.ORACLE, Method.BASELINE],
                                 trials_per_cell=2, settings=small_settings, output_dir=temp_dir)

        assert [(r.task, r.method, r.trials) for r in suite.rows] == [
            ("single_single", "oracle", 2), ("single_single", "baseline", 2)]
        assert sorted(os.path.basename(p) for p in suite.trial_csvs) == [
            "single_single__baseline.csv", "single_single__oracle.csv"]
        assert os.path.exists(os.path.join(temp_dir, "aggregate.csv"))
        assert aggregate_from_csv(suite.trial_csvs) == suite.rows
        oracle_seeds = [r.seed for r in suite.results if r.method == "oracle"]
        baseline_seeds = [r.seed for r in suite.results if r.method == "baseline"]
        assert oracle_seeds == baseline_seeds

    @pytest.mark.asyncio
    async def test_suite_reproducible(self, small_settings):
        """Worker scheduling does not change the results."""
        from app.experiments import Method, task_suite

        a = await task_suite(1, tasks=["single_single"], methods=[Method.BASELINE], trials_per_cell=3,
                             settings=small_settings)
        b = await task_suite(1, tasks=["single_single"], methods=[Method.BASELINE], trials_per_cell=3,
                             settings=small_settings)

        assert a.rows == b.rows

    @pytest.mark.asyncio
    async def test_suite_needs_models(self, small_settings):
        from app.experiments import Method, task_suite

        with pytest.raises(ValueError):
            await task_suite(0, tasks=["single_single"], methods=[Method.GRAIN], settings=small_settings)

    @pytest.mark.asyncio
    async def test_suite_unknown_task(self, small_settings):
        from app.experiments import Method, task_suite

        with pytest.raises(KeyError):
            await task_suite(0, tasks=["nope"], methods=[Method.BASELINE], settings=small_settings)
