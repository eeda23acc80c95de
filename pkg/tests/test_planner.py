"""
Tests for greedy planning.

Tests cover:
- Direction vectors and single-obstacle selection
- Multi-obstacle scoring, exclusion and tie-breaking
- The non-learning baseline
- Termination rules and the two-leg action subset
"""

import numpy as np
import pytest


@pytest.fixture
def actions(small_settings):
    from app.utils.granular_sim import action_grid
    return action_grid(small_settings.simulator)


def _observation(*positions):
    from app.planner import Observation
    from app.utils.granular_sim import Obstacle

    obstacles = [Obstacle(id=k, pos=p) for k, p in enumerate(positions)]
    return Observation(depth=np.zeros((24, 24)), delta=np.zeros((24, 24)), obstacles=obstacles)


class TestUnitDir:
    """Test unit_dir."""

    def test_unit_length(self):
        from app.planner import unit_dir

        np.testing.assert_allclose(unit_dir((0.0, 0.0), (3.0, 4.0)), [0.6, 0.8])

    def test_degenerate(self):
        from app.planner import DegenerateDirectionError, unit_dir

        with pytest.raises(DegenerateDirectionError):
            unit_dir((1.0, 2.0), (1.0, 2.0))


class TestGreedySingle:
    """Test greedy_single."""

    def test_picks_largest_projection(self, actions, shift_predictor):
        """The action moving the obstacle furthest toward the target wins."""
        from app.planner import greedy_single

        model = shift_predictor({3: [0.0, 1.0], 8: [0.0, 2.0], 9: [3.0, 0.0]})
        plan = greedy_single(model, _observation((30.0, 30.0)), (30.0, 40.0), actions)

        assert plan.action_index == 8
        assert plan.best_score == pytest.approx(2.0)
        assert plan.action_totals.shape == (15,)
        np.testing.assert_allclose(plan.predictions[0], [30.0, 32.0])

    def test_tie_goes_to_lowest_index(self, actions, shift_predictor):
        from app.planner import greedy_single

        model = shift_predictor({5: [0.0, 1.0], 2: [0.0, 1.0], 12: [0.0, 1.0]})
        plan = greedy_single(model, _observation((30.0, 30.0)), (30.0, 40.0), actions)

        assert plan.action_index == 2

    def test_all_zero_scores(self, actions, shift_predictor):
        """Nothing moves: action 0 with score 0."""
        from app.planner import greedy_single

        plan = greedy_single(shift_predictor({}), _observation((30.0, 30.0)), (30.0, 40.0), actions)

        assert plan.action_index == 0
        assert plan.best_score == 0.0

    def test_rejects_empty_actions(self, shift_predictor):
        from app.planner import greedy_single

        with pytest.raises(ValueError):
            greedy_single(shift_predictor({}), _observation((30.0, 30.0)), (30.0, 40.0), [])

    def test_rejects_many_obstacles(self, actions, shift_predictor):
        from app.planner import greedy_single

        with pytest.raises(ValueError):
            greedy_single(shift_predictor({}), _observation((10.0, 30.0), (50.0, 30.0)), (30.0, 40.0), actions)


class TestGreedyMulti:
    """Test greedy_multi and score_actions."""

    def test_sums_over_obstacles(self, actions, shift_predictor, small_settings):
        """One action helping two obstacles beats one helping a single obstacle more."""
        from app.planner import greedy_multi

        model = shift_predictor({
            1: [[0.0, 1.5], [0.0, 1.5]],
            4: [[0.0, 2.5], [0.0, 0.0]],
        })
        observation = _observation((15.0, 30.0), (45.0, 30.0))
        plan = greedy_multi(model, observation, [(15.0, 40.0), (45.0, 40.0)], actions, small_settings.planner)

        assert plan.action_index == 1
        assert plan.best_score == pytest.approx(3.0)
        np.testing.assert_allclose(plan.scores, [1.5, 1.5])

    def test_obstacle_at_target_is_ignored(self, actions, shift_predictor, small_settings):
        """Movement of an obstacle already within the success radius scores nothing."""
        from app.planner import greedy_multi

        model = shift_predictor({
            2: [[0.0, 0.0], [0.0, 9.0]],
            6: [[0.0, 1.0], [0.0, 0.0]],
        })
        observation = _observation((15.0, 30.0), (45.0, 30.0))
        plan = greedy_multi(model, observation, [(15.0, 40.0), (45.0, 31.0)], actions, small_settings.planner)

        assert plan.action_index == 6
        assert plan.scores[1] == 0.0

    def test_penalize_leaving_targets(self, shift_predictor):
        """With the penalty on, pushing a finished obstacle away costs score."""
        from app.planner import score_actions

        predictions = np.array([[[30.0, 31.0], [45.0, 36.0]]])
        scores = score_actions(predictions, np.array([[30.0, 30.0], [45.0, 31.0]]),
                               np.array([[30.0, 40.0], [45.0, 31.0]]), 2.5, penalize_leaving_targets=True)

        np.testing.assert_allclose(scores, [[1.0, -5.0]])

    def test_nothing_to_do(self, actions, shift_predictor, small_settings):
        from app.planner import NothingToDoError, greedy_multi

        with pytest.raises(NothingToDoError):
            greedy_multi(shift_predictor({}), _observation((30.0, 30.0)), [(30.0, 31.0)], actions,
                         small_settings.planner)

    def test_target_count_mismatch(self, actions, shift_predictor, small_settings):
        from app.planner import greedy_multi

        with pytest.raises(ValueError):
            greedy_multi(shift_predictor({}), _observation((30.0, 30.0)), [(30.0, 40.0), (10.0, 40.0)], actions,
                         small_settings.planner)

    def test_single_obstacle_agrees_with_greedy_single(self, actions, shift_predictor, small_settings):
        from app.planner import greedy_multi, greedy_single

        model = shift_predictor({k: [0.3 * (k % 4), 0.2 * k] for k in range(15)})
        observation = _observation((20.0, 30.0))

        single = greedy_single(model, observation, (26.0, 38.0), actions)
        multi = greedy_multi(model, observation, [(26.0, 38.0)], actions, small_settings.planner)

        assert single.action_index == multi.action_index
        np.testing.assert_allclose(single.action_totals, multi.action_totals)


class TestOracle:
    """Test the simulator-backed predictor."""

    def test_matches_step(self, small_settings, actions):
        from app.planner import Observation, OracleDynamics
        from app.utils.granular_sim import Obstacle, new_slope, step

        sim = small_settings.simulator
        slope = new_slope(sim)
        obstacles = [Obstacle(id=0, pos=(30.0, 22.5))]
        observation = Observation(depth=np.zeros((24, 24)), delta=np.zeros((24, 24)), obstacles=obstacles,
                                  slope=slope)

        preds = OracleDynamics(sim).predict(observation, actions[:3])

        assert preds.shape == (3, 1, 2)
        _, moved, _ = step(slope, obstacles, actions[2], sim)
        np.testing.assert_array_equal(preds[2, 0], moved[0].pos)

    def test_needs_slope(self, actions):
        from app.planner import OracleDynamics

        with pytest.raises(ValueError):
            OracleDynamics().predict(_observation((30.0, 30.0)), actions)

    def test_greedy_step_brings_obstacle_closer(self, small_settings, actions):
        """Obstacles just below a deposit band, targets further downslope: one greedy step closes in."""
        from app.planner import Observation, OracleDynamics, greedy_single
        from app.utils.granular_sim import (Obstacle, footprint_bounds,
                                            new_slope, step)

        sim = small_settings.simulator
        oracle = OracleDynamics(sim)
        rng = np.random.default_rng(17)
        sites = [a for a in actions if round(a.center[0], 6) in (16.5, 30.0, 43.5)]
        slope = new_slope(sim)
        closer = 0
        for n in range(20):
            site = sites[n % len(sites)]
            _, r1, _, _ = footprint_bounds(site.center, site.footprint_side, sim.cell_size, slope.shape)
            pos = (site.center[0] + rng.uniform(-1.0, 1.0), (r1 + sim.deposit_rows + 1) * sim.cell_size)
            target = np.array(pos) + np.array([rng.uniform(-1.0, 1.0), rng.uniform(10.0, 14.0)])
            obstacles = [Obstacle(id=0, pos=pos)]
            observation = Observation(depth=np.zeros(slope.shape), delta=np.zeros(slope.shape),
                                      obstacles=obstacles, slope=slope)

            plan = greedy_single(oracle, observation, target, actions)
            if plan.best_score <= 0.0:
                continue
            _, moved, _ = step(slope, obstacles, plan.action, sim)

            np.testing.assert_array_equal(moved[0].pos, plan.predictions[0])
            if np.linalg.norm(target - moved[0].position) < np.linalg.norm(target - np.array(pos)):
                closer += 1

        assert closer >= 18


class TestBaseline:
    """Test BaselinePolicy."""

    def test_nearest_action(self, actions):
        from app.planner import BaselinePolicy

        assert BaselinePolicy.nearest_action((44.0, 26.0), actions).index == 13

    def test_stays_on_obstacle_while_it_approaches(self, actions):
        """The policy keeps working one obstacle as long as it gets closer."""
        from app.planner import BaselinePolicy

        policy = BaselinePolicy(seed=0)
        targets = np.array([[10.0, 50.0], [50.0, 50.0]])
        first = policy.select(np.array([[10.0, 30.0], [50.0, 30.0]]), targets, actions)
        current = policy.current
        second = policy.select(np.array([[10.0, 33.0], [50.0, 33.0]]), targets, actions)

        assert policy.current == current
        assert first.index == second.index

    def test_switches_when_moved_away(self, actions):
        from app.planner import BaselinePolicy

        policy = BaselinePolicy(seed=0)
        targets = np.array([[10.0, 50.0], [50.0, 50.0]])
        policy.select(np.array([[10.0, 30.0], [50.0, 30.0]]), targets, actions)
        first = policy.current
        away = np.array([[10.0, 30.0], [50.0, 30.0]])
        away[first, 1] = 20.0
        policy.select(away, targets, actions)

        assert policy.current == 1 - first

    def test_exhausted_returns_none(self, actions):
        """After every obstacle has been tried and dropped there is nothing left."""
        from app.planner import BaselinePolicy

        policy = BaselinePolicy(seed=1)
        targets = np.array([[30.0, 50.0]])
        assert policy.select(np.array([[30.0, 30.0]]), targets, actions) is not None

        assert policy.select(np.array([[30.0, 25.0]]), targets, actions) is None

    def test_skips_obstacles_already_at_target(self, actions):
        from app.planner import BaselinePolicy

        policy = BaselinePolicy(seed=3)
        action = policy.select(np.array([[10.0, 49.0], [50.0, 30.0]]),
                               np.array([[10.0, 50.0], [50.0, 50.0]]), actions)

        assert policy.current == 1
        assert action.index == 13


class TestTermination:
    """Test check_termination."""

    def test_continue(self, small_settings):
        from app.planner import TerminationStatus, check_termination

        history = [[[30.0, 30.0]], [[30.0, 32.0]]]

        assert check_termination(history, [2.0], small_settings.planner) == TerminationStatus.CONTINUE

    def test_no_predicted_improvement(self, small_settings):
        from app.planner import TerminationStatus, check_termination

        history = [[[30.0, 30.0]]]

        assert check_termination(history, [0.0], small_settings.planner) == TerminationStatus.STOP_NO_IMPROVEMENT

    def test_stalled(self, small_settings):
        """Less than 0.5 cm over three excavations stops the trial."""
        from app.planner import TerminationStatus, check_termination

        history = [[[30.0, 30.0]], [[30.0, 30.1]], [[30.0, 30.2]], [[30.0, 30.3]]]

        assert check_termination(history, [1.0], small_settings.planner) == TerminationStatus.STOP_STALLED

    def test_one_obstacle_moving_prevents_stall(self, small_settings):
        from app.planner import TerminationStatus, check_termination

        history = [[[10.0, 30.0], [50.0, 30.0]], [[10.0, 30.0], [50.0, 31.0]],
                   [[10.0, 30.0], [50.0, 32.0]], [[10.0, 30.0], [50.0, 33.0]]]

        assert check_termination(history, [1.0], small_settings.planner) == TerminationStatus.CONTINUE

    def test_measured_criterion(self, small_settings):
        from dataclasses import replace

        from app.planner import TerminationStatus, check_termination

        cfg = replace(small_settings.planner, improvement_criterion="measured")
        targets = [[30.0, 40.0]]

        assert check_termination([[[30.0, 30.0]], [[30.0, 29.0]]], [5.0], cfg, targets) == \
            TerminationStatus.STOP_NO_IMPROVEMENT
        assert check_termination([[[30.0, 30.0]], [[30.0, 31.0]]], [-1.0], cfg, targets) == \
            TerminationStatus.CONTINUE
        with pytest.raises(ValueError):
            check_termination([[[30.0, 30.0]]], [1.0], cfg)

    def test_empty_history(self, small_settings):
        from app.planner import check_termination

        with pytest.raises(ValueError):
            check_termination([], [], small_settings.planner)


class TestRestrictActions:
    """Test restrict_actions."""

    def test_leg_locations(self, actions, small_settings):
        """The default legs sit on the bottom row of the grid."""
        from app.planner import restrict_actions

        legs = restrict_actions(actions, small_settings.leg_positions)

        assert [a.index for a in legs] == [11, 13]

    def test_grid_order_kept(self, actions):
        from app.planner import restrict_actions

        legs = restrict_actions(actions, [(43.5, 27.0), (16.5, 3.0)])

        assert [a.index for a in legs] == [1, 13]

    def test_off_grid(self, actions):
        from app.config import ConfigError
        from app.planner import restrict_actions

        with pytest.raises(ConfigError):
            restrict_actions(actions, [(17.0, 27.0)])

    def test_empty(self, actions):
        from app.config import ConfigError
        from app.planner import restrict_actions

        with pytest.raises(ConfigError):
            restrict_actions(actions, [])
