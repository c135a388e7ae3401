"""Unit tests for the problem module.

Expected values for the hop probabilities were frozen from an independent
high-precision quadrature of the N(0, 2*dt) density (30-digit mpmath), not
from the implementation under test.
"""

import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from spikewalk.problem import (
    Mesh,
    ProblemSpec,
    TimestepError,
    TransitionProbabilities,
    analytic_solution,
    expected_stopping_time,
    mesh,
    transition_probabilities,
    validate_timestep,
)

# Frozen quadrature oracle values: (dx, dt) -> (p_go, p_stay, tail_mass)
QUADRATURE_ORACLE = {
    (0.05, 1e-4): (0.03854993587177088, 0.92290012825645824, 1.1372725656979624e-7),
    (0.05, 0.01): (0.42984189759933309, 0.14031620480133382, 0.59588309056517765),
    (0.1, 0.0028125): (0.2524925375469229, 0.49501492490615421, 0.045500263896358378),
}


def paper_spec() -> ProblemSpec:
    return ProblemSpec(length_l=2.0, forcing_f=3.0, dx=0.05, dt=1e-4)


class TestTransitionProbabilities:
    def test_matches_quadrature_oracle(self):
        for (dx, dt), (pg, ps, tail) in QUADRATURE_ORACLE.items():
            probs = transition_probabilities(dx, dt)
            assert abs(probs.p_go - pg) < 1e-10, f"p_go off at dx={dx} dt={dt}"
            assert abs(probs.p_stay - ps) < 1e-10
            assert abs(probs.tail_mass - tail) < 1e-10 * max(tail, 1e-3)

    def test_reference_operating_point(self):
        # The standard operating point: dx=0.05, dt=1e-4.
        probs = transition_probabilities(0.05, 1e-4)
        assert abs(probs.p_go - 0.0385) < 5e-4
        assert abs(probs.p_stay - 0.9229) < 5e-4
        assert probs.tail_mass < 1.2e-7

    def test_partition_of_unity(self):
        probs = transition_probabilities(0.05, 1e-4)
        assert abs(probs.p_stay + 2 * probs.p_go - 1.0) <= 1e-12

    def test_rejects_nonpositive_inputs(self):
        with pytest.raises(ValueError):
            transition_probabilities(0.0, 1e-4)
        with pytest.raises(ValueError):
            transition_probabilities(0.05, -1.0)

    def test_type_validates_partition(self):
        with pytest.raises(ValueError):
            TransitionProbabilities(p_stay=0.9, p_go=0.04, tail_mass=0.0)
        with pytest.raises(ValueError):
            TransitionProbabilities(p_stay=0.0, p_go=0.5, tail_mass=0.0)

    # Parameterise by the hop ratio r = dx / (2*sqrt(2*dt)) so p_go = Phi(-r)
    # stays representable (no underflow to exactly 0 at absurd dt/dx combos).
    @staticmethod
    def _dt_for(dx: float, ratio: float) -> float:
        return (dx / (2.0 * ratio)) ** 2 / 2.0

    @given(
        dx=st.floats(0.01, 1.0),
        ratio=st.floats(0.2, 8.0),
        factor=st.floats(1.1, 10.0),
    )
    def test_p_go_monotone_in_dt(self, dx, ratio, factor):
        # Larger timestep -> wider displacement -> likelier to clear dx/2.
        dt = self._dt_for(dx, ratio)
        a = transition_probabilities(dx, dt)
        b = transition_probabilities(dx, dt * factor)
        assert b.p_go > a.p_go

    @given(
        dx1=st.floats(0.01, 0.5),
        factor=st.floats(1.1, 4.0),
        ratio=st.floats(0.2, 8.0),
    )
    def test_p_go_monotone_in_dx(self, dx1, factor, ratio):
        dt = self._dt_for(dx1 * factor, ratio)
        a = transition_probabilities(dx1, dt)
        b = transition_probabilities(dx1 * factor, dt)
        assert b.p_go < a.p_go

    @given(dx=st.floats(0.01, 1.0), ratio=st.floats(1.3, 8.0))
    def test_tail_below_p_go_below_p_stay_when_valid(self, dx, ratio):
        probs = transition_probabilities(dx, self._dt_for(dx, ratio))
        if probs.tail_mass < 0.05:
            assert probs.tail_mass < probs.p_go < probs.p_stay


class TestValidateTimestep:
    def test_pass_returns_probabilities(self):
        probs = validate_timestep(0.05, 1e-4, 0.05)
        assert isinstance(probs, TransitionProbabilities)

    def test_coarse_timestep_fails(self):
        # tail mass ~= 0.596 for dt=0.01 at dx=0.05: two-cell jumps dominate.
        with pytest.raises(TimestepError) as exc:
            validate_timestep(0.05, 0.01, 0.05)
        assert "multi-cell jump mass" in str(exc.value)

    def test_threshold_is_strict(self):
        probs = transition_probabilities(0.05, 1e-4)
        with pytest.raises(TimestepError):
            validate_timestep(0.05, 1e-4, probs.tail_mass)


class TestProblemSpec:
    def test_paper_operating_point_is_valid(self):
        spec = paper_spec()
        assert spec.n_nodes == 40

    def test_single_cell_mesh_allowed(self):
        spec = ProblemSpec(length_l=0.05, forcing_f=1.0, dx=0.05, dt=1e-4)
        assert spec.n_nodes == 1

    def test_rejects_non_divisible_dx(self):
        with pytest.raises(ValueError):
            ProblemSpec(length_l=2.0, forcing_f=3.0, dx=0.03, dt=1e-4)

    def test_rejects_invalid_timestep(self):
        with pytest.raises(TimestepError):
            ProblemSpec(length_l=2.0, forcing_f=3.0, dx=0.05, dt=0.01)

    def test_rejects_nonpositive_parameters(self):
        with pytest.raises(ValueError):
            ProblemSpec(length_l=-2.0, forcing_f=3.0, dx=0.05, dt=1e-4)
        with pytest.raises(ValueError):
            ProblemSpec(length_l=2.0, forcing_f=0.0, dx=0.05, dt=1e-4)

    def test_round_trips_through_dict(self):
        spec = paper_spec()
        assert ProblemSpec.from_dict(spec.to_dict()) == spec


class TestMesh:
    def test_midpoints_and_absorbing_index(self):
        spec = paper_spec()
        m = mesh(spec)
        assert isinstance(m, Mesh)
        assert m.absorbing_index == 40
        assert m.midpoints.shape == (40,)
        assert m.midpoints[0] == pytest.approx(0.025)
        assert m.midpoints[-1] == pytest.approx(1.975)
        assert np.allclose(np.diff(m.midpoints), 0.05)


class TestAnalyticSolution:
    def test_hand_values(self):
        spec = paper_spec()
        assert analytic_solution(0.0, spec) == 0.0
        assert analytic_solution(1.0, spec) == pytest.approx(2.5, abs=1e-12)
        assert analytic_solution(2.0, spec) == pytest.approx(8.0, abs=1e-12)

    def test_domain_errors(self):
        spec = paper_spec()
        with pytest.raises(ValueError):
            analytic_solution(-0.01, spec)
        with pytest.raises(ValueError):
            analytic_solution(2.01, spec)

    def test_vectorised_evaluation(self):
        spec = paper_spec()
        xs = np.array([0.0, 1.0, 2.0])
        out = analytic_solution(xs, spec)
        assert np.allclose(out, [0.0, 2.5, 8.0])

    def test_second_difference_matches_forcing(self):
        # u'' = F*(l - x); the solution is cubic so the central second
        # difference is exact up to float roundoff.
        spec = paper_spec()
        h = 1e-4
        for x in [0.3, 1.0, 1.7]:
            fd = (
                analytic_solution(x + h, spec)
                - 2 * analytic_solution(x, spec)
                + analytic_solution(x - h, spec)
            ) / h**2
            assert abs(fd - spec.forcing_f * (spec.length_l - x)) < 1e-5

    def test_left_boundary_conditions(self):
        # u(0) = 0 exactly; one-sided derivative at 0 shrinks linearly in h.
        spec = paper_spec()
        assert analytic_solution(0.0, spec) == 0.0
        slopes = [analytic_solution(h, spec) / h for h in (1e-2, 1e-3, 1e-4)]
        assert slopes[0] > slopes[1] > slopes[2]
        assert slopes[2] < 1e-3


class TestExpectedStoppingTime:
    def test_hand_values(self):
        assert expected_stopping_time(2.0, 2.0) == 0.0
        assert expected_stopping_time(2.0, 0.0) == pytest.approx(2.0)
        assert expected_stopping_time(2.0, 1.0) == pytest.approx(1.5)

    def test_reference_step_count(self):
        # Leftmost start on the standard mesh: ~2.0 / 1e-4 = 20000 steps.
        steps = expected_stopping_time(2.0, 0.0) / 1e-4
        assert steps == pytest.approx(20000.0)

    def test_domain_error(self):
        with pytest.raises(ValueError):
            expected_stopping_time(2.0, 2.5)

    @given(y=st.floats(0.0, 2.0))
    def test_decreases_toward_free_end(self, y):
        assert expected_stopping_time(2.0, y) <= expected_stopping_time(2.0, 0.0)
