"""Barycenter updates against forced-plan oracles and monotone fitting."""

import numpy as np
import pytest

from mct import barycenter as bc
from mct import expfam, ot
from mct.barycenter import BarycenterConfig
from mct.expfam import FamilySpec
from mct.ot import Mixture

GAUSS1 = FamilySpec("gaussian", 1, sigma2=1.0)
GAUSS2 = FamilySpec("gaussian", 2, sigma2=1.0)


def assert_monotone(trace, rel=1e-8, abs_=1e-12):
    for a, b in zip(trace, trace[1:]):
        assert b <= a + rel * abs(a) + abs_


class TestUpdateBarycenterWeights:
    def test_single_input_closed_form(self):
        # with a free column marginal the minimizer is the column mass of the
        # row-softmax plan (not omega itself)
        rng = np.random.default_rng(0)
        omega = rng.dirichlet(np.ones(3))
        C = rng.uniform(size=(3, 3))
        w = bc.update_barycenter_weights([C], [omega], np.array([1.0]), 0.5)
        closed = (expfam.softmax(-C / 0.5, axis=1) * omega[:, None]).sum(axis=0)
        np.testing.assert_allclose(w, closed, atol=1e-9)

    def test_identical_inputs_match_single_input(self):
        rng = np.random.default_rng(1)
        omega = rng.dirichlet(np.ones(4))
        C = rng.uniform(size=(4, 4))
        w = bc.update_barycenter_weights(
            [C, C], [omega, omega], np.array([0.5, 0.5]), 0.3
        )
        w_solo = bc.update_barycenter_weights([C], [omega], np.array([1.0]), 0.3)
        np.testing.assert_allclose(w, w_solo, atol=1e-9)

    def test_forced_simplex(self):
        w = bc.update_barycenter_weights(
            [np.ones((1, 1)), np.ones((1, 1))],
            [np.array([1.0]), np.array([1.0])],
            np.array([0.5, 0.5]),
            1.0,
        )
        np.testing.assert_allclose(w, [1.0])

    def test_zero_coefficient_inputs_ignored(self):
        rng = np.random.default_rng(2)
        omega = rng.dirichlet(np.ones(3))
        other = rng.dirichlet(np.ones(3))
        C = rng.uniform(size=(3, 3))
        w = bc.update_barycenter_weights(
            [C, rng.uniform(size=(3, 3))], [omega, other], np.array([1.0, 0.0]), 0.5
        )
        w_solo = bc.update_barycenter_weights([C], [omega], np.array([1.0]), 0.5)
        np.testing.assert_allclose(w, w_solo, atol=1e-10)


class TestUpdatePartialPlans:
    def test_forced_plan(self):
        plans = bc.update_partial_plans(
            [np.ones((1, 1))], [np.array([1.0])], np.array([1.0]), 0.5
        )
        np.testing.assert_allclose(plans[0].values, [[1.0]])

    def test_zero_cost_outer_product(self):
        rng = np.random.default_rng(3)
        omega = rng.dirichlet(np.ones(3))
        w = rng.dirichlet(np.ones(2))
        plans = bc.update_partial_plans([np.zeros((3, 2))], [omega], w, 0.4)
        np.testing.assert_allclose(plans[0].values, np.outer(omega, w), atol=1e-9)

    def test_small_lambda_matches_exact(self):
        rng = np.random.default_rng(4)
        C = rng.uniform(size=(2, 2))
        omega = rng.dirichlet(np.ones(2))
        w = rng.dirichlet(np.ones(2))
        plans = bc.update_partial_plans([C], [omega], w, 1e-4)
        _, exact = ot.exact_ot_2x2(C, omega, w)
        assert float(np.sum(plans[0].values * C)) == pytest.approx(exact, abs=1e-3)


class TestUpdateBarycenterAtoms:
    def test_diagonal_plan_copies_atoms(self):
        rng = np.random.default_rng(5)
        atoms = rng.normal(size=(3, 2))
        plan = ot.TransportPlan(np.diag(np.full(3, 1 / 3)), np.full(3, 1 / 3))
        psi = bc.update_barycenter_atoms([plan], [atoms], np.array([1.0]), GAUSS2)
        np.testing.assert_allclose(psi, atoms, atol=1e-12)

    def test_midpoint_of_two_atoms(self):
        plans = [
            ot.TransportPlan(np.array([[1.0]]), np.array([1.0])) for _ in range(2)
        ]
        atoms = [np.array([[0.0]]), np.array([[2.0]])]
        psi = bc.update_barycenter_atoms(plans, atoms, np.array([0.5, 0.5]), GAUSS1)
        np.testing.assert_allclose(psi, [[1.0]])

    def test_weighted_average_three_inputs(self):
        plans = [
            ot.TransportPlan(np.array([[1.0]]), np.array([1.0])) for _ in range(3)
        ]
        atoms = [np.array([[0.0]]), np.array([[1.0]]), np.array([[5.0]])]
        psi = bc.update_barycenter_atoms(
            plans, atoms, np.array([0.2, 0.3, 0.5]), GAUSS1
        )
        np.testing.assert_allclose(psi, [[2.8]], atol=1e-12)

    def test_stationarity_residual(self):
        rng = np.random.default_rng(6)
        coeff = rng.dirichlet(np.ones(3))
        plans, atoms = [], []
        for _ in range(3):
            p = rng.uniform(size=(4, 2))
            p /= p.sum()
            plans.append(ot.TransportPlan(p, p.sum(axis=1)))
            atoms.append(rng.normal(size=(4, 2)))
        psi = bc.update_barycenter_atoms(plans, atoms, coeff, GAUSS2)
        resid = np.zeros((2, 2))
        for a_j, plan, th in zip(coeff, plans, atoms):
            resid += a_j * (plan.values.T @ th - plan.values.sum(axis=0)[:, None] * psi)
        assert np.abs(resid).max() < 1e-10


class TestBarycenterObjective:
    def test_single_input_self_distance(self):
        rng = np.random.default_rng(7)
        P = Mixture(GAUSS2, rng.dirichlet(np.ones(2)), rng.normal(size=(2, 2)))
        val = bc.barycenter_objective([P], np.array([1.0]), P, 1e-3)
        assert abs(val) < 1e-2

    def test_degenerate_coefficients(self):
        rng = np.random.default_rng(8)
        P = Mixture(GAUSS2, rng.dirichlet(np.ones(2)), rng.normal(size=(2, 2)))
        Q = Mixture(GAUSS2, rng.dirichlet(np.ones(2)), rng.normal(size=(2, 2)))
        cand = Mixture(GAUSS2, rng.dirichlet(np.ones(2)), rng.normal(size=(2, 2)))
        val = bc.barycenter_objective([P, Q], np.array([1.0, 0.0]), cand, 0.2)
        solo = ot.composite_transport(P, cand, 0.2).regularized_value
        assert val == pytest.approx(solo, abs=1e-12)


class TestFitBarycenter:
    def test_single_input_near_zero_objective(self):
        rng = np.random.default_rng(9)
        P = Mixture(GAUSS2, rng.dirichlet(np.ones(2)), rng.normal(size=(2, 2)))
        cfg = BarycenterConfig(n_components=2, lam=0.01, max_iter=50, seed=0)
        _, trace = bc.fit_barycenter([P], GAUSS2, cfg)
        assert abs(trace[-1]) < 0.1

    def test_identical_inputs_reproduce_mixture(self):
        rng = np.random.default_rng(10)
        atoms = np.array([[0.0, 0.0], [4.0, 4.0]])
        P = Mixture(GAUSS2, np.array([0.3, 0.7]), atoms)
        cfg = BarycenterConfig(n_components=2, lam=0.05, max_iter=200, seed=1)
        result, trace = bc.fit_barycenter([P, P, P], GAUSS2, cfg)
        assert_monotone(trace)
        # match components by nearest atom
        order = np.argmin(
            expfam.bregman_matrix(GAUSS2, atoms, result.atoms), axis=1
        )
        assert sorted(order) == [0, 1]
        np.testing.assert_allclose(result.atoms[order], atoms, atol=1e-6)
        np.testing.assert_allclose(result.weights[order], P.weights, atol=1e-6)

    def test_monotone_20_instances(self):
        for seed in range(20):
            rng = np.random.default_rng(seed)
            mixtures = [
                Mixture(GAUSS2, rng.dirichlet(np.ones(3)), rng.normal(size=(3, 2)) * 2)
                for _ in range(4)
            ]
            cfg = BarycenterConfig(n_components=3, lam=0.5, max_iter=25, seed=seed)
            _, trace = bc.fit_barycenter(mixtures, GAUSS2, cfg)
            assert_monotone(trace)

    def test_coefficient_validation(self):
        with pytest.raises(ValueError):
            BarycenterConfig(n_components=2, lam=0.5, coefficients=np.array([0.7, 0.7]))

    def test_spec_mismatch(self):
        P = Mixture(GAUSS2, np.array([1.0]), np.zeros((1, 2)))
        Q = Mixture(FamilySpec("categorical", 2), np.array([1.0]), np.zeros((1, 2)))
        cfg = BarycenterConfig(n_components=1, lam=0.5)
        with pytest.raises(ValueError):
            bc.fit_barycenter([P, Q], GAUSS2, cfg)
