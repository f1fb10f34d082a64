"""Proximal maps, splitting steps and the Lagrangian descent monitor."""

from typing import Optional

import numpy as np
import pytest

from SRT.errors import ParameterError, ContractError, DimensionError, EstimationError
from SRT.models import build_mlp
from SRT.metrics import sparsity
from SRT.pruners import (
    GroupView, PrunerState,
    hard_threshold, soft_threshold, prox_group_lasso, prox_group_l0, rvsm_threshold,
    group_lasso_penalty, group_l0_penalty, l0_penalty, check_partition, lagrangian_value,
    rvsm_step, rgsm_step, admm_step, sgd_step, step, expected_u, init_state,
    lipschitz_estimate, descent_violations, finalize_epoch, rgsm_lagrangian,
)
from SRT.srt_types import GroupLabel

def label(pid: str, index: int, coords) -> GroupLabel:
    return GroupLabel(pid, 0, index, np.asarray(coords))

def rows_of(pid: str, rows: int, cols: int) -> list[GroupLabel]:
    return [label(pid, r, np.arange(r * cols, (r + 1) * cols)) for r in range(rows)]

# smooth test objectives: value and gradient on {"w": ...} maps

class Quadratic:
    def __init__(self, seed: int, m: int = 8, n: int = 5) -> None:
        rng = np.random.default_rng(seed)
        self.A = rng.normal(size=(m, n))
        self.b = rng.normal(size=m)
        self.L = float(np.linalg.eigvalsh(self.A.T @ self.A).max())

    def value(self, w: dict) -> float:
        r = self.A @ w["w"] - self.b
        return 0.5 * float(r @ r)

    def grad(self, w: dict) -> dict:
        return {"w": self.A.T @ (self.A @ w["w"] - self.b)}

class Logistic:
    def __init__(self, seed: int, m: int = 40, n: int = 6) -> None:
        rng = np.random.default_rng(seed)
        self.X = rng.normal(size=(m, n))
        self.y = np.sign(self.X @ rng.normal(size=n) + 0.3 * rng.normal(size=m))
        self.L = float(np.linalg.eigvalsh(self.X.T @ self.X).max()) / (4 * m)

    def value(self, w: dict) -> float:
        return float(np.mean(np.logaddexp(0.0, -self.y * (self.X @ w["w"]))))

    def grad(self, w: dict) -> dict:
        margin = self.y * (self.X @ w["w"])
        weights = -self.y / (1.0 + np.exp(margin))
        return {"w": self.X.T @ weights / self.X.shape[0]}

class TanhRegression:
    """Two-layer tanh network with squared loss."""

    def __init__(self, seed: int, m: int = 20, d: int = 3, hidden: int = 5) -> None:
        rng = np.random.default_rng(seed)
        self.X = rng.normal(size=(m, d))
        self.y = np.sin(self.X.sum(axis=1))
        self.shapes = {"w1": (hidden, d), "w2": (hidden,)}

    def value(self, w: dict) -> float:
        r = np.tanh(self.X @ w["w1"].T) @ w["w2"] - self.y
        return 0.5 * float(np.mean(r * r))

    def grad(self, w: dict) -> dict:
        h = np.tanh(self.X @ w["w1"].T)
        r = (h @ w["w2"] - self.y) / self.X.shape[0]
        back = np.outer(r, w["w2"]) * (1.0 - h * h)
        return {"w1": back.T @ self.X, "w2": h.T @ r}

class TestHardThreshold:
    def test_tie_is_zeroed(self):
        np.testing.assert_array_equal(hard_threshold([0.5, -2.0, 1.0], 1.0), [0.0, -2.0, 0.0])

    def test_zero_threshold(self):
        w = np.array([0.0, 1e-300, -3.0])
        np.testing.assert_array_equal(hard_threshold(w, 0.0), w)

    def test_negative_threshold(self):
        with pytest.raises(ParameterError):
            hard_threshold([1.0], -0.1)

    def test_two_candidate_oracle(self):
        rng = np.random.default_rng(0)
        for _ in range(10_000):
            w = float(rng.normal())
            lam, beta = float(rng.uniform(0.0, 2.0)), float(rng.uniform(0.1, 5.0))
            u = float(hard_threshold([w], rvsm_threshold(lam, beta))[0])

            def objective(v: float) -> float:
                return lam * (v != 0) + 0.5 * beta * (w - v) ** 2

            assert u in (0.0, w)
            assert objective(u) <= min(objective(0.0), objective(w))

    def test_idempotent(self):
        w = np.random.default_rng(1).normal(size=50)
        once = hard_threshold(w, 0.7)
        np.testing.assert_array_equal(hard_threshold(once, 0.7), once)

    def test_rvsm_threshold_degenerate(self):
        assert rvsm_threshold(0.0, 0.0) == 0.0
        assert rvsm_threshold(1.0, 0.0) == np.inf
        assert rvsm_threshold(2.0, 1.0) == pytest.approx(2.0)

class TestSoftThreshold:
    def test_shrinkage(self):
        np.testing.assert_array_equal(soft_threshold([2.0, -0.3, 0.0], 0.5), [1.5, 0.0, 0.0])

    def test_is_l1_prox(self):
        rng = np.random.default_rng(2)
        for _ in range(10_000):
            w, a = float(rng.normal()), float(rng.uniform(0.0, 1.0))
            u = float(soft_threshold([w], a)[0])
            grid = np.linspace(-3.0, 3.0, 601)
            objective = a * np.abs(grid) + 0.5 * (grid - w) ** 2
            assert a * abs(u) + 0.5 * (u - w) ** 2 <= objective.min() + 1e-12

class TestGroupProx:
    def test_group_lasso_shrinks_norm_by_lam(self):
        out = prox_group_lasso(GroupView(None, np.array([0.0, 3.0])), 1.0)
        np.testing.assert_allclose(out.values, [0.0, 2.0])

    def test_group_lasso_kill_region(self):
        out = prox_group_lasso(GroupView(None, np.array([0.3, -0.4])), 0.5)
        np.testing.assert_array_equal(out.values, [0.0, 0.0])

    def test_group_lasso_optimality(self):
        rng = np.random.default_rng(3)
        for _ in range(10_000):
            g = rng.normal(size=10)
            lam = float(rng.uniform(0.0, 4.0))
            u = prox_group_lasso(GroupView(None, g), lam).values

            def objective(v: np.ndarray) -> float:
                return lam * float(np.linalg.norm(v)) + 0.5 * float(np.sum((v - g) ** 2))

            if np.linalg.norm(u) > 0:
                np.testing.assert_allclose(u - g + lam * u / np.linalg.norm(u), 0.0, atol=1e-12)
            for candidate in (np.zeros(10), g, u + 1e-3 * rng.normal(size=10)):
                assert objective(u) <= objective(candidate) + 1e-6

    def test_group_lasso_scaling_factor(self):
        g = np.random.default_rng(4).normal(size=6)
        u = prox_group_lasso(GroupView(None, g), 0.5).values
        ratio = u / g
        np.testing.assert_allclose(ratio, ratio[0])
        assert 0.0 <= ratio[0] < 1.0

    def test_group_l0_tie(self):
        out = prox_group_l0(GroupView(None, np.array([2.0])), 2.0)
        np.testing.assert_array_equal(out.values, [0.0])

    def test_group_l0_zero_lam(self):
        g = np.array([1e-8, -2.0])
        np.testing.assert_array_equal(prox_group_l0(GroupView(None, g), 0.0).values, g)

    def test_group_l0_two_candidate_oracle(self):
        rng = np.random.default_rng(5)
        for _ in range(10_000):
            g = rng.normal(size=4) * rng.uniform(0.1, 2.0)
            lam = float(rng.uniform(0.0, 3.0))
            u = prox_group_l0(GroupView(None, g), lam).values

            def objective(v: np.ndarray) -> float:
                return lam * float(np.any(v != 0)) + 0.5 * float(np.sum((v - g) ** 2))

            assert np.array_equal(u, g) or not np.any(u)
            assert objective(u) <= min(objective(np.zeros(4)), objective(g))

    def test_group_l0_idempotent(self):
        g = GroupView(None, np.array([0.5, 0.5]))
        once = prox_group_l0(g, 0.2)
        np.testing.assert_array_equal(prox_group_l0(once, 0.2).values, once.values)

class TestPenalties:
    def test_two_groups(self):
        w = {"p": np.array([3.0, 0.0, 0.0, 4.0])}
        groups = [label("p", 0, [0, 1]), label("p", 1, [2, 3])]
        assert group_lasso_penalty(w, groups) == pytest.approx(7.0)
        assert group_l0_penalty(w, groups) == 2.0

    def test_all_zero(self):
        w = {"p": np.zeros(4)}
        groups = rows_of("p", 2, 2)
        assert group_lasso_penalty(w, groups) == 0.0
        assert group_l0_penalty(w, groups) == 0.0
        assert l0_penalty(w) == 0.0

    def test_random_partition(self):
        rng = np.random.default_rng(6)
        w = rng.normal(size=30)
        order = rng.permutation(30)
        cuts = np.sort(rng.choice(np.arange(1, 30), size=5, replace=False))
        parts = np.split(order, cuts)
        groups = [label("p", i, part) for i, part in enumerate(parts)]
        expected = sum(np.linalg.norm(w[part]) for part in parts)
        assert group_lasso_penalty({"p": w}, groups) == pytest.approx(expected, abs=1e-12)

    def test_overlap(self):
        with pytest.raises(ContractError):
            check_partition([label("p", 0, [0, 1]), label("p", 1, [1, 2])])

class TestLagrangian:
    def test_consistent_w_u(self):
        w = {"p": np.array([1.0, -2.0])}
        assert lagrangian_value(1.25, w, w, 0.0, 3.0) == 1.25

    def test_hand_arithmetic(self):
        assert lagrangian_value(0.0, [1.0, 1.0], [0.0, 1.0], 2.0, 2.0) == pytest.approx(3.0)

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            lagrangian_value(0.0, [1.0, 1.0], [1.0], 1.0, 1.0)

    def test_dual_term(self):
        value = lagrangian_value(0.0, [1.0], [0.0], 0.0, 0.0, "l1", z=[2.0])
        assert value == pytest.approx(2.0)

class TestRvsm:
    def test_degenerate_is_sgd(self):
        rng = np.random.default_rng(7)
        w = {"p": rng.normal(size=(3, 4))}
        grad = {"p": rng.normal(size=(3, 4))}
        state = rvsm_step(init_state("rvsm", w, beta=0.0, lam=0.0, eta=0.05), grad)
        np.testing.assert_array_equal(state.w["p"], w["p"] - 0.05 * grad["p"])
        np.testing.assert_array_equal(state.u["p"], state.w["p"])

    def test_consistent_u_gives_pure_gradient_step(self):
        w = {"p": np.array([0.0, 2.0, -3.0])}
        state = init_state("rvsm", w, beta=1.0, lam=0.0, eta=0.1)
        grad = {"p": np.array([1.0, 1.0, 1.0])}
        np.testing.assert_allclose(rvsm_step(state, grad).w["p"], w["p"] - 0.1 * grad["p"])

    def test_u_is_zero_or_copy(self):
        rng = np.random.default_rng(8)
        state = init_state("rvsm", {"p": rng.normal(size=40)}, beta=1.0, lam=0.1, eta=0.1)
        for _ in range(10):
            state = rvsm_step(state, {"p": rng.normal(size=40)})
            u, w = state.u["p"], state.w["p"]
            assert np.all((u == 0) | (u == w))
            np.testing.assert_array_equal(u, expected_u(state)["p"])

    def test_fixed_point_keeps_support(self):
        rng = np.random.default_rng(9)
        state = init_state("rvsm", {"p": rng.normal(size=10)}, beta=2.0, lam=0.3, eta=0.1)
        grad = {"p": -state.beta * (state.w["p"] - state.u["p"])}
        after = rvsm_step(state, grad)
        np.testing.assert_allclose(after.w["p"], state.w["p"], atol=1e-15)
        np.testing.assert_array_equal(after.u["p"] != 0, state.u["p"] != 0)
        np.testing.assert_allclose(after.u["p"], state.u["p"], atol=1e-15)

    def test_missing_gradient(self):
        state = init_state("rvsm", {"p": np.ones(2), "q": np.ones(2)})
        with pytest.raises(ContractError):
            rvsm_step(state, {"p": np.ones(2)})

    def test_wrong_algorithm(self):
        with pytest.raises(ContractError):
            rvsm_step(init_state("rgsm", {"p": np.ones(2)}), {"p": np.ones(2)})

    def test_history_appended_with_monitor_value(self):
        state = init_state("rvsm", {"p": np.ones(2)}, lam=0.1)
        state = rvsm_step(state, {"p": np.ones(2)}, f_val=0.5)
        assert state.history == [pytest.approx(0.5 + 0.1 * 2)]

class TestDescent:
    """The relaxed Lagrangian is non-increasing when eta is below the step bound."""

    @staticmethod
    def run(objective, w0: dict, beta: float, lam: float, eta: float, steps: int = 1000, path: Optional[list] = None) -> list[float]:
        state = init_state("rvsm", w0, beta=beta, lam=lam, eta=eta)
        for _ in range(steps):
            if path is not None:
                path.append(state.w)
            state = rvsm_step(state, objective.grad(state.w), objective.value(state.w))
        return state.history

    @pytest.mark.parametrize("seed", range(20))
    def test_quadratic(self, seed):
        objective = Quadratic(seed)
        beta = 1.0
        w0 = {"w": np.random.default_rng(100 + seed).normal(size=5)}
        history = self.run(objective, w0, beta, 0.05, 1.0 / (beta + objective.L))
        assert descent_violations(history, 1e-10) == []

    @pytest.mark.parametrize("seed", range(20))
    def test_logistic(self, seed):
        objective = Logistic(seed)
        beta = 0.5
        w0 = {"w": np.random.default_rng(200 + seed).normal(size=6)}
        history = self.run(objective, w0, beta, 1e-3, 1.0 / (beta + objective.L))
        assert descent_violations(history, 1e-8) == []

    @pytest.mark.parametrize("seed", range(20))
    def test_tanh_regression(self, seed):
        objective = TanhRegression(seed)
        rng = np.random.default_rng(300 + seed)
        w0 = {key: 0.5 * rng.normal(size=shape) for key, shape in objective.shapes.items()}
        keys = list(w0)

        def flat(w: dict) -> np.ndarray:
            return np.concatenate([w[k].reshape(-1) for k in keys])

        def oracle(vector: np.ndarray) -> np.ndarray:
            w1 = vector[:w0["w1"].size].reshape(w0["w1"].shape)
            return flat(objective.grad({"w1": w1, "w2": vector[w0["w1"].size:]}))

        def estimate(path: list) -> float:
            # every early iterate, then every 25th
            centers = [flat(w) for w in path[:50] + path[50::25]]
            return lipschitz_estimate(oracle, flat(w0), 5, 1e-3, np.random.default_rng(seed), along=centers, power_steps=10)

        beta = 1.0
        l_hat = estimate([])
        # re-run until L_hat covers the region the run at eta = 1/(beta + L_hat) visits
        for _ in range(10):
            path: list = []
            history = self.run(objective, w0, beta, 1e-3, 1.0 / (beta + l_hat), path=path)
            covered = estimate(path)
            if covered <= 1.01 * l_hat:
                break
            l_hat = covered
        else:
            pytest.fail(f"L_hat did not settle, last estimate {l_hat:.4g}")

        assert descent_violations(history, 1e-8) == []

    def test_single_linear_layer_chain(self):
        objective = Quadratic(42, m=6, n=4)
        beta = 1.5
        eta = 1.0 / (beta + objective.L)
        assert objective.L / 2 + beta / 2 - 1 / eta <= 0

        state = init_state("rvsm", {"w": np.ones(4)}, beta=beta, lam=0.2, eta=eta)
        for _ in range(200):
            before = lagrangian_value(objective.value(state.w), state.w, state.u, state.lam, beta)
            after = rvsm_step(state, objective.grad(state.w))
            delta = float(np.sum((after.w["w"] - state.w["w"]) ** 2))

            w_step = lagrangian_value(objective.value(after.w), after.w, state.u, state.lam, beta)
            assert w_step <= before + (objective.L / 2 + beta / 2 - 1 / eta) * delta + 1e-12

            u_step = lagrangian_value(objective.value(after.w), after.w, after.u, state.lam, beta)
            assert u_step <= w_step + 1e-12
            state = after

class TestRgsm:
    def test_zero_lams_match_rvsm(self):
        rng = np.random.default_rng(10)
        w = {"p": rng.normal(size=(3, 4))}
        grad = {"p": rng.normal(size=(3, 4))}
        groups = rows_of("p", 3, 4)

        rgsm = rgsm_step(init_state("rgsm", w, beta=1.0, eta=0.1, groups=groups), grad)
        rvsm = rvsm_step(init_state("rvsm", w, beta=1.0, lam=0.0, eta=0.1), grad)
        np.testing.assert_array_equal(rgsm.w["p"], rvsm.w["p"])
        np.testing.assert_array_equal(rgsm.u["p"], rgsm.w["p"])

    def test_single_group_is_prox_of_gradient_step(self):
        rng = np.random.default_rng(11)
        w = {"p": rng.normal(size=5)}
        grad = {"p": rng.normal(size=5)}
        groups = [label("p", 0, np.arange(5))]

        state = rgsm_step(init_state("rgsm", w, beta=0.0, lam1=0.3, eta=0.1, groups=groups), grad)
        expected = prox_group_lasso(GroupView(None, w["p"] - 0.1 * grad["p"]), 0.3).values
        np.testing.assert_array_equal(state.u["p"], expected)

    def test_group_lasso_term_in_gradient(self):
        w = {"p": np.array([3.0, 4.0, 0.0, 0.0])}
        groups = rows_of("p", 2, 2)
        state = init_state("rgsm", w, beta=0.0, lam2=0.5, eta=1.0, groups=groups)
        out = rgsm_step(state, {"p": np.zeros(4)})
        np.testing.assert_allclose(out.w["p"], [3.0 - 0.3, 4.0 - 0.4, 0.0, 0.0])

    def test_groups_scale_or_vanish(self):
        rng = np.random.default_rng(12)
        groups = rows_of("p", 6, 3)
        state = init_state("rgsm", {"p": rng.normal(size=(6, 3))}, beta=1.0, lam1=0.8, lam2=1e-3, eta=0.1, groups=groups)
        state = rgsm_step(state, {"p": rng.normal(size=(6, 3))})

        w, u = state.w["p"], state.u["p"]
        for r in range(6):
            if np.any(u[r]):
                ratio = u[r] / w[r]
                np.testing.assert_allclose(ratio, ratio[0])
                assert 0.0 <= ratio[0] < 1.0

    def test_gl0_prox_option(self):
        groups = rows_of("p", 2, 2)
        state = init_state("rgsm", {"p": np.array([[0.1, 0.1], [2.0, 0.0]])}, lam1=0.5, prox="gl0", groups=groups)
        np.testing.assert_array_equal(state.u["p"], [[0.0, 0.0], [2.0, 0.0]])

    def test_ungrouped_parameters_are_copied(self):
        state = init_state("rgsm", {"p": np.ones((2, 2)), "b": np.full(2, 1e-3)}, lam1=10.0, groups=rows_of("p", 2, 2))
        np.testing.assert_array_equal(state.u["b"], state.w["b"])
        assert not np.any(state.u["p"])

    def test_monitored_lagrangian(self):
        groups = rows_of("p", 2, 2)
        state = init_state("rgsm", {"p": np.array([[3.0, 4.0], [0.0, 0.0]])}, beta=2.0, lam1=0.5, lam2=0.1, groups=groups)
        u_norm = float(np.linalg.norm(state.u["p"][0]))
        gap = float(np.sum((state.w["p"] - state.u["p"]) ** 2))
        expected = 1.0 + 0.1 * 5.0 + 0.5 * 2.0 * u_norm + 0.5 * 2.0 * gap
        assert rgsm_lagrangian(state, 1.0) == pytest.approx(expected)

class TestAdmm:
    def test_zero_beta(self):
        with pytest.raises(ParameterError):
            init_state("admm", {"p": np.ones(2)}, beta=0.0)

    def test_zero_beta_on_existing_state(self):
        state = PrunerState("admm", {"p": np.ones(1)}, {"p": np.ones(1)}, {"p": np.zeros(1)}, beta=0.0)
        with pytest.raises(ParameterError):
            admm_step(state, {"p": np.ones(1)})

    def test_scalar_hand_iteration(self):
        # f(w) = (w - 3)^2 / 2, lam = 0
        beta, eta = 1.0, 0.5
        state = init_state("admm", {"p": np.array([0.0])}, beta=beta, lam=0.0, eta=eta)
        w, u, z = 0.0, 0.0, 0.0
        for _ in range(5):
            state = admm_step(state, {"p": state.w["p"] - 3.0})
            w = w - eta * ((w - 3.0) + z + beta * (w - u))
            u = w + z / beta
            z = z + beta * (w - u)
            assert state.w["p"][0] == pytest.approx(w)
            assert state.u["p"][0] == pytest.approx(u)
            assert state.z["p"][0] == pytest.approx(z)

    def test_closes_the_gap_on_convex_quadratic(self):
        rng = np.random.default_rng(13)
        A = np.eye(6) + 0.2 * rng.normal(size=(6, 6))
        b = rng.normal(size=6)
        L = float(np.linalg.eigvalsh(A.T @ A).max())
        beta = 1.0

        state = init_state("admm", {"p": rng.normal(size=6)}, beta=beta, lam=0.1, eta=1.0 / (L + beta))
        for _ in range(10_000):
            state = admm_step(state, {"p": A.T @ (A @ state.w["p"] - b)})
        assert np.linalg.norm(state.w["p"] - state.u["p"]) < 1e-4

    def test_expected_u_refuses_admm(self):
        with pytest.raises(ContractError):
            expected_u(init_state("admm", {"p": np.ones(2)}))

class TestDispatch:
    def test_step_dispatches(self):
        grad = {"p": np.ones(2)}
        for algorithm in ("none", "rvsm", "rgsm", "admm"):
            state = init_state(algorithm, {"p": np.zeros(2)}, eta=0.1)
            assert step(state, grad).algorithm == algorithm

    def test_sgd_step(self):
        state = sgd_step(init_state("none", {"p": np.ones(2)}, eta=0.5), {"p": np.ones(2)})
        np.testing.assert_array_equal(state.w["p"], [0.5, 0.5])

    def test_unknown_algorithm(self):
        with pytest.raises(ParameterError):
            init_state("sparse", {"p": np.ones(2)})  # type: ignore[arg-type]

    def test_invalid_hyperparameters(self):
        with pytest.raises(ParameterError):
            init_state("rvsm", {"p": np.ones(2)}, lam=-1.0)
        with pytest.raises(ParameterError):
            init_state("rvsm", {"p": np.ones(2)}, eta=0.0)

class TestLipschitzEstimate:
    def test_quadratic_bounds(self):
        rng = np.random.default_rng(14)
        A = rng.normal(size=(5, 5))
        b = rng.normal(size=5)
        H = A.T @ A
        top = float(np.linalg.eigvalsh(H).max())

        l_hat = lipschitz_estimate(lambda w: H @ w - A.T @ b, rng.normal(size=5), 100, 1.0, rng)
        assert 0.5 * top <= l_hat <= top + 1e-9

    def test_linear_function(self):
        c = np.array([1.0, -2.0, 0.5])
        assert lipschitz_estimate(lambda w: c, np.zeros(3), 10, 1.0) == 0.0

    def test_half_squared_norm(self):
        l_hat = lipschitz_estimate(lambda w: w, np.zeros(4), 20, 1.0)
        assert l_hat == pytest.approx(1.0, abs=1e-12)

    def test_degenerate_probes(self):
        with pytest.raises(EstimationError):
            lipschitz_estimate(lambda w: w, np.zeros(3), 5, 0.0)

    def test_power_iteration_finds_top_curvature(self):
        H = np.diag([1.0, 2.0, 50.0, 3.0, 0.5, 1.5])
        l_hat = lipschitz_estimate(lambda w: H @ w, np.zeros(6), 1, 1e-2, np.random.default_rng(15), power_steps=30)
        assert l_hat == pytest.approx(50.0, rel=1e-6)

    def test_centers_along_a_path(self):
        # gradient of sum(w^4) / 4; curvature 3 w^2 grows away from 0
        def oracle(w: np.ndarray) -> np.ndarray:
            return w ** 3

        at_origin = lipschitz_estimate(oracle, np.zeros(2), 5, 1e-3, np.random.default_rng(16), power_steps=5)
        path = [np.full(2, t) for t in np.linspace(0.0, 2.0, 11)]
        along = lipschitz_estimate(oracle, np.zeros(2), 5, 1e-3, np.random.default_rng(16), along=path, power_steps=5)
        assert at_origin < 1e-3
        assert along == pytest.approx(12.0, rel=1e-2)

    def test_center_shape_mismatch(self):
        with pytest.raises(DimensionError):
            lipschitz_estimate(lambda w: w, np.zeros(3), 1, 1.0, along=[np.zeros(2)])

    def test_negative_power_steps(self):
        with pytest.raises(ParameterError):
            lipschitz_estimate(lambda w: w, np.zeros(3), 1, 1.0, power_steps=-1)

    def test_needs_probes(self):
        with pytest.raises(ParameterError):
            lipschitz_estimate(lambda w: w, np.zeros(3), 0, 1.0)

class TestDescentViolations:
    def test_flags_rises_beyond_slack(self):
        assert descent_violations([3.0, 2.0, 2.0 + 1e-9, 2.5, 1.0], 1e-8) == [3]

class TestFinalizeEpoch:
    def test_huge_lam_kills_everything(self):
        model = build_mlp([3, 4, 2])
        state = init_state("rvsm", model.values(), beta=1.0, lam=1e6)
        finalized = finalize_epoch(state, model)
        assert sparsity(finalized) == 100.0

    def test_zero_lam_keeps_w(self):
        model = build_mlp([3, 4, 2])
        state = init_state("rvsm", model.values(), beta=1.0, lam=0.0)
        finalized = finalize_epoch(state, model)
        for pid, value in model.values().items():
            np.testing.assert_array_equal(finalized.values()[pid], value)

    def test_never_reduces_sparsity(self):
        rng = np.random.default_rng(15)
        model = build_mlp([3, 6, 2], seed=3)
        for _ in range(20):
            values = {pid: np.where(rng.uniform(size=v.shape) < 0.2, 0.0, rng.normal(size=v.shape)) for pid, v in model.values().items()}
            model.load_parameters(values)
            state = init_state("rvsm", values, beta=1.0, lam=float(rng.uniform(0.0, 0.5)))
            assert sparsity(finalize_epoch(state, model)) >= sparsity(model)

    def test_leaves_input_model_untouched(self):
        model = build_mlp([3, 2])
        before = {pid: v.copy() for pid, v in model.values().items()}
        finalize_epoch(init_state("rvsm", model.values(), lam=1e6), model)
        for pid, value in before.items():
            np.testing.assert_array_equal(model.values()[pid], value)
