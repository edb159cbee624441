import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from spectra_ca import tensor as T
from spectra_ca.attention_net import DenseNet
from spectra_ca.errors import ContractError, NumericalError, ParameterError
from spectra_ca.pde_solvers import (Ball, Box, MixedSolution, PdeProblem, alpha_optimal,
                                    build_pb_domain, evaluate_stencil, fd_gradient_vec,
                                    fd_laplacian, in_omega1, mixed_loss, pinn_loss, ritz_loss,
                                    sample_boundary, sample_interior, sampled_loss_in_alpha)
from spectra_ca.targets import poisson1d_exact, poisson1d_source


def field(fn):
    """Wrap a numpy function of (B, d) points as a constant scalar field."""
    return lambda x: T.Tensor(fn(np.atleast_2d(x)))


def dense(d_in, seed, prefix=""):
    """Small tanh net with random biases (zero biases make it odd, which hides bias gradients)."""
    net = DenseNet(d_in, width=8, depth=2, seed=seed, prefix=prefix)
    rng = np.random.default_rng(seed + 100)
    for name, p in net.parameters().items():
        if name.endswith("b") or name.endswith("b_out"):
            p.data[:] = rng.uniform(-0.5, 0.5, p.shape)
    return net


def zero(x):
    return np.zeros(np.atleast_2d(x).shape[0])


class Vanishing:
    """A dense net multiplied by (1 - x^2), so it is zero at x = +-1."""

    def __init__(self, seed):
        self.net = dense(1, seed, "low.")

    def parameters(self):
        return self.net.parameters()

    def scalar(self, x):
        x = np.atleast_2d(x)
        return T.mul(self.net.scalar(x), 1.0 - x[:, 0] ** 2)


def poisson_problem(nu=3.0, gamma=1.0, h=1e-4):
    return PdeProblem(Box(1), lambda x: poisson1d_source(x, nu),
                      lambda x: poisson1d_exact(x, nu), gamma=gamma, h=h)


class TestStencils:
    def test_quadratic_exact(self):
        x = np.linspace(-0.9, 0.9, 7).reshape(-1, 1)
        for h in (1e-1, 1e-2, 1e-3):
            lap = fd_laplacian(field(lambda p: p[:, 0] ** 2), x, h).data
            np.testing.assert_allclose(lap, 2.0, atol=1e-8)

    def test_constant(self):
        x = np.random.default_rng(0).uniform(-1, 1, (5, 3))
        assert np.abs(fd_laplacian(field(lambda p: np.full(len(p), 3.3)), x).data).max() < 1e-8
        assert np.abs(fd_gradient_vec(field(lambda p: np.full(len(p), 3.3)), x).data).max() < 1e-8

    def test_high_mode_laplacian(self):
        x = np.random.default_rng(1).uniform(-1, 1, (1000, 1))
        w = 20 * np.pi
        got = fd_laplacian(field(lambda p: np.sin(w * p[:, 0])), x, 1e-4).data
        exact = -w * w * np.sin(w * x[:, 0])
        assert np.linalg.norm(got - exact) / np.linalg.norm(exact) < 1e-3

    @settings(max_examples=40, deadline=None)
    @given(coef=st.lists(st.floats(-1, 1), min_size=10, max_size=10),
           h=st.sampled_from([1e-2, 5e-3, 2e-3, 1e-3]))
    def test_cubics_exact(self, coef, h):
        # full cubic in two variables; its Laplacian is affine
        c = coef

        def u(p):
            a, b = p[:, 0], p[:, 1]
            return (c[0] + c[1] * a + c[2] * b + c[3] * a * a + c[4] * a * b + c[5] * b * b
                    + c[6] * a ** 3 + c[7] * a * a * b + c[8] * a * b * b + c[9] * b ** 3)

        x = np.random.default_rng(2).uniform(-0.9, 0.9, (20, 2))
        a, b = x[:, 0], x[:, 1]
        exact = 2 * c[3] + 2 * c[5] + 6 * c[6] * a + 2 * c[7] * b + 2 * c[8] * a + 6 * c[9] * b
        assert np.abs(fd_laplacian(field(u), x, h).data - exact).max() <= 1e-8

    def test_linear_gradient(self):
        a = np.array([0.5, -2.0, 3.0])
        x = np.random.default_rng(3).uniform(-1, 1, (6, 3))
        np.testing.assert_allclose(fd_gradient_vec(field(lambda p: p @ a), x).data, np.tile(a, (6, 1)), atol=1e-10)

    def test_chirp_gradient(self):
        mu = 15.0
        x = np.random.default_rng(4).uniform(-1, 1, (50, 2))
        g = fd_gradient_vec(field(lambda p: np.sin(mu * p[:, 0] ** 2)), x, 1e-5).data
        exact = 2 * mu * x[:, 0] * np.cos(mu * x[:, 0] ** 2)
        assert np.linalg.norm(g[:, 0] - exact) / np.linalg.norm(exact) < 1e-5
        assert np.abs(g[:, 1]).max() < 1e-8

    def test_bad_step(self):
        with pytest.raises(ParameterError):
            evaluate_stencil(field(zero), np.zeros((1, 1)), 0.0)

    def test_stencil_is_differentiable(self):
        net = dense(1, 1)
        x = np.linspace(-0.8, 0.8, 9).reshape(-1, 1)
        loss = lambda: T.mean(T.square(fd_laplacian(net.scalar, x, 1e-2)))
        # the output bias cancels inside the stencil, so its relative error is undefined
        params = {k: v for k, v in net.parameters().items() if k != "b_out"}
        assert T.fd_gradient_check(loss, params) < 1e-6
        with T.Tape() as tape:
            g = tape.backward(loss())
        assert abs(g["b_out"][0]) < 1e-6 * np.linalg.norm(g["W_out"])


class TestPinnLoss:
    def test_exact_solution_low_nu(self):
        prob = poisson_problem(nu=10.0)
        xr = np.random.default_rng(0).uniform(-1, 1, (500, 1))
        u = field(lambda p: poisson1d_exact(p, 10.0))
        assert pinn_loss(prob, u, xr, Box(1).sample_boundary(1, None)).item() < 1e-5

    def test_exact_solution_nu30_relative(self):
        # the absolute floor here is set by FD truncation on a source of size ~1e3
        prob = poisson_problem(nu=30.0)
        xr = np.random.default_rng(0).uniform(-1, 1, (500, 1))
        u = field(lambda p: poisson1d_exact(p, 30.0))
        loss = pinn_loss(prob, u, xr, np.array([[-1.0], [1.0]])).item()
        assert loss / np.mean(poisson1d_source(xr, 30.0) ** 2) < 1e-9

    def test_trivial_problem(self):
        prob = PdeProblem(Box(2), zero, zero)
        xr = np.random.default_rng(1).uniform(-1, 1, (30, 2))
        assert pinn_loss(prob, field(zero), xr, Box(2).sample_boundary(4, np.random.default_rng(2))).item() == 0.0

    def test_gamma_zero_drops_boundary(self):
        xr = np.random.default_rng(2).uniform(-1, 1, (20, 1))
        u = field(lambda p: np.cos(p[:, 0]))
        a = pinn_loss(poisson_problem(gamma=0.0), u, xr, np.array([[-1.0], [1.0]])).item()
        b = pinn_loss(poisson_problem(gamma=0.0), u, xr, np.array([[-1.0], [1.0]]) * 0.3).item()
        residual = np.mean((np.cos(xr[:, 0]) - poisson1d_source(xr, 3.0)) ** 2)
        assert a == b and a == pytest.approx(residual, rel=1e-6)

    def test_permutation_invariant(self):
        net = DenseNet(2, width=8, depth=2, seed=3)
        prob = PdeProblem(Box(2), lambda x: np.sin(x[:, 0]), zero)
        rng = np.random.default_rng(4)
        xr, xb = rng.uniform(-1, 1, (40, 2)), Box(2).sample_boundary(5, rng)
        base = pinn_loss(prob, net.scalar, xr, xb).item()
        perm = pinn_loss(prob, net.scalar, xr[rng.permutation(40)], xb[rng.permutation(20)]).item()
        assert perm == pytest.approx(base, rel=1e-13)


class TestRitz:
    def test_sine_energy(self):
        prob = PdeProblem(Box(1), lambda x: np.pi ** 2 * np.sin(np.pi * x[:, 0]), zero, gamma=0.0)
        xr = np.random.default_rng(5).uniform(-1, 1, (200000, 1))
        value = ritz_loss(prob, field(lambda p: np.sin(np.pi * p[:, 0])), xr, None).item()
        # integrand 0.5 pi^2 cos^2 - pi^2 sin^2, spread about 5, so MC sd ~ 2 * 5 / sqrt(N)
        assert abs(value + np.pi ** 2 / 2) < 5 * 2 * 5 / math.sqrt(200000)

    def test_zero_field(self):
        prob = PdeProblem(Ball(3), zero, zero, kappa=lambda x: np.ones(len(x)))
        rng = np.random.default_rng(6)
        assert ritz_loss(prob, field(zero), Ball(3).sample_interior(50, rng), Ball(3).sample_boundary(10, rng)).item() == 0.0

    def test_penalty_linear(self):
        rng = np.random.default_rng(7)
        xr, xb = Box(2).sample_interior(30, rng), Box(2).sample_boundary(6, rng)
        u = field(lambda p: np.exp(p[:, 0]) * p[:, 1])
        losses = [ritz_loss(PdeProblem(Box(2), zero, zero, gamma=g), u, xr, xb).item() for g in (0.0, 2.0, 4.0)]
        boundary_mean = np.mean((np.exp(xb[:, 0]) * xb[:, 1]) ** 2)
        assert losses[2] - losses[1] == pytest.approx(2.0 * boundary_mean * 8.0, rel=1e-12)
        assert losses[1] - losses[0] == pytest.approx(losses[2] - losses[1], rel=1e-12)


def sine_problem(gamma=1.0):
    return PdeProblem(Box(1), lambda x: np.pi ** 2 * np.sin(np.pi * x[:, 0]),
                      lambda x: np.sin(np.pi * x[:, 0]), gamma=gamma)


def scan_argmin(loss, low=-10.0, high=10.0):
    """Brute-force minimiser on a 1e-6 grid: coarse pass then a fine pass around the coarse best."""
    coarse = np.arange(low, high + 5e-4, 1e-3)
    best = coarse[np.argmin(loss(coarse))]
    fine = best + np.arange(-2000, 2001) * 1e-6
    return fine[np.argmin(loss(fine))]


class TestOptimalAlpha:
    def test_exact_cancellation(self):
        # residual of u_h is -2.5 N[u_l]; a coarse stencil keeps rounding small
        prob = PdeProblem(Box(1), zero, zero, gamma=0.0, h=1e-2)
        xr = np.random.default_rng(8).uniform(-0.9, 0.9, (25, 1))
        u_l = field(lambda p: np.sin(2 * p[:, 0]) + p[:, 0] ** 3)
        u_h = field(lambda p: -2.5 * (np.sin(2 * p[:, 0]) + p[:, 0] ** 3))
        assert alpha_optimal(prob, u_h, u_l, xr, np.array([[1.0]])) == pytest.approx(2.5, rel=1e-9)

    def test_orthogonal(self):
        # N[u_h] = 1 (u_h = -x^2/2) is orthogonal to the odd N[u_l] on a symmetric sample
        prob = PdeProblem(Box(1), zero, zero, gamma=0.0)
        x = np.linspace(-0.9, 0.9, 19).reshape(-1, 1)
        u_h = field(lambda p: -0.5 * p[:, 0] ** 2)
        u_l = field(lambda p: p[:, 0] ** 3)
        assert abs(alpha_optimal(prob, u_h, u_l, x, np.array([[1.0]]))) < 1e-8

    def test_degenerate(self):
        prob = PdeProblem(Box(1), zero, zero)
        with pytest.raises(NumericalError):
            alpha_optimal(prob, field(zero), field(zero), np.zeros((3, 1)), np.array([[1.0]]))

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_minimises_modified_loss(self, seed):
        rng = np.random.default_rng(seed)
        prob = sine_problem()
        u_h = dense(1, seed + 10, "high.")
        u_l = Vanishing(seed)
        xr, xb = rng.uniform(-1, 1, (64, 1)), np.array([[-1.0], [1.0]])
        alpha = alpha_optimal(prob, u_h.scalar, u_l.scalar, xr, xb)
        assert -10 < alpha < 10
        loss_hat = sampled_loss_in_alpha(prob, u_h.scalar, u_l.scalar, xr, xb, alpha_free_boundary=True)
        assert abs(scan_argmin(loss_hat) - alpha) < 1e-6

        mixed = MixedSolution(u_h, u_l, "learnable", alpha)
        with T.Tape() as tape:
            loss = mixed_loss(prob, mixed, xr, xb)
        assert abs(tape.backward(loss)["alpha"][0]) < 1e-8

    @pytest.mark.parametrize("seed", [3, 4])
    def test_minimises_loss_with_alpha_in_boundary(self, seed):
        rng = np.random.default_rng(seed)
        prob = sine_problem(gamma=5.0)
        u_h = dense(1, seed, "high.")
        u_l = dense(1, seed + 1, "low.")
        xr, xb = rng.uniform(-1, 1, (64, 1)), np.array([[-1.0], [1.0]])
        alpha = alpha_optimal(prob, u_h.scalar, u_l.scalar, xr, xb)
        loss = sampled_loss_in_alpha(prob, u_h.scalar, u_l.scalar, xr, xb)
        assert abs(scan_argmin(loss) - alpha) < 1e-6


class TestMixture:
    def setup_method(self):
        # a coarse stencil keeps the finite-difference oracle well above rounding noise
        self.prob = poisson_problem(gamma=2.0, h=1e-2)
        self.u_h = dense(1, 1, "high.")
        self.u_l = dense(1, 2, "low.")
        rng = np.random.default_rng(9)
        self.xr, self.xb = rng.uniform(-1, 1, (32, 1)), np.array([[-1.0], [1.0]])

    def test_fixed_zero_is_single_network(self):
        mixed = MixedSolution.fixed(self.u_h, self.u_l, 0.0)
        a = mixed_loss(self.prob, mixed, self.xr, self.xb).item()
        b = pinn_loss(self.prob, self.u_h.scalar, self.xr, self.xb).item()
        assert a == pytest.approx(b, rel=1e-14)
        assert set(mixed.parameters()) == set(self.u_h.parameters())

    def test_fixed_one_is_plain_sum(self):
        mixed = MixedSolution.fixed(self.u_h, self.u_l, 1.0)
        x = np.linspace(-1, 1, 11).reshape(-1, 1)
        np.testing.assert_allclose(mixed.predict(x), self.u_h.scalar(x).data + self.u_l.scalar(x).data, atol=1e-15)
        prob = poisson_problem(gamma=0.0, h=1e-2)
        total = lambda p: T.add(self.u_h.scalar(p), self.u_l.scalar(p))
        assert mixed_loss(prob, mixed, self.xr, self.xb).item() == pytest.approx(
            pinn_loss(prob, total, self.xr, self.xb).item(), rel=1e-12)

    def test_fixed_alpha_never_changes(self):
        mixed = MixedSolution.fixed(self.u_h, self.u_l, 0.7)
        with T.Tape() as tape:
            g = tape.backward(mixed_loss(self.prob, mixed, self.xr, self.xb))
        assert mixed.alpha_value == 0.7 and "alpha" not in g

    def test_learnable_gradient(self):
        mixed = MixedSolution(self.u_h, self.u_l, "learnable", 0.4)
        loss = lambda: mixed_loss(self.prob, mixed, self.xr, self.xb)
        assert T.fd_gradient_check(loss, {"alpha": mixed.alpha}) < 1e-6
        assert T.fd_gradient_check(loss, mixed.parameters()) < 1e-6

    def test_optimal_refreshes_and_freezes(self):
        mixed = MixedSolution(self.u_h, self.u_l, "optimal")
        with T.Tape() as tape:
            g = tape.backward(mixed_loss(self.prob, mixed, self.xr, self.xb))
        expected = alpha_optimal(self.prob, self.u_h.scalar, self.u_l.scalar, self.xr, self.xb)
        assert mixed.alpha_value == expected and "alpha" not in g
        uh, aul = mixed.components(self.xr)
        assert np.array_equal(mixed(self.xr).data, mixed.predict(self.xr))
        np.testing.assert_allclose(uh + aul, mixed.predict(self.xr), atol=0)

    def test_optimal_uses_alpha_free_boundary(self):
        mixed = MixedSolution(self.u_h, self.u_l, "optimal")
        value = mixed_loss(self.prob, mixed, self.xr, self.xb).item()
        hat = sampled_loss_in_alpha(self.prob, self.u_h.scalar, self.u_l.scalar, self.xr, self.xb, True)
        assert value == pytest.approx(float(hat(mixed.alpha_value)), rel=1e-12)

    def test_ritz_rejects_optimal(self):
        with pytest.raises(ContractError):
            mixed_loss(self.prob, MixedSolution(self.u_h, self.u_l), self.xr, self.xb, "ritz")

    def test_unknown_strategy(self):
        with pytest.raises(ContractError):
            MixedSolution(self.u_h, self.u_l, "annealed")


class TestSampling:
    def test_box(self):
        rng = np.random.default_rng(0)
        pts = sample_interior(Box(2), 500, rng)
        assert pts.shape == (500, 2) and np.abs(pts).max() <= 1.0
        edge = sample_boundary(Box(2), 100, rng)
        assert edge.shape == (400, 2) and np.all(np.isclose(np.abs(edge).max(axis=1), 1.0))

    def test_interval_endpoints(self):
        assert np.array_equal(sample_boundary(Box(1), 7, None), [[-1.0], [1.0]])

    def test_sphere(self):
        pts = sample_boundary(Ball(3), 1000, np.random.default_rng(1))
        assert np.abs(np.linalg.norm(pts, axis=1) - 1.0).max() < 1e-12

    def test_ball_acceptance(self):
        stats = {}
        pts = Ball(3).sample_interior(100000, np.random.default_rng(2), stats=stats)
        assert np.all(np.sum(pts * pts, axis=1) <= 1.0)
        assert abs(stats["accepted"] / stats["drawn"] - math.pi / 6) < 0.02

    def test_rejects_empty(self):
        with pytest.raises(ParameterError):
            sample_interior(Box(2), 0, np.random.default_rng(0))


class TestPbDomain:
    def setup_method(self):
        self.dom = build_pb_domain(3)

    def test_geometry(self):
        assert len(self.dom.centers) == 20
        np.testing.assert_allclose(np.linalg.norm(self.dom.centers, axis=1), 0.5, atol=1e-15)
        assert np.all((self.dom.radii >= 0.1) & (self.dom.radii <= 0.2))

    def test_membership(self):
        assert in_omega1(self.dom, np.zeros(3))[0]
        assert np.all(in_omega1(self.dom, self.dom.centers))

    def test_far_point_outside(self):
        rng = np.random.default_rng(0)
        d = rng.standard_normal((2000, 3))
        x = 0.99 * d / np.linalg.norm(d, axis=1, keepdims=True)
        gap = np.linalg.norm(x[:, None, :] - self.dom.centers[None], axis=2) - self.dom.radii
        far = x[gap.min(axis=1) > 0.05]
        assert len(far) > 0 and not in_omega1(self.dom, far).any()
        assert np.all(self.dom.kappa(far) == 5.0)

    def test_deterministic(self):
        other = build_pb_domain(3)
        assert self.dom.centers.tobytes() == other.centers.tobytes()
        assert not np.array_equal(build_pb_domain(4).centers, self.dom.centers)
