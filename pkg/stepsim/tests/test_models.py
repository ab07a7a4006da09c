import numpy as np
import pytest

from stepsim.core.errors import DomainError, ParameterError, SpecificationError
from stepsim.engine import prox_calculus as pc
from stepsim.engine.models import (
    AffineSpp,
    IndefiniteQuadraticProxSgd,
    Kernel,
    QueueChainSpec,
    ShiftedAbsSpp,
    ShiftedIdentitySpp,
    discretize_initial,
    drift_estimate,
    grid_round,
    kernel_prox_sgd,
    kernel_queue,
    kernel_spp,
    known_targets,
    probe_points,
    run_chain,
)
from stepsim.engine.setvalued import QueueMeanField


def assert_within_standard_errors(estimate, stderr, exact, sigmas=4.0):
    assert np.all(np.abs(estimate - exact) <= sigmas * stderr + 1e-10), (estimate, exact, stderr)


def test_prox_sgd_exact_drift_matches_monte_carlo(prox_kernel):
    """Test the quadrature drift against a sample mean"""
    for x in ([0.5, 0.2], [2.0, -1.0], [0.0, 0.0]):
        exact = prox_kernel.exact_drift(np.array(x), 0.1)
        estimate, stderr = drift_estimate(prox_kernel, x, 0.1, 40000, seed=3)
        assert_within_standard_errors(estimate, stderr, exact)


def test_noiseless_prox_sgd_drift(canonical_problem):
    """Test g_gamma(x) for sigma = 0"""
    kernel = kernel_prox_sgd(canonical_problem)
    np.testing.assert_allclose(kernel.drift([0.0, 0.0], 0.5), [1.5, 0.0])
    estimate, stderr = drift_estimate(kernel, [0.0, 0.0], 0.5, 10, seed=1)
    np.testing.assert_allclose(estimate, [1.5, 0.0])
    assert np.all(stderr == 0.0)


def test_prox_sgd_problem_facts(canonical_problem, noisy_problem):
    """Test minimizer, minimum value and gradient variance"""
    np.testing.assert_allclose(canonical_problem.minimizer(), [1.5, 0.0])
    # 0.5*(0.25 + 0.09) + 0.5*1.5
    assert canonical_problem.minimum_value() == pytest.approx(0.92)
    assert noisy_problem.gradient_variance(np.zeros(2)) == 2.0
    assert noisy_problem.minimum_value() == pytest.approx(0.92 + 1.0)


def test_indefinite_problem():
    """Test the stationary point of a non-convex-sample problem"""
    r = pc.ConvexFunctionSpec.weighted_l1(0.1)
    problem = IndefiniteQuadraticProxSgd(
        Q=np.diag([2.0, 1.0]), S=[[0.0, 1.0], [1.0, 0.0]], b=[1.0, -1.0], tau=0.5, sigma=0.1,
        regularizer=r,
    )
    point = problem.stationary_points()[0]
    np.testing.assert_allclose(point, [0.45, -0.9], atol=1e-10)
    assert problem.gradient_variance([1.0, 0.0]) == pytest.approx(0.25 + 2 * 0.01)
    with pytest.raises(ParameterError):
        IndefiniteQuadraticProxSgd(
            Q=-np.eye(2), S=np.eye(2), b=[0.0, 0.0], tau=1.0, sigma=0.0, regularizer=r
        )


def test_queue_chain_stays_on_grid(queue_kernel):
    """Test nonnegativity and grid membership along a queue trajectory"""
    traj = run_chain(queue_kernel, [0.5, 0.3], 0.1, 2000, seed=4)
    counts = traj.states / 0.1
    assert np.all(traj.states >= 0.0)
    np.testing.assert_allclose(counts, np.rint(counts), atol=1e-9)
    steps = np.abs(np.diff(traj.states, axis=0)) / 0.1
    assert np.all(steps <= 1.0 + 1e-9)


def test_queue_grid_checks(queue_kernel):
    """Test off-grid and negative states"""
    with pytest.raises(DomainError):
        queue_kernel.sample_step([0.05, 0.0], 0.1, np.random.default_rng(0))
    with pytest.raises(DomainError):
        queue_kernel.sample_step([-0.1, 0.0], 0.1, np.random.default_rng(0))
    np.testing.assert_allclose(grid_round([0.26, 0.04], 0.1), [0.3, 0.0])
    np.testing.assert_allclose(discretize_initial([[0.26, 0.04]], 0.1), [[0.3, 0.0]])


def test_queue_drift_examples(queue_kernel):
    """Test g_gamma(x) = lambda - eta_k e_k for the first busy queue k"""
    np.testing.assert_allclose(queue_kernel.drift([0.0, 0.0], 0.1), [0.1, 0.2])
    np.testing.assert_allclose(queue_kernel.drift([0.0, 0.2], 0.1), [0.1, -0.6])
    estimate, stderr = drift_estimate(queue_kernel, [0.0, 0.2], 0.1, 40000, seed=5)
    assert_within_standard_errors(estimate, stderr, [0.1, -0.6])


def test_poisson_arrivals(canonical_field):
    """Test batch arrivals keep the same drift"""
    kernel = kernel_queue(QueueChainSpec(field=canonical_field, arrival_law="poisson"))
    estimate, stderr = drift_estimate(kernel, [0.3, 0.0], 0.1, 40000, seed=6)
    assert_within_standard_errors(estimate, stderr, [-0.4, 0.2])
    np.testing.assert_allclose(kernel.spec.arrival_variances(), [0.1, 0.2])
    assert kernel.metadata()["arrival_law"] == "poisson"


def test_bernoulli_needs_unit_rates():
    """Test lambda <= 1 for Bernoulli arrivals"""
    field = QueueMeanField(lambda_=[1.5], eta=[1.0])
    with pytest.raises(ParameterError):
        QueueChainSpec(field=field)
    QueueChainSpec(field=field, arrival_law="poisson")


def test_spp_families():
    """Test the zero sets and drifts of the proximal point families"""
    ident = ShiftedIdentitySpp([1.0, -1.0], sigma=0.5)
    kernel = kernel_spp(ident)
    np.testing.assert_allclose(known_targets(kernel), [[1.0, -1.0]])
    np.testing.assert_allclose(kernel.drift([0.0, 0.0], 1.0), [0.5, -0.5])
    estimate, stderr = drift_estimate(kernel, [0.0, 0.0], 1.0, 40000, seed=7)
    assert_within_standard_errors(estimate, stderr, [0.5, -0.5])

    absolute = ShiftedAbsSpp([[0.0], [1.0], [2.0]])
    np.testing.assert_allclose(absolute.zeros(), [[1.0]])
    np.testing.assert_allclose(absolute.exact_drift(np.array([3.0]), 0.5), [-1.0])
    np.testing.assert_allclose(absolute.exact_drift(np.array([1.0]), 0.5), [0.0])
    assert ShiftedAbsSpp([[0.0], [1.0]]).zeros() is None

    affine = AffineSpp([[2.0, 0.0], [0.0, 1.0]], offset=[-2.0, 1.0])
    np.testing.assert_allclose(affine.zeros(), [[1.0, -1.0]])
    np.testing.assert_allclose(kernel_spp(affine).drift([1.0, -1.0], 0.3), [0.0, 0.0], atol=1e-12)


def test_run_chain_determinism(prox_kernel):
    """Test reproducibility from (seed, key) and independence across keys"""
    a = run_chain(prox_kernel, [0.0, 0.0], 0.05, 500, seed=9, key=(1,))
    b = run_chain(prox_kernel, [0.0, 0.0], 0.05, 500, seed=9, key=(1,))
    c = run_chain(prox_kernel, [0.0, 0.0], 0.05, 500, seed=9, key=(2,))
    assert np.array_equal(a.states, b.states)
    assert not np.array_equal(a.states, c.states)
    assert len(a) == 501


def test_run_chain_thinning(prox_kernel):
    """Test that thinning keeps every thin-th row of the full chain"""
    full = run_chain(prox_kernel, [1.0, 1.0], 0.1, 10, seed=2)
    thinned = run_chain(prox_kernel, [1.0, 1.0], 0.1, 10, seed=2, thin=3)
    assert np.array_equal(thinned.states, full.states[::3])
    assert thinned.thin == 3
    zero = run_chain(prox_kernel, [1.0, 1.0], 0.1, 0, seed=2)
    assert np.array_equal(zero.states, [[1.0, 1.0]])
    with pytest.raises(ParameterError):
        run_chain(prox_kernel, [1.0, 1.0], 0.1, -1, seed=2)


def test_drift_estimate_needs_samples(prox_kernel):
    with pytest.raises(ParameterError):
        drift_estimate(prox_kernel, [0.0, 0.0], 0.1, 1)


def test_known_targets_and_probes(queue_kernel, prox_kernel):
    """Test declared targets and reproducible probes"""
    np.testing.assert_allclose(known_targets(queue_kernel), [[0.0, 0.0]])
    np.testing.assert_allclose(known_targets(prox_kernel), [[1.5, 0.0]])

    class Bare(Kernel):
        def draw_noise(self, rng, count):
            return np.zeros((count, 1))

        def apply(self, x, gamma, noise):
            return x

    with pytest.raises(SpecificationError):
        known_targets(Bare(1))

    probes = probe_points([0.0, -1.0], [1.0, 1.0], 20, seed=3)
    assert probes.shape == (20, 2)
    assert np.all((probes[:, 0] >= 0.0) & (probes[:, 0] <= 1.0))
    assert np.array_equal(probes, probe_points([0.0, -1.0], [1.0, 1.0], 20, seed=3))


def test_prox_sgd_increment_bound(prox_kernel, noisy_problem, rng):
    """Test |h_gamma(xi, x)| <= |least-norm subgradient of r at x| + 2 |grad l(xi, x)|"""
    stream = np.random.default_rng(17)
    for _ in range(2000):
        x = rng.uniform(-3.0, 3.0, size=2)
        x[rng.random(2) < 0.2] = 0.0
        gamma = float(rng.uniform(0.001, 0.9))
        noise = prox_kernel.draw_noise(stream, 1)[0]
        h = prox_kernel.increment_field(x, gamma, noise)
        bound = np.linalg.norm(pc.least_norm_subgradient(noisy_problem.regularizer, x)) + 2 * (
            np.linalg.norm(noisy_problem.stochastic_gradient(noise, x))
        )
        assert np.linalg.norm(h) <= bound + 1e-10


def test_queue_grid_check_at_large_counts(queue_kernel):
    """Test that off-grid states are rejected deep into a long run"""
    gamma = 0.01
    on_grid = queue_kernel.check_state([gamma * 1_500_000, gamma * 3], gamma)
    np.testing.assert_allclose(on_grid, [15000.0, 0.03])
    with pytest.raises(DomainError):
        queue_kernel.check_state([gamma * 1_500_000 + 0.001 * gamma, 0.0], gamma)
    with pytest.raises(DomainError):
        queue_kernel.check_state([gamma * 1_500_000 + 0.5 * gamma, 0.0], gamma)


def test_queue_increment_bound(canonical_field, rng):
    """Test |x_next - x|_inf <= gamma (max arrivals + 1), hence <= 2 gamma for Bernoulli"""
    stream = np.random.default_rng(23)
    for law in ("bernoulli", "poisson"):
        kernel = kernel_queue(QueueChainSpec(field=canonical_field, arrival_law=law))
        for _ in range(200):
            gamma = float(rng.choice([0.2, 0.05, 0.01]))
            x = gamma * rng.integers(0, 4, size=2).astype(float)
            noise = kernel.draw_noise(stream, 50)
            steps = np.abs(kernel.apply_batch(x, gamma, noise) - x).max(axis=1)
            arrivals = noise[:, :2].max(axis=1)
            assert np.all(steps <= gamma * (arrivals + 1.0) + 1e-12)
            if law == "bernoulli":
                assert np.all(steps <= 2.0 * gamma + 1e-12)


def test_spp_resolvent_is_dissipative(rng):
    """Test |J(x) - x*| <= |x - x*| at the zero x* of each deterministic resolvent map"""
    affine = AffineSpp([[1.0, 2.0], [-2.0, 1.0]], offset=[1.0, -3.0])
    identity = ShiftedIdentitySpp([1.0, -1.0], sigma=0.0)
    absolute = ShiftedAbsSpp([[0.0, 1.0], [2.0, -1.0]])
    for _ in range(200):
        x = 5.0 * rng.normal(size=2)
        gamma = float(rng.uniform(0.01, 2.0))

        zero = affine.zeros()[0]
        step = kernel_spp(affine).apply(x, gamma, np.zeros(2))
        assert np.linalg.norm(step - zero) < np.linalg.norm(x - zero)

        step = kernel_spp(identity).apply(x, gamma, identity.mean)
        assert np.linalg.norm(step - identity.mean) < np.linalg.norm(x - identity.mean)

        for s in absolute.support:
            step = kernel_spp(absolute).apply(x, gamma, s)
            assert np.linalg.norm(step - s) <= np.linalg.norm(x - s) + 1e-12


def test_unstable_queue_declares_no_target():
    """Test that a queue with load >= 1 has no long-run target set"""
    for lam, eta in (([0.5, 0.5], [0.5, 0.5]), ([0.4, 0.3], [0.5, 0.8])):
        kernel = kernel_queue(QueueChainSpec(field=QueueMeanField(lambda_=lam, eta=eta)))
        assert known_targets(kernel) is None
