import numpy as np
import pytest

from stepsim.core.errors import DimensionError, ParameterError, RangeError
from stepsim.core.paths import (
    OccupationMeasure,
    StepSize,
    Trajectory,
    occupation_measure,
    occupation_window,
)
from stepsim.engine.di_solver import solve_queue_exact
from stepsim.engine.diagnostics import (
    ConvergenceSweep,
    StationarityResidual,
    TargetSet,
    chain_length,
    default_burnin,
    ergodic_distance,
    longrun_fraction,
    narrow_convergence_sweep,
    stationarity_residual,
    wasserstein_1d,
)
from stepsim.engine.models import run_chain


def scalar_trajectory(values, gamma=0.1):
    return Trajectory(gamma=StepSize.coerce(gamma), states=[[v] for v in values], seed=0)


def test_target_set_distances():
    """Test distances to points, finite sets, hulls and residual targets"""
    assert TargetSet.point([0.0, 0.0]).distance([3.0, 4.0]) == pytest.approx(5.0)
    finite = TargetSet.finite_set([[0.0, 0.0], [10.0, 0.0]])
    np.testing.assert_allclose(finite.distances([[9.0, 0.0], [1.0, 0.0]]), [1.0, 1.0])
    hull = TargetSet.convex_hull([[0.0, 0.0], [2.0, 0.0]])
    assert hull.distance([1.0, 1.0]) == pytest.approx(1.0)
    assert hull.distance([1.0, 0.0]) == pytest.approx(0.0, abs=1e-12)
    residual = TargetSet.from_residual(lambda x: abs(x[0] - 1.0))
    assert residual.distance([3.0]) == 2.0


def test_target_set_validation():
    """Test malformed targets"""
    with pytest.raises(ParameterError):
        TargetSet(kind="point", points=[[0.0], [1.0]])
    with pytest.raises(ParameterError):
        TargetSet(kind="hull")
    with pytest.raises(ParameterError):
        TargetSet(kind="finite_set", points=np.zeros((0, 2)))
    with pytest.raises(DimensionError):
        TargetSet.point([0.0, 0.0]).distance([1.0])


def test_chain_length():
    """Test ceil(T / gamma) with representation error"""
    assert chain_length(1.0, 0.1) == 10
    assert chain_length(1.0, 0.3) == 4
    assert chain_length(8.0, 0.05) == 160


def test_sweep_is_deterministic(queue_kernel, canonical_field):
    """Test that a sweep reproduces from its seed"""
    exact = solve_queue_exact(canonical_field, [1.0, 1.0], 4.0)
    args = (queue_kernel, exact, [1.0, 1.0], [0.1, 0.05], 4.0, 3, 0.5)
    first = narrow_convergence_sweep(*args, seed=5)
    second = narrow_convergence_sweep(*args, seed=5)
    assert first == second
    assert len(first.records) == 6
    assert len(first.distances(0.05)) == 3
    summary = first.summary()
    assert [s.gamma for s in summary] == [0.1, 0.05]
    assert all(0.0 <= s.exceedance <= 1.0 and s.median <= s.q90 for s in summary)


def test_sweep_distances_shrink(queue_kernel, canonical_field):
    """Test that small steps track the fluid path closely"""
    exact = solve_queue_exact(canonical_field, [1.0, 1.0], 4.0)
    sweep = narrow_convergence_sweep(queue_kernel, exact, [1.0, 1.0], [0.1, 0.005], 4.0, 4, 0.5)
    assert np.median(sweep.distances(0.005)) < np.median(sweep.distances(0.1))
    assert np.all(sweep.distances(0.005) < 0.5)


def test_sweep_validation(queue_kernel, canonical_field):
    """Test grid ordering, horizons and counts"""
    exact = solve_queue_exact(canonical_field, [1.0, 1.0], 2.0)
    with pytest.raises(ParameterError):
        narrow_convergence_sweep(queue_kernel, exact, [1.0, 1.0], [0.05, 0.1], 2.0, 2, 0.5)
    with pytest.raises(ParameterError):
        narrow_convergence_sweep(queue_kernel, exact, [1.0, 1.0], [0.1], 2.0, 0, 0.5)
    with pytest.raises(RangeError):
        narrow_convergence_sweep(queue_kernel, exact, [1.0, 1.0], [0.1], 3.0, 2, 0.5)
    with pytest.raises(ParameterError):
        ConvergenceSweep(gammas=[0.1, 0.1], eps=0.5, records=[])


def test_longrun_fraction_and_ergodic_distance():
    """Test burn-in trimming on a hand-made trajectory"""
    traj = scalar_trajectory([9.0, 0.1, 0.2, 5.0])
    target = TargetSet.point([0.0])
    assert longrun_fraction([traj], target, 0.5, burnin=1) == pytest.approx(2.0 / 3.0)
    assert ergodic_distance([traj], target, burnin=1) == pytest.approx(5.3 / 3.0)
    assert longrun_fraction([traj, scalar_trajectory([0.0] * 4)], target, 0.5, burnin=1) == (
        pytest.approx(5.0 / 6.0)
    )
    with pytest.raises(ParameterError):
        longrun_fraction([], target, 0.5)
    with pytest.raises(ParameterError):
        ergodic_distance([traj], target, burnin=4)
    with pytest.raises(ParameterError):
        longrun_fraction([traj], target, 0.0)


def test_default_burnin():
    assert default_burnin(scalar_trajectory(range(100))) == 10
    assert default_burnin(scalar_trajectory([1.0])) == 0


def test_stable_queue_concentrates_near_origin(queue_kernel):
    """Test long-run occupation of a neighbourhood of the origin"""
    trajs = [run_chain(queue_kernel, [0.0, 0.0], 0.02, 20000, seed=1, key=(m,)) for m in range(2)]
    target = TargetSet.point([0.0, 0.0])
    assert longrun_fraction(trajs, target, 0.5) >= 0.95
    assert ergodic_distance(trajs, target) <= 0.1


def test_stationarity_residual_examples(canonical_problem):
    """Test the prox-gradient residual on and off the stationary set"""
    assert stationarity_residual(canonical_problem, [0.0, 0.0], 1.0) == pytest.approx(1.5)
    assert stationarity_residual(canonical_problem, [1.5, 0.0], 1.0) == 0.0
    assert stationarity_residual(canonical_problem, [1.5, 0.0], 0.1) == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(ParameterError):
        stationarity_residual(canonical_problem, [0.0, 0.0], 0.0)
    target = TargetSet.from_residual(StationarityResidual(canonical_problem))
    assert target.distance([0.0, 0.0]) == pytest.approx(1.5)


def test_wasserstein_examples():
    """Test W1 between marginals"""
    mu = OccupationMeasure(atoms=[[0.0], [1.0]], weights=[0.5, 0.5])
    nu = OccupationMeasure(atoms=[[1.0], [2.0]], weights=[0.5, 0.5])
    assert wasserstein_1d(mu, nu, 0) == pytest.approx(1.0)
    assert wasserstein_1d(mu, mu, 0) == 0.0
    point = OccupationMeasure(atoms=[[0.0]], weights=[1.0])
    assert wasserstein_1d(mu, point, 0) == pytest.approx(0.5)
    with pytest.raises(RangeError):
        wasserstein_1d(mu, nu, 1)


def test_wasserstein_axioms(rng):
    """Test symmetry and the triangle inequality on random measures"""
    for _ in range(30):
        measures = []
        for _ in range(3):
            k = int(rng.integers(1, 6))
            w = rng.random(k)
            measures.append(OccupationMeasure(atoms=rng.normal(size=(k, 2)), weights=w / w.sum()))
        a, b, c = measures
        for coordinate in (0, 1):
            ab = wasserstein_1d(a, b, coordinate)
            assert ab == pytest.approx(wasserstein_1d(b, a, coordinate))
            assert ab <= wasserstein_1d(a, c, coordinate) + wasserstein_1d(c, b, coordinate) + 1e-12


def test_stationarity_residual_vanishes_only_on_stationary_set(canonical_problem, rng):
    """Test residual > 0 at random non-stationary points for several gammas"""
    stationary = canonical_problem.stationary_points()[0]
    for _ in range(100):
        x = rng.uniform(-3.0, 3.0, size=2)
        if np.linalg.norm(x - stationary) < 1e-3:
            continue
        for gamma in (1.0, 0.3, 0.01):
            assert stationarity_residual(canonical_problem, x, gamma) > 0.0
    for gamma in (1.0, 0.3, 0.01):
        assert stationarity_residual(canonical_problem, stationary, gamma) == pytest.approx(
            0.0, abs=1e-12
        )


def test_longrun_statistics_match_occupation_measures(queue_kernel):
    """Test ergodic distance and long-run fraction against the windowed occupation measures"""
    trajs = [run_chain(queue_kernel, [0.5, 0.5], 0.05, 3000, seed=9, key=(m,)) for m in range(3)]
    point = np.array([0.1, 0.0])
    target = TargetSet.point(point)
    burnin = 300
    windows = [occupation_window(t, burnin) for t in trajs]
    expected = np.mean([np.linalg.norm(w.mean() - point) for w in windows])
    assert ergodic_distance(trajs, target, burnin=burnin) == pytest.approx(expected, abs=1e-12)
    for eps in (0.07, 0.23, 1.01):
        masses = [
            float(w.weights[np.linalg.norm(w.atoms - point, axis=1) <= eps].sum()) for w in windows
        ]
        assert longrun_fraction(trajs, target, eps, burnin=burnin) == pytest.approx(
            np.mean(masses), abs=1e-12
        )
    whole = occupation_measure(trajs[0], len(trajs[0]) - 1)
    assert ergodic_distance(trajs[:1], target, burnin=0) == pytest.approx(
        np.linalg.norm(whole.mean() - point), abs=1e-12
    )
    assert longrun_fraction(trajs[:1], target, 0.01, burnin=0) == pytest.approx(
        whole.mass_at(point), abs=1e-12
    )
