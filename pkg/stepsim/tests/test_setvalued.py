import numpy as np
import pytest
from scipy import optimize

from stepsim.core.errors import DimensionError, DomainError, InternalError
from stepsim.engine.setvalued import (
    ConvexValue,
    QueueMeanField,
    first_positive,
    hull_contains,
    least_norm_element,
    project_onto_hull,
    queue_map_eval,
    stability_check,
)


def rows(value: ConvexValue):
    return sorted(map(tuple, np.round(value.generators, 12)))


def test_queue_field_vectors(canonical_field):
    """Test u_k = lambda - eta_k e_k"""
    np.testing.assert_allclose(canonical_field.u_vectors, [[-0.4, 0.2], [0.1, -0.6]])
    assert canonical_field.dimension == 2


def test_queue_field_validation():
    """Test invalid queue parameters"""
    with pytest.raises(DomainError):
        QueueMeanField(lambda_=[0.0, 0.2], eta=[0.5, 0.8])
    with pytest.raises(DomainError):
        QueueMeanField(lambda_=[0.1], eta=[1.5])
    with pytest.raises(DimensionError):
        QueueMeanField(lambda_=[0.1, 0.2], eta=[0.5])
    field = QueueMeanField.model_validate({"lambda": [0.1], "eta": [0.5]})
    assert field.lambda_ == [0.1]


def test_queue_map_eval_examples(canonical_field):
    """Test the three cases of the queue map"""
    assert rows(queue_map_eval(canonical_field, [1.0, 1.0])) == [(-0.4, 0.2)]
    assert rows(queue_map_eval(canonical_field, [0.0, 0.5])) == sorted(
        [(-0.4, 0.2), (0.1, -0.6)]
    )
    assert rows(queue_map_eval(canonical_field, [0.0, 0.0])) == sorted(
        [(0.1, 0.2), (-0.4, 0.2), (0.1, -0.6)]
    )
    with pytest.raises(DomainError):
        queue_map_eval(canonical_field, [-0.1, 1.0])


def test_first_positive():
    """Test lowest-index positive coordinate"""
    assert first_positive(np.array([0.0, 0.0, 2.0])) == 2
    assert first_positive(np.array([0.0, 0.0])) == -1
    assert first_positive(np.array([1e-300, 5.0])) == 0


def test_hull_contains_examples(canonical_field):
    """Test hull membership"""
    assert hull_contains(ConvexValue(generators=[[0.0], [1.0]]), [0.5])
    assert not hull_contains(ConvexValue(generators=[[1.0, 0.0]]), [0.0, 1.0])
    value = queue_map_eval(canonical_field, [0.0, 0.5])
    assert hull_contains(value, [0.1, -0.6])
    assert not hull_contains(value, [0.2, 0.0])


def test_project_onto_hull_examples():
    """Test projections onto segments and triangles"""
    segment = ConvexValue(generators=[[0.0], [2.0]])
    np.testing.assert_allclose(project_onto_hull(segment, [1.0]), [1.0])
    np.testing.assert_allclose(project_onto_hull(segment, [3.0]), [2.0])
    triangle = ConvexValue(generators=[[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    np.testing.assert_allclose(project_onto_hull(triangle, [1.0, 1.0]), [0.5, 0.5], atol=1e-12)
    with pytest.raises(DimensionError):
        project_onto_hull(triangle, [1.0])


def test_empty_generators_rejected():
    """Test that an empty hull violates the type invariant"""
    with pytest.raises(InternalError):
        ConvexValue(generators=np.zeros((0, 2)))


def test_projection_optimality(rng):
    """Test the variational inequality <v - p, w - p> <= 0 for random hulls"""
    for trial in range(200):
        n = int(rng.integers(1, 5))
        k = int(rng.integers(1, 7))
        value = ConvexValue(generators=rng.normal(size=(k, n)))
        v = 3.0 * rng.normal(size=n)
        p = project_onto_hull(value, v)
        for w in value.generators:
            assert (v - p) @ (w - p) <= 1e-9, f"trial {trial}"
        assert hull_contains(value, p)


def test_projection_matches_constrained_solver(rng):
    """Test hull projections against SLSQP over the simplex weights"""
    for trial in range(100):
        n = int(rng.integers(1, 4))
        k = int(rng.integers(2, 7))
        generators = rng.normal(size=(k, n))
        if trial % 4 == 0:
            # collinear generators
            generators = np.outer(rng.normal(size=k), rng.normal(size=n))
        v = 2.0 * rng.normal(size=n)
        result = optimize.minimize(
            lambda w: 0.5 * float(np.sum((w @ generators - v) ** 2)),
            np.full(k, 1.0 / k),
            jac=lambda w: generators @ (w @ generators - v),
            bounds=[(0.0, 1.0)] * k,
            constraints=[{"type": "eq", "fun": lambda w: np.sum(w) - 1.0}],
            method="SLSQP",
            options={"ftol": 1e-14, "maxiter": 500},
        )
        reference = result.x @ generators
        p = project_onto_hull(ConvexValue(generators=generators), v)
        np.testing.assert_allclose(p, reference, atol=1e-6, err_msg=f"trial {trial}")
        assert np.linalg.norm(p - v) <= np.linalg.norm(reference - v) + 1e-9


def test_stability_check_examples():
    """Test load computation"""
    cases = [
        ([0.1, 0.2], [0.5, 0.8], 0.45, True),
        ([0.5, 0.5], [0.5, 0.5], 2.0, False),
        ([0.5], [1.0], 0.5, True),
    ]
    for lam, eta, load, stable in cases:
        report = stability_check(QueueMeanField(lambda_=lam, eta=eta))
        assert report.load == pytest.approx(load)
        assert report.stable is stable


def test_zero_containment_matches_stability(rng):
    """Test that 0 is in H(0) exactly for stable fields"""
    for trial in range(100):
        n = int(rng.integers(1, 4))
        eta = rng.uniform(0.2, 1.0, size=n)
        lam = rng.uniform(0.01, 0.6, size=n)
        field = QueueMeanField(lambda_=lam.tolist(), eta=eta.tolist())
        report = stability_check(field)
        if abs(report.load - 1.0) < 1e-3:
            continue
        contains = hull_contains(queue_map_eval(field, np.zeros(n)), np.zeros(n))
        assert contains is report.stable, f"trial {trial}: load {report.load}"


def test_monotone_nesting():
    """Test co(u_1..u_j) is contained in co(u_1..u_k) for j <= k"""
    field = QueueMeanField(lambda_=[0.1, 0.2, 0.05], eta=[0.5, 0.8, 0.9])
    faces = [
        queue_map_eval(field, [1.0, 1.0, 1.0]),
        queue_map_eval(field, [0.0, 1.0, 1.0]),
        queue_map_eval(field, [0.0, 0.0, 1.0]),
    ]
    for j, small in enumerate(faces):
        for large in faces[j:]:
            for w in small.generators:
                assert hull_contains(large, w)


def test_queue_drift_in_hull(queue_kernel, canonical_field):
    """Test that the exact chain drift lies in H(x) away from the origin"""
    gamma = 0.1
    for i in range(6):
        for j in range(6):
            x = gamma * np.array([i, j], dtype=float)
            if not x.any():
                continue
            drift = queue_kernel.drift(x, gamma)
            assert hull_contains(queue_map_eval(canonical_field, x), drift, 1e-9)


def test_least_norm_element(canonical_field):
    """Test the least-norm point of H(0) under stability is 0"""
    np.testing.assert_allclose(
        least_norm_element(queue_map_eval(canonical_field, [0.0, 0.0])), [0.0, 0.0], atol=1e-12
    )
    np.testing.assert_allclose(
        least_norm_element(queue_map_eval(canonical_field, [1.0, 0.0])), [-0.4, 0.2]
    )
