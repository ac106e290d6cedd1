import numpy as np
import pytest

from chanfm.metrics import MetricError, accuracy, chamfer_distance, nmse


def naive_nmse(estimate, truth):
    num = 0.0
    den = 0.0
    for e, t in zip(np.ravel(estimate), np.ravel(truth)):
        num += abs(e - t) ** 2
        den += abs(t) ** 2
    return num / den


def naive_chamfer(a, b):
    fwd = 0.0
    for p in a:
        fwd += min(float(np.sum((p - q) ** 2)) for q in b)
    bwd = 0.0
    for q in b:
        bwd += min(float(np.sum((q - p) ** 2)) for p in a)
    return fwd / len(a) + bwd / len(b)


def test_nmse_identities():
    h = np.random.default_rng(0).standard_normal((4, 6)) + 1j
    assert nmse(h, h) == 0.0
    assert nmse(np.zeros_like(h), h) == pytest.approx(1.0, abs=1e-12)


def test_nmse_matches_naive_oracle():
    rng = np.random.default_rng(1)
    for _ in range(50):
        a = rng.standard_normal((3, 5)) + 1j * rng.standard_normal((3, 5))
        b = rng.standard_normal((3, 5)) + 1j * rng.standard_normal((3, 5))
        assert nmse(a, b) == pytest.approx(naive_nmse(a, b), abs=1e-10)


def test_nmse_scale_invariance():
    rng = np.random.default_rng(2)
    a = rng.standard_normal((8, 8))
    b = rng.standard_normal((8, 8))
    for c in (2.0, -0.3, 1e4):
        assert abs(nmse(c * a, c * b) - nmse(a, b)) < 1e-10


def test_nmse_batched_mean():
    rng = np.random.default_rng(3)
    a, b = rng.standard_normal((4, 5, 2)), rng.standard_normal((4, 5, 2))
    per = [nmse(a[i], b[i]) for i in range(4)]
    assert nmse(a, b, batch_axis=0) == pytest.approx(np.mean(per), abs=1e-12)


def test_nmse_contracts():
    with pytest.raises(MetricError):
        nmse(np.ones(3), np.ones(4))
    with pytest.raises(MetricError):
        nmse(np.ones(3), np.zeros(3))


def test_chamfer_identities():
    pts = np.random.default_rng(4).standard_normal((20, 3))
    assert chamfer_distance(pts, pts) == 0.0
    assert chamfer_distance(np.zeros((1, 3)), np.array([[1.0, 0, 0]])) == pytest.approx(2.0)


def test_chamfer_matches_naive_oracle():
    rng = np.random.default_rng(5)
    for _ in range(20):
        a = rng.standard_normal((50, 3))
        b = rng.standard_normal((50, 3))
        assert chamfer_distance(a, b) == pytest.approx(naive_chamfer(a, b), abs=1e-9)


def test_chamfer_translation_and_permutation_invariance():
    rng = np.random.default_rng(6)
    a = rng.standard_normal((30, 3))
    b = rng.standard_normal((25, 3))
    v = np.array([3.0, -2.0, 0.5])
    assert abs(chamfer_distance(a + v, b + v) - chamfer_distance(a, b)) < 1e-9
    perm = rng.permutation(30)
    assert chamfer_distance(a[perm], b) == pytest.approx(chamfer_distance(a, b), abs=1e-12)


def test_chamfer_rejects_empty():
    with pytest.raises(MetricError):
        chamfer_distance(np.zeros((0, 3)), np.ones((2, 3)))


def test_accuracy_identities():
    logits = np.eye(6)[[0, 3, 5]] * 2.0
    assert accuracy(logits, np.array([0, 3, 5])) == 1.0
    two = np.array([[0.0, 1.0], [1.0, 0.0]])
    assert accuracy(two, np.array([0, 1])) == 0.0


def test_accuracy_ties_break_low():
    logits = np.zeros((3, 6))
    assert accuracy(logits, np.array([0, 0, 0])) == 1.0
    assert accuracy(logits, np.array([1, 2, 3])) == 0.0


def test_accuracy_random_labels_monte_carlo():
    rng = np.random.default_rng(7)
    logits = rng.standard_normal((100_000, 6))
    labels = rng.integers(0, 6, 100_000)
    assert abs(accuracy(logits, labels) - 1 / 6) < 0.01
