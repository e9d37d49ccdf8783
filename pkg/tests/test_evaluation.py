import numpy as np
import pytest

from oracles import knn_loop, pid_loop
from pidssl.evaluation import (
    EvalConfig,
    knn_eval,
    knn_predict,
    linear_probe,
    linear_probe_accuracy,
    pid_diagnostic,
    pid_summary,
    redundancy_proxy,
)
from pidssl.models import NetworkSpec, init_params, parameter_checksum
from pidssl.pid import JointPMF, mutual_information


def circle(degrees):
    rad = np.deg2rad(degrees)
    return np.stack([np.cos(rad), np.sin(rad)], axis=1)


class TestKNN:
    def test_single_class_train(self):
        rng = np.random.default_rng(0)
        test_y = np.array([0, 1, 0, 0])
        acc = knn_eval(rng.standard_normal((10, 3)), np.zeros(10), rng.standard_normal((4, 3)), test_y, k=3)
        assert acc == 0.75

    def test_duplicate_gets_own_label(self):
        x = np.random.default_rng(1).standard_normal((20, 4))
        y = np.arange(20) % 3
        assert knn_predict(x, y, x[7:8], k=1)[0] == y[7]

    def test_hand_counted(self):
        train = circle([0, 10, 20, 180, 190])
        labels = [0, 0, 0, 1, 1]
        test = circle([5, 185, 30])
        # the 30 degree point is mislabelled on purpose; its three nearest neighbours are class 0
        assert knn_eval(train, labels, test, [0, 1, 1], k=3) == pytest.approx(2 / 3)

    def test_against_loop_oracle(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            train = rng.standard_normal((30, 3))
            y = rng.integers(0, 3, 30)
            test = rng.standard_normal((10, 3))
            k = int(rng.integers(1, 8))
            np.testing.assert_array_equal(knn_predict(train, y, test, k), knn_loop(train, y, test, k))

    def test_permutation_invariant(self):
        rng = np.random.default_rng(3)
        train, y = rng.standard_normal((40, 5)), rng.integers(0, 4, 40)
        test, ty = rng.standard_normal((15, 5)), rng.integers(0, 4, 15)
        perm = rng.permutation(40)
        assert knn_eval(train, y, test, ty) == knn_eval(train[perm], y[perm], test, ty)

    def test_empty(self):
        with pytest.raises(ValueError):
            knn_eval(np.zeros((0, 2)), [], np.ones((1, 2)), [0])


class TestProbe:
    config = EvalConfig(probe_epochs=60, probe_lr=1e-2)

    def test_separable(self):
        rng = np.random.default_rng(4)
        y = rng.integers(0, 3, 300)
        x = np.eye(3)[y] * 5 + rng.standard_normal((300, 3)) * 0.3
        assert linear_probe_accuracy(x[:200], y[:200], x[200:], y[200:], self.config) == 1.0

    def test_random_labels_near_chance(self):
        accs = []
        for seed in range(5):
            rng = np.random.default_rng(100 + seed)
            x = rng.standard_normal((400, 8))
            y = np.repeat([0, 1], 200)
            rng.shuffle(y)
            accs.append(linear_probe_accuracy(x[:300], y[:300], x[300:], y[300:], self.config, seed))
        assert np.mean(accs) == pytest.approx(0.5, abs=0.1)

    def test_encoder_untouched(self):
        spec = NetworkSpec(encoder_widths=(4, 8, 6), projector_widths=(6, 6, 3))
        params = init_params(spec, np.random.default_rng(5))
        before = parameter_checksum(params)
        rng = np.random.default_rng(6)
        x, y = rng.standard_normal((80, 4)), rng.integers(0, 2, 80)
        linear_probe(params, spec, x[:60], y[:60], x[60:], y[60:], EvalConfig(probe_epochs=3))
        assert parameter_checksum(params) == before

    def test_deterministic(self):
        rng = np.random.default_rng(7)
        x, y = rng.standard_normal((100, 4)), rng.integers(0, 2, 100)
        a = linear_probe_accuracy(x[:70], y[:70], x[70:], y[70:], EvalConfig(probe_epochs=5), 3)
        b = linear_probe_accuracy(x[:70], y[:70], x[70:], y[70:], EvalConfig(probe_epochs=5), 3)
        assert a == b


class TestRedundancyProxy:
    def test_identical_independent_columns(self):
        z = np.random.default_rng(8).standard_normal((20000, 4))
        out = redundancy_proxy(z, z)
        assert out["mean_diag"] == pytest.approx(1.0, abs=1e-9)
        assert out["mean_abs_offdiag"] < 0.02

    def test_sign_flip(self):
        z = np.random.default_rng(9).standard_normal((500, 3))
        assert redundancy_proxy(z, -z)["mean_diag"] == pytest.approx(-1.0, abs=1e-9)

    def test_independent_views_shrink_with_batch(self):
        rng = np.random.default_rng(10)
        small = redundancy_proxy(rng.standard_normal((50, 4)), rng.standard_normal((50, 4)))
        large = redundancy_proxy(rng.standard_normal((50000, 4)), rng.standard_normal((50000, 4)))
        assert large["mean_abs_offdiag"] < small["mean_abs_offdiag"]
        assert large["mean_abs_offdiag"] < 0.01


class TestPIDDiagnostic:
    def test_copied_label_columns_are_redundant(self):
        labels = np.random.default_rng(11).integers(0, 4, 4000)
        col = labels.astype(float)
        r = pid_diagnostic(col, col, labels, bins=4)
        counts = np.zeros((4, 4, 4))
        np.add.at(counts, (labels, labels, labels), 1)
        oracle = pid_loop(counts / counts.sum())
        ht = mutual_information(JointPMF(counts / counts.sum()), (1, 2))
        assert r.redundancy == pytest.approx(oracle["redundancy"], abs=1e-10)
        assert r.redundancy == pytest.approx(ht, abs=1e-10)
        assert abs(r.synergy) < 1e-10

    def test_uninformative_columns(self):
        # plug-in bias for these alphabet sizes is below 1e-3 bits at N=20000
        rng = np.random.default_rng(12)
        labels = rng.integers(0, 2, 20000)
        r = pid_diagnostic(rng.standard_normal(20000), rng.standard_normal(20000), labels, bins=4)
        assert max(r.as_dict().values()) < 5e-3

    def test_one_informative_source(self):
        rng = np.random.default_rng(13)
        labels = rng.integers(0, 2, 20000)
        r = pid_diagnostic(labels + 0.1 * rng.standard_normal(20000), rng.standard_normal(20000), labels, bins=4)
        assert r.unique1 > r.unique2
        assert r.unique2 < 5e-3

    def test_summary_satisfies_invariants(self):
        rng = np.random.default_rng(14)
        labels = rng.integers(0, 3, 600)
        z1 = rng.standard_normal((600, 3)) + labels[:, None]
        z2 = z1 + rng.standard_normal((600, 3))
        s = pid_summary(z1, z2, labels, bins=6)
        assert min(s.values()) >= -1e-9
        total = s["redundancy"] + s["unique1"] + s["unique2"] + s["synergy"]
        assert total == pytest.approx(s["joint_mi"], abs=1e-9)

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            pid_diagnostic([0.0, 1.0], [0.0], [0, 1])


def test_eval_config_validation():
    with pytest.raises(ValueError):
        EvalConfig(train_fraction=0.7, test_fraction=0.2)
    with pytest.raises(ValueError):
        EvalConfig(bins=65)
