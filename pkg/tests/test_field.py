import numpy as np
import pytest

from tsdf4d import gradcheck
from tsdf4d.basis import BasisTable, init_dct
from tsdf4d.core_io import DYNAMIC, STATIC, MapConfig
from tsdf4d.decoder import MlpParams
from tsdf4d.field import (FieldModel, classify_point, load_checkpoint, numerical_gradient, save_checkpoint,
                          checkpoint_bytes)
from tsdf4d.grid import allocate


class Oracle:
    """Field seam: any callable of position, independent of time."""

    def __init__(self, fn):
        self.fn = fn

    def query(self, p, t):
        return self.fn(np.atleast_2d(p))


class FixedWeights:
    """Model stand-in whose decoder output is the same vector everywhere."""

    def __init__(self, w):
        self.w = np.asarray(w, float)

    def query_static(self, p):
        return np.full(len(np.atleast_2d(p)), self.w[0]) if np.ndim(p) > 1 else self.w[0]


def bias_model(weights, basis_rows, d=2):
    """Real FieldModel whose decoder ignores features: output = bias."""
    k = len(weights)
    cfg = MapConfig(feature_dim=d, basis_count=k, mlp_hidden_layers=0, finest_voxel_size=1.0)
    grid = allocate(np.array([[0.5, 0.5, 0.5]]), np.zeros((0, 3)), [1.0, 2.0], d, 0)
    mlp = MlpParams([np.zeros((d, k))], [np.asarray(weights, float)])
    return FieldModel(grid, mlp, BasisTable(np.asarray(basis_rows, float)), cfg)


def test_query_dot_product():
    m = bias_model([0.3, 0.1], [[1.0, 0.5], [1.0, -0.5]])
    assert m.query(np.array([0.5, 0.5, 0.5]), 0) == pytest.approx(0.35, abs=1e-15)


def test_pure_static_point_constant_in_time():
    m = bias_model([0.3, 0.0, 0.0], init_dct(4, 3).values)
    for t in range(4):
        assert m.query(np.array([0.2, 0.2, 0.2]), t) == pytest.approx(0.3, abs=1e-15)


def test_zero_model_is_zero():
    m = bias_model([0.0, 0.0], init_dct(3, 2).values)
    assert m.query(np.array([0.1, 0.2, 0.3]), 1) == 0.0


def test_query_static_is_first_weight():
    m = bias_model([0.2, 0.7], init_dct(3, 2).values)
    assert m.query_static(np.array([0.3, 0.3, 0.3])) == 0.2


def test_query_static_equals_query_without_dynamics():
    m = bias_model([0.4, 0.0, 0.0], init_dct(5, 3).values)
    p = np.random.default_rng(0).uniform(0, 1, (10, 3))
    for t in range(5):
        np.testing.assert_array_equal(m.query(p, t), m.query_static(p))


def test_query_out_of_range_frame():
    m = bias_model([0.2, 0.7], init_dct(3, 2).values)
    with pytest.raises(IndexError):
        m.query(np.zeros(3), 3)


def test_static_equals_time_average_at_dct_init():
    model = gradcheck.miniature_model(frames=6, seed=2)
    model.basis = init_dct(6, 3)
    p = np.random.default_rng(0).uniform(0.1, 0.9, (25, 3))
    avg = sum(model.query(p, t) * model.basis.values[t, 0] for t in range(6)) / 6
    np.testing.assert_allclose(model.query_static(p), avg, atol=1e-12)


def test_query_decomposition():
    model = gradcheck.miniature_model(frames=3, seed=4)
    p = np.random.default_rng(1).uniform(0.1, 0.9, (30, 3))
    w = model.decode(p)
    for t in range(3):
        dyn = w[:, 1:] @ model.basis.values[t, 1:]
        np.testing.assert_allclose(model.query(p, t) - model.query_static(p), dyn, atol=1e-12)


def test_numerical_gradient_linear_exact():
    g = numerical_gradient(Oracle(lambda p: 2 * p[:, 0]), np.array([0.5, -1.0, 4.0]), 0, 0.25)
    np.testing.assert_array_equal(g, [2.0, 0.0, 0.0])


def test_numerical_gradient_constant():
    g = numerical_gradient(Oracle(lambda p: np.full(len(p), 7.0)), np.array([1.0, 2.0, 3.0]), 0, 0.5)
    np.testing.assert_array_equal(g, [0.0, 0.0, 0.0])


@pytest.mark.parametrize("eps", [0.5, 0.25, 0.125])
def test_numerical_gradient_quadratic(eps):
    # dyadic values keep the arithmetic exact
    g = numerical_gradient(Oracle(lambda p: p[:, 0] ** 2), np.array([1.5, 0.0, 0.0]), 0, eps)
    assert g[0] == 3.0


def test_numerical_gradient_rejects_bad_eps():
    with pytest.raises(ValueError):
        numerical_gradient(Oracle(lambda p: p[:, 0]), np.zeros(3), 0, 0.0)


def test_classify_point_cases():
    assert classify_point(FixedWeights([0.0, 1.0]), np.zeros(3), 0.16) == STATIC
    assert classify_point(FixedWeights([0.2, 0.0]), np.zeros(3), 0.16) == DYNAMIC
    assert classify_point(FixedWeights([0.16, 0.0]), np.zeros(3), 0.16) == STATIC


def test_classify_monotone_in_threshold():
    model = gradcheck.miniature_model(seed=3)
    p = np.random.default_rng(2).uniform(0, 1, (200, 3))
    prev = classify_point(model, p, -1.0)
    for d in np.linspace(-1, 1, 21):
        cur = classify_point(model, p, d)
        assert not np.any((prev == STATIC) & (cur == DYNAMIC))
        prev = cur


def test_unallocated_query_is_finite():
    model = gradcheck.miniature_model(seed=0)
    far = np.array([[100.0, 100.0, 100.0]])
    f0, _ = model.mlp.forward(np.zeros((1, model.grid.feature_dim)))
    np.testing.assert_allclose(model.query(far, 1), f0 @ model.basis.values[1])


def test_end_to_end_gradient_check():
    model, batch = gradcheck.find_smooth_case()
    result = gradcheck.check_gradients(model, batch, eps=0.05)
    assert result.ok(1e-5), result


def test_checkpoint_roundtrip(tmp_path):
    model = gradcheck.miniature_model(frames=4, seed=1)
    save_checkpoint(model, tmp_path / "m.ckpt")
    back = load_checkpoint(tmp_path / "m.ckpt")
    p = np.random.default_rng(0).uniform(-0.5, 2.5, (50, 3))
    for t in range(4):
        np.testing.assert_array_equal(model.query(p, t), back.query(p, t))
    assert back.cfg == model.cfg
    assert checkpoint_bytes(back) == checkpoint_bytes(model)
    np.testing.assert_array_equal(back.grid.occupancy, model.grid.occupancy)


def test_checkpoint_bad_magic(tmp_path):
    (tmp_path / "x.ckpt").write_bytes(b"nope")
    from tsdf4d.core_io import FormatError
    with pytest.raises(FormatError):
        load_checkpoint(tmp_path / "x.ckpt")


def test_model_shape_invariants():
    grid = allocate(np.array([[0.5, 0.5, 0.5]]), np.zeros((0, 3)), [1.0], 4, 0)
    with pytest.raises(ValueError):
        FieldModel(grid, MlpParams.init(4, 8, 1, 3, 0), init_dct(3, 2), MapConfig())
    with pytest.raises(ValueError):
        FieldModel(grid, MlpParams.init(5, 8, 1, 2, 0), init_dct(3, 2), MapConfig())
