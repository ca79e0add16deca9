import numpy as np
import pytest

from ggmotion import network
from ggmotion.checks import equivariance_report, gradcheck_report, toy_problem, transform
from ggmotion.models import AblationFlags


def test_transform_applies_rotation_then_shift():
    x = np.arange(12.0).reshape(2, 3, 2)
    flip = np.diag([-1.0, 1.0, 1.0])
    out = transform(x, flip, np.array([1.0, 0.0, 0.0]))
    np.testing.assert_allclose(out[:, 0], 1.0 - x[:, 0])
    np.testing.assert_allclose(out[:, 1:], x[:, 1:])


def test_equivariance_report_passes(chain5, tiny_cfg):
    store = network.init_params(tiny_cfg, chain5)
    report = equivariance_report(store, tiny_cfg, chain5, trials=10)
    assert report["passed"], report
    assert report["reflections"] == 5
    assert report["max_deviation"] <= 1e-9
    assert set(report) == {"trials", "tolerance", "reflections", "output_scale", "max_deviation",
                           "worst_trial", "passed"}


def test_coordinate_bias_is_caught(chain5, tiny_cfg):
    cfg = tiny_cfg.model_copy(update={"ablation": AblationFlags(coordinate_bias=True)})
    store = network.init_params(cfg, chain5)
    report = equivariance_report(store, cfg, chain5, trials=6)
    assert not report["passed"]
    assert report["max_deviation"] > 1e-6
    # a constant bias still commutes with translations
    assert equivariance_report(store, cfg, chain5, trials=6, translation_only=True)["passed"]


def test_toy_problem_shapes():
    cfg, topo, past, future = toy_problem(0)
    assert past.shape == (2, 5, 3, cfg.t_h)
    assert future.shape == (2, 5, 3, cfg.t_f)
    assert topo.n_groups == 2


def test_gradient_check_on_toy_objective():
    report = gradcheck_report(seed=0, coords=25)
    assert report["passed"], report
    assert report["n_coords"] == 25


@pytest.mark.slow
@pytest.mark.parametrize("aux", ["literal", "bone_length"])
def test_gradient_check_full_sample(aux):
    report = gradcheck_report(seed=1, coords=200, aux=aux)
    assert report["passed"], report
