import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from chsnet.errors import ConfigurationError
from chsnet.uncertainty import LN2, binary_entropy, mc_dropout_uncertainty

from helpers import tiny_model, tiny_samples


def test_entropy_fixed_points():
    assert binary_entropy(0.5) == pytest.approx(np.log(2), abs=1e-15)
    np.testing.assert_array_equal(binary_entropy([0.0, 1.0]), [0.0, 0.0])


@given(st.floats(0, 1))
def test_entropy_matches_definition_and_bounds(p):
    ref = -sum(q * np.log(q) for q in (p, 1 - p) if q > 0)
    assert binary_entropy(p) == pytest.approx(ref, abs=1e-12)
    assert 0 <= binary_entropy(p) <= LN2


@given(st.floats(0, 1).filter(lambda p: abs(p - 0.5) > 1e-6))
def test_entropy_peak_only_at_one_half(p):
    assert binary_entropy(p) < LN2


@pytest.fixture(scope="module")
def model():
    return tiny_model()


@pytest.fixture(scope="module")
def image():
    return tiny_samples(1)[0].image


def test_map_shapes_bounds_and_reproducibility(model, image):
    a = mc_dropout_uncertainty(model, image, T=20, seed=3, keep_samples=True)
    b = mc_dropout_uncertainty(model, image, T=20, seed=3)
    assert a.mean_mask.shape == a.entropy.shape == (16, 16, 1)
    assert a.samples.shape == (20, 16, 16, 1)
    assert np.all((a.entropy >= 0) & (a.entropy <= LN2))
    assert a.mean_mask.tobytes() == b.mean_mask.tobytes()
    assert a.entropy.tobytes() == b.entropy.tobytes()
    c = mc_dropout_uncertainty(model, image, T=20, seed=4)
    assert not np.array_equal(a.mean_mask, c.mean_mask)


def test_zero_rate_gives_identical_samples(model, image):
    u = mc_dropout_uncertainty(model, image, T=4, dropout=0.0, keep_samples=True)
    assert all(np.array_equal(s, u.samples[0]) for s in u.samples)
    np.testing.assert_allclose(u.entropy, binary_entropy(u.samples[0]), atol=1e-15)


def test_lung_output_and_errors(model, image):
    assert mc_dropout_uncertainty(model, image[None], T=2, output="lung").mean_mask.shape == (16, 16, 1)
    with pytest.raises(ConfigurationError):
        mc_dropout_uncertainty(model, image, T=1)
    with pytest.raises(ConfigurationError):
        mc_dropout_uncertainty(model, image, output="heart")
    with pytest.raises(ConfigurationError):
        mc_dropout_uncertainty(tiny_model("raiu"), image, T=2, output="lung")
