import numpy as np
import pytest

from chsnet import functional as F
from chsnet import tensor as T
from chsnet.errors import ContractError, NonFiniteError
from chsnet.tensor import Tape, Tensor, grad_check, grad_check_param


def test_ops_outside_tape_are_not_recorded():
    x = Tensor(np.ones(3), requires_grad=True)
    y = F.mul(x, 2.0)
    assert not y.requires_grad


def test_backward_accumulates_through_shared_inputs():
    x = Tensor(np.array([1.0, 2.0, 3.0]), requires_grad=True)
    with Tape() as tape:
        y = F.sum(F.add(F.mul(x, x), x))
    tape.backward(y, [x])
    np.testing.assert_allclose(x.grad, 2 * x.data + 1)


def test_unreached_parameter_gets_zero_gradient():
    x = Tensor(np.ones(2), requires_grad=True)
    unused = Tensor(np.ones((3, 3)), requires_grad=True)
    with Tape() as tape:
        y = F.sum(x)
    tape.backward(y, [x, unused])
    assert np.array_equal(unused.grad, np.zeros((3, 3)))


def test_backward_needs_scalar_loss():
    x = Tensor(np.ones(2), requires_grad=True)
    with Tape() as tape:
        y = F.mul(x, 3.0)
    with pytest.raises(ContractError):
        tape.backward(y, [x])


@pytest.mark.filterwarnings("ignore:invalid value encountered:RuntimeWarning")
def test_non_finite_results_raise():
    with pytest.raises(NonFiniteError):
        F.log(Tensor(np.array([-1.0])))


def test_finite_check_can_be_disabled(monkeypatch):
    monkeypatch.setattr(T, "CHECK_FINITE", False)
    with np.errstate(invalid="ignore"):
        out = F.log(Tensor(np.array([-1.0])))
    assert np.isnan(out.data[0])


def test_nested_tapes_record_on_innermost_only():
    x = Tensor(np.ones(2), requires_grad=True)
    with Tape() as outer:
        with Tape() as inner:
            F.mul(x, 2.0)
        F.mul(x, 3.0)
    assert len(inner) == 1 and len(outer) == 1


def test_grad_check_on_known_function():
    err = grad_check(lambda t: F.sum(F.mul(F.sigmoid(t), t)), np.linspace(-2, 2, 7))
    assert err < 1e-8


def test_grad_check_detects_wrong_backward():
    def bad_square(t):
        return T.make(t.data ** 2, (t,), lambda g: (g * t.data,))  # missing factor 2

    assert grad_check(lambda t: F.sum(bad_square(t)), np.array([0.5, 1.5])) > 0.4


def test_grad_check_rejects_vector_output():
    with pytest.raises(ContractError):
        grad_check(lambda t: F.mul(t, 2.0), np.ones(3))


def test_grad_check_skips_kinks_when_asked():
    # relu at exactly 0: the central difference straddles the kink
    res = grad_check(lambda t: F.sum(F.relu(t)), np.array([0.0, 1.0]), kink_tol=1e-3)
    assert res.skipped == 1 and float(res) < 1e-9


def test_grad_check_param_matches_closed_form():
    w = Tensor(np.array([0.3, -0.7]), requires_grad=True)
    x = np.array([2.0, 5.0])
    assert grad_check_param(lambda: F.sum(F.mul(F.mul(w, w), x)), w) < 1e-8
    assert w.grad is None
