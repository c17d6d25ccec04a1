import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from gaeor.exceptions import ConfigurationError
from gaeor.gat import gap, transfer_loss
from gaeor.verify import autograd_grad, grad_check

f64 = torch.float64


def test_gap_constant():
    assert torch.all(gap(torch.full((2, 3, 4, 4), 2.5)) == 2.5)


def test_gap_single_one():
    x = torch.zeros(1, 2, 4, 4)
    x[0, 1, 3, 0] = 1.0
    assert gap(x).tolist() == [[0.0, 1 / 16]]


def test_gap_matches_oracle(rng):
    x = rng.normal(size=(2, 3, 5, 4))
    g = gap(torch.from_numpy(x))
    for b in range(2):
        for c in range(3):
            assert g[b, c].item() == pytest.approx(sum(x[b, c].ravel().tolist()) / 20, abs=1e-12)


def test_identical_pathways_give_zero():
    F = torch.rand(2, 4, 3, 3)
    assert transfer_loss(F, F).item() == 0.0


def test_three_four_five():
    T = torch.zeros(1, 4, 2, 2, dtype=f64)
    T[0, 0] = 3.0
    T[0, 1] = 4.0
    F = torch.zeros(1, 4, 2, 2, dtype=f64)
    assert transfer_loss(T, F).item() == pytest.approx(5.0)


def test_channel_mismatch():
    with pytest.raises(ConfigurationError):
        transfer_loss(torch.rand(1, 3, 2, 2), torch.rand(1, 4, 2, 2))


def test_gradient_routing(rng):
    T = torch.from_numpy(rng.random((2, 5, 3, 3)))
    F = torch.from_numpy(rng.random((2, 5, 3, 3)))
    # teacher side: analytic gradient is zero; finite differences are not (the value moves)
    gT = autograd_grad(lambda t: transfer_loss(t, F), T)
    assert torch.all(gT == 0)
    gF = autograd_grad(lambda f: transfer_loss(T, f), F)
    assert gF.abs().max() > 0
    report = grad_check(lambda f: transfer_loss(T, f), F, gF)
    assert report.passed, report
    # bidirectional mode routes gradients to both sides
    report = grad_check(lambda t: transfer_loss(t, F, bidirectional=True), T)
    assert report.passed, report


def test_zero_distance_gradient_is_finite():
    F = torch.rand(1, 3, 2, 2, dtype=f64, requires_grad=True)
    transfer_loss(F.detach(), F).backward()
    assert torch.isfinite(F.grad).all()


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_symmetric_value(seed):
    g = torch.Generator().manual_seed(seed)
    T = torch.rand(2, 4, 3, 3, generator=g, dtype=f64)
    F = torch.rand(2, 4, 3, 3, generator=g, dtype=f64)
    a, b = transfer_loss(T, F), transfer_loss(F, T)
    assert a.item() == pytest.approx(b.item(), abs=1e-14)
    assert a.item() >= 0
