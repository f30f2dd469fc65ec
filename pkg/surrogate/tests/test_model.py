"""Operator architecture contracts: shapes, init dependence, spectral
truncation, exact accumulation, the output product form, and a
finite-difference check of layer gradients."""
import dataclasses

import numpy as np
import pytest
import torch
from torch import nn

from nbso.model import Nbso, NbsoConfig, NbsoLayer, SpectralFilter, relative_l2

CFG = NbsoConfig(layers=2, width=8, modes=4, seed=11)
N = 32


def _inputs(batch=2, seed=0):
    g = torch.Generator().manual_seed(seed)
    z = torch.randn(batch, 1, N, N, generator=g)
    rho = torch.randn(batch, 2, N, N, generator=g)
    u_in = torch.randn(batch, 2, N, N, generator=g)
    return z, rho, u_in


def test_forward_shapes():
    model = Nbso(CFG, N)
    z, rho, u_in = _inputs(batch=3)
    out = model(z, rho, u_in)
    assert out.shape == (3, 2, N, N)


def test_batching_is_order_preserving():
    model = Nbso(CFG, N).eval()
    z, rho, u_in = _inputs(batch=3)
    with torch.no_grad():
        batched = model(z, rho, u_in)
        single = model(z[1:2], rho[1:2], u_in[1:2])
    torch.testing.assert_close(batched[1:2], single, rtol=1e-5, atol=1e-6)


def test_seed_makes_initialization_deterministic():
    a = Nbso(CFG, N).state_dict()
    b = Nbso(CFG, N).state_dict()
    assert all(torch.equal(a[k], b[k]) for k in a)


def test_initial_state_depends_on_both_speed_and_source():
    model = Nbso(CFG, N)
    z1, rho, _ = _inputs(seed=1)
    z2, _, _ = _inputs(seed=2)
    _, w0_a, _ = model.encode(z1, rho)
    _, w0_b, _ = model.encode(z2, rho)
    assert not torch.allclose(w0_a, w0_b)
    rho2 = torch.roll(rho, 5, dims=-1)
    _, w0_c, _ = model.encode(z1, rho2)
    assert not torch.allclose(w0_a, w0_c)


def test_blinded_init_ignores_the_medium():
    cfg = dataclasses.replace(CFG, init_from_speed=False)
    model = Nbso(cfg, N)
    z1, rho, _ = _inputs(seed=1)
    z2, _, _ = _inputs(seed=2)
    _, w0_a, _ = model.encode(z1, rho)
    _, w0_b, _ = model.encode(z2, rho)
    assert torch.equal(w0_a, w0_b)


def test_accumulation_is_exact():
    model = Nbso(CFG, N)
    z, rho, _ = _inputs()
    u_hat, corrections = model.latent_states(z, rho)
    assert len(corrections) == CFG.layers + 1
    manual = corrections[0]
    for w in corrections[1:]:
        manual = manual + w
    assert torch.equal(u_hat, manual)


def test_spectral_truncation_removes_high_modes():
    torch.manual_seed(0)
    filt = SpectralFilter(width=3, modes=4)
    x = torch.randn(2, 3, 16, 16)
    spec = torch.fft.rfft2(filt(x))
    scale = spec.abs().max()
    # retained: ky in {0..3} u {-4..-1}, kx in {0..3}; the real inverse
    # transform mirrors ky=-4 into ky=+4 on the self-conjugate column kx=0
    assert spec[..., 5:-4, :].abs().max() < 1e-5 * scale
    assert spec[..., 4, 1:].abs().max() < 1e-5 * scale
    assert spec[..., :, 4:].abs().max() < 1e-5 * scale


def test_modes_must_fit_the_grid():
    with pytest.raises(ValueError, match="modes"):
        NbsoConfig(modes=17).validate(32)
    filt = SpectralFilter(width=2, modes=9)
    with pytest.raises(ValueError, match="exceed"):
        filt(torch.randn(1, 2, 16, 16))
    NbsoConfig(modes=16).validate(32)
    with pytest.raises(ValueError, match="layers"):
        NbsoConfig(layers=0).validate(32)


def test_zeroed_filter_gives_a_constant_field():
    torch.manual_seed(0)
    layer = NbsoLayer(width=4, modes=3)
    with torch.no_grad():
        layer.filter.w_pos.zero_()
        layer.filter.w_neg.zero_()
    out = layer(torch.randn(1, 4, 12, 12), torch.randn(1, 4, 12, 12))
    torch.testing.assert_close(out, out[..., :1, :1].expand_as(out),
                               rtol=0.0, atol=1e-12)


def test_layer_gradient_matches_finite_differences():
    torch.manual_seed(5)
    layer = NbsoLayer(width=4, modes=3).double()
    with torch.no_grad():
        # Module.double() skips complex parameters; promote them by hand
        layer.filter.w_pos.data = layer.filter.w_pos.data.to(torch.complex128)
        layer.filter.w_neg.data = layer.filter.w_neg.data.to(torch.complex128)
    w = torch.randn(1, 4, 12, 12, dtype=torch.float64, requires_grad=True)
    v = torch.randn(1, 4, 12, 12, dtype=torch.float64, requires_grad=True)
    probe = torch.randn(1, 4, 12, 12, dtype=torch.float64)

    def objective(w_t, v_t):
        return (layer(w_t, v_t) * probe).sum()

    objective(w, v).backward()
    rng = np.random.default_rng(9)
    h = 1e-6
    for tensor in (w, v):
        flat = tensor.detach().clone().reshape(-1)
        grad = tensor.grad.reshape(-1)
        for i in rng.choice(flat.numel(), 5, replace=False):
            plus, minus = flat.clone(), flat.clone()
            plus[i] += h
            minus[i] -= h
            args_p = [t.detach() for t in (w, v)]
            args_m = [t.detach() for t in (w, v)]
            which = 0 if tensor is w else 1
            args_p[which] = plus.reshape(tensor.shape)
            args_m[which] = minus.reshape(tensor.shape)
            with torch.no_grad():
                fd = (objective(*args_p) - objective(*args_m)) / (2 * h)
            rel = abs(float(fd) - float(grad[i])) / max(abs(float(fd)), 1e-12)
            assert rel < 1e-3, f"coordinate {i}: rel {rel:.2e}"


def test_scattering_amplitude_product_form():
    model = Nbso(CFG, N)
    z, rho, u_in = _inputs()
    with torch.no_grad():
        for m in model.dec:
            if isinstance(m, nn.Conv2d):
                m.weight.zero_()
                m.bias.zero_()
        pred = model(z, rho, u_in)
    # u_out forced to zero: (1 + 0) * u_in must pass through exactly
    assert torch.equal(pred, u_in)


def test_star_variant_returns_the_decode_directly():
    cfg = dataclasses.replace(CFG, scattering_amplitude=False)
    model = Nbso(cfg, N)
    z, rho, u_in = _inputs()
    with torch.no_grad():
        out = model(z, rho, u_in)
        direct = model.u_out(z, rho)
    assert torch.equal(out, direct)


def test_amplitude_form_requires_u_in():
    model = Nbso(CFG, N)
    z, rho, _ = _inputs()
    with pytest.raises(ValueError, match="u_in"):
        model(z, rho, None)


def test_relative_l2_reference_values():
    u = torch.ones(3, 2, 4, 4)
    assert float(relative_l2(2 * u, u)) == pytest.approx(1.0)
    assert float(relative_l2(u, u)) == 0.0


def test_config_hash_tracks_content():
    assert CFG.sha256() == NbsoConfig(layers=2, width=8, modes=4, seed=11).sha256()
    assert CFG.sha256() != dataclasses.replace(CFG, modes=5).sha256()
