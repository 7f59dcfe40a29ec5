"""Shared test helpers: toy configs, finite-difference gradients."""

import numpy as np
import pytest
import torch


def toy_model_config(**overrides):
    """A config small enough for CPU-second unit tests."""
    from vdpcn.config import ModelConfig

    base = dict(
        k=3,
        height=32,
        width=32,
        channels=16,
        point_feat_dim=16,
        n_coarse=16,
        n_raw=16,
        stage_ratios=[2, 2],
        n_iters=1,
        heads=2,
        ffn_mult=2,
        decoder_dim=16,
    )
    base.update(overrides)
    cfg = ModelConfig(**base)
    cfg.validate()
    return cfg


def central_difference_grad(loss_fn, param, eps=1.0e-6):
    """Central finite-difference gradient of a scalar loss over every entry.

    Mutates param in place entry by entry and restores it; expects double
    precision for the quoted accuracy.
    """
    grad = torch.zeros_like(param)
    flat = param.data.reshape(-1)
    grad_flat = grad.reshape(-1)
    for i in range(flat.numel()):
        orig = flat[i].item()
        flat[i] = orig + eps
        f_plus = float(loss_fn())
        flat[i] = orig - eps
        f_minus = float(loss_fn())
        flat[i] = orig
        grad_flat[i] = (f_plus - f_minus) / (2.0 * eps)
    return grad


def relative_grad_error(analytic, numeric):
    denom = max(float(numeric.norm()), 1.0e-12)
    return float((analytic - numeric).norm()) / denom


def assert_grad_matches(loss_fn, module, param_name, tol=1.0e-3):
    """Compare autograd against central differences for one named parameter."""
    params = dict(module.named_parameters())
    param = params[param_name]
    module.zero_grad(set_to_none=True)
    loss = loss_fn()
    loss.backward()
    analytic = param.grad.detach().clone()
    numeric = central_difference_grad(lambda: loss_fn().detach(), param)
    err = relative_grad_error(analytic, numeric)
    assert err < tol, f"{param_name}: relative gradient error {err:.3e} >= {tol}"
    return err
