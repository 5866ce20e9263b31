"""Shared fixtures: quadrature rules and fitted networks.

Fitted fixtures are deterministic (fixed seeds), so they are cached on disk
under tests/_cache; delete the directory to force refits.
"""
from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np
import pytest

from tensor_galerkin import (
    FitConfig,
    InputMap,
    TnnArchitecture,
    composite_rule,
    fit_initial,
    gauss_legendre,
    init_network,
    initial_condition,
    make_problem,
)
from tensor_galerkin.checkpoint import load_checkpoint, save_checkpoint
from tensor_galerkin.fields import SeparableField
from tensor_galerkin.tnn import PERIODIC

CACHE = Path(__file__).parent / "_cache"


def rule_on(interval=(-1.0, 1.0), points=8, panels=10):
    return composite_rule(gauss_legendre(points), panels, interval)


def fit_cached(tag: str, builder):
    """Deterministic fit memoized to disk; returns (params, loss)."""
    CACHE.mkdir(exist_ok=True)
    path = CACHE / f"{tag}.ckpt.json"
    meta = CACHE / f"{tag}.meta.json"
    if path.exists() and meta.exists():
        params = load_checkpoint(path)
        info = json.loads(meta.read_text())
        return params, info["loss"]
    params, loss = builder()
    save_checkpoint(params, path)
    meta.write_text(json.dumps({"loss": loss}))
    return params, loss


@pytest.fixture(scope="session")
def sin1d_fit():
    """One sub-network (d=1) trained hard to sin(pi x); loss target 1e-8."""

    def build():
        rule = rule_on()
        arch = TnnArchitecture(
            d=1, p=1, hidden=(30, 30), domain=((-1.0, 1.0),),
            input_map=InputMap(PERIODIC, b=np.pi),
        )
        params = init_network(arch, seed=3)
        u0 = SeparableField.from_univariate([lambda x: np.sin(np.pi * x)], (rule,))
        cfg = FitConfig(max_iterations=4000, learning_rate=2e-3, target=1e-9,
                        prefit_iterations=4000)
        res = fit_initial(params, u0, (rule,), cfg)
        return res.params, res.loss

    return fit_cached("sin1d-30x30", build)


@pytest.fixture(scope="session")
def transport2d_fit():
    """2D transport instance fitted to the product-of-sines initial data."""

    def build():
        prob = make_problem("transport", d=2)
        rules = (rule_on(), rule_on())
        arch = TnnArchitecture(
            d=2, p=4, hidden=(20, 20), domain=prob.domain,
            input_map=InputMap(PERIODIC, b=np.pi),
        )
        params = init_network(arch, seed=0)
        res = fit_initial(params, initial_condition(prob, rules), rules,
                          FitConfig(max_iterations=1500, target=1e-6))
        return res.params, res.loss

    return fit_cached("transport2d-p4", build)


@pytest.fixture(scope="session")
def heat10d_rank1():
    """10D product-of-sines network: 1D fit copied across dimensions.

    Spare ranks are zeroed so the network is exactly rank one; good for
    operator value checks where a clean reference matters.
    """

    def build():
        prob = make_problem("heat", d=10)
        rule = rule_on(points=8, panels=4)
        rules = (rule,) * 10
        arch = TnnArchitecture(
            d=10, p=3, hidden=(30, 30, 30), domain=prob.domain,
            input_map=InputMap("dirichlet_envelope"),
        )
        params = init_network(arch, seed=1)
        res = fit_initial(params, initial_condition(prob, rules), rules,
                          FitConfig(max_iterations=200, target=5e-7))
        flat = res.params.flat.copy()
        layout = res.params.layout
        for dim in range(10):
            sl = layout.weight_slice(dim, layout.n_hidden)
            block = flat[sl].reshape(arch.p, -1)
            block[1:] = 0.0
            flat[sl] = block.ravel()
        return res.params.with_flat(flat), res.loss

    return fit_cached("heat10d-rank1", build)
