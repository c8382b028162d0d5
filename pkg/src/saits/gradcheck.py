"""Central finite-difference checks of every differentiable op and of the
full training loss."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as tn
from .errors import ConfigError
from .model import SaitsConfig, build_model, joint_loss
from .nn import diag_masked_self_attention
from .tensor import Tensor

TOLERANCE = 1e-4
EPSILON = 1e-5


@dataclass
class GradResult:
    name: str
    max_error: float
    worst: str
    passed: bool

    def line(self):
        status = "PASS" if self.passed else "FAIL"
        return f"{status} {self.name:<28} max_rel_err={self.max_error:.3e} ({self.worst})"


def relative_error(analytic, numeric):
    return np.abs(analytic - numeric) / np.maximum(1.0, np.abs(numeric))


def numeric_gradient(loss_fn, param: Tensor, eps=EPSILON):
    grad = np.zeros_like(param.data)
    flat = param.data.reshape(-1)
    out = grad.reshape(-1)
    with tn.no_grad():
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            up = loss_fn().item()
            flat[i] = orig - eps
            down = loss_fn().item()
            flat[i] = orig
            out[i] = (up - down) / (2 * eps)
    return grad


def check(name, loss_fn, params, eps=EPSILON, tol=TOLERANCE):
    """Compare ``backward`` against central differences for ``params``
    (a list of tensors or ``(name, tensor)`` pairs)."""
    named = [p if isinstance(p, tuple) else (f"arg{i}", p) for i, p in enumerate(params)]
    for _, p in named:
        p.grad = None
    tn.new_tape()
    loss_fn().backward()
    worst, worst_name = 0.0, ""
    for pname, p in named:
        analytic = p.grad if p.grad is not None else np.zeros_like(p.data)
        numeric = numeric_gradient(loss_fn, p, eps)
        err = float(relative_error(analytic, numeric).max()) if p.size else 0.0
        if err > worst or not worst_name:
            worst, worst_name = err, pname
    return GradResult(name, worst, worst_name, bool(worst < tol) and math.isfinite(worst))


def _param(rng, *shape, scale=1.0):
    return Tensor(rng.normal(scale=scale, size=shape), requires_grad=True)


def op_cases(rng):
    """``name -> (loss_fn, params)`` for each differentiable primitive.

    A fixed random projection turns each op output into a scalar so every
    output entry contributes a distinct weight.
    """
    def proj(shape):
        return rng.normal(size=shape)

    cases = {}
    a, b = _param(rng, 3, 4), _param(rng, 1, 4)
    w = proj((3, 4))
    cases["add(broadcast)"] = (lambda: ((a + b) * w).sum(), [a, b])
    c, d = _param(rng, 3, 4), _param(rng, 4)
    cases["sub(broadcast)"] = (lambda: ((c - d) * w).sum(), [c, d])
    e, f = _param(rng, 2, 3, 4), _param(rng, 3, 1)
    w3 = proj((2, 3, 4))
    cases["mul(broadcast)"] = (lambda: (e * f * w3).sum(), [e, f])
    g, h = _param(rng, 3, 4), Tensor(rng.uniform(1.0, 2.0, size=(3, 4)), requires_grad=True)
    cases["div"] = (lambda: ((g / h) * w).sum(), [g, h])
    r = Tensor(rng.normal(size=(3, 4)) + np.sign(rng.normal(size=(3, 4))) * 0.1, requires_grad=True)
    cases["relu"] = (lambda: (tn.relu(r) * w).sum(), [r])
    s = _param(rng, 3, 4, scale=2.0)
    cases["sigmoid"] = (lambda: (tn.sigmoid(s) * w).sum(), [s])
    ab = Tensor(rng.normal(size=(3, 4)) + np.sign(rng.normal(size=(3, 4))) * 0.1, requires_grad=True)
    cases["abs"] = (lambda: (tn.abs_(ab) * w).sum(), [ab])
    ex = _param(rng, 3, 4, scale=0.5)
    cases["exp"] = (lambda: (tn.exp(ex) * w).sum(), [ex])
    m1, m2 = _param(rng, 2, 3, 4), _param(rng, 2, 4, 5)
    wm = proj((2, 3, 5))
    cases["matmul(batched)"] = (lambda: (tn.matmul(m1, m2) * wm).sum(), [m1, m2])
    m3, m4 = _param(rng, 2, 3, 4), _param(rng, 4, 5)
    cases["matmul(3d@2d)"] = (lambda: (tn.matmul(m3, m4) * wm).sum(), [m3, m4])
    sm = _param(rng, 2, 4, 4)
    mask = np.zeros((4, 4))
    np.fill_diagonal(mask, tn.MASK_FILL)
    ws = proj((2, 4, 4))
    cases["softmax(diag mask)"] = (lambda: (tn.softmax_lastaxis(sm, mask) * ws).sum(), [sm])
    ca, cb = _param(rng, 2, 3, 2), _param(rng, 2, 3, 4)
    wc = proj((2, 3, 6))
    cases["concat_lastaxis"] = (lambda: (tn.concat_lastaxis(ca, cb) * wc).sum(), [ca, cb])
    ln_x, ln_g, ln_b = _param(rng, 2, 3, 5), _param(rng, 5), _param(rng, 5)
    wl = proj((2, 3, 5))
    cases["layer_norm"] = (lambda: (tn.layer_norm(ln_x, ln_g, ln_b) * wl).sum(), [ln_x, ln_g, ln_b])
    rs = _param(rng, 2, 6)
    wr = proj((3, 4))
    cases["reshape+transpose"] = (lambda: (rs.reshape(3, 4).transpose(1, 0).transpose(1, 0) * wr).sum(), [rs])
    sx = _param(rng, 2, 3, 4)
    ws2 = proj((2, 4))
    cases["sum/mean(axis)"] = (lambda: (sx.sum(axis=1) * ws2).sum() + sx.mean(axis=(0, 2)).sum(), [sx])
    est, tgt = _param(rng, 3, 4), rng.normal(size=(3, 4))
    msk = (rng.random((3, 4)) < 0.6).astype(float)
    msk[0, 0] = 1.0
    cases["masked_mae"] = (lambda: tn.masked_mae(est, tgt, msk), [est])
    q, k, v = _param(rng, 2, 2, 4, 3), _param(rng, 2, 2, 4, 3), _param(rng, 2, 2, 4, 3)
    wa = proj((2, 2, 4, 3))
    cases["diag_masked_attention"] = (
        lambda: (diag_masked_self_attention(q, k, v, True).values * wa).sum(), [q, k, v])
    return cases


def gradcheck_config(**overrides):
    """The small instance used for the full-model check."""
    params = dict(T=4, D=3, n_layers=2, d_model=8, d_ffn=8, n_heads=2, d_k=4, d_v=4, dropout=0.0)
    params.update(overrides)
    return SaitsConfig(**params)


def model_case(config: SaitsConfig, batch=2, seed=0):
    if config.dropout != 0.0:
        raise ConfigError("gradient check needs dropout = 0 (dropout makes the loss stochastic)")
    rng = np.random.default_rng(seed)
    model = build_model(config, seed=seed)
    model.train()
    X = rng.normal(size=(batch, config.T, config.D))
    M = (rng.random(X.shape) < 0.8).astype(float)
    M.reshape(-1)[:2] = 1.0
    indicating = np.zeros_like(M)
    obs = np.flatnonzero(M.ravel())
    indicating.reshape(-1)[rng.choice(obs, size=max(1, obs.size // 5), replace=False)] = 1.0
    m_hat = M - indicating
    x_hat = np.where(m_hat == 1, X, 0.0)

    def loss_fn():
        out = model(x_hat, m_hat)
        return joint_loss(out, X, m_hat, indicating, config.lambda_mit, config.objective)[0]

    return loss_fn, list(model.named_parameters())


def run_suite(config: SaitsConfig | None = None, seed=0, tol=TOLERANCE, variants=("saits",)):
    """Check every primitive and the full loss of each requested variant."""
    config = config or gradcheck_config()
    if config.dropout != 0.0:
        raise ConfigError("gradient check needs dropout = 0 (dropout makes the loss stochastic)")
    rng = np.random.default_rng(seed)
    results = [check(name, fn, params, tol=tol) for name, (fn, params) in op_cases(rng).items()]
    for variant in variants:
        fn, params = model_case(config.replace(variant=variant), seed=seed)
        results.append(check(f"model[{variant}]", fn, params, tol=tol))
    return results
