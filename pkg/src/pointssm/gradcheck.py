"""Finite-difference gradient checking for every module and the full model.

Central differences with h = 1e-5 in double precision. Small tensors are
checked exhaustively; the end-to-end model samples a few components per
parameter so the whole report stays fast. The relative error for a tensor is

    max|analytic - numeric| / (max|analytic| + max|numeric| + 1e-12)
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from . import tensor as T
from .tensor import Tensor, backward
from .geometry import PointCloud, gaussian_weights, normalize_patch
from .ssm import init_ssm_params, recurrent_scan
from .lgp import init_lgp_params, build_lgp_geometry, lgp_forward, couple_geometry
from .cofe import init_cofe_params, cofe_forward
from .bissm import init_bissm_params, bissm_forward
from .model import ModelConfig, PointCloudClassifier, prepare_clouds
from .training import cross_entropy

FD_STEP = 1e-5

MODULE_THRESHOLD = 1e-4
END_TO_END_THRESHOLD = 1e-3


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    num = np.abs(analytic - numeric).max()
    den = np.abs(analytic).max() + np.abs(numeric).max() + 1e-12
    return float(num / den)


def fd_check(build_loss: Callable[[], Tensor], tensors: list[tuple[str, Tensor]],
             h: float = FD_STEP, samples_per_tensor: int | None = None,
             rng: np.random.Generator | None = None) -> dict[str, float]:
    """Compare backward() against central differences for each tensor.

    ``build_loss`` must rebuild the graph from the current tensor values on
    every call. With ``samples_per_tensor`` set, only that many randomly
    chosen components of each tensor are probed.
    """
    for _, t in tensors:
        t.grad = None
    loss = build_loss()
    backward(loss)
    report: dict[str, float] = {}
    for name, t in tensors:
        analytic = np.zeros_like(t.data) if t.grad is None else t.grad
        flat = t.data.reshape(-1)
        if samples_per_tensor is None or samples_per_tensor >= flat.size:
            picks = np.arange(flat.size)
        else:
            picks = rng.choice(flat.size, size=samples_per_tensor, replace=False)
        numeric = np.empty(len(picks))
        for j, idx in enumerate(picks):
            orig = flat[idx]
            flat[idx] = orig + h
            with T.no_grad():
                up = build_loss().item()
            flat[idx] = orig - h
            with T.no_grad():
                down = build_loss().item()
            flat[idx] = orig
            numeric[j] = (up - down) / (2.0 * h)
        report[name] = relative_error(analytic.reshape(-1)[picks], numeric)
    return report


def _sink(shape, rng) -> Tensor:
    return Tensor(rng.normal(size=shape))


def _check_tensor_ops(rng) -> float:
    a = Tensor(rng.normal(size=(4, 5)), requires_grad=True)
    b = Tensor(rng.normal(size=(5, 3)), requires_grad=True)
    w = Tensor(rng.normal(size=(2, 3, 3)), requires_grad=True)
    sink1 = _sink((4, 3), rng)
    sink2 = _sink((1, 2, 4), rng)

    def loss():
        y = T.matmul(a, b)
        z = T.softmax(y, axis=1) * T.sigmoid(y) + T.softplus(y) * 0.1
        z = z + (y - y.mean(axis=0, keepdims=True)).relu()
        z = z / T.sqrt(y.var(axis=0, keepdims=True) + 1.0)
        conv = T.conv1d(T.reshape(T.transpose(y, (1, 0)), (1, 3, 4)), w, 1)
        return (z * sink1).sum() + (conv * sink2).sum() + y.max(axis=0).sum()

    report = fd_check(loss, [("a", a), ("b", b), ("w", w)])
    return max(report.values())


def _check_geometry_coupling(rng) -> float:
    # gradients flow through features only; the weights are coordinate
    # constants whose Jacobian is the broadcast weight itself
    pts = rng.normal(size=(6, 3)) * 3.0
    center = pts[0]
    weights = gaussian_weights(normalize_patch(pts), normalize_patch(pts)[0])
    feats = Tensor(rng.normal(size=(1, 1, 6, 4)), requires_grad=True)
    sink = _sink((1, 1, 6, 4), rng)

    def loss():
        return (couple_geometry(feats, weights[None, None]) * sink).sum()

    report = fd_check(loss, [("features", feats)])
    backward_grad = feats.grad
    jacobian_err = np.abs(backward_grad - sink.data * weights[None, None]).max()
    return max(max(report.values()), float(jacobian_err))


def _check_ssm(rng) -> float:
    params = init_ssm_params(4, 3, rng)
    x = Tensor(rng.normal(size=(2, 4, 6)), requires_grad=True)
    sink = _sink((2, 4, 6), rng)

    def loss():
        return (recurrent_scan(x, params, selective=True) * sink).sum()

    report = fd_check(loss, params.named("ssm") + [("x", x)])
    return max(report.values())


def _check_lgp(rng) -> float:
    params = init_lgp_params(6, rng)
    centers = rng.normal(size=(1, 7, 3)) * 4.0
    geom = build_lgp_geometry(centers, 4)
    tokens = Tensor(rng.normal(size=(1, 8, 6)), requires_grad=True)
    sink = _sink((1, 8, 6), rng)

    def loss():
        return (lgp_forward(tokens, geom, params) * sink).sum()

    report = fd_check(loss, params.named("lgp") + [("tokens", tokens)])
    return max(report.values())


def _check_cofe(rng) -> float:
    params = init_cofe_params(8, 2, rng)
    x = Tensor(rng.normal(size=(2, 8, 5)), requires_grad=True)
    sink = _sink((2, 8, 5), rng)

    def loss():
        return (cofe_forward(x, params, 2) * sink).sum()

    report = fd_check(loss, params.named("cofe") + [("x", x)])
    return max(report.values())


def _check_bissm(rng) -> float:
    params = init_bissm_params(4, 3, 2, rng, use_gate=True)
    x = Tensor(rng.normal(size=(1, 4, 5)), requires_grad=True)
    sink = _sink((1, 4, 5), rng)

    def loss():
        return (bissm_forward(x, params) * sink).sum()

    report = fd_check(loss, params.named("bissm") + [("x", x)])
    return max(report.values())


def _check_model(rng, samples_per_tensor: int = 3) -> float:
    config = ModelConfig(depth=1, dim=16, num_groups=8, group_size=4,
                         lgp_neighbors=4, cofe_groups=2, ssm_state=4,
                         num_classes=4, seed=int(rng.integers(1 << 31)))
    model = PointCloudClassifier(config)
    # jitter every parameter off its init: zero biases would put the exact
    # (0,0,0) center rows on the relu kink, where central differences and
    # the subgradient legitimately disagree
    for _, p in model.named_params():
        p.data = p.data + rng.normal(0.0, 0.02, size=p.shape)
    cloud = PointCloud(rng.normal(size=(32, 3)) * 5.0)
    prepared = prepare_clouds([cloud], config)
    labels = np.array([1])

    def loss():
        return cross_entropy(model.forward_batch(prepared), labels)

    report = fd_check(loss, model.named_params(),
                      samples_per_tensor=samples_per_tensor, rng=rng)
    return max(report.values())


MODULE_CHECKS: dict[str, Callable[[np.random.Generator], float]] = {
    "tensor": _check_tensor_ops,
    "geometry": _check_geometry_coupling,
    "ssm": _check_ssm,
    "lgp": _check_lgp,
    "cofe": _check_cofe,
    "bissm": _check_bissm,
    "model": _check_model,
}


def check_modules(seed: int = 0) -> dict[str, float]:
    """Worst finite-difference relative error per module, one entry each."""
    out: dict[str, float] = {}
    for index, (name, check) in enumerate(MODULE_CHECKS.items()):
        rng = np.random.Generator(np.random.PCG64(
            np.random.SeedSequence((seed, index)).generate_state(1)[0]))
        out[name] = check(rng)
    return out


def thresholds() -> dict[str, float]:
    return {name: (END_TO_END_THRESHOLD if name == "model" else MODULE_THRESHOLD)
            for name in MODULE_CHECKS}
