"""Selective state space machinery.

A diagonal per-channel state space is discretized with a zero-order hold and
run as a sequential recurrence. In selective mode the input projection,
readout and step size are regenerated from the input at every timestep; in
fixed mode the same parameters drive all steps, which makes the system
linear time-invariant and lets a causal convolution reproduce the scan
exactly. The convolution path is kept as an independent equivalence oracle.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import Tensor

# below this |delta * a| the exact ZOH input term cancels catastrophically;
# switch to the two-term series delta * b * (1 + delta * a / 2)
ZOH_SERIES_THRESHOLD = 1e-8


class ContractError(ValueError):
    """Operation invoked outside its declared parameter regime."""


@dataclass
class SsmParams:
    """Parameters of one scan direction over C channels and N states.

    ``a_log`` stores log(-A); the state matrix A = -exp(a_log) is therefore
    strictly negative no matter what training does to ``a_log``. The
    ``fixed_*`` fields supply the time-invariant B, C and step size used when
    a scan runs in non-selective mode; they stay ``None`` for selective use.
    """

    a_log: Tensor          # (C, N)
    w_b: Tensor            # (N, C)
    w_c: Tensor            # (N, C)
    w_delta: Tensor        # (C, C)
    delta_bias: Tensor     # (C,)
    d: Tensor              # (C,)
    fixed_b: Tensor | None = None      # (N,)
    fixed_c: Tensor | None = None      # (N,)
    fixed_delta: Tensor | None = None  # (C,)

    @property
    def channels(self) -> int:
        return self.a_log.shape[0]

    @property
    def states(self) -> int:
        return self.a_log.shape[1]

    def a(self) -> Tensor:
        """State matrix A < 0, shape (C, N)."""
        return T.neg(T.exp(self.a_log))

    def named(self, prefix: str) -> list[tuple[str, Tensor]]:
        out = [(f"{prefix}.a_log", self.a_log), (f"{prefix}.w_b", self.w_b),
               (f"{prefix}.w_c", self.w_c), (f"{prefix}.w_delta", self.w_delta),
               (f"{prefix}.delta_bias", self.delta_bias), (f"{prefix}.d", self.d)]
        for name in ("fixed_b", "fixed_c", "fixed_delta"):
            t = getattr(self, name)
            if t is not None:
                out.append((f"{prefix}.{name}", t))
        return out


@dataclass
class DiscreteStep:
    """One timestep of discretized dynamics: 0 < abar < 1 elementwise."""

    abar: Tensor           # (..., C, N)
    bbar: Tensor           # (..., C, N)
    c: Tensor | None = None  # (..., N)


def init_ssm_params(channels: int, states: int, rng: np.random.Generator) -> SsmParams:
    """Standard initialization: A rows -1..-N, D ones, step sizes log-uniform
    in [0.001, 0.1], projections scaled by 1/sqrt(fan_in)."""
    a_log = np.tile(np.log(np.arange(1, states + 1, dtype=np.float64)), (channels, 1))
    scale = 1.0 / np.sqrt(channels)
    dt = np.exp(rng.uniform(np.log(1e-3), np.log(1e-1), size=channels))
    delta_bias = np.log(np.expm1(dt))  # softplus inverse
    return SsmParams(
        a_log=Tensor(a_log, requires_grad=True),
        w_b=Tensor(rng.normal(0.0, scale, size=(states, channels)), requires_grad=True),
        w_c=Tensor(rng.normal(0.0, scale, size=(states, channels)), requires_grad=True),
        w_delta=Tensor(rng.normal(0.0, scale, size=(channels, channels)), requires_grad=True),
        delta_bias=Tensor(delta_bias, requires_grad=True),
        d=Tensor(np.ones(channels), requires_grad=True),
    )


def fixed_ssm_params(a: np.ndarray, b: np.ndarray, c: np.ndarray,
                     delta: np.ndarray, d: np.ndarray) -> SsmParams:
    """Build a time-invariant system from explicit values (a must be < 0)."""
    a = np.asarray(a, dtype=np.float64)
    if np.any(a >= 0):
        raise ContractError("state matrix entries must be strictly negative")
    channels, states = a.shape
    delta = np.asarray(delta, dtype=np.float64)
    if np.any(delta <= 0):
        raise ContractError("fixed step sizes must be strictly positive")
    return SsmParams(
        a_log=Tensor(np.log(-a), requires_grad=True),
        w_b=Tensor(np.zeros((states, channels))),
        w_c=Tensor(np.zeros((states, channels))),
        w_delta=Tensor(np.zeros((channels, channels))),
        delta_bias=Tensor(np.zeros(channels)),
        d=Tensor(np.asarray(d, dtype=np.float64), requires_grad=True),
        fixed_b=Tensor(np.asarray(b, dtype=np.float64), requires_grad=True),
        fixed_c=Tensor(np.asarray(c, dtype=np.float64), requires_grad=True),
        fixed_delta=Tensor(delta, requires_grad=True),
    )


def generate_selective_params(x_k: Tensor | np.ndarray, params: SsmParams):
    """Per-step parameters from one input vector x_k of shape (C,).

    Returns (B_k, C_k, delta_k) with shapes (N,), (N,), (C,). The step size
    goes through softplus and is therefore strictly positive.
    """
    x = x_k if isinstance(x_k, Tensor) else Tensor(x_k)
    col = T.reshape(x, (-1, 1))
    b_k = T.reshape(T.matmul(params.w_b, col), (-1,))
    c_k = T.reshape(T.matmul(params.w_c, col), (-1,))
    delta_k = T.softplus(T.reshape(T.matmul(params.w_delta, col), (-1,)) + params.delta_bias)
    return b_k, c_k, delta_k


def _discretize(a: Tensor, b: Tensor, delta: Tensor) -> tuple[Tensor, Tensor]:
    """ZOH on a diagonal system, vectorized over leading axes.

    ``a`` is (C, N), ``delta`` is (..., C), ``b`` is (..., N). Output shapes
    are (..., C, N). The input term uses (exp(da) - 1) / a * b away from the
    removable singularity and the two-term series delta * b * (1 + da / 2)
    below the threshold.
    """
    delta_e = T.reshape(delta, delta.shape + (1,))   # (..., C, 1)
    b_e = T.reshape(b, b.shape[:-1] + (1, b.shape[-1]))  # (..., 1, N)
    da = delta_e * a                                  # (..., C, N)
    abar = T.exp(da)
    exact = (abar - 1.0) / a * b_e
    small = np.abs(da.data) < ZOH_SERIES_THRESHOLD
    if small.any():
        series = delta_e * b_e * (da * 0.5 + 1.0)
        bbar = T.where(small, series, exact)
    else:
        bbar = exact
    return abar, bbar


def zoh_discretize(a: Tensor | np.ndarray, b_k: Tensor | np.ndarray,
                   delta_k: Tensor | np.ndarray) -> DiscreteStep:
    """Discretize one step: abar = exp(delta a), bbar = (abar - 1)/a * b.

    ``a`` is the (C, N) diagonal state matrix (all entries < 0), ``b_k`` the
    (N,) input projection, ``delta_k`` the (C,) step sizes (> 0).
    """
    a = a if isinstance(a, Tensor) else Tensor(a)
    b_k = b_k if isinstance(b_k, Tensor) else Tensor(b_k)
    delta_k = delta_k if isinstance(delta_k, Tensor) else Tensor(delta_k)
    if np.any(a.data >= 0):
        raise ContractError("zoh_discretize requires a strictly negative state matrix")
    if np.any(delta_k.data <= 0):
        raise ContractError("zoh_discretize requires strictly positive step sizes")
    abar, bbar = _discretize(a, b_k, delta_k)
    return DiscreteStep(abar=abar, bbar=bbar)


def _selective_zoh(a: Tensor, delta: Tensor, b_sel: Tensor, xt: Tensor):
    """Fused ZOH factors for the selective scan: returns (abar, bx).

    abar = exp(delta a) and bx = bbar * x with bbar = (abar - 1)/a * b away
    from the singularity and delta * b * (1 + delta a / 2) below it. Two
    recorded nodes share the forward intermediates; backward rules are the
    hand-derived chain through both branches. Shapes: a (C, N),
    delta (B, L, C), b_sel (B, L, N), xt (B, L, C); outputs (B, L, C, N).
    """
    ad, dd, bd, xd = a.data, delta.data, b_sel.data, xt.data
    de = dd[..., None]
    da = de * ad
    abar_v = np.exp(da)
    small = np.abs(da) < ZOH_SERIES_THRESHOLD
    has_small = bool(small.any())
    factor = (abar_v - 1.0) / ad
    if has_small:
        factor = np.where(small, de * (1.0 + 0.5 * da), factor)
    t = bd[:, :, None, :] * xd[..., None]
    bx_v = factor * t

    def bwd_abar(g):
        g_da = g * abar_v
        T._accum_owned(delta, (g_da * ad).sum(axis=-1))
        T._accum_owned(a, (g_da * de).sum(axis=(0, 1)))

    def bwd_bx(g):
        g_factor = g * t
        g_t = g * factor
        T._accum_owned(b_sel, (g_t * xd[..., None]).sum(axis=2))
        T._accum_owned(xt, (g_t * bd[:, :, None, :]).sum(axis=-1))
        dfactor_dda = abar_v / ad
        if has_small:
            dfactor_dda = np.where(small, 0.5 * de, dfactor_dda)
            explicit_delta = np.where(small, 1.0 + 0.5 * da, 0.0)
            explicit_a = np.where(small, 0.0, -factor / ad)
            T._accum_owned(delta, (g_factor * explicit_delta).sum(axis=-1))
            g_da = g_factor * dfactor_dda
            T._accum_owned(a, (g_da * de + g_factor * explicit_a).sum(axis=(0, 1)))
        else:
            g_da = g_factor * dfactor_dda
            T._accum_owned(a, (g_da * de - g_factor * factor / ad).sum(axis=(0, 1)))
        T._accum_owned(delta, (g_da * ad).sum(axis=-1))

    abar = T._record(abar_v, (a, delta), bwd_abar)
    bx = T._record(bx_v, (a, delta, b_sel, xt), bwd_bx)
    return abar, bx


def _as_batched(x: Tensor) -> tuple[Tensor, bool]:
    if x.ndim == 2:
        return T.reshape(x, (1,) + x.shape), True
    if x.ndim == 3:
        return x, False
    raise T.ShapeError(f"scan input must be (C, L) or (B, C, L), got {x.shape}")


def recurrent_scan(x: Tensor | np.ndarray, params: SsmParams,
                   selective: bool = True) -> Tensor:
    """Run the state recurrence h_k = abar_k * h_{k-1} + bbar_k * x_k.

    ``x`` is (C, L) or (B, C, L); the output matches. Readout is
    y_k = <c_k, h_k> + d * x_k per channel. Selective mode regenerates
    (B_k, C_k, delta_k) from x_k at every step; fixed mode uses the
    ``fixed_*`` parameters for all steps.
    """
    x = x if isinstance(x, Tensor) else Tensor(x)
    xb, squeeze = _as_batched(x)
    length = xb.shape[-1]
    xt = T.transpose(xb, (0, 2, 1))                   # (B, L, C)
    a = params.a()

    if selective:
        b_sel = T.matmul(xt, T.transpose(params.w_b, (1, 0)))    # (B, L, N)
        c_sel = T.matmul(xt, T.transpose(params.w_c, (1, 0)))    # (B, L, N)
        delta = T.softplus(T.matmul(xt, T.transpose(params.w_delta, (1, 0)))
                           + params.delta_bias)                  # (B, L, C)
        abar, bx = _selective_zoh(a, delta, b_sel, xt)  # (B, L, C, N)
    else:
        if params.fixed_b is None or params.fixed_c is None or params.fixed_delta is None:
            raise ContractError("non-selective scan requires fixed_b, fixed_c and fixed_delta")
        abar, bbar = _discretize(a, params.fixed_b, params.fixed_delta)  # (C, N)
        bx = bbar * T.reshape(xt, xt.shape + (1,))      # (B, L, C, N)
    h = Tensor(np.zeros((xb.shape[0], xb.shape[1], params.states)))
    states = []
    for k in range(length):
        bx_k = T.select(bx, 1, k)
        h = T.fma(T.select(abar, 1, k) if selective else abar, h, bx_k)
        states.append(h)
    hs = T.stack(states, 1)                             # (B, L, C, N)

    y = _readout(hs, c_sel if selective else params.fixed_c)
    y = y + params.d * xt
    out = T.transpose(y, (0, 2, 1))
    return T.reshape(out, out.shape[1:]) if squeeze else out


def _readout(hs: Tensor, c: Tensor) -> Tensor:
    """y[b,l,c] = sum_n hs[b,l,c,n] c[(b,l,)n], one fused operation."""
    per_step = c.ndim == 3
    cd = c.data[:, :, None, :] if per_step else c.data
    out = (hs.data * cd).sum(axis=-1)

    def bwd(g):
        ge = np.asarray(g)[..., None]
        T._accum_owned(hs, ge * cd)
        if per_step:
            T._accum_owned(c, np.einsum("blc,blcn->bln", g, hs.data))
        else:
            T._accum_owned(c, (ge * hs.data).sum(axis=(0, 1, 2)))

    return T._record(out, (hs, c), bwd)


def lti_conv_kernel(params: SsmParams, length: int) -> np.ndarray:
    """Per-channel global kernel (c bbar, c abar bbar, ..., c abar^{L-1} bbar).

    Only defined for a time-invariant system; selective parameters have no
    single kernel and are rejected.
    """
    if params.fixed_b is None or params.fixed_c is None or params.fixed_delta is None:
        raise ContractError("convolution kernel is undefined for selective parameters; "
                            "supply fixed_b, fixed_c and fixed_delta")
    with T.no_grad():
        step = zoh_discretize(params.a(), params.fixed_b, params.fixed_delta)
    abar, bbar = step.abar.data, step.bbar.data          # (C, N)
    c = params.fixed_c.data                              # (N,)
    kernel = np.empty((params.channels, length))
    power = bbar.copy()
    for j in range(length):
        kernel[:, j] = power @ c
        power = power * abar
    return kernel


def lti_conv_apply(x: np.ndarray, kernel: np.ndarray, d: np.ndarray) -> np.ndarray:
    """Causal convolution y_k = sum_{j<=k} kernel_{k-j} x_j + d x_k.

    ``x`` is (C, L) or (B, C, L); evaluated directly in numpy so it stays an
    independent reference for the recurrence.
    """
    x = np.asarray(x, dtype=np.float64)
    kernel = np.asarray(kernel, dtype=np.float64)
    length = x.shape[-1]
    if kernel.shape[-1] != length:
        raise T.ShapeError(f"kernel length {kernel.shape[-1]} does not match sequence {length}")
    y = np.zeros_like(x)
    for j in range(length):
        y[..., j:] += kernel[..., j:j + 1] * x[..., :length - j]
    return y + np.asarray(d)[..., None] * x
