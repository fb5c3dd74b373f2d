"""Bidirectional SSM block with dual-path gating on the input.

The block projects channels with a one-wide convolution, enhances the result
with the grouped dual-path gate, then runs two selective scans: a forward
scan, and a second scan over the channel-reversed tensor whose output is
flipped back before the two are summed and linearly merged. Both scans read
the sequence left to right; bidirectionality lives on the channel axis, not
the time axis.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import Tensor
from .cofe import CofeParams, cofe_forward, init_cofe_params
from .ssm import SsmParams, init_ssm_params, recurrent_scan


@dataclass
class SsmBranch:
    """One scan direction, optionally wrapped in a silu gate."""

    ssm: SsmParams
    gate_w: Tensor | None   # (C, C) when gated
    gate_b: Tensor | None   # (C,)

    def apply(self, x: Tensor) -> Tensor:
        y = recurrent_scan(x, self.ssm, selective=True)
        if self.gate_w is None:
            return y
        xt = T.transpose(x, (0, 2, 1))
        gate = T.silu(T.matmul(xt, self.gate_w) + self.gate_b)
        return y * T.transpose(gate, (0, 2, 1))

    def named(self, prefix: str) -> list[tuple[str, Tensor]]:
        out = self.ssm.named(f"{prefix}.ssm")
        if self.gate_w is not None:
            out += [(f"{prefix}.gate_w", self.gate_w), (f"{prefix}.gate_b", self.gate_b)]
        return out


@dataclass
class BissmParams:
    in_proj_w: Tensor    # (C, C, 1) one-wide conv
    in_proj_b: Tensor    # (C,)
    cofe: CofeParams
    cofe_groups: int
    fwd: SsmBranch
    rev: SsmBranch
    out_w: Tensor        # (C, C)
    out_b: Tensor        # (C,)
    shared_reverse: bool = False

    def named(self, prefix: str) -> list[tuple[str, Tensor]]:
        out = [(f"{prefix}.in_proj_w", self.in_proj_w), (f"{prefix}.in_proj_b", self.in_proj_b)]
        out += self.cofe.named(f"{prefix}.cofe")
        out += self.fwd.named(f"{prefix}.fwd")
        if not self.shared_reverse:
            out += self.rev.named(f"{prefix}.rev")
        out += [(f"{prefix}.out_w", self.out_w), (f"{prefix}.out_b", self.out_b)]
        return out


def _init_branch(dim: int, states: int, gated: bool, rng: np.random.Generator) -> SsmBranch:
    ssm = init_ssm_params(dim, states, rng)
    if not gated:
        return SsmBranch(ssm=ssm, gate_w=None, gate_b=None)
    return SsmBranch(
        ssm=ssm,
        gate_w=Tensor(rng.normal(0.0, 1.0 / np.sqrt(dim), size=(dim, dim)), requires_grad=True),
        gate_b=Tensor(np.zeros(dim), requires_grad=True),
    )


def init_bissm_params(dim: int, states: int, cofe_groups: int,
                      rng: np.random.Generator, use_gate: bool = True,
                      share_reverse: bool = False) -> BissmParams:
    fwd = _init_branch(dim, states, use_gate, rng)
    rev = fwd if share_reverse else _init_branch(dim, states, use_gate, rng)
    return BissmParams(
        in_proj_w=Tensor(rng.normal(0.0, 1.0 / np.sqrt(dim), size=(dim, dim, 1)),
                         requires_grad=True),
        in_proj_b=Tensor(np.zeros(dim), requires_grad=True),
        cofe=init_cofe_params(dim, cofe_groups, rng),
        cofe_groups=cofe_groups,
        fwd=fwd,
        rev=rev,
        out_w=Tensor(rng.normal(0.0, 1.0 / np.sqrt(dim), size=(dim, dim)), requires_grad=True),
        out_b=Tensor(np.zeros(dim), requires_grad=True),
        shared_reverse=share_reverse,
    )


def channel_flip(x: Tensor) -> Tensor:
    """Reverse the channel axis of a (..., C, L) tensor; positions untouched."""
    return T.flip(x, -2)


def bissm_forward(x: Tensor, params: BissmParams) -> Tensor:
    """(B, C, L) -> (B, C, L).

    y = out(FwdSSM(F') + flip(RevSSM(flip(F')))) with F' the gated projection
    of the input; flipping the reverse branch back aligns channel identities
    before the sum.
    """
    proj = T.conv1d(x, params.in_proj_w, 0) + T.reshape(params.in_proj_b, (1, -1, 1))
    enhanced = cofe_forward(proj, params.cofe, params.cofe_groups)
    y_fwd = params.fwd.apply(enhanced)
    y_rev = channel_flip(params.rev.apply(channel_flip(enhanced)))
    merged = T.transpose(y_fwd + y_rev, (0, 2, 1))
    out = T.matmul(merged, params.out_w) + params.out_b
    return T.transpose(out, (0, 2, 1))
