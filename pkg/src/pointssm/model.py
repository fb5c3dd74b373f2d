"""End-to-end point cloud classifier.

Pipeline: farthest point sampling and KNN grouping, a two-stage max-pool
patch encoder, a class token plus per-layer coordinate-MLP positional
embeddings, a stack of encoder blocks (local geometric pooling and the
bidirectional SSM, both residual), and an MLP head on the class token.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import Tensor
from .geometry import PointCloud, PatchSet, build_patches, CapacityError
from .lgp import (LgpParams, LgpGeometry, init_lgp_params, build_lgp_geometry,
                  lgp_forward)
from .bissm import BissmParams, init_bissm_params, bissm_forward
from .cofe import ConfigError

LAYER_NORM_EPS = 1e-5
PATCH_RADIUS_GUARD = 1e-12


@dataclass
class ModelConfig:
    """Complete hyperparameter record, desk-scale by default."""

    depth: int = 4
    dim: int = 64
    num_groups: int = 32
    group_size: int = 16
    lgp_neighbors: int = 8
    cofe_groups: int = 4
    ssm_state: int = 8
    num_classes: int = 8
    drop_path_rate: float = 0.0
    seed: int = 0
    use_ssm_gate: bool = True
    share_reverse_weights: bool = False
    lgp_gaussian_coupling: bool = True
    head_pool_concat: bool = False

    def __post_init__(self):
        if self.dim % self.cofe_groups != 0:
            raise ConfigError(f"cofe_groups ({self.cofe_groups}) must divide dim ({self.dim})")
        if self.lgp_neighbors > self.num_groups:
            raise ConfigError(f"lgp_neighbors ({self.lgp_neighbors}) cannot exceed "
                              f"num_groups ({self.num_groups})")
        for field in ("depth", "dim", "num_groups", "group_size", "lgp_neighbors",
                      "cofe_groups", "ssm_state", "num_classes"):
            if getattr(self, field) < 1:
                raise ConfigError(f"{field} must be positive")
        if not 0.0 <= self.drop_path_rate <= 1.0:
            raise ConfigError("drop_path_rate must lie in [0, 1]")

    @classmethod
    def full_scale(cls) -> "ModelConfig":
        """The large configuration used for parameter and FLOP audits."""
        return cls(depth=12, dim=384, num_groups=128, group_size=32,
                   lgp_neighbors=8, cofe_groups=16, ssm_state=16,
                   num_classes=40, drop_path_rate=0.2)


@dataclass
class TokenSeq:
    """Class token plus L patch tokens: features (B, L+1, C)."""

    features: Tensor
    centers: np.ndarray   # (B, L, 3)
    layer_index: int = 0

    def __post_init__(self):
        if self.features.shape[1] != self.centers.shape[1] + 1:
            raise T.ShapeError(f"token sequence {self.features.shape} does not match "
                               f"{self.centers.shape[1]} centers plus a class token")


@dataclass
class PreparedBatch:
    """Geometry precomputed once per batch of clouds; all plain constants."""

    rel_points: np.ndarray   # (B, L, K, 3) center-relative, radius normalized
    centers: np.ndarray      # (B, L, 3)
    lgp_geom: LgpGeometry


def prepare_patch_coords(patches: PatchSet) -> np.ndarray:
    """Center-relative patch coordinates scaled by the inverse patch radius.

    The max-norm radius is idempotent under point duplication and cancels
    global rescaling, so patch tokens depend on cloud scale only through the
    positional path.
    """
    rel = patches.neighbor_points - patches.centers[..., None, :]
    radius = np.linalg.norm(rel, axis=-1).max(axis=-1)
    return rel / np.maximum(radius, PATCH_RADIUS_GUARD)[..., None, None]


def prepare_clouds(clouds: list[PointCloud], config: ModelConfig) -> PreparedBatch:
    rels, centers = [], []
    for cloud in clouds:
        need = max(config.num_groups, config.group_size)
        if len(cloud) < need:
            raise CapacityError(f"cloud with {len(cloud)} points is smaller than "
                                f"max(num_groups, group_size) = {need}")
        patches = build_patches(cloud, config.num_groups, config.group_size)
        rels.append(prepare_patch_coords(patches))
        centers.append(patches.centers)
    centers_arr = np.stack(centers)
    geom = build_lgp_geometry(centers_arr, config.lgp_neighbors)
    if not config.lgp_gaussian_coupling:
        geom = LgpGeometry(geom.neighbor_idx, np.ones_like(geom.weights))
    return PreparedBatch(np.stack(rels), centers_arr, geom)


def collate_prepared(samples: list[PreparedBatch]) -> PreparedBatch:
    """Stack single-cloud prepared batches into one batch."""
    return PreparedBatch(
        rel_points=np.concatenate([s.rel_points for s in samples]),
        centers=np.concatenate([s.centers for s in samples]),
        lgp_geom=LgpGeometry(
            neighbor_idx=np.concatenate([s.lgp_geom.neighbor_idx for s in samples]),
            weights=np.concatenate([s.lgp_geom.weights for s in samples]),
        ),
    )


def layer_norm(x: Tensor, scale: Tensor, shift: Tensor) -> Tensor:
    mu = x.mean(axis=-1, keepdims=True)
    centered = x - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    return centered / T.sqrt(var + LAYER_NORM_EPS) * scale + shift


def drop_path(x: Tensor, rate: float, training: bool,
              rng: np.random.Generator | None) -> Tensor:
    """Drop the whole residual branch per sample with probability ``rate``."""
    if not training or rate <= 0.0:
        return x
    keep = 1.0 - rate
    shape = (x.shape[0],) + (1,) * (x.ndim - 1)
    if keep == 0.0:
        return x * Tensor(np.zeros(shape))
    mask = (rng.random(shape) < keep).astype(np.float64)
    return x * Tensor(mask / keep)


@dataclass
class _Norm:
    scale: Tensor
    shift: Tensor

    def named(self, prefix):
        return [(f"{prefix}.scale", self.scale), (f"{prefix}.shift", self.shift)]


@dataclass
class _Positional:
    """Coordinate MLP for patch tokens; the class row is learned separately
    at the input embedding and has no geometry, so per-layer instances carry
    no class vector (it would sit behind the pooling bypass, unreachable)."""

    w1: Tensor    # (3, C)
    b1: Tensor
    w2: Tensor    # (C, C)
    b2: Tensor
    cls: Tensor | None = None   # (C,), input embedding only

    def embed(self, centers: np.ndarray) -> Tensor:
        h = T.relu(T.matmul(Tensor(centers), self.w1) + self.b1)
        return T.matmul(h, self.w2) + self.b2

    def named(self, prefix):
        out = [(f"{prefix}.w1", self.w1), (f"{prefix}.b1", self.b1),
               (f"{prefix}.w2", self.w2), (f"{prefix}.b2", self.b2)]
        if self.cls is not None:
            out.append((f"{prefix}.cls", self.cls))
        return out


@dataclass
class _Layer:
    norm1: _Norm
    lgp: LgpParams
    norm2: _Norm
    bissm: BissmParams

    def named(self, prefix):
        return (self.norm1.named(f"{prefix}.norm1") + self.lgp.named(f"{prefix}.lgp")
                + self.norm2.named(f"{prefix}.norm2") + self.bissm.named(f"{prefix}.bissm"))


def _norm_params(dim: int) -> _Norm:
    return _Norm(Tensor(np.ones(dim), requires_grad=True),
                 Tensor(np.zeros(dim), requires_grad=True))


def _positional_params(dim: int, rng: np.random.Generator,
                       with_cls: bool = False) -> _Positional:
    return _Positional(
        w1=Tensor(rng.normal(0.0, np.sqrt(2.0 / 3.0), size=(3, dim)), requires_grad=True),
        b1=Tensor(np.zeros(dim), requires_grad=True),
        w2=Tensor(rng.normal(0.0, np.sqrt(1.0 / dim), size=(dim, dim)), requires_grad=True),
        b2=Tensor(np.zeros(dim), requires_grad=True),
        cls=Tensor(rng.normal(0.0, 0.02, size=dim), requires_grad=True) if with_cls else None,
    )


class PointCloudClassifier:
    """The full classifier; parameters live in plain dataclasses of Tensors."""

    PE_H1 = 64
    PE_H2 = 128
    PE_HIDDEN = 128
    HEAD_HIDDEN = 256

    def __init__(self, config: ModelConfig):
        self.config = config
        rng = np.random.Generator(np.random.PCG64(config.seed))
        c = config.dim

        def he(fan_in, shape):
            return Tensor(rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape),
                          requires_grad=True)

        pe_cat = 2 * self.PE_H2
        self.pe_w1 = he(3, (3, self.PE_H1))
        self.pe_b1 = Tensor(np.zeros(self.PE_H1), requires_grad=True)
        self.pe_w2 = he(self.PE_H1, (self.PE_H1, self.PE_H2))
        self.pe_b2 = Tensor(np.zeros(self.PE_H2), requires_grad=True)
        self.pe_w3 = he(pe_cat, (pe_cat, self.PE_HIDDEN))
        self.pe_b3 = Tensor(np.zeros(self.PE_HIDDEN), requires_grad=True)
        self.pe_w4 = he(self.PE_HIDDEN, (self.PE_HIDDEN, c))
        self.pe_b4 = Tensor(np.zeros(c), requires_grad=True)

        self.cls_token = Tensor(rng.normal(0.0, 0.02, size=c), requires_grad=True)
        self.pos = [_positional_params(c, rng, with_cls=(i == 0))
                    for i in range(config.depth + 1)]
        self.layers = [
            _Layer(
                norm1=_norm_params(c),
                lgp=init_lgp_params(c, rng),
                norm2=_norm_params(c),
                bissm=init_bissm_params(c, config.ssm_state, config.cofe_groups, rng,
                                        use_gate=config.use_ssm_gate,
                                        share_reverse=config.share_reverse_weights),
            )
            for _ in range(config.depth)
        ]
        self.final_norm = _norm_params(c)

        head_in = 2 * c if config.head_pool_concat else c
        self.head_w1 = he(head_in, (head_in, self.HEAD_HIDDEN))
        self.head_b1 = Tensor(np.zeros(self.HEAD_HIDDEN), requires_grad=True)
        self.head_w2 = he(self.HEAD_HIDDEN, (self.HEAD_HIDDEN, self.HEAD_HIDDEN))
        self.head_b2 = Tensor(np.zeros(self.HEAD_HIDDEN), requires_grad=True)
        self.head_w3 = Tensor(np.zeros((self.HEAD_HIDDEN, config.num_classes)),
                              requires_grad=True)
        self.head_b3 = Tensor(np.zeros(config.num_classes), requires_grad=True)

    # ---- parameter registry ---------------------------------------------------

    def named_params(self) -> list[tuple[str, Tensor]]:
        out = [("patch_encoder.w1", self.pe_w1), ("patch_encoder.b1", self.pe_b1),
               ("patch_encoder.w2", self.pe_w2), ("patch_encoder.b2", self.pe_b2),
               ("patch_encoder.w3", self.pe_w3), ("patch_encoder.b3", self.pe_b3),
               ("patch_encoder.w4", self.pe_w4), ("patch_encoder.b4", self.pe_b4),
               ("cls_token", self.cls_token)]
        for i, p in enumerate(self.pos):
            out += p.named(f"pos.{i}")
        for i, layer in enumerate(self.layers):
            out += layer.named(f"layers.{i}")
        out += self.final_norm.named("final_norm")
        out += [("head.w1", self.head_w1), ("head.b1", self.head_b1),
                ("head.w2", self.head_w2), ("head.b2", self.head_b2),
                ("head.w3", self.head_w3), ("head.b3", self.head_b3)]
        return out

    def parameters(self) -> list[Tensor]:
        return [t for _, t in self.named_params()]

    def zero_grad(self) -> None:
        for t in self.parameters():
            t.grad = None

    # ---- forward pieces ---------------------------------------------------------

    def encode_patches(self, rel_points: np.ndarray) -> Tensor:
        """Prepared (B, L, K, 3) patch coordinates -> (B, L, C) tokens."""
        b, l, k, _ = rel_points.shape
        x = Tensor(rel_points.reshape(b * l, k, 3))
        h = T.relu(T.matmul(x, self.pe_w1) + self.pe_b1)
        h = T.matmul(h, self.pe_w2) + self.pe_b2                    # (BL, K, 128)
        pooled = h.max(axis=1, keepdims=True)
        joint = T.concat([T.expand(pooled, h.shape), h], axis=-1)   # (BL, K, 256)
        h = T.relu(T.matmul(joint, self.pe_w3) + self.pe_b3)
        h = T.matmul(h, self.pe_w4) + self.pe_b4                    # (BL, K, C)
        return T.reshape(h.max(axis=1), (b, l, self.config.dim))

    def _positional(self, index: int, centers: np.ndarray) -> Tensor:
        pos = self.pos[index]
        batch = centers.shape[0]
        if pos.cls is not None:
            cls_row = T.expand(T.reshape(pos.cls, (1, 1, -1)), (batch, 1, self.config.dim))
        else:
            cls_row = Tensor(np.zeros((batch, 1, self.config.dim)))
        return T.concat([cls_row, pos.embed(centers)], axis=1)

    def build_token_sequence(self, patch_tokens: Tensor, centers: np.ndarray) -> TokenSeq:
        """Prepend the class token and superimpose the input positional encoding."""
        batch = centers.shape[0]
        cls_row = T.expand(T.reshape(self.cls_token, (1, 1, -1)),
                           (batch, 1, self.config.dim))
        feats = T.concat([cls_row, patch_tokens], axis=1) + self._positional(0, centers)
        return TokenSeq(features=feats, centers=centers, layer_index=0)

    def encoder_block(self, seq: TokenSeq, layer_index: int, geom: LgpGeometry,
                      training: bool = False,
                      rng: np.random.Generator | None = None) -> TokenSeq:
        layer = self.layers[layer_index]
        z = seq.features
        pos = self._positional(layer_index + 1, seq.centers)
        n1 = layer_norm(z + pos, layer.norm1.scale, layer.norm1.shift)
        branch = lgp_forward(n1, geom, layer.lgp)
        z_hat = drop_path(branch, self.config.drop_path_rate, training, rng) + z
        n2 = layer_norm(z_hat, layer.norm2.scale, layer.norm2.shift)
        mixed = bissm_forward(T.transpose(n2, (0, 2, 1)), layer.bissm)
        branch2 = T.transpose(mixed, (0, 2, 1))
        z_next = drop_path(branch2, self.config.drop_path_rate, training, rng) + z_hat
        return TokenSeq(features=z_next, centers=seq.centers,
                        layer_index=layer_index + 1)

    def head(self, x: Tensor) -> Tensor:
        h = T.relu(T.matmul(x, self.head_w1) + self.head_b1)
        h = T.relu(T.matmul(h, self.head_w2) + self.head_b2)
        return T.matmul(h, self.head_w3) + self.head_b3

    def forward_batch(self, prepared: PreparedBatch, training: bool = False,
                      rng: np.random.Generator | None = None) -> Tensor:
        tokens = self.encode_patches(prepared.rel_points)
        seq = self.build_token_sequence(tokens, prepared.centers)
        for i in range(self.config.depth):
            seq = self.encoder_block(seq, i, prepared.lgp_geom, training, rng)
        final = layer_norm(seq.features, self.final_norm.scale, self.final_norm.shift)
        cls_row = T.select(final, 1, 0)
        if self.config.head_pool_concat:
            patch_rows = T.narrow(final, 1, 1, final.shape[1] - 1)
            cls_row = T.concat([cls_row, patch_rows.max(axis=1)], axis=-1)
        return self.head(cls_row)

    def forward(self, cloud: PointCloud) -> np.ndarray:
        """Single-cloud logits, shape (num_classes,)."""
        prepared = prepare_clouds([cloud], self.config)
        with T.no_grad():
            return self.forward_batch(prepared).data[0]


# ---- audits -----------------------------------------------------------------------


def _component_of(name: str) -> str:
    if name.startswith("patch_encoder"):
        return "patch_encoder"
    if name == "cls_token":
        return "class_token"
    if name.startswith("pos."):
        return "positional"
    if name.startswith("layers."):
        rest = name.split(".", 2)[2]
        if rest.startswith("norm"):
            return "encoder.norms"
        if rest.startswith("lgp"):
            return "encoder.lgp"
        sub = rest.split(".", 1)[1] if rest.startswith("bissm.") else rest
        if sub.startswith("in_proj"):
            return "encoder.bissm.in_proj"
        if sub.startswith("cofe"):
            return "encoder.bissm.cofe"
        if sub.startswith("out"):
            return "encoder.bissm.out"
        return "encoder.bissm.ssm"
    if name.startswith("final_norm"):
        return "encoder.norms"
    if name.startswith("head"):
        return "head"
    raise KeyError(f"unclassified parameter {name}")


def _collect_tensors(obj, seen: set[int], out: list[Tensor]) -> None:
    """Second, structure-walking traversal for the double-count audit."""
    if isinstance(obj, Tensor):
        if obj.requires_grad and id(obj) not in seen:
            seen.add(id(obj))
            out.append(obj)
        return
    if isinstance(obj, (list, tuple)):
        for item in obj:
            _collect_tensors(item, seen, out)
        return
    if hasattr(obj, "__dataclass_fields__"):
        for field in obj.__dataclass_fields__:
            _collect_tensors(getattr(obj, field), seen, out)


def count_params(config: ModelConfig, model: PointCloudClassifier | None = None) -> dict:
    """Per-component parameter table plus the two architecture deltas.

    ``cofe_added`` counts the tensors introduced by the dual-path gate;
    ``geometric_path_added`` counts trainables in the Gaussian coupling path,
    which is parameter free by construction. Totals are cross-checked by an
    independent structural traversal.
    """
    model = model or PointCloudClassifier(config)
    named = model.named_params()
    if len({name for name, _ in named}) != len(named):
        raise RuntimeError("duplicate parameter names in registry")
    table: dict[str, int] = {}
    for name, t in named:
        key = _component_of(name)
        table[key] = table.get(key, 0) + t.size
    total = sum(t.size for _, t in named)

    seen: set[int] = set()
    leaves: list[Tensor] = []
    for attr in ("pe_w1", "pe_b1", "pe_w2", "pe_b2", "pe_w3", "pe_b3", "pe_w4", "pe_b4",
                 "cls_token", "pos", "layers", "final_norm",
                 "head_w1", "head_b1", "head_w2", "head_b2", "head_w3", "head_b3"):
        _collect_tensors(getattr(model, attr), seen, leaves)
    structural_total = sum(t.size for t in leaves)
    if structural_total != total:
        raise RuntimeError(f"parameter audit mismatch: registry {total} vs "
                           f"structural walk {structural_total}")

    gaussian_trainables = 0  # the coupling path multiplies by coordinate constants
    return {
        "table": table,
        "total": total,
        "cofe_added": table.get("encoder.bissm.cofe", 0),
        "geometric_path_added": gaussian_trainables,
    }


def flop_estimate(config: ModelConfig) -> dict:
    """Coarse forward-pass FLOPs for one cloud; multiply-add counts as 2."""
    c = config.dim
    l = config.num_groups
    k = config.group_size
    s = l + 1
    n = config.ssm_state
    g = config.cofe_groups
    cg = c // g

    pe = l * k * 2 * (3 * 64 + 64 * 128 + 256 * 128 + 128 * c)
    positional = (config.depth + 1) * l * 2 * (3 * c + c * c)
    norms = (2 * config.depth + 1) * 6 * s * c
    klgp = config.lgp_neighbors
    lgp = config.depth * (l * klgp * 2 * c * 12 + l * 2 * (2 * c * c + c * c))

    scan = 2 * (s * 2 * (3 * c * n)            # discretize + state update
                + s * 2 * c * n                # readout
                + s * 2 * c * (3 * n + c))     # selective projections
    gate = 2 * s * 2 * c * c if config.use_ssm_gate else 0
    bissm_proj = s * 2 * c * c * 2             # in_proj and out_linear

    cofe = (g * cg * s                         # pool
            + 2 * g * cg * cg                  # one-wide conv
            + 2 * g * cg * s                   # gate multiply and sigmoid
            + 6 * g * cg * s                   # group norm
            + 2 * g * cg * cg * 3 * s          # three-wide conv
            + 2 * (g * cg * s + 5 * g * s)     # two compressions
            + 2 * g * cg * s + 5 * g * s       # cross products and sigmoid
            + g * cg * s)                      # merge
    head = 2 * (c * 256 + 256 * 256 + 256 * config.num_classes)

    per_layer_bissm = scan + gate + bissm_proj + cofe
    total = pe + positional + norms + lgp + config.depth * per_layer_bissm + head
    return {
        "total": total,
        "patch_encoder": pe,
        "positional": positional,
        "lgp": lgp,
        "bissm": config.depth * (scan + gate + bissm_proj),
        "cofe_added": config.depth * cofe,
        "head": head,
    }
