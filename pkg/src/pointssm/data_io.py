"""Data ingestion and persistence.

Covers the ASCII OFF mesh format (including the fused-header quirk found in
real archives, e.g. a first line like "OFF490 518 0"), area-weighted surface
sampling, an 8-class procedural shape generator, a whitespace XYZ point
format, and a little-endian binary checkpoint container.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import IO, Iterable

import numpy as np

from .geometry import PointCloud
from .tensor import Tensor

CHECKPOINT_MAGIC = b"HEMB"
CHECKPOINT_VERSION = 1

SYNTHETIC_CLASSES = ("sphere", "cube", "cylinder", "cone",
                     "torus", "pyramid", "plane", "helix")


class ParseError(ValueError):
    """Malformed input; carries the 1-based line number when known."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class CheckpointError(ValueError):
    """Checkpoint file violates the binary format."""


@dataclass
class Mesh:
    vertices: np.ndarray   # (V, 3)
    faces: np.ndarray      # (F, 3) vertex index triples

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64)
        self.faces = np.asarray(self.faces, dtype=np.int64)


# ---- OFF mesh parsing ----------------------------------------------------------


def _off_tokens(text: str):
    """Yield (line_number, tokens) for non-empty, non-comment lines."""
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if line:
            yield lineno, line.split()


def _parse_int(tok: str, lineno: int, what: str) -> int:
    try:
        return int(tok)
    except ValueError:
        raise ParseError(f"expected integer {what}, got {tok!r}", lineno) from None


def _parse_float(tok: str, lineno: int, what: str) -> float:
    try:
        value = float(tok)
    except ValueError:
        raise ParseError(f"expected number {what}, got {tok!r}", lineno) from None
    if not np.isfinite(value):
        raise ParseError(f"non-finite {what} {tok!r}", lineno)
    return value


def parse_off(stream: IO[str] | str) -> Mesh:
    """Parse an OFF mesh; polygons with more than 3 vertices are fan split.

    Accepts the optional "OFF" header, a header fused with the counts line
    ("OFF3 1 0"), and '#' comments. Any malformed content raises ParseError
    with the offending line number; arbitrary input never crashes.
    """
    text = stream if isinstance(stream, str) else stream.read()
    lines = _off_tokens(text)

    try:
        lineno, tokens = next(lines)
    except StopIteration:
        raise ParseError("empty OFF file", 1) from None

    if tokens[0].upper().startswith("OFF"):
        fused = tokens[0][3:]
        tokens = ([fused] if fused else []) + tokens[1:]
        if not tokens:
            try:
                lineno, tokens = next(lines)
            except StopIteration:
                raise ParseError("missing counts line", lineno) from None

    if len(tokens) != 3:
        raise ParseError(f"counts line must be 'V F E', got {' '.join(tokens)!r}", lineno)
    n_vert = _parse_int(tokens[0], lineno, "vertex count")
    n_face = _parse_int(tokens[1], lineno, "face count")
    _parse_int(tokens[2], lineno, "edge count")
    if n_vert < 0 or n_face < 0:
        raise ParseError("negative counts", lineno)

    vertices = np.empty((n_vert, 3))
    for i in range(n_vert):
        try:
            lineno, tokens = next(lines)
        except StopIteration:
            raise ParseError(f"truncated file: expected {n_vert} vertices, got {i}",
                             lineno) from None
        if len(tokens) < 3:
            raise ParseError(f"vertex needs 3 coordinates, got {len(tokens)}", lineno)
        vertices[i] = [_parse_float(t, lineno, "coordinate") for t in tokens[:3]]

    triangles: list[tuple[int, int, int]] = []
    for i in range(n_face):
        try:
            lineno, tokens = next(lines)
        except StopIteration:
            raise ParseError(f"truncated file: expected {n_face} faces, got {i}",
                             lineno) from None
        arity = _parse_int(tokens[0], lineno, "polygon arity")
        if arity < 3:
            raise ParseError(f"polygon needs at least 3 vertices, got {arity}", lineno)
        if len(tokens) < 1 + arity:
            raise ParseError(f"polygon lists {arity} vertices but line has "
                             f"{len(tokens) - 1}", lineno)
        idx = [_parse_int(t, lineno, "vertex index") for t in tokens[1:1 + arity]]
        for j in idx:
            if not 0 <= j < n_vert:
                raise ParseError(f"vertex index {j} out of range [0, {n_vert})", lineno)
        for a, b in zip(idx[1:], idx[2:]):   # fan from vertex 0
            triangles.append((idx[0], a, b))

    return Mesh(vertices=vertices,
                faces=np.asarray(triangles, dtype=np.int64).reshape(-1, 3))


# ---- surface sampling -------------------------------------------------------------


def sample_mesh_surface(mesh: Mesh, n: int, seed: int) -> PointCloud:
    """Sample n points, triangles chosen proportionally to area.

    Barycentric coordinates use the reflection trick (u + v > 1 folds back
    into the triangle). Zero-area triangles carry zero probability.
    """
    a = mesh.vertices[mesh.faces[:, 0]]
    b = mesh.vertices[mesh.faces[:, 1]]
    c = mesh.vertices[mesh.faces[:, 2]]
    areas = 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)
    total = areas.sum()
    if total <= 0.0:
        raise ValueError("mesh has no non-degenerate triangle to sample")
    rng = np.random.Generator(np.random.PCG64(seed))
    tri = rng.choice(len(areas), size=n, p=areas / total)
    u = rng.random(n)
    v = rng.random(n)
    over = u + v > 1.0
    u[over] = 1.0 - u[over]
    v[over] = 1.0 - v[over]
    pts = a[tri] + u[:, None] * (b[tri] - a[tri]) + v[:, None] * (c[tri] - a[tri])
    return PointCloud(pts)


# ---- synthetic dataset --------------------------------------------------------------


def _unit_square_mesh(z: float) -> Mesh:
    verts = np.array([[-1, -1, z], [1, -1, z], [1, 1, z], [-1, 1, z]], dtype=float)
    faces = np.array([[0, 1, 2], [0, 2, 3]])
    return Mesh(verts, faces)


def _cube_mesh() -> Mesh:
    corners = np.array([[x, y, z] for x in (-1, 1) for y in (-1, 1) for z in (-1, 1)],
                       dtype=float)
    quads = [(0, 1, 3, 2), (4, 6, 7, 5), (0, 4, 5, 1),
             (2, 3, 7, 6), (0, 2, 6, 4), (1, 5, 7, 3)]
    faces = []
    for q in quads:
        faces.append((q[0], q[1], q[2]))
        faces.append((q[0], q[2], q[3]))
    return Mesh(corners, np.asarray(faces))


def _pyramid_mesh() -> Mesh:
    verts = np.array([[-1, -1, -1], [1, -1, -1], [1, 1, -1], [-1, 1, -1], [0, 0, 1]],
                     dtype=float)
    faces = np.array([[0, 2, 1], [0, 3, 2],
                      [0, 1, 4], [1, 2, 4], [2, 3, 4], [3, 0, 4]])
    return Mesh(verts, faces)


def _sample_sphere(rng, n):
    v = rng.normal(size=(n, 3))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def _sample_cylinder(rng, n):
    # lateral area 2*pi*r*h = 4*pi, each cap pi; weight accordingly
    lateral, cap = 4.0, 1.0
    probs = np.array([lateral, cap, cap])
    part = rng.choice(3, size=n, p=probs / probs.sum())
    theta = rng.random(n) * 2 * np.pi
    pts = np.empty((n, 3))
    lateral_mask = part == 0
    pts[lateral_mask, 0] = np.cos(theta[lateral_mask])
    pts[lateral_mask, 1] = np.sin(theta[lateral_mask])
    pts[lateral_mask, 2] = rng.random(lateral_mask.sum()) * 2.0 - 1.0
    for cap_id, z in ((1, 1.0), (2, -1.0)):
        m = part == cap_id
        r = np.sqrt(rng.random(m.sum()))
        pts[m, 0] = r * np.cos(theta[m])
        pts[m, 1] = r * np.sin(theta[m])
        pts[m, 2] = z
    return pts


def _sample_cone(rng, n):
    # apex at (0,0,1), unit base disc at z=-1; lateral area pi*sqrt(5), base pi
    probs = np.array([np.sqrt(5.0), 1.0])
    part = rng.choice(2, size=n, p=probs / probs.sum())
    theta = rng.random(n) * 2 * np.pi
    pts = np.empty((n, 3))
    m = part == 0
    r = np.sqrt(rng.random(m.sum()))   # uniform over the unrolled lateral surface
    pts[m, 0] = r * np.cos(theta[m])
    pts[m, 1] = r * np.sin(theta[m])
    pts[m, 2] = 1.0 - 2.0 * r
    m = part == 1
    r = np.sqrt(rng.random(m.sum()))
    pts[m, 0] = r * np.cos(theta[m])
    pts[m, 1] = r * np.sin(theta[m])
    pts[m, 2] = -1.0
    return pts


def _sample_torus(rng, n, ring=0.75, tube=0.3):
    pts = np.empty((n, 3))
    filled = 0
    while filled < n:   # rejection keeps the surface measure uniform
        m = (n - filled) * 2 + 8
        u = rng.random(m) * 2 * np.pi
        v = rng.random(m) * 2 * np.pi
        accept = rng.random(m) <= (ring + tube * np.cos(v)) / (ring + tube)
        u, v = u[accept], v[accept]
        take = min(len(u), n - filled)
        u, v = u[:take], v[:take]
        pts[filled:filled + take, 0] = (ring + tube * np.cos(v)) * np.cos(u)
        pts[filled:filled + take, 1] = (ring + tube * np.cos(v)) * np.sin(u)
        pts[filled:filled + take, 2] = tube * np.sin(v)
        filled += take
    return pts


def _sample_helix(rng, n, turns=2.5, radius=1.0):
    t = np.sort(rng.random(n))
    angle = t * turns * 2 * np.pi
    return np.stack([radius * np.cos(angle), radius * np.sin(angle), t * 2.0 - 1.0],
                    axis=1)


def generate_synthetic(class_id: int, n_points: int, seed: int,
                       augment: bool = False) -> PointCloud:
    """Deterministic surface samples of one of the 8 procedural classes.

    Shapes are defined at unit scale. With ``augment``, a z-rotation, a
    uniform scale in [0.8, 1.2] and a translation in [-0.1, 0.1]^3 are
    applied, mirroring light train-time jitter.
    """
    if not 0 <= class_id < len(SYNTHETIC_CLASSES):
        raise ValueError(f"unknown class id {class_id}; valid: 0..{len(SYNTHETIC_CLASSES) - 1}")
    rng = np.random.Generator(np.random.PCG64(seed))
    name = SYNTHETIC_CLASSES[class_id]
    if name == "sphere":
        pts = _sample_sphere(rng, n_points)
    elif name == "cube":
        pts = sample_mesh_surface(_cube_mesh(), n_points, seed).points
    elif name == "cylinder":
        pts = _sample_cylinder(rng, n_points)
    elif name == "cone":
        pts = _sample_cone(rng, n_points)
    elif name == "torus":
        pts = _sample_torus(rng, n_points)
    elif name == "pyramid":
        pts = sample_mesh_surface(_pyramid_mesh(), n_points, seed).points
    elif name == "plane":
        pts = sample_mesh_surface(_unit_square_mesh(0.0), n_points, seed).points
    else:
        pts = _sample_helix(rng, n_points)

    if augment:
        angle = rng.random() * 2 * np.pi
        cos_a, sin_a = np.cos(angle), np.sin(angle)
        rot = np.array([[cos_a, -sin_a, 0.0], [sin_a, cos_a, 0.0], [0.0, 0.0, 1.0]])
        pts = pts @ rot.T
        pts = pts * rng.uniform(0.8, 1.2)
        pts = pts + rng.uniform(-0.1, 0.1, size=3)
    return PointCloud(pts, label=class_id)


# ---- XYZ text format ---------------------------------------------------------------


def save_xyz(path, cloud: PointCloud) -> None:
    """Write "x y z [label]" lines with full round-trip precision (repr)."""
    with open(path, "w") as fh:
        for p in cloud.points:
            row = f"{float(p[0])!r} {float(p[1])!r} {float(p[2])!r}"
            if cloud.label is not None:
                row += f" {cloud.label}"
            fh.write(row + "\n")


def load_xyz(path) -> PointCloud:
    pts: list[list[float]] = []
    label: int | None = None
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            tokens = line.split()
            if len(tokens) not in (3, 4):
                raise ParseError(f"expected 'x y z [label]', got {len(tokens)} tokens",
                                 lineno)
            pts.append([_parse_float(t, lineno, "coordinate") for t in tokens[:3]])
            if len(tokens) == 4:
                row_label = _parse_int(tokens[3], lineno, "label")
                if label is not None and row_label != label:
                    raise ParseError(f"inconsistent labels {label} vs {row_label}", lineno)
                label = row_label
    if not pts:
        raise ParseError("no points in file", 1)
    return PointCloud(np.asarray(pts), label=label)


# ---- checkpoint container -----------------------------------------------------------


@dataclass
class Checkpoint:
    version: int
    config_text: str
    tensors: dict[str, np.ndarray]


def save_checkpoint(path, config_text: str, tensors: Iterable[tuple[str, Tensor | np.ndarray]]) -> None:
    """Little-endian layout: magic, u32 version, u32 config length + UTF-8
    config, u32 tensor count, then per tensor u32 name length + name,
    u8 rank, u64 extents, raw float64 payload."""
    items = [(name, np.asarray(t.data if isinstance(t, Tensor) else t, dtype=np.float64))
             for name, t in tensors]
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        cfg = config_text.encode("utf-8")
        fh.write(struct.pack("<I", len(cfg)))
        fh.write(cfg)
        fh.write(struct.pack("<I", len(items)))
        for name, arr in items:
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<I", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<B", arr.ndim))
            for extent in arr.shape:
                fh.write(struct.pack("<Q", extent))
            fh.write(arr.astype("<f8", copy=False).tobytes())


class _Reader:
    def __init__(self, blob: bytes):
        self.blob = blob
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.blob):
            raise CheckpointError(f"truncated checkpoint: wanted {n} bytes at offset "
                                  f"{self.pos}, file has {len(self.blob)}")
        out = self.blob[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def u64(self) -> int:
        return struct.unpack("<Q", self.take(8))[0]

    def u8(self) -> int:
        return self.take(1)[0]


MAX_TENSOR_ELEMENTS = 1 << 33   # extent-product sanity bound (64 GiB of f8)


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        reader = _Reader(fh.read())
    if reader.take(4) != CHECKPOINT_MAGIC:
        raise CheckpointError("bad magic: not a checkpoint file")
    version = reader.u32()
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    config_text = reader.take(reader.u32()).decode("utf-8")
    tensors: dict[str, np.ndarray] = {}
    for _ in range(reader.u32()):
        name = reader.take(reader.u32()).decode("utf-8")
        rank = reader.u8()
        shape = tuple(reader.u64() for _ in range(rank))
        count = 1
        for extent in shape:
            count *= extent
            if count > MAX_TENSOR_ELEMENTS:
                raise CheckpointError(f"extent overflow in tensor {name!r}: {shape}")
        payload = reader.take(8 * count)
        tensors[name] = np.frombuffer(payload, dtype="<f8").reshape(shape).copy()
    return Checkpoint(version=version, config_text=config_text, tensors=tensors)
