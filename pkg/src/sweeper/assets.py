"""Mesh loading (OBJ and binary glTF), object labels, and bounding geometry."""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DegenerateExtent, ParseError, UnsupportedFeature

MID_GRAY = (0.5, 0.5, 0.5)


@dataclass(frozen=True)
class MeshModel:
    """Triangle mesh with per-triangle object labels.

    ``triangles`` is (N, 3, 3) float64: N triangles, 3 vertices, xyz.
    ``vertex_colors`` is (N, 3, 3) float64 RGB in [0, 1], one color per
    triangle corner (default mid-gray).
    ``object_ids`` is (N,) int32 with values dense in [0, #objects).
    ``object_names`` maps object id to a human-readable label.
    """

    id: str
    triangles: np.ndarray
    vertex_colors: np.ndarray
    object_ids: np.ndarray
    object_names: dict[int, str] = field(default_factory=dict)

    def __post_init__(self):
        if self.triangles.size == 0:
            raise ParseError(f"{self.id}: empty triangle list")
        if not np.isfinite(self.triangles).all():
            raise ParseError(f"{self.id}: non-finite vertex coordinates")
        ids = np.unique(self.object_ids)
        if ids.min() != 0 or ids.max() != len(ids) - 1:
            raise ParseError(f"{self.id}: object ids not dense in [0, n)")

    @property
    def object_count(self) -> int:
        return int(self.object_ids.max()) + 1


@dataclass(frozen=True)
class Aabb:
    """Axis-aligned bounding box; ``d`` is the diagonal length."""

    min: np.ndarray
    max: np.ndarray

    @property
    def d(self) -> float:
        return float(np.linalg.norm(self.max - self.min))

    @property
    def center(self) -> np.ndarray:
        return (self.min + self.max) / 2.0


def compute_aabb(mesh: MeshModel) -> Aabb:
    """Tight axis-aligned box over all vertices; errors if the mesh has no extent."""
    verts = mesh.triangles.reshape(-1, 3)
    box = Aabb(min=verts.min(axis=0), max=verts.max(axis=0))
    if box.d == 0.0:
        raise DegenerateExtent(f"{mesh.id}: all vertices coincident")
    return box


def load_mesh(path: str | Path, format: str | None = None) -> MeshModel:
    """Load a triangle mesh from an OBJ or GLB file.

    ``format`` is "OBJ" or "GLB"; inferred from the extension when omitted.
    Multi-part files map parts to object ids, with names taken from OBJ
    group/object statements or glTF node names.
    """
    path = Path(path)
    if format is None:
        suffix = path.suffix.lower()
        if suffix == ".obj":
            format = "OBJ"
        elif suffix == ".glb":
            format = "GLB"
        else:
            raise ParseError(f"{path}: cannot infer format from extension {suffix!r}")
    if not path.exists():
        raise ParseError(f"{path}: file does not exist")
    if format.upper() == "OBJ":
        return _load_obj(path)
    if format.upper() == "GLB":
        return _load_glb(path)
    raise ParseError(f"unknown format {format!r}")


def triangle_areas(mesh: MeshModel) -> np.ndarray:
    a = mesh.triangles[:, 1] - mesh.triangles[:, 0]
    b = mesh.triangles[:, 2] - mesh.triangles[:, 0]
    return 0.5 * np.linalg.norm(np.cross(a, b), axis=1)


def build_load_report(mesh: MeshModel) -> dict:
    """JSON-ready load report: counts plus warnings (zero-area triangles are
    kept for rendering but flagged here)."""
    zero_area = int(np.count_nonzero(triangle_areas(mesh) == 0.0))
    warnings = []
    if zero_area:
        warnings.append(f"{zero_area} zero-area triangle(s) kept")
    return {
        "model": mesh.id,
        "triangles": int(len(mesh.triangles)),
        "objects": mesh.object_count,
        "objectNames": {str(k): v for k, v in sorted(mesh.object_names.items())},
        "zeroAreaTriangles": zero_area,
        "warnings": warnings,
    }


def write_load_report(mesh: MeshModel, path: str | Path) -> None:
    Path(path).write_text(json.dumps(build_load_report(mesh), indent=2) + "\n")


# --- OBJ ---------------------------------------------------------------


def _load_obj(path: Path) -> MeshModel:
    positions: list[list[float]] = []
    colors: list[list[float]] = []
    tris: list[tuple[int, int, int]] = []
    tri_object: list[int] = []
    object_names: dict[int, str] = {}
    # Triangles emitted before any o/g statement belong to a default part.
    current_object = -1

    def ensure_object() -> int:
        nonlocal current_object
        if current_object < 0:
            current_object = 0
            object_names[0] = path.stem
        return current_object

    try:
        text = path.read_text()
    except (OSError, UnicodeDecodeError) as exc:
        raise ParseError(f"{path}: {exc}") from exc

    for lineno, raw in enumerate(text.splitlines(), start=1):
        parts = raw.split()
        if not parts or parts[0].startswith("#"):
            continue
        tag = parts[0]
        if tag == "v":
            if len(parts) < 4:
                raise ParseError(f"{path}:{lineno}: vertex with < 3 coordinates")
            try:
                xyz = [float(x) for x in parts[1:4]]
            except ValueError as exc:
                raise ParseError(f"{path}:{lineno}: bad vertex {raw!r}") from exc
            positions.append(xyz)
            # Vertex-color extension: v x y z r g b
            if len(parts) >= 7:
                colors.append([float(x) for x in parts[4:7]])
            else:
                colors.append(list(MID_GRAY))
        elif tag in ("o", "g"):
            name = " ".join(parts[1:]) or f"part_{len(object_names)}"
            current_object = len(object_names)
            object_names[current_object] = name
        elif tag == "f":
            if len(parts) < 4:
                raise ParseError(f"{path}:{lineno}: face with < 3 vertices")
            try:
                idx = [_obj_index(p, len(positions)) for p in parts[1:]]
            except ValueError as exc:
                raise ParseError(f"{path}:{lineno}: bad face {raw!r}") from exc
            obj = ensure_object()
            # Fan triangulation for quads and n-gons.
            for k in range(1, len(idx) - 1):
                tris.append((idx[0], idx[k], idx[k + 1]))
                tri_object.append(obj)
        # vn/vt/usemtl/mtllib/s carry no geometry we keep.

    if not tris:
        raise ParseError(f"{path}: no faces found")
    pos = np.asarray(positions, dtype=np.float64)
    col = np.asarray(colors, dtype=np.float64)
    faces = np.asarray(tris, dtype=np.int64)
    if faces.max() >= len(pos) or faces.min() < 0:
        raise ParseError(f"{path}: face index out of range")
    # Drop parts that ended up with no faces so ids stay dense.
    used = sorted(set(tri_object))
    remap = {old: new for new, old in enumerate(used)}
    names = {remap[old]: object_names[old] for old in used}
    ids = np.asarray([remap[o] for o in tri_object], dtype=np.int32)
    return MeshModel(
        id=path.stem,
        triangles=pos[faces],
        vertex_colors=col[faces],
        object_ids=ids,
        object_names=names,
    )


def _obj_index(token: str, n_vertices: int) -> int:
    """OBJ face token (v, v/vt, v//vn, v/vt/vn); negatives are relative."""
    i = int(token.split("/")[0])
    if i < 0:
        i = n_vertices + i
    else:
        i = i - 1
    if i < 0:
        raise ValueError(token)
    return i


def export_obj(mesh: MeshModel, path: str | Path) -> None:
    """Write the mesh back as OBJ with vertex colors and per-object groups."""
    lines = [f"# exported: {mesh.id}"]
    vertex_no = 0
    for obj in range(mesh.object_count):
        lines.append(f"o {mesh.object_names.get(obj, f'part_{obj}')}")
        sel = np.nonzero(mesh.object_ids == obj)[0]
        for t in sel:
            for corner in range(3):
                x, y, z = mesh.triangles[t, corner]
                r, g, b = mesh.vertex_colors[t, corner]
                lines.append(f"v {x:.9g} {y:.9g} {z:.9g} {r:.9g} {g:.9g} {b:.9g}")
            lines.append(f"f {vertex_no + 1} {vertex_no + 2} {vertex_no + 3}")
            vertex_no += 3
    Path(path).write_text("\n".join(lines) + "\n")


# --- GLB (binary glTF 2.0) ----------------------------------------------
#
# Supported subset: triangle primitives, flattened node hierarchy,
# pbrMetallicRoughness.baseColorFactor as a flat color. Textures, skins,
# and animations are out of scope; animations raise UnsupportedFeature.

_GLB_MAGIC = 0x46546C67
_CHUNK_JSON = 0x4E4F534A
_CHUNK_BIN = 0x004E4942

_COMPONENT_DTYPES = {
    5120: np.int8,
    5121: np.uint8,
    5122: np.int16,
    5123: np.uint16,
    5125: np.uint32,
    5126: np.float32,
}
_TYPE_WIDTHS = {"SCALAR": 1, "VEC2": 2, "VEC3": 3, "VEC4": 4, "MAT4": 16}


def _load_glb(path: Path) -> MeshModel:
    blob = path.read_bytes()
    if len(blob) < 12:
        raise ParseError(f"{path}: truncated GLB header")
    magic, version, _length = struct.unpack_from("<III", blob, 0)
    if magic != _GLB_MAGIC:
        raise ParseError(f"{path}: not a GLB file")
    if version != 2:
        raise UnsupportedFeature(f"{path}: glTF version {version} (only 2 supported)")

    offset = 12
    doc = None
    binary = b""
    while offset + 8 <= len(blob):
        chunk_len, chunk_type = struct.unpack_from("<II", blob, offset)
        offset += 8
        chunk = blob[offset : offset + chunk_len]
        if len(chunk) != chunk_len:
            raise ParseError(f"{path}: truncated chunk")
        offset += chunk_len
        if chunk_type == _CHUNK_JSON:
            try:
                doc = json.loads(chunk.decode("utf-8"))
            except (UnicodeDecodeError, json.JSONDecodeError) as exc:
                raise ParseError(f"{path}: bad JSON chunk: {exc}") from exc
        elif chunk_type == _CHUNK_BIN:
            binary = bytes(chunk)
    if doc is None:
        raise ParseError(f"{path}: missing JSON chunk")
    if doc.get("animations"):
        raise UnsupportedFeature(f"{path}: animations are not supported")

    accessors = doc.get("accessors", [])
    views = doc.get("bufferViews", [])
    meshes = doc.get("meshes", [])
    nodes = doc.get("nodes", [])
    materials = doc.get("materials", [])

    def read_accessor(index: int) -> np.ndarray:
        acc = accessors[index]
        if "sparse" in acc:
            raise UnsupportedFeature(f"{path}: sparse accessors not supported")
        view = views[acc["bufferView"]]
        dtype = _COMPONENT_DTYPES[acc["componentType"]]
        width = _TYPE_WIDTHS[acc["type"]]
        start = view.get("byteOffset", 0) + acc.get("byteOffset", 0)
        itemsize = np.dtype(dtype).itemsize * width
        stride = view.get("byteStride") or itemsize
        count = acc["count"]
        if stride == itemsize:
            arr = np.frombuffer(binary, dtype=dtype, count=count * width, offset=start)
        else:
            rows = [
                np.frombuffer(binary, dtype=dtype, count=width, offset=start + i * stride)
                for i in range(count)
            ]
            arr = np.concatenate(rows)
        return arr.reshape(count, width)

    def base_color(material_index) -> np.ndarray:
        if material_index is None:
            return np.array(MID_GRAY)
        pbr = materials[material_index].get("pbrMetallicRoughness", {})
        factor = pbr.get("baseColorFactor", [*MID_GRAY, 1.0])
        return np.asarray(factor[:3], dtype=np.float64)

    tri_chunks: list[np.ndarray] = []
    col_chunks: list[np.ndarray] = []
    tri_object: list[np.ndarray] = []
    object_names: dict[int, str] = {}

    def walk(node_index: int, parent: np.ndarray) -> None:
        node = nodes[node_index]
        xform = parent @ _node_matrix(node)
        if "mesh" in node:
            mesh_def = meshes[node["mesh"]]
            obj = len(object_names)
            object_names[obj] = node.get("name") or mesh_def.get("name") or f"part_{obj}"
            for prim in mesh_def.get("primitives", []):
                mode = prim.get("mode", 4)
                if mode != 4:
                    raise UnsupportedFeature(f"{path}: non-triangle primitive mode {mode}")
                pos = read_accessor(prim["attributes"]["POSITION"]).astype(np.float64)
                pos = pos @ xform[:3, :3].T + xform[:3, 3]
                if "indices" in prim:
                    idx = read_accessor(prim["indices"]).reshape(-1).astype(np.int64)
                else:
                    idx = np.arange(len(pos), dtype=np.int64)
                if len(idx) % 3 != 0:
                    raise ParseError(f"{path}: index count not a multiple of 3")
                tris = pos[idx].reshape(-1, 3, 3)
                color = base_color(prim.get("material"))
                tri_chunks.append(tris)
                col_chunks.append(np.broadcast_to(color, tris.shape).copy())
                tri_object.append(np.full(len(tris), obj, dtype=np.int32))
        for child in node.get("children", []):
            walk(child, xform)

    scene = doc.get("scene", 0)
    scenes = doc.get("scenes", [])
    roots = scenes[scene]["nodes"] if scenes else list(range(len(nodes)))
    for root in roots:
        walk(root, np.eye(4))

    if not tri_chunks:
        raise ParseError(f"{path}: no triangle geometry found")
    return MeshModel(
        id=path.stem,
        triangles=np.concatenate(tri_chunks),
        vertex_colors=np.concatenate(col_chunks),
        object_ids=np.concatenate(tri_object),
        object_names=object_names,
    )


def _node_matrix(node: dict) -> np.ndarray:
    if "matrix" in node:
        return np.asarray(node["matrix"], dtype=np.float64).reshape(4, 4).T
    m = np.eye(4)
    if "scale" in node:
        m[:3, :3] = np.diag(node["scale"])
    if "rotation" in node:
        x, y, z, w = node["rotation"]
        rot = np.array(
            [
                [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
                [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
                [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
            ]
        )
        m[:3, :3] = rot @ m[:3, :3]
    if "translation" in node:
        m[:3, 3] = node["translation"]
    return m
