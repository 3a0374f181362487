"""Canonical data model: scene graphs, layouts, rotation bins, box geometry.

All types are immutable (frozen dataclasses); all operations are pure.
Coordinates are normalized room coordinates in [0, 1] unless a RoomSpec is
applied to denormalize to meters.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

__all__ = [
    "CLASSES",
    "PREDICATES",
    "ATTRIBUTES",
    "NUM_ROTATION_BINS",
    "ObjectNode",
    "RelationTriplet",
    "SceneGraph",
    "ObjectLayout",
    "SceneLayout",
    "RoomSpec",
    "Scene",
    "bin_to_angle",
    "angle_to_bin",
    "iou_3d",
    "footprint_iou",
    "scene_to_json",
    "scene_from_json",
    "SceneValidationError",
]

CLASSES = (
    "bed", "nightstand", "lamp", "desk", "dresser", "sofa", "cabinet",
    "wardrobe", "chair", "rug", "television", "shelf", "table", "window",
    "door",
)

PREDICATES = (
    "on", "left of", "right of", "behind", "in front of", "right touching",
    "left touching", "front touching", "behind touching", "inside",
    "surrounding",
)

# index 0 is the implicit "no attribute" slot used by embeddings
ATTRIBUTES = ("none", "tall", "short", "large", "small")
HEIGHT_ATTRIBUTES = ("tall", "short")
VOLUME_ATTRIBUTES = ("large", "small")

NUM_ROTATION_BINS = 24


class SceneValidationError(ValueError):
    """A scene document violates the schema; carries the offending field."""

    def __init__(self, message: str, field_path: str | None = None):
        super().__init__(message)
        self.field = field_path


@dataclass(frozen=True)
class ObjectNode:
    id: int
    class_id: int
    attributes: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        if not 0 <= self.class_id < len(CLASSES):
            raise ValueError(f"class_id {self.class_id} outside vocabulary of {len(CLASSES)}")
        attrs = frozenset(self.attributes)
        object.__setattr__(self, "attributes", attrs)
        for a in attrs:
            if a not in ATTRIBUTES or a == "none":
                raise ValueError(f"unknown attribute {a!r}")
        if len(attrs & set(HEIGHT_ATTRIBUTES)) > 1:
            raise ValueError("at most one height attribute per node")
        if len(attrs & set(VOLUME_ATTRIBUTES)) > 1:
            raise ValueError("at most one volume attribute per node")

    @property
    def class_name(self) -> str:
        return CLASSES[self.class_id]


@dataclass(frozen=True)
class RelationTriplet:
    subject: int
    predicate: str
    object: int

    def __post_init__(self):
        if self.subject == self.object:
            raise ValueError("triplet subject and object must differ")
        if self.predicate not in PREDICATES:
            raise ValueError(f"unknown predicate {self.predicate!r}")


@dataclass(frozen=True)
class SceneGraph:
    nodes: tuple
    triplets: tuple

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(self.nodes))
        object.__setattr__(self, "triplets", tuple(self.triplets))
        n = len(self.nodes)
        seen = set()
        for i, t in enumerate(self.triplets):
            if not (0 <= t.subject < n and 0 <= t.object < n):
                raise ValueError(f"triplet {i} references node outside graph of {n}")
            key = (t.subject, t.predicate, t.object)
            if key in seen:
                raise ValueError(f"duplicate triplet {key}")
            seen.add(key)

    def __len__(self):
        return len(self.nodes)


@dataclass(frozen=True)
class ObjectLayout:
    min_x: float
    min_y: float
    min_z: float
    max_x: float
    max_y: float
    max_z: float
    rotation_bin: int = 0

    def __post_init__(self):
        if not (self.min_x < self.max_x and self.min_y < self.max_y and self.min_z < self.max_z):
            raise ValueError(
                f"degenerate box: min {(self.min_x, self.min_y, self.min_z)} "
                f"not strictly below max {(self.max_x, self.max_y, self.max_z)}")
        if not 0 <= self.rotation_bin < NUM_ROTATION_BINS:
            raise ValueError(f"rotation_bin {self.rotation_bin} outside [0, {NUM_ROTATION_BINS - 1}]")

    @property
    def center(self):
        return ((self.min_x + self.max_x) / 2.0,
                (self.min_y + self.max_y) / 2.0,
                (self.min_z + self.max_z) / 2.0)

    @property
    def size(self):
        return (self.max_x - self.min_x,
                self.max_y - self.min_y,
                self.max_z - self.min_z)

    @property
    def volume(self) -> float:
        sx, sy, sz = self.size
        return sx * sy * sz

    @property
    def height(self) -> float:
        return self.max_z - self.min_z

    def as_tuple(self):
        return (self.min_x, self.min_y, self.min_z,
                self.max_x, self.max_y, self.max_z, self.rotation_bin)


@dataclass(frozen=True)
class SceneLayout:
    objects: tuple

    def __post_init__(self):
        object.__setattr__(self, "objects", tuple(self.objects))

    def __len__(self):
        return len(self.objects)

    def __getitem__(self, i):
        return self.objects[i]


@dataclass(frozen=True)
class RoomSpec:
    width: float = 4.0
    depth: float = 4.0
    height: float = 2.8

    def __post_init__(self):
        if min(self.width, self.depth, self.height) <= 0:
            raise ValueError("room extents must be strictly positive")

    def denormalize(self, box: ObjectLayout) -> ObjectLayout:
        return ObjectLayout(box.min_x * self.width, box.min_y * self.depth,
                            box.min_z * self.height, box.max_x * self.width,
                            box.max_y * self.depth, box.max_z * self.height,
                            box.rotation_bin)

    def normalize(self, box: ObjectLayout) -> ObjectLayout:
        return ObjectLayout(box.min_x / self.width, box.min_y / self.depth,
                            box.min_z / self.height, box.max_x / self.width,
                            box.max_y / self.depth, box.max_z / self.height,
                            box.rotation_bin)


@dataclass(frozen=True)
class Scene:
    """A room with its graph nodes and (optionally) a ground-truth layout."""

    room: RoomSpec
    graph: SceneGraph
    layout: SceneLayout | None = None

    def __post_init__(self):
        if self.layout is not None and len(self.layout) != len(self.graph):
            raise ValueError(
                f"layout has {len(self.layout)} objects for {len(self.graph)} nodes")


# -- rotation binning ---------------------------------------------------


def bin_to_angle(bin_: int) -> float:
    """Angle (radians) of a rotation bin; bin centers at multiples of 15 deg."""
    if not isinstance(bin_, (int,)) or isinstance(bin_, bool):
        raise ValueError(f"bin must be an integer, got {bin_!r}")
    if not 0 <= bin_ < NUM_ROTATION_BINS:
        raise ValueError(f"bin {bin_} outside [0, {NUM_ROTATION_BINS - 1}]")
    return 2.0 * math.pi * bin_ / NUM_ROTATION_BINS


def angle_to_bin(angle: float) -> int:
    """Nearest rotation bin after wrapping into [0, 2pi); ties round down."""
    if not math.isfinite(angle):
        raise ValueError(f"angle must be finite, got {angle!r}")
    step = 2.0 * math.pi / NUM_ROTATION_BINS
    wrapped = angle % (2.0 * math.pi)
    best, best_d = 0, float("inf")
    for k in range(NUM_ROTATION_BINS):
        d = abs(wrapped - k * step)
        d = min(d, 2.0 * math.pi - d)
        if d < best_d - 1e-12:
            best, best_d = k, d
    return best


# -- box overlap --------------------------------------------------------


def _overlap_1d(a_min, a_max, b_min, b_max) -> float:
    return max(0.0, min(a_max, b_max) - max(a_min, b_min))


def iou_3d(a: ObjectLayout, b: ObjectLayout) -> float:
    """Axis-aligned 3D IoU of the stored boxes."""
    inter = (_overlap_1d(a.min_x, a.max_x, b.min_x, b.max_x)
             * _overlap_1d(a.min_y, a.max_y, b.min_y, b.max_y)
             * _overlap_1d(a.min_z, a.max_z, b.min_z, b.max_z))
    union = a.volume + b.volume - inter
    return inter / union


def footprint_iou(a: ObjectLayout, b: ObjectLayout) -> float:
    """IoU of the two boxes' X-Y rectangles (ground-plane footprints)."""
    inter = (_overlap_1d(a.min_x, a.max_x, b.min_x, b.max_x)
             * _overlap_1d(a.min_y, a.max_y, b.min_y, b.max_y))
    area_a = (a.max_x - a.min_x) * (a.max_y - a.min_y)
    area_b = (b.max_x - b.min_x) * (b.max_y - b.min_y)
    return inter / (area_a + area_b - inter)


# -- scene JSON schema --------------------------------------------------


def scene_to_json(scene: Scene) -> dict:
    doc = {
        "room": {"width": scene.room.width, "depth": scene.room.depth,
                 "height": scene.room.height},
        "nodes": [
            {"id": n.id, "class": n.class_name,
             "attributes": sorted(n.attributes)}
            for n in scene.graph.nodes
        ],
        "triplets": [[t.subject, t.predicate, t.object]
                     for t in scene.graph.triplets],
    }
    if scene.layout is not None:
        doc["layout"] = [list(o.as_tuple()) for o in scene.layout.objects]
    return doc


def _require(cond: bool, message: str, field_path: str):
    if not cond:
        raise SceneValidationError(message, field_path)


def scene_from_json(doc: dict) -> Scene:
    _require(isinstance(doc, dict), "scene document must be an object", "")
    room_doc = doc.get("room", {})
    _require(isinstance(room_doc, dict), "room must be an object", "room")
    try:
        room = RoomSpec(float(room_doc.get("width", 4.0)),
                        float(room_doc.get("depth", 4.0)),
                        float(room_doc.get("height", 2.8)))
    except (TypeError, ValueError) as err:
        raise SceneValidationError(f"invalid room: {err}", "room") from None

    nodes_doc = doc.get("nodes")
    _require(isinstance(nodes_doc, list) and nodes_doc, "nodes must be a non-empty list", "nodes")
    nodes = []
    for i, nd in enumerate(nodes_doc):
        _require(isinstance(nd, dict), "node must be an object", f"nodes[{i}]")
        cls = nd.get("class")
        _require(cls in CLASSES, f"unknown class {cls!r}", f"nodes[{i}].class")
        attrs = nd.get("attributes", [])
        _require(isinstance(attrs, list), "attributes must be a list", f"nodes[{i}].attributes")
        for a in attrs:
            _require(a in ATTRIBUTES and a != "none",
                     f"unknown attribute {a!r}", f"nodes[{i}].attributes")
        _require(len(set(attrs) & set(HEIGHT_ATTRIBUTES)) <= 1,
                 "conflicting height attributes", f"nodes[{i}].attributes")
        _require(len(set(attrs) & set(VOLUME_ATTRIBUTES)) <= 1,
                 "conflicting volume attributes", f"nodes[{i}].attributes")
        nodes.append(ObjectNode(id=int(nd.get("id", i)),
                                class_id=CLASSES.index(cls),
                                attributes=frozenset(attrs)))

    trips_doc = doc.get("triplets", [])
    _require(isinstance(trips_doc, list), "triplets must be a list", "triplets")
    triplets = []
    seen = set()
    for i, td in enumerate(trips_doc):
        _require(isinstance(td, (list, tuple)) and len(td) == 3,
                 "triplet must be [subject, predicate, object]", f"triplets[{i}]")
        s, p, o = td
        _require(isinstance(s, int) and 0 <= s < len(nodes),
                 f"subject index {s!r} out of range", f"triplets[{i}].subject")
        _require(isinstance(o, int) and 0 <= o < len(nodes),
                 f"object index {o!r} out of range", f"triplets[{i}].object")
        _require(s != o, "subject and object must differ", f"triplets[{i}]")
        _require(p in PREDICATES, f"unknown predicate {p!r}", f"triplets[{i}].predicate")
        _require((s, p, o) not in seen, f"duplicate triplet {(s, p, o)}", f"triplets[{i}]")
        seen.add((s, p, o))
        triplets.append(RelationTriplet(s, p, o))

    graph = SceneGraph(tuple(nodes), tuple(triplets))

    layout = None
    if doc.get("layout") is not None:
        lay_doc = doc["layout"]
        _require(isinstance(lay_doc, list) and len(lay_doc) == len(nodes),
                 f"layout must list {len(nodes)} boxes", "layout")
        boxes = []
        for i, row in enumerate(lay_doc):
            _require(isinstance(row, (list, tuple)) and len(row) == 7,
                     "layout row must have 7 entries", f"layout[{i}]")
            try:
                boxes.append(ObjectLayout(*[float(v) for v in row[:6]],
                                          rotation_bin=int(row[6])))
            except (TypeError, ValueError) as err:
                raise SceneValidationError(f"invalid box: {err}", f"layout[{i}]") from None
        layout = SceneLayout(tuple(boxes))

    return Scene(room=room, graph=graph, layout=layout)
