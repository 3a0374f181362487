"""Rule-based extraction of 3D scene graphs from ground-truth layouts.

Pair classification evaluates, in fixed precedence: the resting ("on") test,
strict X-Y containment ("inside"/"surrounding"), then the eight directional
predicates keyed on the centroid angle theta = atan2(Yi - Yj, Xi - Xj) and on
whether the two footprints overlap. Theta sectors are closed on the lower
bound and open on the upper.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import (
    HEIGHT_ATTRIBUTES,
    ObjectLayout,
    ObjectNode,
    RelationTriplet,
    SceneGraph,
    SceneLayout,
    VOLUME_ATTRIBUTES,
    footprint_iou,
)

__all__ = [
    "PairGeometry",
    "PercentileTable",
    "ExtractorConfig",
    "classify_pair",
    "predicate_holds",
    "assign_attributes",
    "extract_scene_graph",
    "full_relation_set",
]

ON_TOLERANCE = 0.05
PERCENTILE = 70.0

# precedence used when force-keeping a triplet for an orphaned node
PREDICATE_PRECEDENCE = {
    "on": 0, "inside": 1, "surrounding": 1,
    "left of": 2, "right of": 2, "behind": 2, "in front of": 2,
    "right touching": 2, "left touching": 2, "front touching": 2,
    "behind touching": 2,
}


@dataclass(frozen=True)
class PairGeometry:
    """Derived geometry of an ordered box pair (i relative to j)."""

    theta: float
    footprint_iou: float
    dz_center: float
    half_height_sum: float

    @classmethod
    def of(cls, a: ObjectLayout, b: ObjectLayout) -> "PairGeometry":
        cax, cay, caz = a.center
        cbx, cby, cbz = b.center
        return cls(
            theta=math.atan2(cay - cby, cax - cbx),
            footprint_iou=footprint_iou(a, b),
            dz_center=caz - cbz,
            half_height_sum=(a.height + b.height) / 2.0,
        )


def _inside_xy(a: ObjectLayout, b: ObjectLayout) -> bool:
    """Strict containment of a's footprint within b's."""
    return (b.min_x < a.min_x and a.max_x < b.max_x
            and b.min_y < a.min_y and a.max_y < b.max_y)


def _sector(theta: float) -> str:
    """Base direction for theta.

    The wrap sector claims both closed endpoints (|theta| >= 3pi/4); the
    remaining intervals are closed below, open above.
    """
    if theta >= 3 * math.pi / 4 or theta <= -3 * math.pi / 4:
        return "wrap"        # "left of" / "right touching"
    if -math.pi / 4 <= theta < math.pi / 4:
        return "pos_x"       # "right of" / "left touching"
    if math.pi / 4 <= theta < 3 * math.pi / 4:
        return "pos_y"       # "behind" / "front touching"
    return "neg_y"           # "in front of" / "behind touching"


_SECTOR_TO_PREDICATE = {
    ("wrap", False): "left of",
    ("pos_x", False): "right of",
    ("pos_y", False): "behind",
    ("neg_y", False): "in front of",
    ("wrap", True): "right touching",
    ("pos_x", True): "left touching",
    ("pos_y", True): "front touching",
    ("neg_y", True): "behind touching",
}


def _on_holds(a: ObjectLayout, b: ObjectLayout) -> bool:
    """a rests on b: footprint inside, bottom-of-a at top-of-b within tolerance."""
    if not _inside_xy(a, b):
        return False
    g = PairGeometry.of(a, b)
    return abs(g.dz_center - g.half_height_sum) <= ON_TOLERANCE


def classify_pair(a: ObjectLayout, b: ObjectLayout) -> str | None:
    """The single predicate relating a to b, honoring the "on" precedence."""
    if _on_holds(a, b):
        return "on"
    if _inside_xy(a, b):
        return "inside"
    if _inside_xy(b, a):
        return "surrounding"
    g = PairGeometry.of(a, b)
    return _SECTOR_TO_PREDICATE[(_sector(g.theta), g.footprint_iou > 0.0)]


def predicate_holds(predicate: str, a: ObjectLayout, b: ObjectLayout) -> bool:
    """Whether the geometric condition of one predicate row holds for (a, b).

    Unlike classify_pair this checks the row condition alone, without
    precedence, which is what scene-graph accuracy measures.
    """
    if predicate == "on":
        return _on_holds(a, b)
    if predicate == "inside":
        return _inside_xy(a, b)
    if predicate == "surrounding":
        return _inside_xy(b, a)
    g = PairGeometry.of(a, b)
    expected = _SECTOR_TO_PREDICATE.get((_sector(g.theta), g.footprint_iou > 0.0))
    return predicate == expected


@dataclass(frozen=True)
class PercentileTable:
    """Per-class 70th-percentile thresholds of object height and volume."""

    height: dict
    volume: dict

    @classmethod
    def from_corpus(cls, layouts, class_ids_per_scene) -> "PercentileTable":
        heights: dict[int, list] = {}
        volumes: dict[int, list] = {}
        for layout, class_ids in zip(layouts, class_ids_per_scene):
            for box, cid in zip(layout.objects, class_ids):
                heights.setdefault(cid, []).append(box.height)
                volumes.setdefault(cid, []).append(box.volume)
        return cls(
            height={c: float(np.quantile(v, PERCENTILE / 100.0)) for c, v in heights.items()},
            volume={c: float(np.quantile(v, PERCENTILE / 100.0)) for c, v in volumes.items()},
        )

    def to_json(self) -> dict:
        return {"percentile": PERCENTILE,
                "height": {str(k): v for k, v in self.height.items()},
                "volume": {str(k): v for k, v in self.volume.items()}}

    @classmethod
    def from_json(cls, doc: dict) -> "PercentileTable":
        return cls(height={int(k): v for k, v in doc["height"].items()},
                   volume={int(k): v for k, v in doc["volume"].items()})


def assign_attributes(layout: SceneLayout, class_ids, table: PercentileTable,
                      p_none: float = 0.0, rng: np.random.Generator | None = None):
    """Attribute sets per node: tall/short by height threshold, large/small by
    volume threshold; each attribute independently dropped with p_none."""
    if rng is None:
        rng = np.random.default_rng(0)
    out = []
    for box, cid in zip(layout.objects, class_ids):
        if cid not in table.height or cid not in table.volume:
            raise KeyError(f"percentile table missing class {cid}")
        attrs = set()
        attrs.add("tall" if box.height >= table.height[cid] else "short")
        attrs.add("large" if box.volume >= table.volume[cid] else "small")
        if p_none > 0.0:
            attrs = {a for a in attrs if rng.random() >= p_none}
        out.append(frozenset(attrs))
    return out


@dataclass(frozen=True)
class ExtractorConfig:
    keep_prob: float = 1.0
    p_none: float = 0.0


def full_relation_set(layout: SceneLayout):
    """classify_pair over all ordered pairs, as (subject, predicate, object)."""
    n = len(layout)
    if n == 0:
        raise ValueError("empty layout")
    triplets = []
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            p = classify_pair(layout[i], layout[j])
            if p is not None:
                triplets.append((i, p, j))
    return triplets


def extract_scene_graph(layout: SceneLayout, nodes, config: ExtractorConfig,
                        seed: int, table: PercentileTable | None = None,
                        relations=None) -> SceneGraph:
    """Sample a synthetic scene graph from a ground-truth layout.

    Each classified triplet is kept independently with keep_prob; an orphaned
    node gets its highest-precedence triplet force-kept. ``relations`` may pass
    a precomputed full_relation_set to skip reclassification.
    """
    n = len(layout)
    if n == 0:
        raise ValueError("empty layout")
    rng = np.random.default_rng(seed)
    if relations is None:
        relations = full_relation_set(layout)

    keep = rng.random(len(relations)) < config.keep_prob
    kept = [t for t, k in zip(relations, keep) if k]
    covered = {i for t in kept for i in (t[0], t[2])}
    for node_idx in range(n):
        if node_idx in covered:
            continue
        candidates = [t for t in relations if node_idx in (t[0], t[2])]
        if not candidates:
            continue
        best = min(candidates, key=lambda t: (PREDICATE_PRECEDENCE[t[1]],
                                              relations.index(t)))
        kept.append(best)
        covered.update((best[0], best[2]))
    # preserve scan order, drop duplicates from the rescue pass
    kept_set = set(kept)
    ordered = [t for t in relations if t in kept_set]

    out_nodes = list(nodes)
    if table is not None:
        class_ids = [node.class_id for node in out_nodes]
        attrs = assign_attributes(layout, class_ids, table,
                                  p_none=config.p_none, rng=rng)
        out_nodes = [ObjectNode(id=node.id, class_id=node.class_id, attributes=a)
                     for node, a in zip(out_nodes, attrs)]

    return SceneGraph(tuple(out_nodes),
                      tuple(RelationTriplet(s, p, o) for s, p, o in ordered))
