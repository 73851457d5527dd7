"""Binary trees over segmentation classes driving the interaction loss.

A tree is configured as nested pairs, e.g. ``[[[0, 1], 2], 3]``: leaves are
class ids, every internal node merges its two subtrees.  Each internal node
contributes one division (left class set vs right class set) to the critical
pixel map.  A full binary tree over c classes has c leaves, c - 1 internal
nodes and therefore c - 1 divisions.

Dict nodes allow per-division options::

    {"left": [0, 1], "right": 2, "kind": "containment", "name": "cap"}

``kind`` is "exclusion" (the sides must not touch; default) or "containment"
(the left set must not touch anything outside the node's merged set).
"""

import json
from dataclasses import dataclass, field
from typing import List, Sequence, Tuple

from .errors import ConfigurationError

VALID_KINDS = ("exclusion", "containment")


@dataclass(frozen=True)
class Division:
    left: Tuple[int, ...]
    right: Tuple[int, ...]
    kind: str = "exclusion"
    name: str = ""

    @property
    def classes(self) -> Tuple[int, ...]:
        return tuple(sorted(self.left + self.right))


@dataclass
class ClassTree:
    num_classes: int
    divisions: List[Division]
    unconstrained: frozenset = field(default_factory=frozenset)

    @property
    def num_leaves(self) -> int:
        return self.num_classes

    @property
    def num_internal(self) -> int:
        return len(self.divisions)

    @property
    def num_divisions(self) -> int:
        return len(self.divisions)

    @property
    def conv_count(self) -> int:
        return 2 * len(self.active_divisions())

    def active_divisions(self) -> List[Division]:
        """Divisions that actually get checked (skips all-unconstrained sides)."""
        active = []
        for div in self.divisions:
            if set(div.left) <= self.unconstrained or set(div.right) <= self.unconstrained:
                continue
            active.append(div)
        return active

    def skipped_divisions(self) -> List[Division]:
        active = set(self.active_divisions())
        return [d for d in self.divisions if d not in active]

    def describe(self) -> str:
        c = self.num_classes
        lines = [
            f"classes (leaf nodes): {c}",
            f"internal nodes: {self.num_internal}",
            f"divisions: {self.num_divisions}",
            f"mask dilations per map: {2 * self.num_divisions}"
            + (f" ({self.conv_count} after {len(self.skipped_divisions())} skipped)"
               if self.skipped_divisions() else ""),
        ]
        return "\n".join(lines)


def _parse_node(node, divisions: List[Division]) -> Tuple[int, ...]:
    """Recursively collect divisions; returns the node's merged class set."""
    if isinstance(node, int):
        return (node,)
    kind = "exclusion"
    name = ""
    if isinstance(node, dict):
        kind = node.get("kind", "exclusion")
        name = node.get("name", "")
        if kind not in VALID_KINDS:
            raise ConfigurationError(f"unknown division kind {kind!r}")
        if "left" not in node or "right" not in node:
            raise ConfigurationError("dict tree nodes need 'left' and 'right'")
        children = [node["left"], node["right"]]
    elif isinstance(node, (list, tuple)):
        if len(node) != 2:
            raise ConfigurationError(
                f"tree nodes must be binary (got a node with {len(node)} children)"
            )
        children = list(node)
    else:
        raise ConfigurationError(f"bad tree node of type {type(node).__name__}")
    left = _parse_node(children[0], divisions)
    right = _parse_node(children[1], divisions)
    divisions.append(Division(left=tuple(sorted(left)), right=tuple(sorted(right)),
                              kind=kind, name=name))
    return left + right


def parse_tree(config, num_classes: int = None) -> ClassTree:
    """Build and validate a ClassTree from nested-list config data.

    ``config`` may be the nested structure itself or a dict with keys
    ``structure`` and optional ``unconstrained`` (class ids whose divisions
    may be skipped).
    """
    unconstrained = frozenset()
    structure = config
    if isinstance(config, dict) and "structure" in config:
        structure = config["structure"]
        unconstrained = frozenset(config.get("unconstrained", []))
    divisions: List[Division] = []
    leaves = _parse_node(structure, divisions)
    c = len(leaves)
    if isinstance(structure, int):
        raise ConfigurationError("a class tree needs at least two classes")
    if sorted(leaves) != list(range(c)):
        raise ConfigurationError(
            f"tree leaves must be exactly the class ids 0..{c - 1}, got {sorted(leaves)}"
        )
    if num_classes is not None and c != num_classes:
        raise ConfigurationError(f"tree has {c} leaves but {num_classes} classes were expected")
    if len(divisions) != c - 1:
        raise ConfigurationError(
            f"a full binary tree over {c} classes must have {c - 1} internal nodes, "
            f"got {len(divisions)}"
        )
    if not unconstrained <= set(range(c)):
        raise ConfigurationError("unconstrained ids must be valid class ids")
    return ClassTree(num_classes=c, divisions=divisions, unconstrained=unconstrained)


def load_tree(path, num_classes: int = None) -> ClassTree:
    try:
        with open(path) as fh:
            config = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigurationError(f"cannot read tree config {path}: {exc}") from exc
    return parse_tree(config, num_classes)


def balanced_tree(num_classes: int) -> ClassTree:
    """Balanced tree over classes 0..c-1 (the default when none is given)."""
    if num_classes < 2:
        raise ConfigurationError("a class tree needs at least two classes")

    def build(ids: Sequence[int]):
        if len(ids) == 1:
            return ids[0]
        mid = (len(ids) + 1) // 2
        return [build(ids[:mid]), build(ids[mid:])]

    return parse_tree(build(list(range(num_classes))))
