"""Skeleton topology and the self / parent / child neighbour partition."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from importlib import resources

import numpy as np

DEFAULT_SKELETON = "skeleton_h36m17"


class SkeletonError(ValueError):
    pass


@dataclass(frozen=True)
class SkeletonGraph:
    names: tuple[str, ...]
    parents: tuple[int | None, ...]
    root_index: int

    @property
    def n(self) -> int:
        return len(self.names)

    @property
    def root_name(self) -> str:
        return self.names[self.root_index]

    def index(self, name: str) -> int:
        return self.names.index(name)

    def edges(self) -> list[tuple[int, int]]:
        """(child, parent) pairs."""
        return [(i, p) for i, p in enumerate(self.parents) if p is not None]

    def depth(self) -> list[int]:
        out = []
        for i in range(self.n):
            d, j = 0, i
            while self.parents[j] is not None:
                j = self.parents[j]
                d += 1
            out.append(d)
        return out

    def permuted(self, perm) -> "SkeletonGraph":
        """Graph with joint ``perm[k]`` moved to position ``k``."""
        perm = list(perm)
        inv = {old: new for new, old in enumerate(perm)}
        parents = tuple(None if self.parents[o] is None else inv[self.parents[o]] for o in perm)
        return SkeletonGraph(tuple(self.names[o] for o in perm), parents, inv[self.root_index])


@dataclass(frozen=True)
class NeighborPartition:
    mask_self: np.ndarray
    mask_parent: np.ndarray
    mask_child: np.ndarray

    def as_dict(self) -> dict[str, np.ndarray]:
        return {"self": self.mask_self, "parent": self.mask_parent, "child": self.mask_child}


def from_parents(names, parents) -> SkeletonGraph:
    """Validate a (names, parent-name-or-None) joint list and build the graph."""
    names = [str(n).strip() for n in names]
    if not names:
        raise SkeletonError("skeleton has no joints")
    seen = set()
    for name in names:
        if not name:
            raise SkeletonError("empty joint name")
        if name in seen:
            raise SkeletonError(f"duplicate joint name '{name}'")
        seen.add(name)
    lookup = {n: i for i, n in enumerate(names)}
    idx: list[int | None] = []
    for name, parent in zip(names, parents):
        if parent is None or parent == "":
            idx.append(None)
        elif parent == name:
            raise SkeletonError(f"joint '{name}' is its own parent")
        elif parent not in lookup:
            raise SkeletonError(f"joint '{name}' references unknown parent '{parent}'")
        else:
            idx.append(lookup[parent])
    roots = [i for i, p in enumerate(idx) if p is None]
    if len(roots) != 1:
        listed = ", ".join(names[i] for i in roots) or "none"
        raise SkeletonError(f"expected exactly one root joint, found {len(roots)} ({listed})")
    for i in range(len(names)):
        visited, j = set(), i
        while idx[j] is not None:
            if j in visited:
                raise SkeletonError(f"cycle in parent links at joint '{names[i]}'")
            visited.add(j)
            j = idx[j]
    return SkeletonGraph(tuple(names), tuple(idx), roots[0])


def load_skeleton(text: str | None = None) -> SkeletonGraph:
    """Parse a ``name,parent`` CSV skeleton description; the default is the 17-joint
    Human3.6M layout rooted at the pelvis."""
    if text is None:
        text = default_skeleton_text()
    rows = list(csv.DictReader(io.StringIO(text)))
    if rows and not {"name", "parent"} <= set(rows[0].keys()):
        raise SkeletonError("skeleton CSV needs 'name' and 'parent' columns")
    names = [r["name"] or "" for r in rows]
    parents = [(r["parent"] or "").strip() or None for r in rows]
    return from_parents(names, parents)


def default_skeleton_text() -> str:
    return resources.files("posegraphnet.resources").joinpath(f"{DEFAULT_SKELETON}.csv").read_text()


def default_skeleton() -> SkeletonGraph:
    return load_skeleton()


def chain(n: int) -> SkeletonGraph:
    """Simple chain j0 <- j1 <- ... used in small tests."""
    names = [f"j{i}" for i in range(n)]
    return from_parents(names, [None] + names[:-1])


def build_partition(g: SkeletonGraph) -> NeighborPartition:
    n = g.n
    parent = np.zeros((n, n))
    for child, p in g.edges():
        parent[child, p] = 1.0
    return NeighborPartition(np.eye(n), parent, parent.T.copy())
