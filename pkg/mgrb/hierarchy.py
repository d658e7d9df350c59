"""
Class hierarchies and multi-granularity soft labels.

A ``ClassHierarchy`` is a rooted tree (networkx DiGraph, edges parent ->
child) whose leaves are class indices. Hierarchies come from an ontology
file, from K-means over label embeddings (semantic) or from K-means over
class-mean features (visual). Inter-class distance is the height of the
lowest common subtree normalised by the root height; soft labels are
exp(-beta * d) normalised over the currently known classes.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import networkx as nx
import numpy as np

from .exceptions import HierarchyParseError, InvalidArgument
from .numerics import Rng, softmax

logger = logging.getLogger(__name__)

ROOT = "<root>"
SOURCES = ("ontology", "semantic", "visual", "none")

KMEANS_MAX_ITER = 300
KMEANS_TOLERANCE = 1e-9


def leaf_node(class_id: int) -> str:
    return f"class:{class_id}"


class ClassHierarchy:
    """Rooted tree over class indices; immutable once built"""

    def __init__(self, source: str = "none") -> None:
        if source not in SOURCES:
            raise InvalidArgument(f"unknown hierarchy source {source!r}")
        self.source = source
        self.graph = nx.DiGraph()
        self.graph.add_node(ROOT, label="root")
        self.leaf_map: dict[int, str] = {}
        self._heights: dict[str, int] | None = None
        self._distance_cache: dict[tuple[int, ...], np.ndarray] = {}

    # -- construction -------------------------------------------------------

    def add_leaf(self, class_id: int, label: str, ancestors: Sequence[str] = ()) -> None:
        """
        Attach class ``class_id`` under the chain ``ancestors`` (outermost
        first). Internal nodes are keyed by label and keep their first parent.
        """
        if class_id in self.leaf_map:
            raise InvalidArgument(f"class {class_id} is already a leaf")
        parent = ROOT
        for name in ancestors:
            node = f"node:{name}"
            if node in self.graph:
                existing = next(iter(self.graph.predecessors(node)))
                if existing != parent:
                    raise InvalidArgument(
                        f"node {name!r} already has parent {self.label(existing)!r}"
                    )
            else:
                self.graph.add_node(node, label=name)
                self.graph.add_edge(parent, node)
            parent = node
        leaf = leaf_node(class_id)
        self.graph.add_node(leaf, label=label, class_id=class_id)
        self.graph.add_edge(parent, leaf)
        self.leaf_map[class_id] = leaf
        self._invalidate()

    @classmethod
    def flat(cls, labels: Mapping[int, str], source: str = "none") -> "ClassHierarchy":
        hierarchy = cls(source)
        for class_id, label in labels.items():
            hierarchy.add_leaf(class_id, label)
        return hierarchy

    @classmethod
    def two_level(
        cls,
        groups: Sequence[Sequence[int]],
        labels: Mapping[int, str],
        source: str,
    ) -> "ClassHierarchy":
        """
        root -> one coarse node per non-empty group -> leaves. A single
        non-empty group collapses into the root.
        """
        non_empty = [group for group in groups if len(group)]
        hierarchy = cls(source)
        for index, group in enumerate(non_empty):
            ancestors = [f"{source}:{index}"] if len(non_empty) > 1 else []
            for class_id in group:
                hierarchy.add_leaf(int(class_id), labels[int(class_id)], ancestors)
        return hierarchy

    def merge(self, other: "ClassHierarchy") -> "ClassHierarchy":
        """
        New hierarchy holding every node of ``self`` plus the branches of
        ``other``. Existing nodes never move; a conflicting parent is an error.
        """
        merged = self.copy()
        for class_id, leaf in other.leaf_map.items():
            if class_id in merged.leaf_map:
                continue
            merged.add_leaf(class_id, other.label(leaf), other.ancestor_labels(class_id))
        return merged

    def restricted(self, class_ids: Iterable[int]) -> "ClassHierarchy":
        """Sub-hierarchy spanning only the given leaves and their ancestors"""
        sub = ClassHierarchy(self.source)
        for class_id in class_ids:
            leaf = self._leaf(class_id)
            sub.add_leaf(class_id, self.label(leaf), self.ancestor_labels(class_id))
        return sub

    def copy(self) -> "ClassHierarchy":
        clone = ClassHierarchy(self.source)
        clone.graph = self.graph.copy()
        clone.leaf_map = dict(self.leaf_map)
        return clone

    def _invalidate(self) -> None:
        self._heights = None
        self._distance_cache.clear()

    # -- queries ------------------------------------------------------------

    @property
    def class_ids(self) -> list[int]:
        return sorted(self.leaf_map)

    def label(self, node: str) -> str:
        return self.graph.nodes[node]["label"]

    def _leaf(self, class_id: int) -> str:
        try:
            return self.leaf_map[int(class_id)]
        except KeyError:
            raise InvalidArgument(f"class {class_id} is not a leaf of the hierarchy") from None

    def ancestor_labels(self, class_id: int) -> list[str]:
        """Internal-node labels from just below the root down to the leaf's parent"""
        path = nx.shortest_path(self.graph, ROOT, self._leaf(class_id))
        return [self.label(node) for node in path[1:-1]]

    def height(self, node: str = ROOT) -> int:
        """Edge-count height; leaves are 0"""
        if self._heights is None:
            heights: dict[str, int] = {}
            for current in nx.dfs_postorder_nodes(self.graph, ROOT):
                children = list(self.graph.successors(current))
                heights[current] = 1 + max(heights[c] for c in children) if children else 0
            self._heights = heights
        return self._heights[node]

    def coarse_groups(self) -> dict[str, list[int]]:
        """Children of the root mapped to the class indices beneath them"""
        groups = {}
        for child in self.graph.successors(ROOT):
            leaves = [self.graph.nodes[n]["class_id"] for n in nx.descendants(self.graph, child) | {child}
                      if "class_id" in self.graph.nodes[n]]
            groups[self.label(child)] = sorted(leaves)
        return groups

    def validate(self) -> None:
        if not nx.is_arborescence(self.graph):
            raise InvalidArgument("hierarchy is not a rooted tree")
        for class_id, leaf in self.leaf_map.items():
            if self.graph.out_degree(leaf) != 0:
                raise InvalidArgument(f"class {class_id} is not a leaf")

    def distance_matrix(self, classes: Sequence[int]) -> np.ndarray:
        """d[i, j] = Height(LCS(classes[i], classes[j])) / Height(root)"""
        key = tuple(int(c) for c in classes)
        cached = self._distance_cache.get(key)
        if cached is not None:
            return cached
        leaves = [self._leaf(c) for c in key]
        root_height = self.height()
        size = len(leaves)
        distances = np.zeros((size, size))
        if root_height > 0 and size > 1:
            index = {leaf: i for i, leaf in enumerate(leaves)}
            pairs = [(leaves[i], leaves[j]) for i in range(size) for j in range(i + 1, size)]
            for (a, b), lca in nx.tree_all_pairs_lowest_common_ancestor(
                self.graph, root=ROOT, pairs=pairs
            ):
                value = self.height(lca) / root_height
                distances[index[a], index[b]] = distances[index[b], index[a]] = value
        distances.setflags(write=False)
        self._distance_cache[key] = distances
        return distances


@dataclass(frozen=True)
class LabelDistribution:
    values: np.ndarray
    classes: tuple[int, ...]
    beta: float | None = None

    @classmethod
    def one_hot(cls, target: int, classes: Sequence[int]) -> "LabelDistribution":
        classes = tuple(int(c) for c in classes)
        values = np.zeros(len(classes))
        values[classes.index(int(target))] = 1.0
        return cls(values, classes)


@dataclass(frozen=True)
class EmbeddingTable:
    vectors: Mapping[str, np.ndarray]
    dim: int

    def __post_init__(self) -> None:
        for label, vector in self.vectors.items():
            if vector.shape != (self.dim,):
                raise InvalidArgument(f"embedding for {label!r} has shape {vector.shape}")
            if not np.all(np.isfinite(vector)):
                raise InvalidArgument(f"embedding for {label!r} is not finite")

    def lookup(self, label: str) -> np.ndarray:
        try:
            return self.vectors[label]
        except KeyError:
            raise InvalidArgument(f"no embedding for label {label!r}") from None


@dataclass
class ClusterResult:
    assignments: np.ndarray
    centroids: np.ndarray
    inertia: float
    history: list[float] = field(default_factory=list)
    iterations: int = 0


def lcs_distance(h: ClassHierarchy, a: int, c: int) -> float:
    if int(a) == int(c):
        h._leaf(a)
        return 0.0
    leaf_a, leaf_c = h._leaf(a), h._leaf(c)
    lca = nx.lowest_common_ancestor(h.graph, leaf_a, leaf_c)
    return h.height(lca) / h.height()


def soft_label(
    h: ClassHierarchy, g: int, beta: float, classes: Sequence[int]
) -> LabelDistribution:
    """y_A proportional to exp(-beta * d(A, g)) over exactly ``classes``"""
    if beta <= 0:
        raise InvalidArgument("beta must be > 0")
    classes = tuple(int(c) for c in classes)
    if int(g) not in classes:
        raise InvalidArgument(f"ground truth {g} is not among the known classes")
    distances = h.distance_matrix(classes)[classes.index(int(g))]
    return LabelDistribution(softmax(-beta * distances), classes, beta)


def soft_label_table(h: ClassHierarchy, beta: float, classes: Sequence[int]) -> np.ndarray:
    """Row i is the soft label for ground truth ``classes[i]``"""
    if beta <= 0:
        raise InvalidArgument("beta must be > 0")
    return softmax(-beta * h.distance_matrix(classes), axis=1)


# -- clustering -------------------------------------------------------------


def _squared_distances(vectors: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    diff = vectors[:, None, :] - centroids[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def _seed_centroids(vectors: np.ndarray, k: int, rng: Rng) -> np.ndarray:
    """k-means++ seeding"""
    count = vectors.shape[0]
    chosen = [int(rng.integers(0, count))]
    closest = _squared_distances(vectors, vectors[chosen])[:, 0]
    for _ in range(1, k):
        total = closest.sum()
        if total <= 0:
            remaining = [i for i in range(count) if i not in chosen]
            pick = remaining[0]
        else:
            pick = int(rng.choice(count, 1, p=closest / total)[0])
        chosen.append(pick)
        closest = np.minimum(closest, _squared_distances(vectors, vectors[[pick]])[:, 0])
    return vectors[chosen].copy()


def kmeans(
    vectors,
    k: int,
    rng: Rng,
    *,
    max_iter: int = KMEANS_MAX_ITER,
    tolerance: float = KMEANS_TOLERANCE,
) -> ClusterResult:
    """
    Lloyd's algorithm from k-means++ seeds. Stops at an assignment fixpoint,
    an inertia change <= ``tolerance`` or ``max_iter``. Empty clusters are
    re-seeded at the point farthest from its centroid; distance ties go to
    the lowest cluster index.
    """
    vectors = np.asarray(vectors, dtype=np.float64)
    if vectors.ndim != 2:
        raise InvalidArgument("kmeans expects a list of equal-length vectors")
    count = vectors.shape[0]
    if k < 1:
        raise InvalidArgument("k must be >= 1")
    if k > count:
        raise InvalidArgument(f"k={k} exceeds the number of items ({count})")

    centroids = _seed_centroids(vectors, k, rng)
    distances = _squared_distances(vectors, centroids)
    assignments = np.argmin(distances, axis=1)
    history = [float(distances[np.arange(count), assignments].sum())]

    iteration = 0
    for iteration in range(1, max_iter + 1):
        point_cost = distances[np.arange(count), assignments]
        for cluster in range(k):
            members = assignments == cluster
            if members.any():
                centroids[cluster] = vectors[members].mean(axis=0)
            else:
                farthest = int(np.argmax(point_cost))
                centroids[cluster] = vectors[farthest]
                point_cost[farthest] = 0.0
        distances = _squared_distances(vectors, centroids)
        updated = np.argmin(distances, axis=1)
        history.append(float(distances[np.arange(count), updated].sum()))
        converged = np.array_equal(updated, assignments)
        assignments = updated
        if converged or history[-2] - history[-1] <= tolerance:
            break

    return ClusterResult(
        assignments=assignments,
        centroids=centroids,
        inertia=max(history[-1], 0.0),
        history=history,
        iterations=iteration,
    )


def _groups_from_clusters(class_ids: Sequence[int], result: ClusterResult, k: int) -> list[list[int]]:
    groups: list[list[int]] = [[] for _ in range(k)]
    for class_id, cluster in zip(class_ids, result.assignments):
        groups[int(cluster)].append(int(class_id))
    return groups


def build_semantic_hierarchy(
    labels: Mapping[int, str], table: EmbeddingTable, k: int, rng: Rng
) -> ClassHierarchy:
    """Two-level tree from K-means over the label embeddings of the seen classes"""
    class_ids = sorted(labels)
    vectors = np.stack([table.lookup(labels[c]) for c in class_ids])
    result = kmeans(vectors, k, rng)
    logger.info(
        "semantic hierarchy over %d classes, k=%d, inertia %.4f", len(class_ids), k, result.inertia
    )
    return ClassHierarchy.two_level(_groups_from_clusters(class_ids, result, k), labels, "semantic")


def class_mean_features(extractor, data: Mapping[int, np.ndarray]) -> dict[int, np.ndarray]:
    """v_i = mean of extractor features over the available samples of class i"""
    means = {}
    for class_id in sorted(data):
        samples = np.asarray(data[class_id], dtype=np.float64)
        if samples.shape[0] == 0:
            raise InvalidArgument(f"class {class_id} has no samples for its visual feature")
        means[class_id] = extractor.extract_features(samples).mean(axis=0)
    return means


def build_visual_hierarchy(
    net,
    data: Mapping[int, np.ndarray],
    k: int,
    rng: Rng,
    labels: Mapping[int, str] | None = None,
) -> ClassHierarchy:
    """Two-level tree from K-means over class-mean features of ``net``"""
    means = class_mean_features(net, data)
    class_ids = sorted(means)
    labels = labels or {c: str(c) for c in class_ids}
    result = kmeans(np.stack([means[c] for c in class_ids]), k, rng)
    logger.info(
        "visual hierarchy over %d classes, k=%d, inertia %.4f", len(class_ids), k, result.inertia
    )
    return ClassHierarchy.two_level(_groups_from_clusters(class_ids, result, k), labels, "visual")


# -- files ------------------------------------------------------------------


@dataclass(frozen=True)
class OntologyEntry:
    ancestors: tuple[str, ...]
    leaf: str
    line: int


def parse_ontology(lines: Iterable[str]) -> list[OntologyEntry]:
    """
    ``parent_path/leaf_label`` per line, outermost ancestor first. Blank
    lines and ``#`` comments are skipped.
    """
    entries: list[OntologyEntry] = []
    parents: dict[str, str] = {}
    leaves: dict[str, int] = {}
    for number, raw in enumerate(lines, 1):
        text = raw.strip()
        if not text or text.startswith("#"):
            continue
        parts = [part.strip() for part in text.split("/")]
        if any(not part for part in parts):
            raise HierarchyParseError(f"orphan node in path {text!r} (empty segment)", number)
        *ancestors, leaf = parts
        if leaf in leaves:
            raise HierarchyParseError(
                f"duplicate leaf {leaf!r} (first seen on line {leaves[leaf]})", number
            )
        if leaf in parents:
            raise HierarchyParseError(f"{leaf!r} is used both as a leaf and an internal node", number)
        if len(set(parts)) != len(parts):
            raise HierarchyParseError(f"cycle: {text!r} repeats a label on its own path", number)
        chain = ["", *ancestors]
        for parent, child in zip(chain, ancestors):
            if child in leaves:
                raise HierarchyParseError(f"{child!r} is used both as a leaf and an internal node", number)
            known = parents.get(child)
            if known is not None and known != parent:
                raise HierarchyParseError(
                    f"{child!r} has two parents ({known or 'root'!r} and {parent or 'root'!r})", number
                )
            parents[child] = parent
        if _loops(parents):
            raise HierarchyParseError(f"cycle introduced by {text!r}", number)
        leaves[leaf] = number
        entries.append(OntologyEntry(tuple(ancestors), leaf, number))
    return entries


def _loops(parents: Mapping[str, str]) -> bool:
    graph = nx.DiGraph((parent, child) for child, parent in parents.items())
    return not nx.is_directed_acyclic_graph(graph)


def load_ontology(
    file: str | Path | Iterable[str], class_index: Mapping[str, int] | None = None
) -> ClassHierarchy:
    """
    Build the ontology hierarchy. ``class_index`` maps leaf labels to class
    indices; without it leaves are numbered in file order.
    """
    if isinstance(file, (str, Path)):
        with open(file, encoding="utf-8") as handle:
            entries = parse_ontology(handle)
    else:
        entries = parse_ontology(file)
    hierarchy = ClassHierarchy("ontology")
    for position, entry in enumerate(entries):
        if class_index is None:
            class_id = position
        elif entry.leaf in class_index:
            class_id = class_index[entry.leaf]
        else:
            continue
        hierarchy.add_leaf(class_id, entry.leaf, entry.ancestors)
    if class_index is not None:
        missing = sorted(set(class_index) - {e.leaf for e in entries})
        if missing:
            raise HierarchyParseError(f"classes missing from ontology: {', '.join(missing)}")
    hierarchy.validate()
    return hierarchy


def write_ontology(path: str | Path, paths: Iterable[Sequence[str]]) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        for parts in paths:
            handle.write("/".join(parts) + "\n")


def load_embeddings(path: str | Path) -> EmbeddingTable:
    """Header ``<count> <dim>``, then ``label v1 ... v_dim`` per line"""
    with open(path, encoding="utf-8") as handle:
        header = handle.readline().split()
        if len(header) != 2:
            raise HierarchyParseError("header must be '<count> <dim>'", 1)
        try:
            count, dim = int(header[0]), int(header[1])
        except ValueError:
            raise HierarchyParseError("header must be '<count> <dim>'", 1) from None
        vectors: dict[str, np.ndarray] = {}
        for number, raw in enumerate(handle, 2):
            parts = raw.split()
            if not parts:
                continue
            if len(parts) != dim + 1:
                raise HierarchyParseError(f"expected {dim} values, got {len(parts) - 1}", number)
            if parts[0] in vectors:
                raise HierarchyParseError(f"duplicate label {parts[0]!r}", number)
            try:
                vector = np.array([float(v) for v in parts[1:]])
            except ValueError:
                raise HierarchyParseError("non-numeric embedding value", number) from None
            if not np.all(np.isfinite(vector)):
                raise HierarchyParseError("non-finite embedding value", number)
            vectors[parts[0]] = vector
    if len(vectors) != count:
        raise HierarchyParseError(f"header announces {count} labels, file has {len(vectors)}")
    return EmbeddingTable(vectors, dim)


def write_embeddings(path: str | Path, vectors: Mapping[str, np.ndarray]) -> None:
    dims = {len(v) for v in vectors.values()}
    if len(dims) != 1:
        raise InvalidArgument("embeddings must share one dimension")
    with open(path, "w", encoding="utf-8") as handle:
        handle.write(f"{len(vectors)} {dims.pop()}\n")
        for label, vector in vectors.items():
            handle.write(label + " " + " ".join(repr(float(v)) for v in vector) + "\n")
