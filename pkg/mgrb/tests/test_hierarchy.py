import tempfile
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase

from mgrb.exceptions import HierarchyParseError, InvalidArgument
from mgrb.hierarchy import (
    ClassHierarchy,
    EmbeddingTable,
    build_semantic_hierarchy,
    build_visual_hierarchy,
    kmeans,
    lcs_distance,
    load_embeddings,
    load_ontology,
    parse_ontology,
    soft_label,
    soft_label_table,
    write_embeddings,
    write_ontology,
)
from mgrb.network import Network
from mgrb.numerics import Rng

FIXTURES = Path(__file__).resolve().parent / "fixtures"
CIFAR10 = ["airplane", "automobile", "ship", "truck", "bird", "cat", "deer", "dog", "frog", "horse"]


def three_leaf_tree() -> ClassHierarchy:
    """P1 holds A (0) and C (2); P2 holds B (1)"""
    h = ClassHierarchy("ontology")
    h.add_leaf(0, "A", ["P1"])
    h.add_leaf(1, "B", ["P2"])
    h.add_leaf(2, "C", ["P1"])
    return h


class DistanceTests(SimpleTestCase):
    def test_two_level_tree_distances(self):
        h = three_leaf_tree()
        self.assertEqual(lcs_distance(h, 2, 2), 0.0)
        self.assertEqual(lcs_distance(h, 0, 2), 0.5)
        self.assertEqual(lcs_distance(h, 1, 2), 1.0)

    def test_distance_properties_on_deeper_tree(self):
        h = load_ontology(FIXTURES / "cifar10_ontology.txt")
        classes = h.class_ids
        d = h.distance_matrix(classes)
        np.testing.assert_array_equal(np.diag(d), np.zeros(len(classes)))
        np.testing.assert_array_equal(d, d.T)
        self.assertTrue(np.all((d >= 0) & (d <= 1)))
        for a in classes:
            for c in classes:
                self.assertAlmostEqual(lcs_distance(h, a, c), d[a, c])

    def test_distance_matrix_is_read_only(self):
        d = three_leaf_tree().distance_matrix([0, 1, 2])
        with self.assertRaises(ValueError):
            d[0, 1] = 0.0

    def test_unknown_class_is_an_error(self):
        with self.assertRaises(InvalidArgument):
            lcs_distance(three_leaf_tree(), 0, 9)


class SoftLabelTests(SimpleTestCase):
    def test_reference_values(self):
        y = soft_label(three_leaf_tree(), 2, 1.0, [0, 1, 2])
        np.testing.assert_allclose(y.values, [0.30719589, 0.18632372, 0.50648039], atol=1e-4)
        self.assertAlmostEqual(y.values.sum(), 1.0, delta=1e-9)

    def test_large_beta_is_one_hot(self):
        y = soft_label(three_leaf_tree(), 2, 1e3, [0, 1, 2])
        np.testing.assert_allclose(y.values, [0.0, 0.0, 1.0], atol=1e-6)

    def test_ground_truth_is_the_mode(self):
        h = load_ontology(FIXTURES / "cifar10_ontology.txt")
        for beta in (0.5, 5.0, 20.0):
            table = soft_label_table(h, beta, h.class_ids)
            np.testing.assert_array_equal(np.argmax(table, axis=1), h.class_ids)
            np.testing.assert_allclose(table.sum(axis=1), 1.0, atol=1e-9)

    def test_rows_match_single_soft_labels(self):
        h = three_leaf_tree()
        table = soft_label_table(h, 2.0, [0, 1, 2])
        for g in range(3):
            np.testing.assert_allclose(table[g], soft_label(h, g, 2.0, [0, 1, 2]).values)

    def test_support_is_exactly_the_known_classes(self):
        y = soft_label(three_leaf_tree(), 0, 1.0, [0, 2])
        self.assertEqual(y.classes, (0, 2))
        self.assertEqual(len(y.values), 2)

    def test_invalid_arguments(self):
        with self.assertRaises(InvalidArgument):
            soft_label(three_leaf_tree(), 2, 0.0, [0, 1, 2])
        with self.assertRaises(InvalidArgument):
            soft_label(three_leaf_tree(), 1, 1.0, [0, 2])

    def test_flat_tree_makes_every_other_class_equidistant(self):
        h = ClassHierarchy.flat({0: "a", 1: "b", 2: "c"})
        d = h.distance_matrix([0, 1, 2])
        np.testing.assert_array_equal(d, 1.0 - np.eye(3))


class KMeansTests(SimpleTestCase):
    def test_inertia_is_monotone_and_assignments_are_nearest(self):
        for seed in range(100):
            rng = Rng(seed)
            vectors = rng.normal(0.0, 1.0, (int(rng.integers(5, 30)), 3))
            k = int(rng.integers(1, 6))
            result = kmeans(vectors, k, rng.derive(1))
            self.assertTrue(
                all(b <= a + 1e-9 for a, b in zip(result.history, result.history[1:])),
                f"seed {seed}: {result.history}",
            )
            distances = ((vectors[:, None, :] - result.centroids[None]) ** 2).sum(axis=2)
            nearest = distances.min(axis=1)
            chosen = distances[np.arange(len(vectors)), result.assignments]
            np.testing.assert_allclose(chosen, nearest, atol=1e-9)
            self.assertGreaterEqual(result.inertia, 0.0)

    def test_k_equal_to_count_gives_zero_inertia(self):
        vectors = Rng(0).normal(size=(5, 2))
        result = kmeans(vectors, 5, Rng(1))
        self.assertAlmostEqual(result.inertia, 0.0, delta=1e-12)
        self.assertEqual(len(set(result.assignments.tolist())), 5)

    def test_two_separated_pairs(self):
        vectors = np.array([[0.0, 0.0], [0.0, 1.0], [10.0, 10.0], [10.0, 11.0]])
        for seed in range(10):
            result = kmeans(vectors, 2, Rng(seed))
            centroids = result.centroids[np.argsort(result.centroids[:, 0])]
            np.testing.assert_allclose(centroids, [[0.0, 0.5], [10.0, 10.5]])
            self.assertEqual(result.assignments[0], result.assignments[1])
            self.assertNotEqual(result.assignments[1], result.assignments[2])

    def test_single_cluster_is_the_mean(self):
        vectors = Rng(6).normal(size=(9, 4))
        result = kmeans(vectors, 1, Rng(0))
        np.testing.assert_allclose(result.centroids[0], vectors.mean(axis=0), atol=1e-12)
        self.assertEqual(result.assignments.tolist(), [0] * 9)

    def test_k_too_large_is_rejected(self):
        with self.assertRaises(InvalidArgument):
            kmeans(np.zeros((3, 2)), 4, Rng(0))

    def test_seeded_results_are_reproducible(self):
        vectors = Rng(4).normal(size=(20, 3))
        a = kmeans(vectors, 3, Rng(9))
        b = kmeans(vectors, 3, Rng(9))
        np.testing.assert_array_equal(a.assignments, b.assignments)


class HierarchyBuilderTests(SimpleTestCase):
    def setUp(self):
        self.table = load_embeddings(FIXTURES / "cifar10_toy_embeddings.txt")
        self.labels = dict(enumerate(CIFAR10))

    def test_semantic_k2_separates_vehicles_and_animals(self):
        h = build_semantic_hierarchy(self.labels, self.table, 2, Rng(1993))
        groups = sorted(sorted(g) for g in h.coarse_groups().values())
        self.assertEqual(groups, [[0, 1, 2, 3], [4, 5, 6, 7, 8, 9]])
        self.assertEqual(lcs_distance(h, 0, 3), 0.5)
        self.assertEqual(lcs_distance(h, 0, 5), 1.0)

    def test_semantic_k1_is_flat(self):
        h = build_semantic_hierarchy(self.labels, self.table, 1, Rng(0))
        d = h.distance_matrix(h.class_ids)
        np.testing.assert_array_equal(d, 1.0 - np.eye(10))

    def test_missing_embedding_is_an_error(self):
        with self.assertRaises(InvalidArgument):
            build_semantic_hierarchy({0: "airplane", 1: "zebra"}, self.table, 1, Rng(0))

    def test_visual_hierarchy_groups_by_feature_means(self):
        net = Network.build(2, [4], Rng(5), num_classes=4)
        for layer in net.extractor:
            layer.weight[...] = np.vstack([np.eye(2), -np.eye(2)])
        rng = Rng(2)
        centres = {0: (5, 5), 1: (5, 6), 2: (-5, -5), 3: (-6, -5)}
        data = {c: np.array(xy) + 0.1 * rng.normal(size=(6, 2)) for c, xy in centres.items()}
        h = build_visual_hierarchy(net, data, 2, Rng(3))
        self.assertEqual(sorted(sorted(g) for g in h.coarse_groups().values()), [[0, 1], [2, 3]])
        self.assertEqual(h.source, "visual")

    def test_visual_hierarchy_ignores_sample_order(self):
        net = Network.build(3, [5], Rng(7), num_classes=4)
        rng = Rng(8)
        data = {c: rng.normal(float(c), 1.0, size=(6, 3)) for c in range(4)}
        shuffled = {c: samples[::-1] for c, samples in reversed(list(data.items()))}
        a = build_visual_hierarchy(net, data, 2, Rng(3))
        b = build_visual_hierarchy(net, shuffled, 2, Rng(3))
        for c, samples in data.items():
            np.testing.assert_allclose(
                net.extract_features(shuffled[c]).mean(axis=0),
                net.extract_features(samples).mean(axis=0),
                atol=1e-12,
            )
        np.testing.assert_array_equal(a.distance_matrix(range(4)), b.distance_matrix(range(4)))

    def test_visual_hierarchy_needs_samples(self):
        net = Network.build(2, [3], Rng(5), num_classes=2)
        with self.assertRaises(InvalidArgument):
            build_visual_hierarchy(net, {0: np.ones((2, 2)), 1: np.zeros((0, 2))}, 1, Rng(0))

    def test_merge_keeps_existing_branches(self):
        full = load_ontology(FIXTURES / "cifar10_ontology.txt")
        first = full.restricted([0, 4])
        merged = first.merge(full.restricted([1, 5]))
        self.assertEqual(merged.class_ids, [0, 1, 4, 5])
        self.assertEqual(merged.ancestor_labels(5), ["animal", "mammal"])
        merged.validate()


class OntologyFileTests(SimpleTestCase):
    def test_fixture_loads_by_class_index(self):
        index = {name: i for i, name in enumerate(reversed(CIFAR10))}
        h = load_ontology(FIXTURES / "cifar10_ontology.txt", index)
        self.assertEqual(h.ancestor_labels(index["truck"]), ["vehicle", "road"])
        self.assertEqual(h.height(), 3)

    def test_twenty_by_five_file(self):
        paths = [[f"coarse{g}", f"fine{g}_{f}"] for g in range(20) for f in range(5)]
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "ontology.txt"
            write_ontology(path, paths)
            h = load_ontology(path)
        self.assertEqual(h.height(), 2)
        self.assertEqual(len(h.coarse_groups()), 20)
        self.assertEqual(h.class_ids, list(range(100)))
        self.assertTrue(all(len(group) == 5 for group in h.coarse_groups().values()))
        self.assertEqual(lcs_distance(h, 0, 4), 0.5)
        self.assertEqual(lcs_distance(h, 0, 5), 1.0)

    def test_single_class_file(self):
        h = load_ontology(["only"])
        self.assertEqual(h.height(), 1)
        self.assertEqual(h.class_ids, [0])

    def test_bare_leaf_attaches_to_root(self):
        h = load_ontology(["group/a", "b"])
        self.assertEqual(h.ancestor_labels(1), [])
        self.assertEqual(lcs_distance(h, 0, 1), 1.0)

    def test_two_parents_reports_the_line(self):
        with self.assertRaises(HierarchyParseError) as ctx:
            parse_ontology(["x/a", "y/b", "x/z/c", "y/z/d"])
        self.assertEqual(ctx.exception.line, 4)
        self.assertIn("line 4", str(ctx.exception))

    def test_leaf_reused_as_internal_node(self):
        with self.assertRaises(HierarchyParseError) as ctx:
            parse_ontology(["x/a", "a/b"])
        self.assertEqual(ctx.exception.line, 2)

    def test_cycle_on_a_path(self):
        with self.assertRaises(HierarchyParseError) as ctx:
            parse_ontology(["x/y/x/a"])
        self.assertEqual(ctx.exception.line, 1)

    def test_empty_segment(self):
        with self.assertRaises(HierarchyParseError) as ctx:
            parse_ontology(["ok/a", "x//b"])
        self.assertEqual(ctx.exception.line, 2)

    def test_duplicate_leaf(self):
        with self.assertRaises(HierarchyParseError):
            parse_ontology(["x/a", "y/a"])

    def test_class_missing_from_ontology(self):
        with self.assertRaises(HierarchyParseError):
            load_ontology(["x/a"], {"a": 0, "b": 1})


class EmbeddingFileTests(SimpleTestCase):
    def test_fixture_loads(self):
        table = load_embeddings(FIXTURES / "cifar10_toy_embeddings.txt")
        self.assertEqual(table.dim, 4)
        self.assertEqual(len(table.vectors), 10)
        np.testing.assert_array_equal(table.lookup("ship"), [5.5, 4.5, -0.5, 0.0])

    def test_write_then_load(self):
        vectors = {"a": np.array([1.0, 2.0]), "b": np.array([-1.5, 0.25])}
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "emb.txt"
            write_embeddings(path, vectors)
            table = load_embeddings(path)
        np.testing.assert_array_equal(table.lookup("b"), vectors["b"])

    def test_malformed_files(self):
        cases = {
            "1 2\na 1.0\n": 2,
            "1 2\na 1.0 x\n": 2,
            "2 2\na 1 2\na 3 4\n": 3,
            "two 2\n": 1,
        }
        for content, line in cases.items():
            with tempfile.TemporaryDirectory() as tmp:
                path = Path(tmp) / "emb.txt"
                path.write_text(content, encoding="utf-8")
                with self.assertRaises(HierarchyParseError) as ctx:
                    load_embeddings(path)
                self.assertEqual(ctx.exception.line, line, content)

    def test_count_mismatch(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "emb.txt"
            path.write_text("3 1\na 1\n", encoding="utf-8")
            with self.assertRaises(HierarchyParseError):
                load_embeddings(path)

    def test_embedding_table_checks_dimensions(self):
        with self.assertRaises(InvalidArgument):
            EmbeddingTable({"a": np.ones(3)}, 2)
