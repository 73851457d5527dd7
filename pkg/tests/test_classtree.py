import json

import pytest

from toposeg.classtree import balanced_tree, load_tree, parse_tree
from toposeg.errors import ConfigurationError


class TestParsing:
    def test_chain_tree_divisions(self):
        tree = parse_tree([[[0, 1], 2], 3])
        assert tree.num_classes == 4
        assert tree.num_internal == 3
        assert [(d.left, d.right) for d in tree.divisions] == [
            ((0,), (1,)), ((0, 1), (2,)), ((0, 1, 2), (3,)),
        ]

    def test_node_counts_match_full_binary_tree_rule(self):
        for c in range(2, 21):
            tree = balanced_tree(c)
            assert tree.num_leaves == c
            assert tree.num_internal == c - 1
            assert tree.num_divisions == c - 1
            assert tree.conv_count == 2 * (c - 1)

    def test_leaves_must_cover_classes_once(self):
        with pytest.raises(ConfigurationError, match="leaves"):
            parse_tree([[0, 1], [1, 2]])
        with pytest.raises(ConfigurationError, match="leaves"):
            parse_tree([[0, 1], [3, 4]])

    def test_nodes_must_be_binary(self):
        with pytest.raises(ConfigurationError, match="binary"):
            parse_tree([0, 1, 2])

    def test_single_class_rejected(self):
        with pytest.raises(ConfigurationError):
            parse_tree(0)

    def test_expected_class_count_checked(self):
        with pytest.raises(ConfigurationError, match="expected"):
            parse_tree([[0, 1], 2], num_classes=4)

    def test_dict_nodes_carry_kind_and_name(self):
        tree = parse_tree({"left": 0, "right": [1, 2], "kind": "containment",
                           "name": "core"})
        top = tree.divisions[-1]
        assert top.kind == "containment"
        assert top.name == "core"

    def test_unknown_kind_rejected(self):
        with pytest.raises(ConfigurationError, match="kind"):
            parse_tree({"left": 0, "right": 1, "kind": "overlap"})

    def test_unconstrained_skips_divisions(self):
        tree = parse_tree({"structure": [[0, 2], 1], "unconstrained": [1]})
        active = tree.active_divisions()
        assert [(d.left, d.right) for d in active] == [((0,), (2,))]
        assert len(tree.skipped_divisions()) == 1
        assert tree.conv_count == 2

    def test_describe_lists_counts(self):
        text = balanced_tree(18).describe()
        assert "18" in text and "17" in text and "34" in text


class TestLoading:
    def test_load_from_file(self, tmp_path):
        path = tmp_path / "tree.json"
        path.write_text(json.dumps([[0, 1], [2, 3]]))
        tree = load_tree(path, num_classes=4)
        assert tree.num_classes == 4

    def test_malformed_file_raises(self, tmp_path):
        path = tmp_path / "tree.json"
        path.write_text("[[0, 1")
        with pytest.raises(ConfigurationError, match="cannot read"):
            load_tree(path)
