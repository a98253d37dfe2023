"""Round-trip and format tests for the binary and text containers."""

import numpy as np
import pytest

from methgraph.comethgraph import BetaMatrix, EdgeRules, GraphTopology
from methgraph.io import (
    IoError,
    config_hash,
    fmt17,
    read_beta_matrix,
    read_csv,
    read_edges,
    read_matrix,
    write_beta_matrix,
    write_csv,
    write_edges,
    write_matrix,
)


def sample_betas(s=5, n=3, seed=0):
    rng = np.random.default_rng(seed)
    return BetaMatrix(rng.random((s, n)), rng.uniform(0, 90, s),
                      [f"src:s{i}" for i in range(s)],
                      [f"cg{j:05d}" for j in range(n)])


class TestBetaMatrixFormat:
    def test_roundtrip(self, tmp_path):
        betas = sample_betas()
        path = tmp_path / "b.mgb"
        write_beta_matrix(path, betas)
        back = read_beta_matrix(path)
        np.testing.assert_array_equal(back.values, betas.values)
        np.testing.assert_array_equal(back.ages, betas.ages)
        assert back.sample_ids == betas.sample_ids
        assert back.site_ids == betas.site_ids

    def test_layout_is_pinned(self, tmp_path):
        betas = sample_betas(s=2, n=2)
        path = tmp_path / "b.mgb"
        write_beta_matrix(path, betas)
        raw = path.read_bytes()
        assert raw[:4] == b"MGB1"
        assert np.frombuffer(raw[4:12], dtype="<u4").tolist() == [2, 2]
        vals = np.frombuffer(raw[12:12 + 32], dtype="<f8").reshape(2, 2)
        np.testing.assert_array_equal(vals, betas.values)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "junk.mgb"
        path.write_bytes(b"XXXX" + b"\0" * 20)
        with pytest.raises(IoError, match="beta"):
            read_beta_matrix(path)

    def test_truncated(self, tmp_path):
        betas = sample_betas()
        path = tmp_path / "b.mgb"
        write_beta_matrix(path, betas)
        (tmp_path / "t.mgb").write_bytes(path.read_bytes()[:40])
        with pytest.raises(IoError, match="truncated"):
            read_beta_matrix(tmp_path / "t.mgb")


class TestMatrixFormat:
    def test_roundtrip(self, tmp_path):
        vals = np.random.default_rng(1).random((4, 7))
        path = tmp_path / "m.mgm"
        write_matrix(path, vals, [f"r{i}" for i in range(4)])
        back, ids = read_matrix(path)
        np.testing.assert_array_equal(back, vals)
        assert ids == ["r0", "r1", "r2", "r3"]

    def test_row_id_mismatch(self, tmp_path):
        with pytest.raises(IoError, match="row ids"):
            write_matrix(tmp_path / "m.mgm", np.zeros((3, 2)), ["a", "b"])


class TestCsv:
    def test_provenance_and_digits(self, tmp_path):
        path = tmp_path / "t.csv"
        write_csv(path, ["id", "x"], [["a", 0.1], ["b", 1.0 / 3.0]], "deadbeef", 7)
        text = path.read_text().splitlines()
        assert text[0].startswith("# methgraph ")
        assert "config=deadbeef" in text[0]
        assert "seed=7" in text[0]
        assert text[2] == "a,0.10000000000000001"
        # 17 significant digits round-trip exactly
        header, rows = read_csv(path)
        assert header == ["id", "x"]
        assert float(rows[1][1]) == 1.0 / 3.0

    def test_fmt17_roundtrip_fuzz(self):
        rng = np.random.default_rng(3)
        for _ in range(500):
            x = float(rng.normal() * 10.0 ** float(rng.integers(-8, 8)))
            assert float(fmt17(x)) == x


class TestEdgeFormat:
    def test_roundtrip_and_header(self, tmp_path):
        graph = GraphTopology(np.array([0, 1]), np.array([2, 3]),
                              np.array([[0.75, 1.0, 0.0], [-0.81, 0.0, 1.0]]), 5)
        path = tmp_path / "e.tsv"
        write_edges(path, graph, EdgeRules(), "cafe", 0)
        lines = path.read_text().splitlines()
        assert lines[1] == "#nodes=5 rules=0.7,0.68,0.66,100000"
        back = read_edges(path)
        assert back.num_nodes == 5
        np.testing.assert_array_equal(back.edges_i, graph.edges_i)
        np.testing.assert_array_equal(back.edges_j, graph.edges_j)
        np.testing.assert_array_equal(back.attrs, graph.attrs)

    def test_missing_header(self, tmp_path):
        path = tmp_path / "e.tsv"
        path.write_text("0\t1\t0.5\t1\t0\n")
        with pytest.raises(IoError, match="nodes"):
            read_edges(path)


class TestConfigHash:
    def test_stable_and_sensitive(self):
        a = config_hash({"x": 1, "y": "z"})
        assert a == config_hash({"y": "z", "x": 1})
        assert a != config_hash({"x": 2, "y": "z"})
        assert len(a) == 12
