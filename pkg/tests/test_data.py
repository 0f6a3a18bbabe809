import json

import numpy as np
import pytest

from igt.data import (ADJACENT_RADIUS, BagDataset, FAR_CELL_GAP, SynthSpec,
                      gen_hybrid, gen_long_range, gen_spatial_motif, generate_dataset,
                      long_range_label, oracle_label, read_bag, read_dataset,
                      spatial_motif_label, write_bag, write_dataset)
from igt.errors import ConfigurationError, GenerationError, IngestionError
from igt.graph import GraphConfig, build_graph
from igt.seeding import rng_for
from igt.tensor import Tensor

SMALL = dict(n_bags=40, n_min=36, n_max=64, d_in=8, seed=11)


class TestBagFiles:
    def test_roundtrip_bit_exact(self, tmp_path):
        rng = rng_for(91, "bag")
        coords = rng.uniform(0, 100, size=(17, 2)).astype(np.float32)
        feats = rng.standard_normal((17, 5)).astype(np.float32)
        path = tmp_path / "one.igtb"
        write_bag(path, coords, feats, label=1)
        c2, f2, label = read_bag(path)
        assert label == 1
        assert c2.tobytes() == coords.tobytes()
        assert f2.tobytes() == feats.tobytes()

    def test_write_read_write_identical_bytes(self, tmp_path):
        rng = rng_for(92, "bag")
        coords = rng.uniform(0, 9, size=(5, 2)).astype(np.float32)
        feats = rng.standard_normal((5, 3)).astype(np.float32)
        p1, p2 = tmp_path / "a.igtb", tmp_path / "b.igtb"
        write_bag(p1, coords, feats, 0)
        write_bag(p2, *read_bag(p1))
        assert p1.read_bytes() == p2.read_bytes()

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.igtb"
        path.write_bytes(b"NOPE" + b"\x00" * 32)
        with pytest.raises(IngestionError, match="magic"):
            read_bag(path)

    def test_truncated_reports_expected_vs_actual(self, tmp_path):
        rng = rng_for(93, "bag")
        path = tmp_path / "t.igtb"
        write_bag(path, rng.uniform(0, 9, size=(4, 2)).astype(np.float32),
                  rng.standard_normal((4, 3)).astype(np.float32), 0)
        blob = path.read_bytes()
        path.write_bytes(blob[:-7])
        with pytest.raises(IngestionError, match=rf"expected {len(blob)} bytes, got {len(blob) - 7}"):
            read_bag(path)


class TestManifests:
    def test_dataset_roundtrip(self, tmp_path):
        ds = gen_spatial_motif(SynthSpec(task="spatial-motif", **SMALL))
        manifest = write_dataset(ds, tmp_path / "d1")
        loaded = read_dataset(manifest)
        assert loaded.classes == ds.classes
        assert loaded.d_in == ds.d_in
        for split in ("train", "val", "test"):
            assert len(loaded.splits[split]) == len(ds.splits[split])
            for a, b in zip(loaded.splits[split], ds.splits[split]):
                assert a.label == b.label
                assert a.coords.tobytes() == b.coords.astype(np.float32).tobytes()
                assert a.features.tobytes() == b.features.astype(np.float32).tobytes()

    def test_missing_bag_file_named(self, tmp_path):
        ds = gen_spatial_motif(SynthSpec(task="spatial-motif", **SMALL))
        manifest = write_dataset(ds, tmp_path / "d2")
        victim = next((tmp_path / "d2" / "bags").iterdir())
        victim.unlink()
        with pytest.raises(IngestionError, match=victim.name):
            read_dataset(manifest)

    def test_manifest_missing_key(self, tmp_path):
        path = tmp_path / "manifest.json"
        path.write_text(json.dumps({"classes": ["a"], "splits": {}}))
        with pytest.raises(IngestionError, match="d_in"):
            read_dataset(path)

    def test_manifest_not_found(self, tmp_path):
        with pytest.raises(IngestionError, match="not found"):
            read_dataset(tmp_path / "nope.json")


class TestSynthSpecValidation:
    def test_bad_task(self):
        with pytest.raises(ConfigurationError):
            SynthSpec(task="blob")

    def test_n_min_floor(self):
        with pytest.raises(ConfigurationError):
            SynthSpec(n_min=8)

    def test_tiny_grid_split_infeasible(self):
        # a 4x4 grid cannot hold two groups separated by the far gap
        with pytest.raises(GenerationError):
            gen_spatial_motif(SynthSpec(task="spatial-motif", n_bags=4, n_min=16,
                                        n_max=16, d_in=8, seed=0))


class TestSpatialMotif:
    def setup_method(self):
        self.spec = SynthSpec(task="spatial-motif", **SMALL)
        self.ds = gen_spatial_motif(self.spec)

    def test_label_balance_within_one(self):
        labels = [r.label for r in self.ds.all_records()]
        assert abs(labels.count(0) - labels.count(1)) <= 1

    def test_every_label_matches_geometric_oracle(self):
        for rec in self.ds.all_records():
            assert oracle_label(rec) == rec.label

    def test_positive_bags_have_adjacent_pair(self):
        for rec in self.ds.all_records():
            if rec.label == 1:
                assert spatial_motif_label(rec.coords, rec.instance_types) == 1

    def test_negative_bags_far_separated(self):
        for rec in self.ds.all_records():
            if rec.label == 0:
                a = rec.coords[rec.instance_types == 1]
                b = rec.coords[rec.instance_types == 2]
                d = np.sqrt(((a[:, None, :] - b[None, :, :]) ** 2).sum(axis=2))
                assert d.min() > FAR_CELL_GAP - 0.5

    def test_both_types_present_in_every_bag(self):
        # matched marginals: negatives also contain both salient types
        for rec in self.ds.all_records():
            assert (rec.instance_types == 1).any()
            assert (rec.instance_types == 2).any()

    def test_adjacent_pair_is_graph_edge(self):
        # with jitter 0.1 every cell-adjacent pair must appear in the 8-NN graph
        for rec in self.ds.all_records()[:10]:
            if rec.label != 1:
                continue
            g = build_graph(Tensor(rec.features.astype(np.float64)), rec.coords,
                            rec.label, GraphConfig(k=8))
            a_idx = np.flatnonzero(rec.instance_types == 1)
            b_idx = np.flatnonzero(rec.instance_types == 2)
            edges = g.adjacency.edge_set()
            found = False
            for i in a_idx:
                for j in b_idx:
                    if np.sqrt(((rec.coords[i] - rec.coords[j]) ** 2).sum()) <= ADJACENT_RADIUS:
                        assert (int(i), int(j)) in edges
                        found = True
            assert found

    def test_no_cross_edges_in_negative_bags(self):
        for rec in self.ds.all_records()[:10]:
            if rec.label != 0:
                continue
            g = build_graph(Tensor(rec.features.astype(np.float64)), rec.coords,
                            rec.label, GraphConfig(k=8))
            edges = g.adjacency.edge_set()
            a_idx = set(np.flatnonzero(rec.instance_types == 1).tolist())
            b_idx = set(np.flatnonzero(rec.instance_types == 2).tolist())
            assert not any((i, j) in edges for i in a_idx for j in b_idx)

    def test_determinism_byte_identical(self, tmp_path):
        d1 = write_dataset(gen_spatial_motif(self.spec), tmp_path / "a").parent
        d2 = write_dataset(gen_spatial_motif(self.spec), tmp_path / "b").parent
        files1 = sorted(p.relative_to(d1) for p in d1.rglob("*") if p.is_file())
        files2 = sorted(p.relative_to(d2) for p in d2.rglob("*") if p.is_file())
        assert files1 == files2
        for rel in files1:
            assert (d1 / rel).read_bytes() == (d2 / rel).read_bytes()

    def test_split_ratios_and_disjointness(self):
        sizes = {s: len(r) for s, r in self.ds.splits.items()}
        n = sum(sizes.values())
        assert n == self.spec.n_bags
        assert sizes["train"] == int(0.65 * n)
        assert sizes["val"] == int(0.15 * n)
        names = [r.name for r in self.ds.all_records()]
        assert len(set(names)) == len(names)


class TestLongRange:
    def setup_method(self):
        self.spec = SynthSpec(task="long-range", **SMALL)
        self.ds = gen_long_range(self.spec)

    def test_presence_scan_oracle_agreement(self):
        for rec in self.ds.all_records():
            assert long_range_label(rec.instance_types) == rec.label

    def test_negatives_have_exactly_one_type(self):
        for rec in self.ds.all_records():
            kinds = {t for t in rec.instance_types if t != 0}
            if rec.label == 0:
                assert len(kinds) == 1
            else:
                assert kinds == {1, 2}

    def test_salient_types_never_graph_adjacent(self):
        for rec in self.ds.all_records()[:10]:
            if rec.label != 1:
                continue
            g = build_graph(Tensor(rec.features.astype(np.float64)), rec.coords,
                            rec.label, GraphConfig(k=8))
            edges = g.adjacency.edge_set()
            c_idx = np.flatnonzero(rec.instance_types == 1)
            d_idx = np.flatnonzero(rec.instance_types == 2)
            assert not any((int(i), int(j)) in edges for i in c_idx for j in d_idx)

    def test_salient_count_distribution_matched(self):
        # total salient instances per bag must not leak the label
        pos = [int((r.instance_types > 0).sum()) for r in self.ds.all_records() if r.label == 1]
        neg = [int((r.instance_types > 0).sum()) for r in self.ds.all_records() if r.label == 0]
        assert min(pos) >= 2 and max(pos) <= 6
        assert min(neg) >= 2 and max(neg) <= 6


class TestHybrid:
    def test_mixture_and_balance(self):
        ds = gen_hybrid(SynthSpec(task="hybrid", **SMALL))
        records = ds.all_records()
        tasks = {r.task for r in records}
        assert tasks == {"spatial-motif", "long-range"}
        labels = [r.label for r in records]
        assert abs(labels.count(0) - labels.count(1)) <= 2
        for rec in records:
            assert oracle_label(rec) == rec.label

    def test_dispatch(self):
        ds = generate_dataset(SynthSpec(task="hybrid", **SMALL))
        assert isinstance(ds, BagDataset)


def test_prototype_features_linearly_separable_at_default_noise():
    # salient instances at norm 3 with sigma=1: projections are well separated
    spec = SynthSpec(task="spatial-motif", n_bags=10, n_min=36, n_max=49, d_in=16, seed=5)
    ds = gen_spatial_motif(spec)
    rec = ds.all_records()[0]
    a_proj = rec.features[rec.instance_types == 1][:, 0]
    bg_proj = rec.features[rec.instance_types == 0][:, 0]
    assert a_proj.mean() > 1.5
    assert abs(bg_proj.mean()) < 1.0
