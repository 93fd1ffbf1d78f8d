"""Synthetic generators and JSON persistence."""

import json

import numpy as np
import pytest

from mct import data, multilevel
from mct.data import DataFormatError, GeneratorConfig
from mct.expfam import FamilySpec
from mct.ot import Mixture


def small_bars(seed=0):
    return data.generate(GeneratorConfig(
        kind=data.BAR_TOPICS, n_groups=8, n_per_group=30, dim=25,
        n_clusters=5, seed=seed,
    ))


def small_continuous(seed=0):
    return data.generate(GeneratorConfig(
        kind=data.CONTINUOUS_GMM, n_groups=6, n_per_group=40, dim=2,
        n_clusters=4, seed=seed,
    ))


class TestGeneratorConfig:
    def test_rejects_unknown_kind(self):
        with pytest.raises(ValueError):
            GeneratorConfig(kind="blobs", n_groups=1, n_per_group=1, dim=2, n_clusters=1)

    def test_rejects_zero_groups(self):
        with pytest.raises(ValueError):
            GeneratorConfig(kind=data.CONTINUOUS_GMM, n_groups=0, n_per_group=1,
                            dim=2, n_clusters=1)

    def test_paper_scale_defaults(self):
        cont = data.continuous_defaults()
        assert (cont.n_groups, cont.n_per_group, cont.dim, cont.n_clusters) == (100, 500, 2, 6)
        bars = data.bars_defaults()
        assert (bars.n_groups, bars.n_per_group, bars.dim, bars.n_clusters) == (500, 100, 25, 5)


class TestContinuousGenerator:
    def test_shapes_and_labels(self):
        ds = small_continuous()
        assert ds.n_groups == 6
        assert all(g.shape == (40, 2) for g in ds.groups)
        assert len(ds.labels) == 6
        assert ds.spec == FamilySpec("gaussian", 2, sigma2=0.5)

    def test_deterministic(self):
        a, b = small_continuous(seed=3), small_continuous(seed=3)
        for ga, gb in zip(a.groups, b.groups):
            np.testing.assert_array_equal(ga, gb)
        np.testing.assert_array_equal(a.labels, b.labels)

    def test_all_clusters_represented_at_default_size(self):
        ds = data.generate(data.continuous_defaults(seed=0))
        assert set(ds.labels) == set(range(6))

    def test_template_geometry(self):
        templates = data.continuous_templates(6)
        for means in templates:
            radii = np.linalg.norm(means, axis=1)
            assert np.sum(np.isclose(radii, 4.0)) == 1
            assert np.sum(np.isclose(radii, 8.0)) == 2


class TestBarsGenerator:
    def test_shapes_and_labels(self):
        ds = small_bars()
        assert ds.spec == FamilySpec("categorical", 25)
        assert all(g.shape == (30,) for g in ds.groups)
        assert all(0 <= x < 25 for g in ds.groups for x in g)

    def test_topics_are_uniform_bars(self):
        topics = data.bar_topics(25)
        assert topics.shape == (10, 25)
        for t in topics:
            support = np.nonzero(t)[0]
            assert support.size == 5
            np.testing.assert_allclose(t[support], 0.2)
        # first five horizontal (contiguous rows), last five vertical
        for i in range(5):
            np.testing.assert_array_equal(np.nonzero(topics[i])[0], np.arange(5) + 5 * i)
            np.testing.assert_array_equal(np.nonzero(topics[5 + i])[0], np.arange(5) * 5 + i)

    def test_cluster_topic_overlap_structure(self):
        sets = [set(s) for s in data.bar_cluster_topic_sets()]
        assert all(len(s) == 4 for s in sets)
        for i in range(5):
            for j in range(i + 1, 5):
                shared = len(sets[i] & sets[j])
                adjacent = (j - i) % 5 in (1, 4)
                assert shared == (2 if adjacent else 0)

    def test_deterministic(self):
        a, b = small_bars(seed=1), small_bars(seed=1)
        for ga, gb in zip(a.groups, b.groups):
            np.testing.assert_array_equal(ga, gb)

    def test_empirical_frequencies_match_cluster_mixture(self):
        ds = data.generate(GeneratorConfig(
            kind=data.BAR_TOPICS, n_groups=2, n_per_group=50_000, dim=25,
            n_clusters=5, seed=0,
        ))
        topics = data.bar_topics(25)
        sets = data.bar_cluster_topic_sets()
        for g, label in zip(ds.groups, ds.labels):
            expected = topics[list(sets[label])].mean(axis=0)
            freq = np.bincount(g, minlength=25) / g.size
            np.testing.assert_allclose(freq, expected, atol=0.01)


class TestDatasetPersistence:
    @pytest.mark.parametrize("make", [small_bars, small_continuous])
    def test_round_trip_identity(self, make, tmp_path):
        ds = make()
        path = tmp_path / "ds.json"
        data.save_dataset(ds, path)
        loaded = data.load_dataset(path)
        assert loaded.spec == ds.spec
        assert loaded.group_ids == ds.group_ids
        for ga, gb in zip(ds.groups, loaded.groups):
            np.testing.assert_array_equal(ga, gb)  # bit-exact floats
        np.testing.assert_array_equal(ds.labels, loaded.labels)

    def test_missing_spec_field(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text(json.dumps({"schema_version": 1, "groups": []}))
        with pytest.raises(DataFormatError):
            data.load_dataset(path)

    def test_schema_version_mismatch(self, tmp_path):
        ds = small_bars()
        doc = data.dataset_to_dict(ds)
        doc["schema_version"] = 99
        path = tmp_path / "v99.json"
        path.write_text(json.dumps(doc))
        with pytest.raises(DataFormatError):
            data.load_dataset(path)

    def test_truncated_file(self, tmp_path):
        path = tmp_path / "trunc.json"
        path.write_text('{"schema_version": 1, "spec"')
        with pytest.raises(DataFormatError):
            data.load_dataset(path)


class TestMixturePersistence:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(0)
        spec = FamilySpec("gaussian", 2, sigma2=0.5)
        mix = Mixture(spec, rng.dirichlet(np.ones(3)), rng.normal(size=(3, 2)))
        path = tmp_path / "mix.json"
        data.save_mixture(mix, path, trace=[-1.0, -2.0])
        loaded = data.load_mixture(path)
        assert loaded.spec == spec
        np.testing.assert_array_equal(loaded.weights, mix.weights)
        np.testing.assert_array_equal(loaded.atoms, mix.atoms)


class TestModelPersistence:
    def fit_small(self):
        ds = small_continuous(seed=4)
        cfg = multilevel.MctConfig(n_local=2, n_clusters=2, n_components=2,
                                   lambda_l=1.3, lambda_g=10.0, lambda_a=1.0,
                                   max_iter=4, tol=0.0, seed=4)
        return ds, multilevel.fit_mct(ds, cfg)

    def test_round_trip_assignments_and_objective(self, tmp_path):
        ds, model = self.fit_small()
        path = tmp_path / "model.json"
        data.save_model(model, path)
        loaded = data.load_model(path)
        np.testing.assert_array_equal(
            multilevel.assign_groups(loaded), multilevel.assign_groups(model)
        )
        np.testing.assert_array_equal(loaded.plan, model.plan)
        np.testing.assert_array_equal(loaded.trace, model.trace)
        # re-evaluation matches the stored trace tail
        val = multilevel.mct_objective(ds, loaded)
        assert abs(val - model.trace[-1]) < 1e-9

    def test_truncated_model_file(self, tmp_path):
        path = tmp_path / "trunc.json"
        path.write_text('{"schema_version": 1')
        with pytest.raises(DataFormatError):
            data.load_model(path)
