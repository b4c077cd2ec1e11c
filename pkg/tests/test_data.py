import numpy as np
import pytest

from contrareg.data import (
    FAMILIES,
    LabeledSample,
    ManifestError,
    SyntheticSpec,
    clean_label,
    generate_corpus,
    load_manifest,
    split_by_family,
    split_map,
    write_corpus,
)
from contrareg.metrics import spearman


def small_spec(**kw):
    base = dict(n_families=5, samples_per_family=40, frames=8, input_dim=6,
                seed=5, n_references=10)
    base.update(kw)
    return SyntheticSpec(**base)


class TestSyntheticSpec:
    def test_rejects_unknown_holdout(self):
        with pytest.raises(ValueError, match="holdout"):
            small_spec(holdout_families=("reverb",))

    def test_rejects_full_holdout(self):
        with pytest.raises(ValueError, match="holdout"):
            small_spec(n_families=2, holdout_families=("noise", "dropout"))

    def test_rejects_too_many_families(self):
        with pytest.raises(ValueError):
            small_spec(n_families=9)


class TestGenerateCorpus:
    def test_deterministic_given_seed(self):
        a = generate_corpus(small_spec())
        b = generate_corpus(small_spec())
        assert len(a) == len(b)
        for sa, sb in zip(a, b):
            assert sa.id == sb.id and sa.mos == sb.mos and sa.split == sb.split
            assert np.array_equal(sa.features, sb.features)

    def test_zero_severity_labels_near_ceiling(self):
        for family in FAMILIES:
            assert clean_label(family, 0.0) == pytest.approx(5.0)
            assert clean_label(family, 1.0) == pytest.approx(1.0)

    def test_noiseless_labels_strictly_decrease_in_severity(self):
        s = np.linspace(0, 1, 200)
        for family in FAMILIES:
            y = np.array([clean_label(family, v) for v in s])
            assert np.all(np.diff(y) < 0)
            assert spearman(s, y) == pytest.approx(-1.0)

    def test_severity_anticorrelates_with_labels_per_family(self):
        corpus = [s for s in generate_corpus(small_spec(samples_per_family=150))
                  if s.split != "ref"]
        for family in FAMILIES:
            fam = [s for s in corpus if s.degradation == family]
            sev = [s.severity for s in fam]
            mos = [s.mos for s in fam]
            assert spearman(sev, mos) <= -0.95

    def test_reference_samples_are_clean(self):
        refs = [s for s in generate_corpus(small_spec()) if s.split == "ref"]
        assert len(refs) == 10
        assert all(s.degradation == "clean" and s.severity == 0.0 for s in refs)

    def test_row_counts(self):
        spec = small_spec()
        corpus = generate_corpus(spec)
        labeled = [s for s in corpus if s.split != "ref"]
        assert len(labeled) == spec.n_families * spec.samples_per_family
        assert all(s.features.shape == (spec.frames, spec.input_dim) for s in corpus)
        assert all(1.0 <= s.mos <= 5.0 for s in corpus)


class TestSplitByFamily:
    def _samples(self, n=200, families=("a", "b", "c")):
        rng = np.random.default_rng(0)
        return [
            LabeledSample(id=f"{fam}-{i}", features=rng.standard_normal((2, 2)),
                          mos=3.0, degradation=fam)
            for fam in families for i in range(n)
        ]

    def test_holdout_family_goes_entirely_to_test(self):
        samples = self._samples()
        out = split_by_family(samples, holdout=("c",))
        assert all(s.degradation != "c" for s in out["train"] + out["val"])
        assert all(s.split == "test" for s in samples if s.degradation == "c")

    def test_rejects_holdout_of_everything(self):
        with pytest.raises(ValueError, match="holdout"):
            split_by_family(self._samples(), holdout=("a", "b", "c"))

    def test_stable_under_input_reordering(self):
        samples = self._samples()
        split_by_family(samples, holdout=("c",))
        before = {s.id: s.split for s in samples}
        reordered = list(reversed(self._samples()))
        split_by_family(reordered, holdout=("c",))
        after = {s.id: s.split for s in reordered}
        assert before == after

    def test_80_20_proportion_on_10k_ids(self):
        samples = self._samples(n=5000, families=("a", "b"))
        out = split_by_family(samples, holdout=(), val_fraction=0.2)
        frac_val = len(out["val"]) / 10000
        assert abs(frac_val - 0.2) < 0.02
        assert not out["test"]


class TestManifestIO:
    def test_round_trip_identity(self, tmp_path):
        corpus = generate_corpus(small_spec(samples_per_family=5, n_references=2))
        manifest = write_corpus(corpus, tmp_path)
        loaded = load_manifest(manifest)
        assert len(loaded) == len(corpus)
        for a, b in zip(corpus, loaded):
            assert a.id == b.id and a.split == b.split and a.degradation == b.degradation
            assert a.mos == b.mos and a.severity == b.severity
            assert np.array_equal(a.features, b.features)

    def test_write_is_byte_deterministic(self, tmp_path):
        corpus = generate_corpus(small_spec(samples_per_family=3, n_references=1))
        m1 = write_corpus(corpus, tmp_path / "a")
        m2 = write_corpus(corpus, tmp_path / "b")
        assert m1.read_bytes() == m2.read_bytes()
        for s in corpus:
            f1 = (tmp_path / "a" / "features" / f"{s.id}.csv").read_bytes()
            f2 = (tmp_path / "b" / "features" / f"{s.id}.csv").read_bytes()
            assert f1 == f2

    def test_empty_data_section(self, tmp_path):
        p = tmp_path / "m.csv"
        p.write_text("id,split,degradation,mos,features_path\n")
        assert load_manifest(p) == []

    def test_out_of_range_mos_rejected_with_line_number(self, tmp_path):
        corpus = generate_corpus(small_spec(samples_per_family=2, n_references=1))
        manifest = write_corpus(corpus, tmp_path)
        lines = manifest.read_text().splitlines()
        parts = lines[1].split(",")
        parts[3] = "6.2"
        lines[1] = ",".join(parts)
        manifest.write_text("\n".join(lines) + "\n")
        with pytest.raises(ManifestError) as exc:
            load_manifest(manifest)
        assert any("line 2" in e and "6.2" in e for e in exc.value.errors)

    def test_malformed_float_rejected(self, tmp_path):
        p = tmp_path / "m.csv"
        p.write_text("id,split,degradation,mos,features_path\nx,train,noise,abc,f.csv\n")
        with pytest.raises(ManifestError) as exc:
            load_manifest(p)
        assert any("malformed mos" in e for e in exc.value.errors)

    def test_unknown_split_and_missing_features_itemized(self, tmp_path):
        p = tmp_path / "m.csv"
        p.write_text(
            "id,split,degradation,mos,features_path\n"
            "a,blah,noise,3.0,f1.csv\n"
            "b,train,noise,3.0,missing.csv\n"
        )
        with pytest.raises(ManifestError) as exc:
            load_manifest(p)
        assert len(exc.value.errors) == 2
        assert "line 2" in exc.value.errors[0]
        assert "line 3" in exc.value.errors[1]

    def test_missing_file(self, tmp_path):
        with pytest.raises(ManifestError, match="does not exist"):
            load_manifest(tmp_path / "nope.csv")

    def test_wrong_header_rejected(self, tmp_path):
        p = tmp_path / "m.csv"
        p.write_text("id,degradation,mos\n")
        with pytest.raises(ManifestError, match="header"):
            load_manifest(p)


class TestSplitMap:
    def test_groups_by_split(self, small_corpus):
        total = sum(len(v) for v in small_corpus.values())
        assert total == 5 * 60 + 20
        assert len(small_corpus["ref"]) == 20
        assert all(s.split == "train" for s in small_corpus["train"])
