import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from diqa import dataset, kspace, pgm
from diqa.dataset import CorpusConfig, Manifest, ManifestRecord, SplitConfig


def make_manifest(n, volumes=None):
    return Manifest([
        ManifestRecord(f"r{i}", f"r{i}.pgm", i % 3, i % 3, None, volume=(volumes[i] if volumes else ""))
        for i in range(n)
    ])


class TestSplit:
    @pytest.mark.parametrize("n, sizes", [(2110, (1477, 211, 422)), (10, (7, 1, 2)), (1000, (700, 100, 200)), (7, (6, 0, 1))])
    def test_sizes(self, n, sizes):
        m = dataset.split_dataset(make_manifest(n))
        assert tuple(len(m.split(s)) for s in ("train", "eval", "test")) == sizes

    @settings(max_examples=40, deadline=None)
    @given(st.integers(1, 400), st.integers(0, 1000))
    def test_partition_follows_floor_rule(self, n, seed):
        m = dataset.split_dataset(make_manifest(n), SplitConfig(seed=seed))
        ids = [set(r.id for r in m.split(s)) for s in ("train", "eval", "test")]
        assert sum(map(len, ids)) == n and set().union(*ids) == {f"r{i}" for i in range(n)}
        assert len(ids[1]) == int(n * 0.1 + 1e-9) and len(ids[2]) == int(n * 0.2 + 1e-9)
        assert not m.split("unassigned")

    def test_deterministic_and_seed_dependent(self):
        a = dataset.split_dataset(make_manifest(50), SplitConfig(seed=3))
        b = dataset.split_dataset(make_manifest(50), SplitConfig(seed=3))
        c = dataset.split_dataset(make_manifest(50), SplitConfig(seed=4))
        assert [r.split for r in a] == [r.split for r in b]
        assert [r.split for r in a] != [r.split for r in c]

    def test_per_volume_never_straddles(self):
        vols = [f"v{i // 7}" for i in range(140)]
        m = dataset.split_dataset(make_manifest(140, vols), SplitConfig(seed=1, grouping="per-volume"))
        where = {}
        for r in m:
            where.setdefault(r.volume, set()).add(r.split)
        assert all(len(s) == 1 for s in where.values())
        assert {r.split for r in m} == {"train", "eval", "test"}

    @pytest.mark.parametrize("ratios", [(0.7, 0.2, 0.2), (0.5, 0.5, 0.1), (1.2, -0.1, -0.1)])
    def test_bad_ratios(self, ratios):
        with pytest.raises(ValueError):
            SplitConfig(ratios)

    def test_empty_manifest(self):
        with pytest.raises(ValueError):
            dataset.split_dataset(Manifest([]))


class TestLabels:
    def test_binarize(self):
        assert dataset.binarize_labels([0, 1, 2, 2, 0]) == [0, 1, 1, 1, 0]
        assert dataset.binarize_labels([0, 0, 0]) == [0, 0, 0]

    @settings(max_examples=50)
    @given(st.lists(st.integers(0, 2), max_size=50))
    def test_binarize_counts(self, labels):
        out = dataset.binarize_labels(labels)
        assert len(out) == len(labels) and set(out) <= {0, 1}
        assert out.count(1) == labels.count(1) + labels.count(2)

    def test_binarize_error_names_id(self):
        with pytest.raises(ValueError, match="img_7"):
            dataset.binarize_labels([0, 3], ids=["img_1", "img_7"])

    def test_normalize(self):
        out = dataset.normalize_image(np.array([255, 0, 128], dtype=np.uint8))
        assert out[0] == 1.0 and out[1] == 0.0 and out[2] == pytest.approx(128 / 255)

    @pytest.mark.parametrize("a, b, want", [(2, 2, 2), (0, 1, 1), (1, 2, 2), (0, 2, 1), (0, 0, 0)])
    def test_mean_round(self, a, b, want):
        assert dataset.aggregate_raters([a], [b], "mean-round") == [want]

    def test_single_rater_policies(self):
        assert dataset.aggregate_raters([0, 1], [2, 2], "rater_a") == [0, 1]
        assert dataset.aggregate_raters([0, 1], [2, 2], "rater_b") == [2, 2]

    def test_aggregate_errors(self):
        with pytest.raises(ValueError):
            dataset.aggregate_raters([0, 1], [1])
        with pytest.raises(ValueError):
            dataset.aggregate_raters([0], [1], "median")

    def test_class_distribution(self):
        recs = [ManifestRecord(f"i{i}", "x", c, c) for i, c in enumerate([0] * 518 + [1] * 1220 + [2] * 372)]
        assert dataset.class_distribution(recs, "three") == [518, 1220, 372]
        assert dataset.class_distribution(recs, "binary") == [518, 1592]
        assert dataset.class_distribution([], "three") == [0, 0, 0]
        assert dataset.binary_counts((518, 1220, 372)) == (518, 1592)


class TestRecords:
    def test_invalid_label(self):
        with pytest.raises(ValueError):
            ManifestRecord("a", "a.pgm", 3, 0)

    def test_duplicate_ids(self):
        with pytest.raises(ValueError, match="dup"):
            Manifest([ManifestRecord("dup", "a", 0, 0), ManifestRecord("dup", "b", 1, 1)])

    def test_csv_round_trip(self, tmp_path):
        m = Manifest([ManifestRecord("a", "img/a.pgm", 0, 1, 4.25, "train", "v1"),
                      ManifestRecord("b", "img/b.pgm", 2, 2, None, "test", "")])
        path = dataset.write_manifest(m, tmp_path / "m.csv")
        text = path.read_bytes()
        assert text.startswith(b"id,path,rater_a,rater_b,severity,split,volume\n") and b"\r" not in text
        assert b"b,img/b.pgm,2,2,,test,\n" in text
        back = dataset.read_manifest(path)
        assert back.records == m.records and back.root == tmp_path

    def test_bad_header(self, tmp_path):
        (tmp_path / "m.csv").write_text("id,path\n")
        with pytest.raises(ValueError, match="header"):
            dataset.read_manifest(tmp_path / "m.csv")


class TestApportionment:
    def test_reference_proportions_over_1000(self):
        assert dataset.largest_remainder(1000, (518, 1220, 372)) == [246, 578, 176]

    @settings(max_examples=100)
    @given(st.integers(0, 5000), st.lists(st.integers(0, 100), min_size=1, max_size=5).filter(lambda w: sum(w) > 0))
    def test_sums_and_stays_within_one_of_quota(self, n, w):
        counts = dataset.largest_remainder(n, w)
        assert sum(counts) == n
        quotas = [n * x / sum(w) for x in w]
        assert all(abs(c - q) < 1 for c, q in zip(counts, quotas))


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    out = tmp_path_factory.mktemp("corpus")
    return dataset.synthesize_corpus(out, CorpusConfig(n=120, seed=5, size=32)), out


class TestCorpus:
    def test_counts_follow_proportions(self, corpus):
        m, _ = corpus
        assert dataset.class_distribution(m) == dataset.largest_remainder(120, dataset.REFERENCE_PROPORTIONS)

    def test_rater_a_is_severity_class(self, corpus):
        m, _ = corpus
        for r in m:
            assert kspace.severity_to_class(r.severity) == r.rater_a

    def test_rater_b_only_moves_near_thresholds(self, corpus):
        m, _ = corpus
        moved = [r for r in m if r.rater_b != r.rater_a]
        assert moved
        for r in moved:
            assert abs(r.rater_a - r.rater_b) == 1
            t = 1.0 if {r.rater_a, r.rater_b} == {1, 2} else 4.0
            assert abs(r.severity - t) <= 0.25 * t

    def test_images_on_disk(self, corpus):
        m, out = corpus
        assert (out / "manifest.csv").exists()
        img = pgm.read_pgm(m.image_path(m.records[0]))
        assert img.shape == (32, 32) and img.dtype == np.uint8
        batch = dataset.load_images(m, m.records[:3])
        assert batch.shape == (3, 1, 32, 32) and batch.dtype == np.float32

    def test_byte_identical_rerun(self, corpus, tmp_path):
        m, out = corpus
        m2 = dataset.synthesize_corpus(tmp_path, CorpusConfig(n=120, seed=5, size=32))
        assert (tmp_path / "manifest.csv").read_bytes() == (out / "manifest.csv").read_bytes()
        for r in m2.records[:20]:
            assert (tmp_path / r.path).read_bytes() == (out / r.path).read_bytes()

    def test_zero_noise_means_identical_raters(self, tmp_path):
        m = dataset.synthesize_corpus(tmp_path, CorpusConfig(n=40, seed=1, size=32, rater_noise=0.0))
        assert all(r.rater_a == r.rater_b for r in m)

    def test_errors(self, tmp_path):
        with pytest.raises(ValueError):
            dataset.synthesize_corpus(tmp_path, CorpusConfig(n=5))
        blocker = tmp_path / "file"
        blocker.write_text("x")
        with pytest.raises(OSError):
            dataset.synthesize_corpus(blocker / "sub", CorpusConfig(n=10, size=32))

    def test_missing_image_named(self, corpus, tmp_path):
        m, _ = corpus
        broken = Manifest(m.records[:2], tmp_path)
        with pytest.raises(OSError, match=m.records[0].id):
            dataset.load_images(broken, broken.records)
