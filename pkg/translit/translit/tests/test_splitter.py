import json
import os

import numpy as np
import pytest

from ..corpus import ParallelGroup, SentencePair, SynthConfig, generate_synthetic, group_by_source
from ..splitter import *


SMALL = SplitConfig(unique_val=5, unique_test=5, multi_val_groups=4, multi_test_groups=4)


@pytest.fixture(scope="module")
def groups():
    return group_by_source(generate_synthetic(SynthConfig(group_count=100, seed=7)))


def sources(pairs):
    return {p.source for p in pairs}


def with_train(split, extra):
    return CorpusSplit(split.train + extra, split.val_full, split.test_full, split.val_small,
                       split.test_small, split.provenance, split.val_groups, split.test_groups)


class TestSplitConfig:
    def test_small_sizes(self):
        config = SplitConfig()
        assert config.val_small_size == 4500
        assert config.test_small_size == 4500
        config.validate()

    def test_small_eval_size_mismatch(self):
        with pytest.raises(SplitError) as e:
            SplitConfig(small_eval_size=4000).validate()
        assert "small_eval_size 4000 must equal" in e.exconly()
        SplitConfig(small_eval_size=4500).validate()

    def test_invalid_band(self):
        with pytest.raises(SplitError):
            SplitConfig(multi_band=(1, 10)).validate()
        with pytest.raises(SplitError):
            SplitConfig(multi_band=(5, 3)).validate()

    def test_negative_size(self):
        with pytest.raises(SplitError):
            SplitConfig(unique_val=-1).validate()


class TestBuildSplit:
    def test_counts(self, groups):
        split = build_split(groups, SMALL)
        val = group_by_source(split.val_full)
        test = group_by_source(split.test_full)
        assert sum(g.variant_count == 1 for g in val) == 5
        assert sum(g.variant_count > 1 for g in val) == 4
        assert sum(g.variant_count == 1 for g in test) == 5
        assert sum(g.variant_count > 1 for g in test) == 4
        assert len(split.val_small) == 9
        assert len(split.test_small) == 9

    def test_disjoint_and_complete(self, groups):
        split = build_split(groups, SMALL)
        train, val, test = sources(split.train), sources(split.val_full), sources(split.test_full)
        assert not train & val and not train & test and not val & test
        assert train | val | test == {g.source for g in groups}
        by_source = {g.source: set(g.variants) for g in groups}
        for name in ("train", "val_full", "test_full"):
            for group in group_by_source(split.subset(name)):
                assert set(group.variants) == by_source[group.source]
        assert sum(len(split.subset(n)) for n in ("train", "val_full", "test_full")) == \
            sum(g.variant_count for g in groups)

    def test_provenance(self, groups):
        split = build_split(groups, SMALL)
        assert all(split.provenance[p.source] is Subset.TRAIN for p in split.train)
        assert all(split.provenance[p.source] is Subset.VAL for p in split.val_full)
        assert all(split.provenance[p.source] is Subset.TEST for p in split.test_full)

    def test_small_sets(self, groups):
        split = build_split(groups, SMALL)
        for full, small in ((split.val_full, split.val_small), (split.test_full, split.test_small)):
            variants = {g.source: g.variants for g in group_by_source(full)}
            assert [p.source for p in small] == list(variants)
            assert all(p.target in variants[p.source] for p in small)
            assert [p.line_no for p in small] == list(range(1, len(small) + 1))

    def test_deterministic(self, groups):
        assert build_split(groups, SMALL) == build_split(groups, SMALL)
        other = SplitConfig(unique_val=5, unique_test=5, multi_val_groups=4, multi_test_groups=4, seed=1)
        assert sources(build_split(groups, other).val_full) != sources(build_split(groups, SMALL).val_full)

    def test_out_of_band_stays_in_train(self):
        groups = [ParallelGroup("s{}".format(i), ("a",)) for i in range(4)]
        groups += [ParallelGroup("m{}".format(i), ("a", "b")) for i in range(2)]
        groups.append(ParallelGroup("big", tuple("abcdefghijk")))
        config = SplitConfig(unique_val=1, unique_test=1, multi_val_groups=1, multi_test_groups=1)
        split = build_split(groups, config)
        assert split.provenance["big"] is Subset.TRAIN
        assert len([p for p in split.train if p.source == "big"]) == 11

    def test_insufficient_groups(self, groups):
        with pytest.raises(InsufficientGroupsError) as e:
            build_split(groups, SplitConfig(unique_val=40, unique_test=40, multi_val_groups=1,
                                            multi_test_groups=1))
        assert "Need 80 singleton groups for validation and test, found 45." in e.exconly()

    def test_duplicate_keys(self):
        groups = [ParallelGroup("s", ("a",)), ParallelGroup("s", ("b",))]
        with pytest.raises(SplitError) as e:
            build_split(groups, SplitConfig(0, 0, 0, 0))
        assert "Duplicate group key 's'." in e.exconly()


class TestAudit:
    def test_clean_split_passes(self, groups):
        split = build_split(groups, SMALL)
        report = audit(split, SMALL, groups=groups)
        assert report.passed
        assert report.overlap_violations == []
        assert report.variation_inclusion_ok
        assert report.counts_ok
        assert report.small_counts == {"val": 9, "test": 9}

    def test_planted_leaks_are_named(self, groups):
        split = build_split(groups, SMALL)
        eval_pairs = split.val_full + split.test_full
        rng = np.random.default_rng(0)
        for _ in range(100):
            leaked = eval_pairs[int(rng.integers(len(eval_pairs)))]
            report = audit(with_train(split, [SentencePair(leaked.source, leaked.target)]), SMALL)
            assert not report.passed
            assert [v.source for v in report.overlap_violations] == [leaked.source]
            assert "train" in report.overlap_violations[0].subsets

    def test_missing_variant(self, groups):
        split = build_split(groups, SMALL)
        multi = next(g for g in split.val_groups if g.variant_count > 1)
        dropped = [p for p in split.val_full if not (p.source == multi.source and p.target == multi.variants[-1])]
        broken = CorpusSplit(split.train, dropped, split.test_full, split.val_small, split.test_small,
                             split.provenance, split.val_groups, split.test_groups)
        report = audit(broken, SMALL, groups=groups)
        assert not report.passed
        assert not report.variation_inclusion_ok
        assert InclusionFailure(multi.source, "val", "{} of {} variants present".format(
            multi.variant_count - 1, multi.variant_count)) in report.inclusion_failures

    def test_count_mismatch(self, groups):
        split = build_split(groups, SMALL)
        config = SplitConfig(unique_val=6, unique_test=5, multi_val_groups=4, multi_test_groups=4)
        report = audit(split, config)
        assert not report.counts_ok
        assert not report.passed
        assert report.unique_counts["val"] == 5

    def test_strict_partial_repetition(self):
        groups = [ParallelGroup("kya haal hai dost", ("a",)), ParallelGroup("kya haal hai", ("b",)),
                  ParallelGroup("x y", ("c", "d")), ParallelGroup("z", ("e",)), ParallelGroup("w", ("f",)),
                  ParallelGroup("u v", ("g", "h"))]
        config = SplitConfig(unique_val=1, unique_test=1, multi_val_groups=1, multi_test_groups=1)
        split = build_split(groups, config)
        report = audit(split, config)
        assert report.passed
        planted = with_train(split, [SentencePair("{} qqq".format(split.val_small[0].source), "zz")])
        lenient = audit(planted, config)
        assert lenient.passed
        assert RepetitionHit(planted.train[-1].source, split.val_small[0].source, "superstring") in \
            lenient.partial_repetition_hits
        assert not audit(planted, config, strict=True).passed


class TestPartialRepetitions:
    def test_relations(self):
        hits = find_partial_repetitions(["a b", "a b c", "b"], ["a b"])
        assert sorted(hits) == sorted([RepetitionHit("a b", "a b", "duplicate"),
                                       RepetitionHit("a b c", "a b", "superstring"),
                                       RepetitionHit("b", "a b", "substring")])

    def test_word_boundaries(self):
        assert find_partial_repetitions(["ab c"], ["b c"]) == []


class TestManifest:
    def test_round_trip(self, groups, tmp_path):
        split = build_split(groups, SMALL)
        write_split(split, SMALL, str(tmp_path))
        back, config = read_split(str(tmp_path))
        assert config == SMALL
        for name in SUBSETS:
            assert back.subset(name) == split.subset(name)
        assert audit(back, config).passed
        with open(os.path.join(str(tmp_path), MANIFEST_NAME)) as f:
            header = json.load(f)
        assert header["seed"] == 0
        assert header["files"]["val_small"]["count"] == 9

    def test_tampered_file(self, groups, tmp_path):
        write_split(build_split(groups, SMALL), SMALL, str(tmp_path))
        with open(os.path.join(str(tmp_path), "train.jsonl"), "a", encoding="utf-8") as f:
            f.write('{"source": "x", "target": "y"}\n')
        with pytest.raises(SplitManifestError) as e:
            read_split(str(tmp_path))
        assert "does not match its recorded digest" in e.exconly()

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(SplitManifestError):
            read_split(str(tmp_path))


@pytest.mark.slow
class TestFullSizeSplit:
    def test_default_sizes(self):
        groups = group_by_source(generate_synthetic(SynthConfig(group_count=60000, seed=0, for_full_split=True)))
        assert sum(g.variant_count == 1 for g in groups) >= 20000
        config = SplitConfig()
        split = build_split(groups, config)
        assert len(split.val_small) == 4500
        assert len(split.test_small) == 4500
        report = audit(split, config, groups=groups)
        assert report.overlap_violations == []
        assert report.variation_inclusion_ok
        assert report.counts_ok
        assert report.passed
