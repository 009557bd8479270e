import json

import pytest
from hypothesis import given, strategies as st

from horouf.corpus import (
    N_CLASSES,
    Consonant,
    Diacritic,
    LetterLabel,
    Manifest,
    ManifestEntry,
    Provenance,
    SpeakerMeta,
    Split,
    decode_label,
    encode_label,
    entry_from_dict,
    entry_to_dict,
    load_manifest,
    rebase_paths,
    save_manifest,
    split_manifest,
)
from horouf.errors import EmptyClass, ManifestError, OutOfRange, UsageError


def entry(i, class_id=0, split=Split.TRAIN, source=None):
    prov = Provenance() if source is None else Provenance(
        origin="augmented", kind="gaussian-noise", value=0.01, seed=1, source_id=source
    )
    return ManifestEntry(
        id=f"e{i}", label=decode_label(class_id), audio_path=f"e{i}.wav",
        split=split, provenance=prov,
    )


class TestLabelCodec:
    def test_base_case(self):
        assert encode_label(LetterLabel(Consonant.ALIF, Diacritic.FATHA)) == 0

    def test_last_class(self):
        assert encode_label(LetterLabel(Consonant.YA, Diacritic.SUKOON)) == 111

    def test_decode_examples(self):
        assert decode_label(0) == LetterLabel(Consonant.ALIF, Diacritic.FATHA)
        assert decode_label(5) == LetterLabel(Consonant.BA, Diacritic.KASRA)

    def test_round_trip_exhaustive(self):
        seen = set()
        for cid in range(N_CLASSES):
            label = decode_label(cid)
            assert encode_label(label) == cid
            seen.add((label.consonant, label.diacritic))
        assert len(seen) == N_CLASSES

    @pytest.mark.parametrize("bad", [-1, 112, 500])
    def test_out_of_range(self, bad):
        with pytest.raises(OutOfRange):
            decode_label(bad)

    def test_alphabet_is_complete(self):
        assert len(Consonant) == 28
        assert len({c.char for c in Consonant}) == 28
        assert [int(d) for d in Diacritic] == [0, 1, 2, 3]

    @given(st.sampled_from(list(Consonant)), st.sampled_from(list(Diacritic)))
    def test_encode_decode_identity(self, consonant, diacritic):
        label = LetterLabel(consonant, diacritic)
        assert decode_label(encode_label(label)) == label


class TestManifestIO:
    def test_round_trip(self, tmp_path):
        m = Manifest((entry(0, 3), entry(1, 7, Split.TEST), entry(2, 3, source="e0")))
        path = tmp_path / "m.jsonl"
        save_manifest(m, path)
        loaded = load_manifest(path, strict=True)
        assert loaded == m

    def test_unknown_field_strict(self, tmp_path):
        d = entry_to_dict(entry(0))
        d["surprise"] = 1
        path = tmp_path / "m.jsonl"
        path.write_text(json.dumps(d) + "\n")
        with pytest.raises(ManifestError):
            load_manifest(path, strict=True)

    def test_unknown_field_warns(self, tmp_path):
        d = entry_to_dict(entry(0))
        d["surprise"] = 1
        path = tmp_path / "m.jsonl"
        path.write_text(json.dumps(d) + "\n")
        with pytest.warns(UserWarning):
            loaded = load_manifest(path, strict=False)
        assert loaded.entries[0].id == "e0"

    def test_duplicate_ids_rejected(self):
        with pytest.raises(ManifestError):
            Manifest((entry(0), entry(0)))

    def test_pathless_entry_rejected(self):
        with pytest.raises(ManifestError):
            ManifestEntry(id="x", label=decode_label(0))

    def test_empty_path_rejected(self):
        with pytest.raises(ManifestError):
            ManifestEntry(id="x", label=decode_label(0), audio_path="")

    def test_bad_json_line(self, tmp_path):
        path = tmp_path / "m.jsonl"
        path.write_text("{not json\n")
        with pytest.raises(ManifestError):
            load_manifest(path)

    def test_speaker_round_trip(self):
        from horouf.corpus import AgeBand, Continent, Gender

        e = ManifestEntry(
            id="s", label=decode_label(9), audio_path="s.wav",
            speaker=SpeakerMeta(Gender.FEMALE, AgeBand.TWENTIES, True, Continent.ASIA),
        )
        assert entry_from_dict(entry_to_dict(e), strict=True) == e

    def test_rebase_paths(self, tmp_path):
        m = Manifest((entry(0),))
        rebased = rebase_paths(m, tmp_path / "a", tmp_path / "b")
        assert rebased.entries[0].audio_path == "../a/e0.wav"
        absolute = ManifestEntry(id="x", label=decode_label(0), audio_path="/abs/x.wav")
        rebased = rebase_paths(Manifest((absolute,)), tmp_path / "a", tmp_path / "b")
        assert rebased.entries[0].audio_path == "/abs/x.wav"


class TestSplit:
    def test_eighty_twenty(self):
        m = Manifest(tuple(entry(i, class_id=0) for i in range(100)))
        result = split_manifest(m, 0.8, 0.0, seed=3)
        counts = {s: sum(1 for e in result if e.split == s) for s in Split}
        assert counts[Split.TRAIN] == 80
        assert counts[Split.VAL] == 0
        assert counts[Split.TEST] == 20

    def test_single_entry_goes_to_train(self):
        m = Manifest((entry(0),))
        result = split_manifest(m, 1.0 - 1e-9, 0.0, seed=0)
        assert result.entries[0].split == Split.TRAIN

    def test_augmented_inherits_source_split(self):
        originals = [entry(i, class_id=0) for i in range(10)]
        children = [entry(100 + i, class_id=0, source=f"e{i}") for i in range(10)]
        result = split_manifest(Manifest(tuple(originals + children)), 0.5, 0.2, seed=1)
        by_id = {e.id: e for e in result}
        for i in range(10):
            assert by_id[f"e{100 + i}"].split == by_id[f"e{i}"].split

    def test_deterministic_and_order_invariant(self):
        entries = tuple(entry(i, class_id=i % 4) for i in range(40))
        a = split_manifest(Manifest(entries), 0.6, 0.2, seed=9)
        b = split_manifest(Manifest(entries[::-1]), 0.6, 0.2, seed=9)
        assignment_a = {e.id: e.split for e in a}
        assignment_b = {e.id: e.split for e in b}
        assert assignment_a == assignment_b
        c = split_manifest(Manifest(entries), 0.6, 0.2, seed=10)
        assert {e.id: e.split for e in c} != assignment_a

    def test_fractions_within_one_per_class(self):
        for n in (3, 7, 11, 25, 101):
            m = Manifest(tuple(entry(i, class_id=0) for i in range(n)))
            result = split_manifest(m, 0.68, 0.12, seed=n)
            n_train = sum(1 for e in result if e.split == Split.TRAIN)
            n_val = sum(1 for e in result if e.split == Split.VAL)
            assert abs(n_train - 0.68 * n) <= 1
            assert abs(n_val - 0.12 * n) <= 1

    def test_empty_class_raises(self):
        only_child = entry(1, class_id=2, source="e0")
        base = entry(0, class_id=0)
        with pytest.raises(ManifestError):
            # child's source exists but carries a different class: still augmented-only class
            split_manifest(Manifest((only_child,)), 0.8, 0.0, seed=0)
        m = Manifest((base, entry(5, class_id=2, source="e0")))
        with pytest.raises(EmptyClass):
            split_manifest(m, 0.8, 0.0, seed=0)

    def test_bad_fractions(self):
        m = Manifest((entry(0),))
        with pytest.raises(UsageError):
            split_manifest(m, 0.9, 0.2, seed=0)
        with pytest.raises(UsageError):
            split_manifest(m, -0.1, 0.0, seed=0)
