"""Label space, speaker metadata, dataset manifest, and deterministic splitting.

The label codec pairs 28 consonants with 4 vowel marks, giving 112 classes:
``class_id = consonant_index * 4 + diacritic_index``. Both orders are frozen
conventions of this toolkit (consonants in standard alphabetical order,
diacritics fatha, kasra, damma, sukoon) and are part of the manifest format.
"""

from __future__ import annotations

import enum
import json
import os
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path

from .errors import EmptyClass, ManifestError, OutOfRange, UsageError
from .util import stable_rng

N_CONSONANTS = 28
N_DIACRITICS = 4
N_CLASSES = N_CONSONANTS * N_DIACRITICS


class Consonant(enum.IntEnum):
    """The 28 consonants in standard alphabetical order (alif .. ya)."""

    ALIF = 0
    BA = 1
    TA = 2
    THA = 3
    JIM = 4
    HHA = 5
    KHA = 6
    DAL = 7
    DHAL = 8
    RA = 9
    ZAY = 10
    SIN = 11
    SHIN = 12
    SAD = 13
    DAD = 14
    TTA = 15
    ZHA = 16
    AYN = 17
    GHAYN = 18
    FA = 19
    QAF = 20
    KAF = 21
    LAM = 22
    MIM = 23
    NUN = 24
    HA = 25
    WAW = 26
    YA = 27

    @property
    def char(self) -> str:
        return _CONSONANT_CHARS[self]


_CONSONANT_CHARS = {
    Consonant.ALIF: "ا",
    Consonant.BA: "ب",
    Consonant.TA: "ت",
    Consonant.THA: "ث",
    Consonant.JIM: "ج",
    Consonant.HHA: "ح",
    Consonant.KHA: "خ",
    Consonant.DAL: "د",
    Consonant.DHAL: "ذ",
    Consonant.RA: "ر",
    Consonant.ZAY: "ز",
    Consonant.SIN: "س",
    Consonant.SHIN: "ش",
    Consonant.SAD: "ص",
    Consonant.DAD: "ض",
    Consonant.TTA: "ط",
    Consonant.ZHA: "ظ",
    Consonant.AYN: "ع",
    Consonant.GHAYN: "غ",
    Consonant.FA: "ف",
    Consonant.QAF: "ق",
    Consonant.KAF: "ك",
    Consonant.LAM: "ل",
    Consonant.MIM: "م",
    Consonant.NUN: "ن",
    Consonant.HA: "ه",
    Consonant.WAW: "و",
    Consonant.YA: "ي",
}


class Diacritic(enum.IntEnum):
    FATHA = 0
    KASRA = 1
    DAMMA = 2
    SUKOON = 3

    @property
    def char(self) -> str:
        return _DIACRITIC_CHARS[self]


_DIACRITIC_CHARS = {
    Diacritic.FATHA: "َ",
    Diacritic.KASRA: "ِ",
    Diacritic.DAMMA: "ُ",
    Diacritic.SUKOON: "ْ",
}


@dataclass(frozen=True)
class LetterLabel:
    consonant: Consonant
    diacritic: Diacritic

    @property
    def class_id(self) -> int:
        return encode_label(self)

    def display(self) -> str:
        return self.consonant.char + self.diacritic.char


def encode_label(label: LetterLabel) -> int:
    return int(label.consonant) * N_DIACRITICS + int(label.diacritic)


def decode_label(class_id: int) -> LetterLabel:
    cid = int(class_id)
    if cid != class_id or not 0 <= cid < N_CLASSES:
        raise OutOfRange(f"class id {class_id!r} outside [0, {N_CLASSES})")
    return LetterLabel(Consonant(cid // N_DIACRITICS), Diacritic(cid % N_DIACRITICS))


class Gender(str, enum.Enum):
    MALE = "male"
    FEMALE = "female"
    UNSPECIFIED = "unspecified"


class AgeBand(str, enum.Enum):
    UNDER_10 = "0-9"
    TEENS = "10-19"
    TWENTIES = "20-29"
    THIRTIES = "30-39"
    FORTIES = "40-49"
    FIFTIES = "50-59"
    SIXTIES = "60-69"
    SEVENTIES = "70-79"
    EIGHTY_PLUS = "80+"
    UNSPECIFIED = "unspecified"


class Continent(str, enum.Enum):
    AFRICA = "africa"
    ASIA = "asia"
    EUROPE = "europe"
    NORTH_AMERICA = "north-america"
    SOUTH_AMERICA = "south-america"
    OCEANIA = "oceania"
    UNSPECIFIED = "unspecified"


@dataclass(frozen=True)
class SpeakerMeta:
    """Optional speaker metadata; every field accepts an unspecified value."""

    gender: Gender = Gender.UNSPECIFIED
    age_band: AgeBand = AgeBand.UNSPECIFIED
    native: bool | None = None
    continent: Continent = Continent.UNSPECIFIED


class Split(str, enum.Enum):
    TRAIN = "train"
    VAL = "val"
    TEST = "test"


@dataclass(frozen=True)
class Provenance:
    """Where an entry came from: recorded original or augmented child."""

    origin: str = "original"
    kind: str | None = None
    value: float | None = None
    seed: int | None = None
    source_id: str | None = None

    def is_augmented(self) -> bool:
        return self.origin == "augmented"


ORIGINAL = Provenance()


@dataclass(frozen=True)
class ManifestEntry:
    id: str
    label: LetterLabel
    audio_path: str | None = None
    embedding_path: str | None = None
    speaker: SpeakerMeta = field(default_factory=SpeakerMeta)
    split: Split = Split.TRAIN
    provenance: Provenance = ORIGINAL

    def __post_init__(self):
        if not self.id:
            raise ManifestError("entry id must be non-empty")
        if self.audio_path is None and self.embedding_path is None:
            raise ManifestError(f"entry {self.id!r} has neither audio_path nor embedding_path")
        for name in ("audio_path", "embedding_path"):
            value = getattr(self, name)
            if value is not None and not value:
                raise ManifestError(f"entry {self.id!r}: {name} must be non-empty when present")
        if self.provenance.is_augmented() and not self.provenance.source_id:
            raise ManifestError(f"augmented entry {self.id!r} lacks a source_id")


@dataclass(frozen=True)
class Manifest:
    """Immutable list of entries; operations return new manifests."""

    entries: tuple[ManifestEntry, ...]

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple(self.entries))
        seen = set()
        for e in self.entries:
            if e.id in seen:
                raise ManifestError(f"duplicate entry id {e.id!r}")
            seen.add(e.id)

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def get(self, entry_id: str) -> ManifestEntry:
        for e in self.entries:
            if e.id == entry_id:
                return e
        raise ManifestError(f"no entry with id {entry_id!r}")

    def select(self, split: Split | None = None) -> tuple[ManifestEntry, ...]:
        if split is None:
            return self.entries
        return tuple(e for e in self.entries if e.split == split)

    def originals(self) -> tuple[ManifestEntry, ...]:
        return tuple(e for e in self.entries if not e.provenance.is_augmented())


# ---------------------------------------------------------------------------
# JSON-lines serialization

_ENTRY_KEYS = {"id", "audio_path", "embedding_path", "label", "speaker", "split", "provenance"}
_LABEL_KEYS = {"consonant", "diacritic"}
_SPEAKER_KEYS = {"gender", "age_band", "native", "continent"}
_PROVENANCE_KEYS = {"origin", "kind", "value", "seed", "source_id"}


def entry_to_dict(e: ManifestEntry) -> dict:
    d: dict = {"id": e.id}
    if e.audio_path is not None:
        d["audio_path"] = e.audio_path
    if e.embedding_path is not None:
        d["embedding_path"] = e.embedding_path
    d["label"] = {
        "consonant": e.label.consonant.name.lower(),
        "diacritic": e.label.diacritic.name.lower(),
    }
    d["speaker"] = {
        "gender": e.speaker.gender.value,
        "age_band": e.speaker.age_band.value,
        "native": e.speaker.native,
        "continent": e.speaker.continent.value,
    }
    d["split"] = e.split.value
    prov = {"origin": e.provenance.origin}
    if e.provenance.is_augmented():
        prov.update(
            kind=e.provenance.kind,
            value=e.provenance.value,
            seed=e.provenance.seed,
            source_id=e.provenance.source_id,
        )
    d["provenance"] = prov
    return d


def _check_unknown(d: dict, allowed: set, where: str, strict: bool):
    unknown = sorted(set(d) - allowed)
    if not unknown:
        return
    msg = f"unknown field(s) {unknown} in {where}"
    if strict:
        raise ManifestError(msg)
    warnings.warn(msg, stacklevel=3)


def entry_from_dict(d: dict, strict: bool = False) -> ManifestEntry:
    if not isinstance(d, dict):
        raise ManifestError("manifest line is not a JSON object")
    _check_unknown(d, _ENTRY_KEYS, "manifest entry", strict)
    try:
        raw_label = d["label"]
        _check_unknown(raw_label, _LABEL_KEYS, "label", strict)
        label = LetterLabel(
            Consonant[raw_label["consonant"].upper()],
            Diacritic[raw_label["diacritic"].upper()],
        )
        raw_speaker = d.get("speaker", {})
        _check_unknown(raw_speaker, _SPEAKER_KEYS, "speaker", strict)
        speaker = SpeakerMeta(
            gender=Gender(raw_speaker.get("gender", "unspecified")),
            age_band=AgeBand(raw_speaker.get("age_band", "unspecified")),
            native=raw_speaker.get("native"),
            continent=Continent(raw_speaker.get("continent", "unspecified")),
        )
        raw_prov = d.get("provenance", {"origin": "original"})
        _check_unknown(raw_prov, _PROVENANCE_KEYS, "provenance", strict)
        origin = raw_prov.get("origin", "original")
        if origin not in ("original", "augmented"):
            raise ManifestError(f"bad provenance origin {origin!r}")
        provenance = Provenance(
            origin=origin,
            kind=raw_prov.get("kind"),
            value=raw_prov.get("value"),
            seed=raw_prov.get("seed"),
            source_id=raw_prov.get("source_id"),
        )
        return ManifestEntry(
            id=d["id"],
            label=label,
            audio_path=d.get("audio_path"),
            embedding_path=d.get("embedding_path"),
            speaker=speaker,
            split=Split(d.get("split", "train")),
            provenance=provenance,
        )
    except ManifestError:
        raise
    except (KeyError, ValueError, TypeError, AttributeError) as exc:
        raise ManifestError(f"bad manifest entry: {exc!r}") from exc


def save_manifest(manifest: Manifest, path) -> None:
    lines = [json.dumps(entry_to_dict(e), separators=(",", ":")) for e in manifest]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


def load_manifest(path, strict: bool = False) -> Manifest:
    entries = []
    try:
        text = Path(path).read_text(encoding="utf-8")
    except FileNotFoundError as exc:
        raise ManifestError(f"{path}: no such file") from exc
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            raw = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ManifestError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
        entries.append(entry_from_dict(raw, strict=strict))
    return Manifest(tuple(entries))


def rebase_paths(manifest: Manifest, src_dir, dst_dir) -> Manifest:
    """Rewrite relative paths so they stay valid when the manifest moves.

    Paths in a manifest are interpreted relative to the file that holds them;
    absolute paths are left untouched.
    """
    src = Path(src_dir)
    dst = Path(dst_dir)

    def rebase(p: str | None) -> str | None:
        if p is None or os.path.isabs(p):
            return p
        return os.path.relpath(src / p, dst)

    entries = tuple(
        replace(e, audio_path=rebase(e.audio_path), embedding_path=rebase(e.embedding_path))
        for e in manifest
    )
    return Manifest(entries)


# ---------------------------------------------------------------------------
# Splitting

def split_manifest(manifest: Manifest, train_frac: float, val_frac: float, seed: int) -> Manifest:
    """Assign train/val/test splits, stratified per class.

    Fractions apply to the originals of each class and are honored within one
    sample. Assignment depends only on the seed and the ids present in each
    class, so reordering the manifest or re-running with the same seed gives
    the identical assignment. Augmented entries inherit the split of their
    source entry.
    """
    if train_frac < 0 or val_frac < 0 or train_frac + val_frac >= 1:
        raise UsageError("need train_frac >= 0, val_frac >= 0 and train_frac + val_frac < 1")

    originals = {e.id: e for e in manifest.originals()}
    for e in manifest:
        if e.provenance.is_augmented() and e.provenance.source_id not in originals:
            raise ManifestError(
                f"augmented entry {e.id!r} references unknown source {e.provenance.source_id!r}"
            )

    by_class: dict[int, list[str]] = {}
    for e in originals.values():
        by_class.setdefault(e.label.class_id, []).append(e.id)
    referenced = {e.label.class_id for e in manifest}
    missing = sorted(referenced - set(by_class))
    if missing:
        raise EmptyClass(f"classes {missing} have no original entries to stratify")

    assignment: dict[str, Split] = {}
    for class_id in sorted(by_class):
        ids = sorted(by_class[class_id])
        rng = stable_rng(seed, "split", class_id)
        order = [ids[i] for i in rng.permutation(len(ids))]
        n = len(order)
        n_train = round(train_frac * n)
        n_val = min(round(val_frac * n), n - n_train)
        for i, entry_id in enumerate(order):
            if i < n_train:
                assignment[entry_id] = Split.TRAIN
            elif i < n_train + n_val:
                assignment[entry_id] = Split.VAL
            else:
                assignment[entry_id] = Split.TEST

    entries = []
    for e in manifest:
        key = e.provenance.source_id if e.provenance.is_augmented() else e.id
        entries.append(replace(e, split=assignment[key]))
    return Manifest(tuple(entries))
