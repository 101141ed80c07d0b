"""Dataset discovery, manifests and reference/query splits.

Supported on-disk layouts (the parsers are table driven, see ``LAYOUTS``):

BHSig260 (``bhsig260_bengali``, ``bhsig260_hindi``)::

    <root>/<writer>/B-S-<writer>-G-<nn>.tif     genuine (Bengali)
    <root>/<writer>/B-S-<writer>-F-<nn>.tif     forged  (Bengali)
    <root>/<writer>/H-S-<writer>-G-<nn>.tif     genuine (Hindi), etc.

    The pretrain/test writer division is drawn from the seed.

ICDAR 2011 (``icdar2011_dutch``, ``icdar2011_chinese``)::

    <root>/train/<writer>/<writer>_<nn>.png              genuine
    <root>/train/<writer>/<forger><writer>_<nn>.png      forged (4-digit forger id)
    <root>/test/<writer>/...                             same naming
    <root>/test/<writer>/reference/<writer>_<nn>.png     shipped references

    The shipped train/test division is used as is; the seed is ignored for it.

Custom (``custom``): ``root_dir`` is a CSV file (or a directory holding
``manifest.csv``) with columns ``image_path,writer_id,label`` and an optional
``split`` column. Writers without a split are divided by seed.
"""

from __future__ import annotations

import csv
import enum
import io
import json
import os
import re
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import (
    CorruptImage,
    DatasetIncomplete,
    DatasetNotFound,
    InsufficientReferences,
    LayoutViolation,
)
from .rng import Lcg64, derive_seed

IMAGE_EXTS = {".png", ".jpg", ".jpeg", ".tif", ".tiff", ".bmp"}
MANIFEST_HEADER = ("image_path", "writer_id", "label", "split", "role")

# substream keys for derive_seed
_SPLIT_STREAM = 1
_REFERENCE_STREAM = 2


class Label(str, enum.Enum):
    GENUINE = "genuine"
    FORGED = "forged"


class Split(str, enum.Enum):
    PRETRAIN = "pretrain"
    TEST = "test"


class Role(str, enum.Enum):
    REFERENCE = "reference"
    QUERY = "query"
    UNASSIGNED = "unassigned"


@dataclass(frozen=True)
class SignatureSample:
    image_path: Path
    writer_id: str
    label: Label
    split: Split
    role: Role = Role.UNASSIGNED

    def __post_init__(self):
        if self.role is Role.REFERENCE and (
            self.label is not Label.GENUINE or self.split is not Split.TEST
        ):
            raise ValueError(f"reference sample must be a genuine test sample: {self.image_path}")


@dataclass(frozen=True)
class DatasetLayout:
    kind: str  # "bhsig" or "icdar"
    pattern: re.Pattern
    pretrain_writers: int
    test_writers: int


# Groups: "writer", "kind" (G/F) for BHSig; "forger" present only for forgeries for ICDAR.
_BHSIG_BENGALI = re.compile(r"^B-S-(?P<writer>\d+)-(?P<kind>[GF])-(?P<n>\d+)\.\w+$", re.I)
_BHSIG_HINDI = re.compile(r"^H-S-(?P<writer>\d+)-(?P<kind>[GF])-(?P<n>\d+)\.\w+$", re.I)
_ICDAR = re.compile(r"^(?:(?P<forger>\d{4}))?(?P<writer>\d{3})_(?P<n>\d+)\.\w+$", re.I)

LAYOUTS: dict[str, DatasetLayout] = {
    "icdar2011_dutch": DatasetLayout("icdar", _ICDAR, 10, 54),
    "icdar2011_chinese": DatasetLayout("icdar", _ICDAR, 10, 10),
    "bhsig260_bengali": DatasetLayout("bhsig", _BHSIG_BENGALI, 50, 50),
    "bhsig260_hindi": DatasetLayout("bhsig", _BHSIG_HINDI, 50, 110),
}
DATASET_IDS = tuple(LAYOUTS) + ("custom",)


@dataclass
class Manifest:
    dataset_id: str
    samples: list[SignatureSample]
    seed: int
    root: Path | None = field(default=None, compare=False)

    def writers(self, split: Split) -> list[str]:
        return sorted({s.writer_id for s in self.samples if s.split is split})

    def select(self, split: Split | None = None, role: Role | None = None,
               label: Label | None = None) -> list[SignatureSample]:
        return [
            s for s in self.samples
            if (split is None or s.split is split)
            and (role is None or s.role is role)
            and (label is None or s.label is label)
        ]


def _sort_key(s: SignatureSample) -> tuple[str, str]:
    return (s.writer_id, s.image_path.as_posix())


def _images(folder: Path) -> list[Path]:
    return sorted(p for p in folder.iterdir() if p.is_file() and p.suffix.lower() in IMAGE_EXTS)


def _check_unique(samples: list[SignatureSample]) -> None:
    seen = set()
    for s in samples:
        key = (s.writer_id, s.image_path)
        if key in seen:
            raise LayoutViolation(f"layout violation: duplicate sample {s.image_path}")
        seen.add(key)


def _random_split(writers: list[str], n_pretrain: int, seed: int) -> set[str]:
    rng = Lcg64(derive_seed(seed, _SPLIT_STREAM))
    return set(rng.sample(sorted(writers), n_pretrain))


def _parse_bhsig(root: Path, layout: DatasetLayout, seed: int) -> list[SignatureSample]:
    by_writer: dict[str, list[tuple[Path, Label]]] = {}
    for wdir in sorted(p for p in root.iterdir() if p.is_dir()):
        for path in _images(wdir):
            m = layout.pattern.match(path.name)
            if m is None or not wdir.name.isdigit() or int(m["writer"]) != int(wdir.name):
                raise LayoutViolation(f"layout violation: {path}")
            label = Label.GENUINE if m["kind"].upper() == "G" else Label.FORGED
            by_writer.setdefault(wdir.name, []).append((path, label))
    expected = layout.pretrain_writers + layout.test_writers
    if len(by_writer) != expected:
        raise DatasetIncomplete(
            f"dataset incomplete: found {len(by_writer)} writers, expected {expected}"
        )
    pretrain = _random_split(list(by_writer), layout.pretrain_writers, seed)
    return [
        SignatureSample(path, w, label, Split.PRETRAIN if w in pretrain else Split.TEST)
        for w, items in by_writer.items()
        for path, label in items
    ]


def _parse_icdar_split(split_dir: Path, layout: DatasetLayout, split: Split) -> list[SignatureSample]:
    samples = []
    if not split_dir.is_dir():
        return samples
    for wdir in sorted(p for p in split_dir.iterdir() if p.is_dir()):
        files = [(p, False) for p in _images(wdir)]
        ref_dir = wdir / "reference"
        if ref_dir.is_dir():
            files += [(p, True) for p in _images(ref_dir)]
        for path, shipped_ref in files:
            m = layout.pattern.match(path.name)
            if m is None or m["writer"] != wdir.name:
                raise LayoutViolation(f"layout violation: {path}")
            label = Label.FORGED if m["forger"] else Label.GENUINE
            if shipped_ref and (label is Label.FORGED or split is not Split.TEST):
                raise LayoutViolation(f"layout violation: reference must be a genuine test file: {path}")
            role = Role.REFERENCE if shipped_ref else Role.UNASSIGNED
            samples.append(SignatureSample(path, wdir.name, label, split, role))
    return samples


def _parse_icdar(root: Path, layout: DatasetLayout) -> list[SignatureSample]:
    samples = _parse_icdar_split(root / "train", layout, Split.PRETRAIN)
    samples += _parse_icdar_split(root / "test", layout, Split.TEST)
    train = {s.writer_id for s in samples if s.split is Split.PRETRAIN}
    test = {s.writer_id for s in samples if s.split is Split.TEST}
    if train & test:
        raise LayoutViolation(f"layout violation: writers in both splits: {sorted(train & test)}")
    if (len(train), len(test)) != (layout.pretrain_writers, layout.test_writers):
        raise DatasetIncomplete(
            f"dataset incomplete: found {len(train)}/{len(test)} train/test writers, "
            f"expected {layout.pretrain_writers}/{layout.test_writers}"
        )
    return samples


def _parse_custom(root: Path, seed: int, pretrain_fraction: float) -> list[SignatureSample]:
    csv_path = root / "manifest.csv" if root.is_dir() else root
    if not csv_path.is_file():
        raise DatasetNotFound(f"dataset not found: no manifest CSV at {csv_path}")
    rows = []
    with open(csv_path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = {"image_path", "writer_id", "label"} - set(reader.fieldnames or ())
        if missing:
            raise LayoutViolation(f"layout violation: {csv_path} lacks columns {sorted(missing)}")
        for row in reader:
            rows.append(row)
    if not rows:
        raise DatasetNotFound(f"dataset not found: {csv_path} is empty")

    fixed: dict[str, Split] = {}
    for row in rows:
        if row.get("split"):
            fixed[row["writer_id"]] = Split(row["split"])
    free = sorted({r["writer_id"] for r in rows} - set(fixed))
    chosen = _random_split(free, int(round(pretrain_fraction * len(free))), seed) if free else set()
    base = csv_path.parent
    samples = []
    for row in rows:
        w = row["writer_id"]
        split = fixed.get(w, Split.PRETRAIN if w in chosen else Split.TEST)
        try:
            label = Label(row["label"])
        except ValueError:
            raise LayoutViolation(f"layout violation: bad label {row['label']!r} for {row['image_path']}") from None
        samples.append(SignatureSample((base / row["image_path"]).resolve(), w, label, split))
    return samples


def build_manifest(root_dir: str | Path, dataset_id: str, seed: int,
                   pretrain_fraction: float = 0.5) -> Manifest:
    """Discover all samples under ``root_dir`` and assign pretrain/test splits.

    ``pretrain_fraction`` only applies to custom datasets whose CSV leaves the
    split column empty.
    """
    root = Path(root_dir)
    if dataset_id not in DATASET_IDS:
        raise ValueError(f"unknown dataset id {dataset_id!r}; choose from {DATASET_IDS}")
    if not root.exists():
        raise DatasetNotFound(f"dataset not found: {root}")
    if root.is_dir() and not any(root.iterdir()):
        raise DatasetNotFound(f"dataset not found: {root} is empty")

    if dataset_id == "custom":
        samples = _parse_custom(root, seed, pretrain_fraction)
    else:
        layout = LAYOUTS[dataset_id]
        if layout.kind == "bhsig":
            samples = _parse_bhsig(root, layout, seed)
        else:
            samples = _parse_icdar(root, layout)
    if not samples:
        raise DatasetNotFound(f"dataset not found: no images under {root}")
    samples = [replace(s, image_path=s.image_path.resolve()) for s in samples]
    samples.sort(key=_sort_key)
    _check_unique(samples)
    return Manifest(dataset_id, samples, seed, root=root.resolve())


def assign_references(manifest: Manifest, n_ref: int = 8, seed: int | None = None) -> Manifest:
    """Mark ``n_ref`` genuine references per test writer; every other test sample is a query.

    Writers that already carry references (shipped with the dataset) keep them
    unchanged. With ``n_ref == 0`` every test sample becomes a query.
    """
    if n_ref < 0:
        raise ValueError("n_ref must be non-negative")
    seed = manifest.seed if seed is None else seed
    rng = Lcg64(derive_seed(seed, _REFERENCE_STREAM))

    by_writer: dict[str, list[int]] = {}
    for i, s in enumerate(manifest.samples):
        if s.split is Split.TEST:
            by_writer.setdefault(s.writer_id, []).append(i)

    roles: dict[int, Role] = {}
    for writer in sorted(by_writer):
        idx = by_writer[writer]
        shipped = [i for i in idx if manifest.samples[i].role is Role.REFERENCE]
        if n_ref == 0:
            refs: set[int] = set()
        elif shipped:
            refs = set(shipped)
        else:
            genuine = [i for i in idx if manifest.samples[i].label is Label.GENUINE]
            if len(genuine) < n_ref:
                raise InsufficientReferences(
                    f"insufficient references: writer {writer} has {len(genuine)} genuine "
                    f"samples, need {n_ref}"
                )
            refs = set(rng.sample(genuine, n_ref))
        for i in idx:
            roles[i] = Role.REFERENCE if i in refs else Role.QUERY

    samples = [replace(s, role=roles.get(i, s.role)) for i, s in enumerate(manifest.samples)]
    return Manifest(manifest.dataset_id, samples, manifest.seed, root=manifest.root)


def pretrain_samples(manifest: Manifest, include_forged: bool = True) -> list[SignatureSample]:
    """Samples used for self-supervised pretraining (labels are not used)."""
    return [
        s for s in manifest.samples
        if s.split is Split.PRETRAIN and (include_forged or s.label is Label.GENUINE)
    ]


def load_grayscale(sample: SignatureSample | str | Path) -> np.ndarray:
    """Decode an image as a uint8 intensity array (ITU-R 601 luma for color)."""
    path = sample.image_path if isinstance(sample, SignatureSample) else Path(sample)
    try:
        with Image.open(path) as im:
            im.load()
            if im.mode in ("I;16", "I;16B", "I;16L", "I"):
                arr = np.asarray(im, dtype=np.float64)
                peak = 65535.0 if arr.max() > 255 else 255.0
                return np.clip(np.round(arr * 255.0 / peak), 0, 255).astype(np.uint8)
            return np.asarray(im.convert("L"), dtype=np.uint8).copy()
    except FileNotFoundError:
        raise
    except (UnidentifiedImageError, OSError, SyntaxError) as exc:
        raise CorruptImage(f"corrupt image: {path}") from exc


def manifest_to_csv(manifest: Manifest, base_dir: Path) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(MANIFEST_HEADER)
    for s in manifest.samples:
        try:
            rel = s.image_path.relative_to(base_dir)
        except ValueError:
            rel = Path(os.path.relpath(s.image_path, base_dir))
        writer.writerow((rel.as_posix(), s.writer_id, s.label.value, s.split.value, s.role.value))
    return buf.getvalue()


def write_manifest(manifest: Manifest, path: str | Path) -> Path:
    """Write the manifest CSV plus a ``.meta.json`` sidecar holding dataset id and seed."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    base = path.parent.resolve()
    path.write_bytes(manifest_to_csv(manifest, base).encode("utf-8"))
    meta = {"dataset_id": manifest.dataset_id, "seed": manifest.seed}
    _meta_path(path).write_text(json.dumps(meta, sort_keys=True) + "\n", encoding="utf-8")
    return path


def _meta_path(path: Path) -> Path:
    return path.with_name(path.stem + ".meta.json")


def read_manifest(path: str | Path) -> Manifest:
    path = Path(path)
    if not path.is_file():
        raise DatasetNotFound(f"dataset not found: manifest {path}")
    base = path.parent.resolve()
    samples = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != MANIFEST_HEADER:
            raise LayoutViolation(f"layout violation: {path} header must be {','.join(MANIFEST_HEADER)}")
        for row in reader:
            samples.append(SignatureSample(
                (base / row["image_path"]).resolve(),
                row["writer_id"],
                Label(row["label"]),
                Split(row["split"]),
                Role(row["role"]),
            ))
    meta = {"dataset_id": "custom", "seed": 0}
    if _meta_path(path).is_file():
        meta.update(json.loads(_meta_path(path).read_text(encoding="utf-8")))
    return Manifest(meta["dataset_id"], samples, int(meta["seed"]), root=base)
