"""Raw-recording ingestion, windowing, resampling, subject-independent
splitting, and the packed-dataset format consumed by training.

Recordings arrive as manifest CSV rows pointing at binary signal files
(an external conversion step produces both from the clinical archive).
Each recording is cut into non-overlapping 23437-sample windows, each
window resampled to exactly 2000 samples by linear interpolation.
"""

from __future__ import annotations

import csv
import io
import os
import struct
from dataclasses import dataclass

import numpy as np

from .errors import FormatError, IngestionError, UsageError
from .tensor import Tensor

WINDOW_SAMPLES = 23437
TARGET_SAMPLES = 2000

SIGNAL_MAGIC = b"EMGS"
SIGNAL_VERSION = 1
DATASET_MAGIC = b"EMGW"
DATASET_VERSION = 1

_CLASS_NAMES = {3: ("myopathy", "normal", "als"), 2: ("normal", "als")}


def class_names(num_classes: int) -> tuple[str, ...]:
    try:
        return _CLASS_NAMES[num_classes]
    except KeyError:
        raise UsageError(f"num_classes must be 2 or 3, got {num_classes}") from None


@dataclass
class RecordingMeta:
    path: str
    label: int
    subject_id: str
    sample_rate_hz: int


@dataclass
class WindowRecord:
    """One training example: (L, 1) samples, class label, subject id."""

    samples: Tensor
    label: int
    subject_id: str

    def __post_init__(self):
        if self.samples.rank != 2 or self.samples.shape[1] != 1:
            raise UsageError(f"window samples must be (L, 1), got "
                             f"{self.samples.shape}")
        if self.label < 0:
            raise UsageError(f"label must be non-negative, got {self.label}")


@dataclass
class SplitSpec:
    train_frac: float = 0.725
    val_frac: float = 0.155
    test_frac: float = 0.120
    rng_seed: int = 0

    def __post_init__(self):
        fracs = (self.train_frac, self.val_frac, self.test_frac)
        if any(f <= 0 for f in fracs):
            raise UsageError(f"split fractions must be positive, got {fracs}")
        if abs(sum(fracs) - 1.0) > 1e-9:
            raise UsageError(f"split fractions must sum to 1, got {fracs}")


def write_signal_file(path: str, samples: np.ndarray) -> None:
    """Write the binary signal format: EMGS, version, u32 count, f32 LE."""
    flat = np.asarray(samples, dtype="<f4").reshape(-1)
    with open(path, "wb") as fh:
        fh.write(SIGNAL_MAGIC)
        fh.write(struct.pack("<BI", SIGNAL_VERSION, flat.size))
        fh.write(flat.tobytes())


def read_signal_file(path: str) -> np.ndarray:
    """Read a signal file back as a flat float32 array."""
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as e:
        raise IngestionError(f"cannot read signal file {path}: {e}") from e
    if len(blob) < 9 or blob[:4] != SIGNAL_MAGIC:
        raise IngestionError(f"{path}: not a signal file (bad magic)")
    version, count = struct.unpack("<BI", blob[4:9])
    if version != SIGNAL_VERSION:
        raise IngestionError(f"{path}: unsupported signal version {version}")
    if count == 0:
        raise IngestionError(f"{path}: empty payload")
    if len(blob) != 9 + 4 * count:
        raise IngestionError(f"{path}: truncated payload "
                             f"({len(blob) - 9} bytes for {count} samples)")
    return np.frombuffer(blob, dtype="<f4", offset=9).copy()


def load_recording(meta: RecordingMeta) -> Tensor:
    """Load a recording named by its manifest row as an (N, 1) tensor."""
    samples = read_signal_file(meta.path)
    return Tensor.wrap(samples.reshape(-1, 1))


def segment_windows(x: Tensor, window_len: int = WINDOW_SAMPLES) -> list[Tensor]:
    """Cut into consecutive non-overlapping windows; remainder dropped."""
    n = x.shape[0]
    count = n // window_len
    if count == 0:
        raise IngestionError(f"recording of {n} samples is shorter than one "
                             f"window ({window_len})")
    return [Tensor.wrap(x.data[i * window_len:(i + 1) * window_len].copy())
            for i in range(count)]


def resample_to_length(x: Tensor, target_len: int = TARGET_SAMPLES) -> Tensor:
    """Linear-interpolation resampling onto a uniform grid.

    Output sample i sits at t_i = i * (L - 1) / (target_len - 1), so the
    endpoints are preserved exactly and each output depends only on its
    two neighbouring input samples.
    """
    n = x.shape[0]
    if n < 2:
        raise IngestionError(f"cannot resample a signal of {n} samples")
    grid = np.linspace(0.0, n - 1, target_len)
    out = np.interp(grid, np.arange(n, dtype=np.float64),
                    x.data[:, 0].astype(np.float64))
    return Tensor.wrap(out.astype(x.dtype).reshape(-1, 1))


def zscore_window(x: Tensor) -> Tensor:
    """Optional per-window standardization (mean 0, unit variance)."""
    v = x.data.astype(np.float64)
    std = v.std()
    out = (v - v.mean()) / max(std, 1e-12)
    return Tensor.wrap(out.astype(x.dtype))


def split_by_subject(records: list[WindowRecord], spec: SplitSpec):
    """Assign whole subjects to train/val/test.

    Subjects are shuffled with the seeded generator, then assigned
    greedily to the split with the largest remaining window deficit; a
    final repair pass guarantees no split is left empty. No subject ever
    appears in more than one split.
    """
    subjects: list[str] = []
    counts: dict[str, int] = {}
    for rec in records:
        if rec.subject_id not in counts:
            subjects.append(rec.subject_id)
            counts[rec.subject_id] = 0
        counts[rec.subject_id] += 1
    if len(subjects) < 3:
        raise UsageError(f"need at least 3 subjects to form disjoint "
                         f"splits, got {len(subjects)}")
    total = len(records)
    targets = [spec.train_frac * total, spec.val_frac * total,
               spec.test_frac * total]
    rng = np.random.default_rng(spec.rng_seed)
    order = [subjects[i] for i in rng.permutation(len(subjects))]
    assigned_windows = [0.0, 0.0, 0.0]
    members: list[list[str]] = [[], [], []]
    for subj in order:
        deficits = [targets[i] - assigned_windows[i] for i in range(3)]
        split = int(np.argmax(deficits))
        members[split].append(subj)
        assigned_windows[split] += counts[subj]
    for split in range(3):
        if members[split]:
            continue
        donor = max(range(3), key=lambda i: (len(members[i]), -i))
        members[split].append(members[donor].pop())
    owner = {s: i for i in range(3) for s in members[i]}
    out: tuple[list, list, list] = ([], [], [])
    for rec in records:
        out[owner[rec.subject_id]].append(rec)
    return out


def pack_dataset(records: list[WindowRecord], path: str) -> None:
    """Write the packed window format.

    Layout: magic "EMGW", version byte, u32 record count, u32 window
    length, per record u8 label + u16 subject index + raw f32 samples,
    then the subject table: u16 count, u16-length-prefixed UTF-8 names.
    """
    if not records:
        raise FormatError("cannot pack an empty record list")
    window_len = records[0].samples.shape[0]
    for rec in records:
        if rec.samples.shape[0] != window_len:
            raise FormatError(f"mixed window lengths: {rec.samples.shape[0]} "
                              f"vs {window_len}")
        if rec.label > 255:
            raise FormatError(f"label {rec.label} does not fit in u8")
    subjects: list[str] = []
    index: dict[str, int] = {}
    for rec in records:
        if rec.subject_id not in index:
            index[rec.subject_id] = len(subjects)
            subjects.append(rec.subject_id)
    if len(subjects) > 0xFFFF:
        raise FormatError(f"too many subjects ({len(subjects)}) for u16 index")
    buf = io.BytesIO()
    buf.write(DATASET_MAGIC)
    buf.write(struct.pack("<BII", DATASET_VERSION, len(records), window_len))
    for rec in records:
        buf.write(struct.pack("<BH", rec.label, index[rec.subject_id]))
        buf.write(rec.samples.data.astype("<f4", copy=False).tobytes())
    buf.write(struct.pack("<H", len(subjects)))
    for name in subjects:
        raw = name.encode("utf-8")
        buf.write(struct.pack("<H", len(raw)))
        buf.write(raw)
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def unpack_dataset(path: str) -> list[WindowRecord]:
    """Read back a packed dataset, preserving order and sample bits."""
    with open(path, "rb") as fh:
        blob = fh.read()
    what = f"dataset {path}"
    if len(blob) < 13 or blob[:4] != DATASET_MAGIC:
        raise FormatError(f"{what}: bad magic (expected EMGW)")
    version, count, window_len = struct.unpack("<BII", blob[4:13])
    if version != DATASET_VERSION:
        raise FormatError(f"{what}: unsupported version {version}")
    pos = 13
    rec_bytes = 3 + 4 * window_len
    raw: list[tuple[int, int, np.ndarray]] = []
    for i in range(count):
        if pos + rec_bytes > len(blob):
            raise FormatError(f"{what}: truncated in record {i}")
        label, subj_idx = struct.unpack_from("<BH", blob, pos)
        samples = np.frombuffer(blob, dtype="<f4", count=window_len,
                                offset=pos + 3).copy()
        raw.append((label, subj_idx, samples))
        pos += rec_bytes
    if pos + 2 > len(blob):
        raise FormatError(f"{what}: truncated before subject table")
    (n_subj,) = struct.unpack_from("<H", blob, pos)
    pos += 2
    names = []
    for i in range(n_subj):
        if pos + 2 > len(blob):
            raise FormatError(f"{what}: truncated in subject table")
        (ln,) = struct.unpack_from("<H", blob, pos)
        pos += 2
        if pos + ln > len(blob):
            raise FormatError(f"{what}: truncated subject name {i}")
        names.append(blob[pos:pos + ln].decode("utf-8"))
        pos += ln
    if pos != len(blob):
        raise FormatError(f"{what}: trailing bytes after subject table")
    out = []
    for label, subj_idx, samples in raw:
        if subj_idx >= n_subj:
            raise FormatError(f"{what}: subject index {subj_idx} out of "
                              f"range ({n_subj} names)")
        out.append(WindowRecord(samples=Tensor.wrap(samples.reshape(-1, 1)),
                                label=label, subject_id=names[subj_idx]))
    return out


MANIFEST_FIELDS = ("path", "label", "subject_id", "sample_rate")


def parse_manifest(path: str, num_classes: int = 3) -> list[RecordingMeta]:
    """Read the manifest CSV; relative signal paths resolve against the
    manifest's own directory."""
    names = class_names(num_classes)
    base = os.path.dirname(os.path.abspath(path))
    metas = []
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as e:
        raise IngestionError(f"cannot read manifest {path}: {e}") from e
    with fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or set(reader.fieldnames) != set(MANIFEST_FIELDS):
            raise UsageError(
                f"manifest header must be exactly {','.join(MANIFEST_FIELDS)}, "
                f"got {reader.fieldnames}")
        for row in reader:
            line = reader.line_num
            token = (row["label"] or "").strip()
            if token not in names:
                raise UsageError(f"manifest row {line}: unknown label "
                                 f"{token!r} (expected one of {names})")
            try:
                rate = int(row["sample_rate"])
            except (TypeError, ValueError):
                raise UsageError(f"manifest row {line}: bad sample_rate "
                                 f"{row['sample_rate']!r}") from None
            if rate <= 0:
                raise UsageError(f"manifest row {line}: sample_rate must be "
                                 f"positive")
            rec_path = row["path"]
            if not os.path.isabs(rec_path):
                rec_path = os.path.join(base, rec_path)
            metas.append(RecordingMeta(path=rec_path, label=names.index(token),
                                       subject_id=row["subject_id"],
                                       sample_rate_hz=rate))
    if not metas:
        raise UsageError(f"manifest {path} contains no rows")
    return metas


def windows_from_recordings(metas: list[RecordingMeta],
                            window_len: int = WINDOW_SAMPLES,
                            target_len: int = TARGET_SAMPLES,
                            zscore: bool = False) -> list[WindowRecord]:
    """Ingest every manifest row into resampled WindowRecords, in manifest
    order."""
    out = []
    for meta in metas:
        recording = load_recording(meta)
        for win in segment_windows(recording, window_len):
            samples = resample_to_length(win, target_len)
            if zscore:
                samples = zscore_window(samples)
            out.append(WindowRecord(samples=samples, label=meta.label,
                                    subject_id=meta.subject_id))
    return out


def prep_dataset(manifest_path: str, out_dir: str, spec: SplitSpec,
                 num_classes: int = 3, zscore: bool = False,
                 window_len: int = WINDOW_SAMPLES,
                 target_len: int = TARGET_SAMPLES) -> dict:
    """Full preparation: ingest, window, resample, split, pack.

    Writes train.emgw / val.emgw / test.emgw under out_dir and returns a
    split report (subjects and window counts per split).
    """
    metas = parse_manifest(manifest_path, num_classes)
    records = windows_from_recordings(metas, window_len, target_len, zscore)
    splits = split_by_subject(records, spec)
    os.makedirs(out_dir, exist_ok=True)
    report = {"num_classes": num_classes, "window_len": target_len,
              "splits": {}}
    for name, recs in zip(("train", "val", "test"), splits):
        path = os.path.join(out_dir, f"{name}.emgw")
        pack_dataset(recs, path)
        report["splits"][name] = {
            "path": path,
            "windows": len(recs),
            "subjects": sorted({r.subject_id for r in recs}),
        }
    return report
