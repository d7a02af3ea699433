"""Bit-exact binary storage (.erps) and CSV import.

Binary layout (little-endian):
  magic 'ERPS' | version u16 | C u16 | T u32 | sampling rate u32 (mHz)
  | channel names (u16 count, each u16 len + utf-8) | subject count u32
  per subject:
    id i32 | trial count u32
    | signals float32 (count * C * T, trial-major, channel-major within trial)
    | trial indices i32 * count | labels u8 * count
    | symptom flag u8; if 1: symptom count u16, names (u16 len + utf-8),
      scores u8 (count * n_symptoms, trial-major)
"""

from __future__ import annotations

import csv
import struct

import numpy as np

from .model import DEFAULT_CHANNELS, DatasetError, ErpEpoch, SubjectSet, check_geometry

MAGIC = b"ERPS"
VERSION = 1


class FormatError(ValueError):
    """File-level problem; `code` is one of 'magic', 'version', 'truncated'."""

    def __init__(self, code: str, message: str):
        super().__init__(message)
        self.code = code


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise FormatError("truncated",
                              f"need {n} bytes at offset {self.pos}, "
                              f"file has {len(self.data)}")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack("<" + fmt, self.take(struct.calcsize("<" + fmt)))

    def text(self) -> str:
        (n,) = self.unpack("H")
        return self.take(n).decode("utf-8")


def save_dataset(subjects: list[SubjectSet], path, sampling_rate_hz: float = 250.0):
    c, t = check_geometry(subjects)
    channels = subjects[0].channel_names
    for s in subjects:
        if s.channel_names != channels:
            raise DatasetError("all subjects must share channel names")
    parts = [MAGIC, struct.pack("<HHII", VERSION, c, t,
                                int(round(sampling_rate_hz * 1000)))]
    parts.append(struct.pack("<H", len(channels)))
    for name in channels:
        raw = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw)) + raw)
    parts.append(struct.pack("<I", len(subjects)))
    for s in subjects:
        parts.append(struct.pack("<iI", s.subject_id, s.n_trials))
        sig = np.ascontiguousarray(s.signals(), dtype="<f4") if s.epochs \
            else np.zeros((0, c, t), dtype="<f4")
        parts.append(sig.tobytes())
        parts.append(np.array([e.trial_index for e in s.epochs],
                              dtype="<i4").tobytes())
        parts.append(np.array([e.label for e in s.epochs], dtype=np.uint8).tobytes())
        symptoms = sorted({k for e in s.epochs for k in (e.symptom_scores or {})})
        if symptoms:
            parts.append(struct.pack("<BH", 1, len(symptoms)))
            for name in symptoms:
                raw = name.encode("utf-8")
                parts.append(struct.pack("<H", len(raw)) + raw)
            table = np.zeros((s.n_trials, len(symptoms)), dtype=np.uint8)
            for i, e in enumerate(s.epochs):
                for j, name in enumerate(symptoms):
                    table[i, j] = int((e.symptom_scores or {}).get(name, 0))
            parts.append(table.tobytes())
        else:
            parts.append(struct.pack("<B", 0))
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))


def load_dataset(path) -> list[SubjectSet]:
    with open(path, "rb") as fh:
        r = _Reader(fh.read())
    if r.take(4) != MAGIC:
        raise FormatError("magic", f"{path}: not an ERPS file")
    version, c, t, _rate_mhz = r.unpack("HHII")
    if version != VERSION:
        raise FormatError("version", f"unsupported version {version}")
    (n_channels,) = r.unpack("H")
    channels = tuple(r.text() for _ in range(n_channels))
    if n_channels != c:
        raise FormatError("truncated",
                          f"channel list length {n_channels} != C={c}")
    (n_subjects,) = r.unpack("I")
    subjects = []
    for _ in range(n_subjects):
        sid, count = r.unpack("iI")
        sig = np.frombuffer(r.take(count * c * t * 4), dtype="<f4")
        sig = sig.reshape(count, c, t)
        idx = np.frombuffer(r.take(count * 4), dtype="<i4")
        labels = np.frombuffer(r.take(count), dtype=np.uint8)
        if labels.size and labels.max() > 1:
            raise DatasetError(f"subject {sid}: labels must be 0/1")
        (flag,) = r.unpack("B")
        tables = None
        if flag == 1:
            (n_sym,) = r.unpack("H")
            names = [r.text() for _ in range(n_sym)]
            raw = np.frombuffer(r.take(count * n_sym), dtype=np.uint8)
            tables = (names, raw.reshape(count, n_sym))
        elif flag != 0:
            raise FormatError("truncated", f"bad symptom flag {flag}")
        epochs = []
        for i in range(count):
            scores = None
            if tables is not None:
                names, tab = tables
                scores = {nm: int(v) for nm, v in zip(names, tab[i])}
            epochs.append(ErpEpoch(subject_id=sid, trial_index=int(idx[i]),
                                   signal=sig[i], label=int(labels[i]),
                                   symptom_scores=scores))
        subjects.append(SubjectSet(subject_id=sid, epochs=epochs,
                                   channel_names=channels))
    if r.pos != len(r.data):
        raise FormatError("truncated",
                          f"{len(r.data) - r.pos} trailing bytes")
    check_geometry(subjects)
    return subjects


def import_csv(path, channel_names=DEFAULT_CHANNELS) -> list[SubjectSet]:
    """Read trials from CSV: subject_id, trial_index, label, then C*T values
    channel-major. A header row is mandatory."""
    channel_names = tuple(channel_names)
    c = len(channel_names)
    by_subject: dict[int, list[ErpEpoch]] = {}
    with open(path, newline="") as fh:
        rows = csv.reader(fh)
        header = next(rows, None)
        if header is None or header[:3] != ["subject_id", "trial_index", "label"]:
            raise FormatError(
                "magic", "CSV header must start with subject_id,trial_index,label")
        n_values = len(header) - 3
        if n_values <= 0 or n_values % c:
            raise DatasetError(
                f"{n_values} value columns do not divide into {c} channels")
        t = n_values // c
        for lineno, row in enumerate(rows, start=2):
            if not row:
                continue
            if len(row) != 3 + n_values:
                raise DatasetError(f"line {lineno}: expected {3 + n_values} "
                                   f"columns, got {len(row)}")
            sid, idx, label = int(row[0]), int(row[1]), int(row[2])
            signal = np.array(row[3:], dtype=np.float32).reshape(c, t)
            by_subject.setdefault(sid, []).append(
                ErpEpoch(subject_id=sid, trial_index=idx, signal=signal,
                         label=label))
    subjects = [SubjectSet(subject_id=sid, epochs=eps, channel_names=channel_names)
                for sid, eps in sorted(by_subject.items())]
    check_geometry(subjects)
    return subjects
