"""Claims data model and streaming CSV ingestion.

A dataset is held column-wise: one row per patient plus flat event arrays
(patient index, code index, year) for diagnoses and prescriptions.  The
canonical form sorts patients by id and events by (patient, code, year), which
makes ingestion independent of input row order.
"""
from __future__ import annotations

import enum
import hashlib
import logging
import re
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import IO, Iterable, Iterator, NamedTuple, Sequence, Union

import numpy as np
import pandas as pd

log = logging.getLogger(__name__)

AGE_GROUP_WIDTH = 5
MAX_AGE = 110  # groups tile [0, MAX_AGE)
MAX_RECORDED_AGE = 120
REJECT_FRACTION_LIMIT = 0.10
MAX_WINDOW_YEARS = 63  # year presence is packed into uint64 bit masks

PATIENT_COLUMNS = ("patient_id", "birth_year", "sex", "died_in_window", "inpatient")
DIAGNOSIS_COLUMNS = ("patient_id", "icd10", "year")
PRESCRIPTION_COLUMNS = ("patient_id", "atc", "year")

_ICD_RE = re.compile(r"[A-Z][0-9]{2}")
_ATC_RE = re.compile(r"[A-Z][A-Z0-9]{0,6}")
# Four-character subcategories (E11.9, E119) are accepted and truncated.
_ICD_INPUT_PATTERN = r"[A-Z][0-9]{2}(?:\.?[0-9A-Z]{1,4})?"
_ID_PATTERN = r"[A-Za-z0-9_\-]+"
_YEAR_PATTERN = r"[0-9]{1,4}"
_OVERFLOW = ("__extra1", "__extra2", "__extra3")

PathOrStream = Union[str, Path, IO[str]]


class ClaimsFormatError(ValueError):
    """Input file violates the table schema (fatal)."""


class ClaimsDataError(ValueError):
    """Input content is unusable, e.g. too many rejected rows (fatal)."""


class DiagnosisCode(str):
    """Three-character ICD-10 category such as ``E11``."""

    __slots__ = ()

    def __new__(cls, value: str) -> "DiagnosisCode":
        value = str(value)
        if not _ICD_RE.fullmatch(value):
            raise ValueError(f"invalid ICD-10 category {value!r}")
        return super().__new__(cls, value)

    @property
    def chapter_letter(self) -> str:
        return self[0]

    @property
    def numeric_part(self) -> str:
        return self[1:]


class AtcCode(str):
    """ATC code at any level (``A``, ``A10``, ``A10BA02``)."""

    __slots__ = ()

    def __new__(cls, value: str) -> "AtcCode":
        value = str(value)
        if not _ATC_RE.fullmatch(value):
            raise ValueError(f"invalid ATC code {value!r}")
        return super().__new__(cls, value)

    def matches_prefix(self, prefix: str) -> bool:
        return self.startswith(prefix)


class Sex(enum.Enum):
    MALE = "M"
    FEMALE = "F"

    @property
    def code(self) -> int:
        """Integer code used in the column arrays (0 = male, 1 = female)."""
        return 0 if self is Sex.MALE else 1

    @classmethod
    def from_code(cls, code: int) -> "Sex":
        return cls.MALE if int(code) == 0 else cls.FEMALE


class DiagnosisEvent(NamedTuple):
    code: DiagnosisCode
    year: int


class PrescriptionEvent(NamedTuple):
    code: AtcCode
    year: int


@dataclass(frozen=True, order=True)
class AgeGroup:
    """Half-open five-year interval ``[lower, lower + 5)``."""

    lower: int

    def __post_init__(self):
        if self.lower % AGE_GROUP_WIDTH or not 0 <= self.lower < MAX_AGE:
            raise ValueError(f"invalid age group lower bound {self.lower}")

    @property
    def width(self) -> int:
        return AGE_GROUP_WIDTH

    @property
    def upper(self) -> int:
        return self.lower + AGE_GROUP_WIDTH

    @property
    def index(self) -> int:
        return self.lower // AGE_GROUP_WIDTH

    @property
    def label(self) -> str:
        return f"{self.lower}-{self.upper}"

    def __contains__(self, age: int) -> bool:
        return self.lower <= age < self.upper

    def __str__(self) -> str:
        return self.label

    @classmethod
    def from_label(cls, label: str) -> "AgeGroup":
        lower, _, upper = label.partition("-")
        group = cls(int(lower))
        if int(upper) != group.upper:
            raise ValueError(f"invalid age group label {label!r}")
        return group


AGE_GROUPS: tuple[AgeGroup, ...] = tuple(
    AgeGroup(lower) for lower in range(0, MAX_AGE, AGE_GROUP_WIDTH))
N_AGE_GROUPS = len(AGE_GROUPS)


@dataclass(frozen=True)
class StudyWindow:
    first: int
    last: int

    def __post_init__(self):
        if self.last < self.first:
            raise ValueError(f"empty study window {self.first}-{self.last}")
        if self.last - self.first + 1 > MAX_WINDOW_YEARS:
            raise ValueError(f"study window longer than {MAX_WINDOW_YEARS} years")

    @classmethod
    def parse(cls, text: str) -> "StudyWindow":
        first, sep, last = text.strip().partition("-")
        return cls(int(first), int(last) if sep else int(first))

    @property
    def years(self) -> range:
        return range(self.first, self.last + 1)

    def __contains__(self, year: int) -> bool:
        return self.first <= year <= self.last

    def __str__(self) -> str:
        return f"{self.first}-{self.last}"


@dataclass(frozen=True)
class PatientRecord:
    patient_id: str
    birth_year: int
    sex: Sex
    died_in_window: bool
    inpatient: bool
    diagnoses: tuple[DiagnosisEvent, ...] = ()
    prescriptions: tuple[PrescriptionEvent, ...] = ()


def age_of(patient: PatientRecord | int, reference_year: int) -> int:
    """Age in completed calendar years at ``reference_year``."""
    birth_year = patient if isinstance(patient, (int, np.integer)) else patient.birth_year
    age = int(reference_year) - int(birth_year)
    if age < 0:
        raise ClaimsDataError(
            f"reference year {reference_year} precedes birth year {birth_year}")
    return age


def age_group_of(age: int, warnings: Counter | None = None) -> AgeGroup:
    """Five-year group containing ``age``; ages of 110 and above go to the top group."""
    if age < 0:
        raise ValueError(f"negative age {age}")
    if age >= MAX_AGE:
        log.warning("age %d clamped to top age group", age)
        if warnings is not None:
            warnings["age_clamped"] += 1
        return AGE_GROUPS[-1]
    return AGE_GROUPS[age // AGE_GROUP_WIDTH]


def age_group_indices(ages: np.ndarray) -> np.ndarray:
    """Vectorised :func:`age_group_of` returning group indices."""
    ages = np.asarray(ages)
    if ages.size and ages.min() < 0:
        raise ValueError("negative age")
    return np.minimum(ages // AGE_GROUP_WIDTH, N_AGE_GROUPS - 1).astype(np.int8)


@dataclass
class IngestReport:
    rows_read: Counter = field(default_factory=Counter)
    rows_rejected: Counter = field(default_factory=Counter)
    reasons: Counter = field(default_factory=Counter)  # keyed (table, reason)
    out_of_window: Counter = field(default_factory=Counter)
    duplicates_collapsed: int = 0
    age_clamped: int = 0

    def summary(self) -> str:
        parts = []
        for table in ("patients", "diagnoses", "prescriptions"):
            parts.append(f"{table}: read={self.rows_read[table]} "
                         f"rejected={self.rows_rejected[table]} "
                         f"out_of_window={self.out_of_window[table]}")
        return "; ".join(parts)


def _frozen(arr, dtype) -> np.ndarray:
    arr = np.array(arr, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


class ClaimsDataset:
    """Immutable column store of patients and their dated events.

    Build instances with :meth:`from_arrays` or :meth:`from_records`, which
    canonicalise ordering and collapse duplicate (code, year) diagnoses.
    """

    def __init__(self, window: StudyWindow, patient_ids, birth_year, sex, died,
                 inpatient, dx_patient, dx_code, dx_year, dx_codes,
                 rx_patient, rx_code, rx_year, rx_codes, report=None):
        self.window = window
        self.patient_ids = _frozen(patient_ids, object)
        self.birth_year = _frozen(birth_year, np.int32)
        self.sex = _frozen(sex, np.int8)
        self.died = _frozen(died, bool)
        self.inpatient = _frozen(inpatient, bool)
        self.dx_patient = _frozen(dx_patient, np.int32)
        self.dx_code = _frozen(dx_code, np.int32)
        self.dx_year = _frozen(dx_year, np.int32)
        self.dx_codes: tuple[DiagnosisCode, ...] = tuple(DiagnosisCode(c) for c in dx_codes)
        self.rx_patient = _frozen(rx_patient, np.int32)
        self.rx_code = _frozen(rx_code, np.int32)
        self.rx_year = _frozen(rx_year, np.int32)
        self.rx_codes: tuple[AtcCode, ...] = tuple(AtcCode(c) for c in rx_codes)
        self.report: IngestReport | None = report

    # -- construction -----------------------------------------------------

    @classmethod
    def from_arrays(cls, window: StudyWindow, patient_ids, birth_year, sex, died,
                    inpatient, dx_patient, dx_codes, dx_year,
                    rx_patient=(), rx_codes=(), rx_year=(), report=None) -> "ClaimsDataset":
        """Build a canonical dataset.

        ``dx_codes``/``rx_codes`` are per-event code strings; event patient
        references are indices into ``patient_ids``.
        """
        patient_ids = np.asarray(patient_ids, dtype=object)
        if len(set(patient_ids.tolist())) != len(patient_ids):
            raise ClaimsDataError("patient ids are not unique")
        order = np.argsort(patient_ids.astype(str), kind="stable")
        rank = np.empty(len(order), dtype=np.int64)
        rank[order] = np.arange(len(order))

        dx_patient = rank[np.asarray(dx_patient, dtype=np.int64)]
        dx_vocab, dx_idx = np.unique(np.asarray(dx_codes, dtype="U3"), return_inverse=True)
        dx_year = np.asarray(dx_year, dtype=np.int64)
        if dx_patient.size:
            if dx_year.min() < window.first or dx_year.max() > window.last:
                raise ClaimsDataError(f"diagnosis year outside study window {window}")
            n_years = window.last - window.first + 1
            n_codes = len(dx_vocab)
            key = np.unique((dx_patient * n_codes + dx_idx.ravel()) * n_years
                            + (dx_year - window.first))
            dx_year = key % n_years + window.first
            key //= n_years
            dx_patient, dx_idx = np.divmod(key, n_codes)
        else:
            dx_idx = np.zeros(0, dtype=np.int64)

        rx_patient = rank[np.asarray(rx_patient, dtype=np.int64)]
        rx_vocab, rx_idx = np.unique(np.asarray(rx_codes, dtype="U7"), return_inverse=True)
        rx_idx = rx_idx.ravel()
        rx_year = np.asarray(rx_year, dtype=np.int64)
        if rx_year.size and (rx_year.min() < window.first or rx_year.max() > window.last):
            raise ClaimsDataError(f"prescription year outside study window {window}")
        rx_order = np.lexsort((rx_year, rx_idx, rx_patient))

        return cls(window, patient_ids[order], np.asarray(birth_year)[order],
                   np.asarray(sex)[order], np.asarray(died)[order],
                   np.asarray(inpatient)[order],
                   dx_patient, dx_idx, dx_year, dx_vocab.tolist(),
                   rx_patient[rx_order], rx_idx[rx_order], rx_year[rx_order],
                   rx_vocab.tolist(), report=report)

    @classmethod
    def from_records(cls, records: Iterable[PatientRecord], window: StudyWindow) -> "ClaimsDataset":
        records = list(records)
        dx_p, dx_c, dx_y, rx_p, rx_c, rx_y = [], [], [], [], [], []
        for i, rec in enumerate(records):
            for ev in rec.diagnoses:
                dx_p.append(i)
                dx_c.append(str(DiagnosisCode(ev.code)))
                dx_y.append(ev.year)
            for ev in rec.prescriptions:
                rx_p.append(i)
                rx_c.append(str(AtcCode(ev.code)))
                rx_y.append(ev.year)
        return cls.from_arrays(
            window,
            [r.patient_id for r in records],
            [r.birth_year for r in records],
            [r.sex.code for r in records],
            [r.died_in_window for r in records],
            [r.inpatient for r in records],
            dx_p, dx_c, dx_y, rx_p, rx_c, rx_y)

    def with_diagnosis_years(self, dx_year: np.ndarray) -> "ClaimsDataset":
        """Copy with diagnosis years replaced event-for-event (no re-sorting or dedup)."""
        dx_year = np.asarray(dx_year)
        if dx_year.shape != self.dx_year.shape:
            raise ValueError("year array does not match the diagnosis events")
        return ClaimsDataset(
            self.window, self.patient_ids, self.birth_year, self.sex, self.died,
            self.inpatient, self.dx_patient, self.dx_code, dx_year, self.dx_codes,
            self.rx_patient, self.rx_code, self.rx_year, self.rx_codes)

    def subset(self, patient_mask: np.ndarray) -> "ClaimsDataset":
        """Dataset restricted to the selected patients (order preserved)."""
        patient_mask = np.asarray(patient_mask, dtype=bool)
        new_index = np.cumsum(patient_mask) - 1
        keep_dx = patient_mask[self.dx_patient]
        keep_rx = patient_mask[self.rx_patient]
        return ClaimsDataset(
            self.window, self.patient_ids[patient_mask], self.birth_year[patient_mask],
            self.sex[patient_mask], self.died[patient_mask], self.inpatient[patient_mask],
            new_index[self.dx_patient[keep_dx]], self.dx_code[keep_dx],
            self.dx_year[keep_dx], self.dx_codes,
            new_index[self.rx_patient[keep_rx]], self.rx_code[keep_rx],
            self.rx_year[keep_rx], self.rx_codes)

    # -- access -----------------------------------------------------------

    def __len__(self) -> int:
        return len(self.patient_ids)

    @property
    def n_patients(self) -> int:
        return len(self.patient_ids)

    @cached_property
    def _id_index(self) -> dict:
        return {pid: i for i, pid in enumerate(self.patient_ids.tolist())}

    def index_of(self, patient_id: str) -> int:
        return self._id_index[patient_id]

    def code_index(self, code: str) -> int | None:
        """Vocabulary index of a diagnosis code, or None if absent."""
        i = int(np.searchsorted(np.asarray(self.dx_codes, dtype="U3"), code))
        if i < len(self.dx_codes) and self.dx_codes[i] == code:
            return i
        return None

    @cached_property
    def _dx_offsets(self) -> np.ndarray:
        return np.searchsorted(self.dx_patient, np.arange(self.n_patients + 1))

    @cached_property
    def _rx_offsets(self) -> np.ndarray:
        return np.searchsorted(self.rx_patient, np.arange(self.n_patients + 1))

    def record(self, i: int) -> PatientRecord:
        lo, hi = self._dx_offsets[i], self._dx_offsets[i + 1]
        dx = tuple(sorted(DiagnosisEvent(self.dx_codes[c], int(y))
                          for c, y in zip(self.dx_code[lo:hi], self.dx_year[lo:hi])))
        lo, hi = self._rx_offsets[i], self._rx_offsets[i + 1]
        rx = tuple(sorted(PrescriptionEvent(self.rx_codes[c], int(y))
                          for c, y in zip(self.rx_code[lo:hi], self.rx_year[lo:hi])))
        return PatientRecord(
            patient_id=str(self.patient_ids[i]), birth_year=int(self.birth_year[i]),
            sex=Sex.from_code(self.sex[i]), died_in_window=bool(self.died[i]),
            inpatient=bool(self.inpatient[i]), diagnoses=dx, prescriptions=rx)

    def __iter__(self) -> Iterator[PatientRecord]:
        return (self.record(i) for i in range(self.n_patients))

    def ages(self, reference_year: int) -> np.ndarray:
        ages = int(reference_year) - self.birth_year.astype(np.int64)
        if ages.size and ages.min() < 0:
            raise ClaimsDataError(f"reference year {reference_year} precedes a birth year")
        return ages

    # -- derived event views ----------------------------------------------

    @cached_property
    def presence(self) -> tuple[np.ndarray, np.ndarray]:
        """Unique (patient, code) pairs of diagnoses in any study year."""
        p, c = self.dx_patient, self.dx_code
        if p.size == 0:
            return p, c
        first = np.ones(p.size, dtype=bool)
        first[1:] = (p[1:] != p[:-1]) | (c[1:] != c[:-1])
        return p[first], c[first]

    @cached_property
    def _presence_starts(self) -> np.ndarray:
        p, c = self.dx_patient, self.dx_code
        first = np.ones(p.size, dtype=bool)
        if p.size:
            first[1:] = (p[1:] != p[:-1]) | (c[1:] != c[:-1])
        return np.flatnonzero(first)

    def presence_year_masks(self) -> np.ndarray:
        """Bit mask of diagnosis years per presence pair (bit k = first year + k)."""
        if self.dx_year.size == 0:
            return np.zeros(0, dtype=np.uint64)
        bits = np.left_shift(np.uint64(1), (self.dx_year - self.window.first).astype(np.uint64))
        return np.bitwise_or.reduceat(bits, self._presence_starts)

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(str(self.window).encode())
        h.update("\n".join(map(str, self.patient_ids.tolist())).encode())
        for arr in (self.birth_year, self.sex, self.died, self.inpatient,
                    self.dx_patient, self.dx_code, self.dx_year,
                    self.rx_patient, self.rx_code, self.rx_year):
            h.update(np.ascontiguousarray(arr).tobytes())
        h.update(",".join(self.dx_codes).encode())
        h.update(",".join(self.rx_codes).encode())
        return h.hexdigest()

    def equals(self, other: "ClaimsDataset") -> bool:
        return self.window == other.window and self.fingerprint() == other.fingerprint()


# -- ingestion -----------------------------------------------------------------


def _open_text(source: PathOrStream):
    if isinstance(source, (str, Path)):
        return open(source, "r", encoding="utf-8", newline=""), True
    return source, False


def _read_table(source: PathOrStream, columns: Sequence[str], name: str,
                chunksize: int) -> Iterator[pd.DataFrame]:
    handle, owned = _open_text(source)
    try:
        header = handle.readline().rstrip("\r\n")
        if header.split(",") != list(columns):
            raise ClaimsFormatError(
                f"{name}: expected header {','.join(columns)!r}, got {header!r}")
        try:
            reader = pd.read_csv(handle, header=None, names=list(columns) + list(_OVERFLOW),
                                 dtype=str, keep_default_na=False, na_filter=False,
                                 chunksize=chunksize, engine="c")
            for chunk in reader:
                yield chunk
        except pd.errors.EmptyDataError:
            return
        except pd.errors.ParserError as exc:
            raise ClaimsFormatError(f"{name}: {exc}") from exc
    finally:
        if owned:
            handle.close()


class _Rejects:
    def __init__(self, table: str, report: IngestReport):
        self.table = table
        self.report = report

    def apply(self, frame: pd.DataFrame, bad: pd.Series, reason: str) -> pd.DataFrame:
        n = int(bad.sum())
        if n:
            self.report.reasons[(self.table, reason)] += n
            self.report.rows_rejected[self.table] += n
            log.debug("%s: rejected %d rows (%s), e.g. %s", self.table, n, reason,
                      frame.loc[bad].head(3).to_dict("records"))
            frame = frame.loc[~bad]
        return frame


def _common_checks(chunk: pd.DataFrame, rejects: _Rejects) -> pd.DataFrame:
    extra = (chunk[list(_OVERFLOW)] != "").any(axis=1)
    chunk = rejects.apply(chunk, extra, "field_count")
    chunk = rejects.apply(chunk, ~chunk["patient_id"].str.fullmatch(_ID_PATTERN), "bad_patient_id")
    return chunk


def _patients_chunks(source, window, report, chunksize):
    rejects = _Rejects("patients", report)
    for chunk in _read_table(source, PATIENT_COLUMNS, "patients", chunksize):
        report.rows_read["patients"] += len(chunk)
        chunk = _common_checks(chunk, rejects)
        chunk = rejects.apply(chunk, ~chunk["sex"].isin(["M", "F"]), "unknown_sex")
        bad_bool = ~(chunk["died_in_window"].isin(["0", "1"]) & chunk["inpatient"].isin(["0", "1"]))
        chunk = rejects.apply(chunk, bad_bool, "bad_boolean")
        chunk = rejects.apply(chunk, ~chunk["birth_year"].str.fullmatch(_YEAR_PATTERN), "bad_birth_year")
        age = window.first - chunk["birth_year"].astype(np.int64)
        chunk = rejects.apply(chunk, (age < 0) | (age > MAX_RECORDED_AGE), "age_out_of_range")
        yield chunk[list(PATIENT_COLUMNS)]


def _event_chunks(source, table, columns, code_col, pattern, width, window, report, chunksize):
    rejects = _Rejects(table, report)
    for chunk in _read_table(source, columns, table, chunksize):
        report.rows_read[table] += len(chunk)
        chunk = _common_checks(chunk, rejects)
        codes = chunk[code_col].str.strip().str.upper()
        bad = ~codes.str.fullmatch(pattern)
        chunk = rejects.apply(chunk.assign(**{code_col: codes}), bad, "bad_code")
        chunk = rejects.apply(chunk, ~chunk["year"].str.fullmatch(_YEAR_PATTERN), "bad_year")
        codes = chunk[code_col].str.replace(".", "", regex=False).str.slice(0, width)
        years = chunk["year"].astype(np.int64)
        inside = (years >= window.first) & (years <= window.last)
        n_out = int((~inside).sum())
        if n_out:
            report.out_of_window[table] += n_out
        yield pd.DataFrame({"patient_id": chunk["patient_id"][inside],
                            code_col: codes[inside], "year": years[inside]})


def _concat(frames: list[pd.DataFrame], columns) -> pd.DataFrame:
    if not frames:
        return pd.DataFrame({c: pd.Series(dtype=object) for c in columns})
    return pd.concat(frames, ignore_index=True)


def ingest_patients(patient_file: PathOrStream, diagnosis_file: PathOrStream,
                    prescription_file: PathOrStream, window: StudyWindow,
                    chunksize: int = 500_000) -> ClaimsDataset:
    """Read and validate the three claims tables into a :class:`ClaimsDataset`.

    Rejected rows are counted in ``dataset.report``; a malformed header or a
    rejection rate above 10% in any table raises.
    """
    report = IngestReport()

    def load_patients():
        return _concat(list(_patients_chunks(patient_file, window, report, chunksize)),
                       PATIENT_COLUMNS)

    def load_dx():
        return _concat(list(_event_chunks(
            diagnosis_file, "diagnoses", DIAGNOSIS_COLUMNS, "icd10", _ICD_INPUT_PATTERN,
            3, window, report, chunksize)), DIAGNOSIS_COLUMNS)

    def load_rx():
        return _concat(list(_event_chunks(
            prescription_file, "prescriptions", PRESCRIPTION_COLUMNS, "atc",
            _ATC_RE.pattern, 7, window, report, chunksize)), PRESCRIPTION_COLUMNS)

    with ThreadPoolExecutor(max_workers=3) as pool:
        futures = [pool.submit(f) for f in (load_patients, load_dx, load_rx)]
        patients, dx, rx = [f.result() for f in futures]

    dup = patients["patient_id"].duplicated(keep=False)
    if dup.any():
        n = int(dup.sum())
        report.reasons[("patients", "duplicate_id")] += n
        report.rows_rejected["patients"] += n
        patients = patients.loc[~dup]
    patients = patients.sort_values("patient_id", kind="stable").reset_index(drop=True)
    id_index = pd.Index(patients["patient_id"])

    def join(events: pd.DataFrame, table: str) -> np.ndarray:
        idx = id_index.get_indexer(events["patient_id"])
        unknown = idx < 0
        if unknown.any():
            n = int(unknown.sum())
            report.reasons[(table, "unknown_patient")] += n
            report.rows_rejected[table] += n
        return idx

    dx_idx = join(dx, "diagnoses")
    rx_idx = join(rx, "prescriptions")

    for table in ("patients", "diagnoses", "prescriptions"):
        read = report.rows_read[table]
        if read and report.rows_rejected[table] > REJECT_FRACTION_LIMIT * read:
            raise ClaimsDataError(
                f"{table}: {report.rows_rejected[table]} of {read} rows rejected "
                f"(limit {REJECT_FRACTION_LIMIT:.0%}); reasons: "
                + ", ".join(f"{r}={n}" for (t, r), n in sorted(report.reasons.items()) if t == table))
    for (table, reason), n in sorted(report.reasons.items()):
        log.warning("%s: %d rows rejected (%s)", table, n, reason)
    for table, n in sorted(report.out_of_window.items()):
        log.warning("%s: %d events outside study window %s dropped", table, n, window)

    dx_keep = dx_idx >= 0
    rx_keep = rx_idx >= 0
    n_dx = int(dx_keep.sum())
    dataset = ClaimsDataset.from_arrays(
        window,
        patients["patient_id"].to_numpy(dtype=object),
        patients["birth_year"].astype(np.int64).to_numpy(),
        (patients["sex"] == "F").to_numpy().astype(np.int8),
        (patients["died_in_window"] == "1").to_numpy(),
        (patients["inpatient"] == "1").to_numpy(),
        dx_idx[dx_keep], dx["icd10"].to_numpy(dtype="U3")[dx_keep],
        dx["year"].to_numpy()[dx_keep],
        rx_idx[rx_keep], rx["atc"].to_numpy(dtype="U7")[rx_keep],
        rx["year"].to_numpy()[rx_keep],
        report=report)
    report.duplicates_collapsed = n_dx - len(dataset.dx_year)
    ages = dataset.ages(window.first)
    report.age_clamped = int((ages >= MAX_AGE).sum())
    return dataset


def read_dataset(directory: str | Path, window: StudyWindow, **kwargs) -> ClaimsDataset:
    directory = Path(directory)
    return ingest_patients(directory / "patients.csv", directory / "diagnoses.csv",
                           directory / "prescriptions.csv", window, **kwargs)


def write_dataset(dataset: ClaimsDataset, directory: str | Path) -> dict[str, Path]:
    """Write the three-table CSV form; re-ingesting yields an equal dataset."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    ids = dataset.patient_ids
    paths = {name: directory / f"{name}.csv"
             for name in ("patients", "diagnoses", "prescriptions")}
    pd.DataFrame({
        "patient_id": ids,
        "birth_year": dataset.birth_year,
        "sex": np.where(dataset.sex == 1, "F", "M"),
        "died_in_window": dataset.died.astype(np.int8),
        "inpatient": dataset.inpatient.astype(np.int8),
    }).to_csv(paths["patients"], index=False, lineterminator="\n")
    dx_vocab = np.asarray(dataset.dx_codes, dtype="U3")
    pd.DataFrame({
        "patient_id": ids[dataset.dx_patient],
        "icd10": dx_vocab[dataset.dx_code] if dx_vocab.size else np.zeros(0, "U3"),
        "year": dataset.dx_year,
    }).to_csv(paths["diagnoses"], index=False, lineterminator="\n")
    rx_vocab = np.asarray(dataset.rx_codes, dtype="U7")
    pd.DataFrame({
        "patient_id": ids[dataset.rx_patient],
        "atc": rx_vocab[dataset.rx_code] if rx_vocab.size else np.zeros(0, "U7"),
        "year": dataset.rx_year,
    }).to_csv(paths["prescriptions"], index=False, lineterminator="\n")
    return paths
