"""Synthetic claims populations with planted, known effects.

Patients are sampled independently.  Each diagnosis is either *planted*
(prevalence among an index disease's cases = target RR x control prevalence,
optionally skewed by sex and with a planted temporal order) or *null*
(prevalence independent of everything).  The manifest written next to the
data lists every planted parameter.
"""
from __future__ import annotations

import configparser
import itertools
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .claims import (AGE_GROUP_WIDTH, AGE_GROUPS, N_AGE_GROUPS, AgeGroup, ClaimsDataset,
                     DiagnosisCode, StudyWindow, age_group_indices, write_dataset)
from .cohort import DEFAULT_EXCLUDED_CHAPTERS, CohortAssignment
from .tsv import fmt_float, read_tsv, write_tsv

CHUNK_SIZE = 100_000
MANIFEST_COLUMNS = ("kind", "code", "index", "age_group", "parameter", "value")
DEMOGRAPHIC_COLUMNS = ("age_group", "sex", "n", "share", "inpatient_share",
                       "outpatient_share", "inpatient_fraction", "case_fraction")
BACKGROUND_ATC = tuple(f"{g}{n:02d}" for g in "BCDHJLMNR" for n in (1, 2, 3, 5))


class GeneratorSpecError(ValueError):
    pass


def _per_group(value) -> np.ndarray:
    """Expand a scalar or {group index: value} mapping (key -1 = default) to 22 values."""
    if isinstance(value, Mapping):
        out = np.full(N_AGE_GROUPS, float(value.get(-1, np.nan)))
        for k, v in value.items():
            if k >= 0:
                out[k] = float(v)
        if np.isnan(out).any():
            raise GeneratorSpecError("per-age-group value needs a '*' default or all 22 groups")
        return out
    return np.full(N_AGE_GROUPS, float(value))


@dataclass(frozen=True)
class IndexDisease:
    code: str
    prevalence: object = 0.05  # scalar or {group index: p}
    atc_prob: float = 0.9
    atc_code: str = "A10BA02"

    def prevalence_by_group(self) -> np.ndarray:
        return _per_group(self.prevalence)


@dataclass(frozen=True)
class PlantedEffect:
    diagnosis: str
    index: str
    baseline: object = 0.05  # control prevalence, scalar or per group
    target_rr: object = 1.0  # scalar or per group
    gender_skew: float | None = None  # female/male prevalence multiplier
    index_first_prob: float | None = None
    other_first_prob: float | None = None

    @property
    def temporal(self) -> bool:
        return self.index_first_prob is not None or self.other_first_prob is not None

    def control_prevalence(self) -> np.ndarray:
        return _per_group(self.baseline)

    def rr_by_group(self) -> np.ndarray:
        return _per_group(self.target_rr)


@dataclass(frozen=True)
class NullDiagnoses:
    count: int = 0
    prevalence: tuple[float, float] = (0.02, 0.02)  # uniform range
    codes: tuple[str, ...] = ()  # explicit codes; generated when empty


@dataclass(frozen=True)
class GeneratorSpec:
    population_size: int
    seed: int
    window: StudyWindow = StudyWindow(2006, 2007)
    age_pyramid: object = 1.0  # weights per group; scalar = uniform over 0-90
    sex_ratio: float = 0.5  # fraction female
    indices: tuple[IndexDisease, ...] = ()
    planted_effects: tuple[PlantedEffect, ...] = ()
    null_diagnoses: NullDiagnoses = NullDiagnoses()
    inpatient_rate: float = 1.0
    death_rate: float = 0.0
    # chance a diagnosis is recorded in a given year, scalar or one value per
    # window year; None ramps from 0.4 to 0.9 so later years carry more records
    year_prob: object = None
    prescriptions_mean: float = 2.0

    def pyramid(self) -> np.ndarray:
        if isinstance(self.age_pyramid, Mapping):
            weights = np.zeros(N_AGE_GROUPS)
            for k, v in self.age_pyramid.items():
                if k < 0:
                    weights[:] = float(v)
            for k, v in self.age_pyramid.items():
                if k >= 0:
                    weights[k] = float(v)
        else:
            weights = np.zeros(N_AGE_GROUPS)
            weights[:18] = float(self.age_pyramid)
        return weights

    def year_probs(self) -> np.ndarray:
        n_years = len(self.window.years)
        if self.year_prob is None:
            return np.linspace(0.4, 0.9, n_years) if n_years > 1 else np.array([0.9])
        probs = np.atleast_1d(np.asarray(self.year_prob, dtype=np.float64))
        if probs.size == 1:
            return np.full(n_years, probs[0])
        if probs.size != n_years:
            raise GeneratorSpecError(f"year_prob needs one value per window year ({n_years})")
        return probs

    def null_codes(self) -> list[str]:
        if self.null_diagnoses.codes:
            return list(self.null_diagnoses.codes)
        taken = {i.code for i in self.indices} | {e.diagnosis for e in self.planted_effects}
        pool = (f"{letter}{n:02d}" for letter in "ABCDEFGHIJKLMNPQU"
                if letter not in DEFAULT_EXCLUDED_CHAPTERS for n in range(100))
        # diabetes categories E10-E14 never serve as null diagnoses
        codes = [c for c in pool if c not in taken and not ("E10" <= c <= "E14")]
        if self.null_diagnoses.count > len(codes):
            raise GeneratorSpecError(f"at most {len(codes)} null diagnoses can be generated")
        return codes[: self.null_diagnoses.count]

    def validate(self) -> None:
        if self.population_size < 0:
            raise GeneratorSpecError("population_size must be >= 0")
        if not 0.0 <= self.sex_ratio <= 1.0:
            raise GeneratorSpecError("sex_ratio must lie in [0, 1]")
        for name in ("inpatient_rate", "death_rate"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise GeneratorSpecError(f"{name} must lie in [0, 1]")
        year_probs = self.year_probs()
        if ((year_probs < 0) | (year_probs > 1)).any() or not (year_probs > 0).any():
            raise GeneratorSpecError("year_prob values must lie in [0, 1], at least one positive")
        weights = self.pyramid()
        if (weights < 0).any() or weights.sum() <= 0:
            raise GeneratorSpecError("age pyramid weights must be non-negative with positive sum")
        index_codes = [i.code for i in self.indices]
        if len(set(index_codes)) != len(index_codes):
            raise GeneratorSpecError("duplicate index disease")
        total = np.zeros(N_AGE_GROUPS)
        for idx in self.indices:
            DiagnosisCode(idx.code)
            prev = idx.prevalence_by_group()
            if (prev < 0).any():
                raise GeneratorSpecError(f"negative prevalence for index {idx.code}")
            total += prev
            if not 0.0 <= idx.atc_prob <= 1.0:
                raise GeneratorSpecError(f"atc_prob of {idx.code} outside [0, 1]")
        if (total > 1.0).any():
            raise GeneratorSpecError("index prevalences sum to more than 1 in an age group")
        planted = [e.diagnosis for e in self.planted_effects]
        if len(set(planted)) != len(planted):
            raise GeneratorSpecError("duplicate planted diagnosis")
        temporal_per_index = {}
        for e in self.planted_effects:
            DiagnosisCode(e.diagnosis)
            if e.index not in index_codes:
                raise GeneratorSpecError(f"effect {e.diagnosis}: unknown index {e.index}")
            if e.diagnosis in index_codes:
                raise GeneratorSpecError(f"effect {e.diagnosis} reuses an index code")
            base, rr = e.control_prevalence(), e.rr_by_group()
            skew = 1.0 if e.gender_skew is None else e.gender_skew
            if (base < 0).any() or (rr <= 0).any() or skew <= 0:
                raise GeneratorSpecError(f"effect {e.diagnosis}: prevalences and rr must be positive")
            worst = base * rr * max(skew, 1.0)
            bad = np.flatnonzero(worst > 1.0)
            if bad.size:
                g = AGE_GROUPS[bad[0]]
                raise GeneratorSpecError(
                    f"effect {e.diagnosis}: infeasible prevalence in age group {g.label}: "
                    f"rr {rr[bad[0]]} x baseline {base[bad[0]]} x skew {max(skew, 1.0)} > 1")
            if (base * max(skew, 1.0) > 1.0).any():
                raise GeneratorSpecError(f"effect {e.diagnosis}: control prevalence above 1")
            if e.temporal:
                ip = e.index_first_prob or 0.0
                op = e.other_first_prob or 0.0
                if ip < 0 or op < 0 or ip + op > 1.0:
                    raise GeneratorSpecError(f"effect {e.diagnosis}: temporal probabilities invalid")
                if len(self.window.years) < 2 and ip + op > 0:
                    raise GeneratorSpecError("temporal effects need a window of two or more years")
                if e.index in temporal_per_index:
                    raise GeneratorSpecError(f"index {e.index} has more than one temporal effect")
                temporal_per_index[e.index] = e.diagnosis
        lo, hi = self.null_diagnoses.prevalence
        if not 0.0 <= lo <= hi <= 1.0:
            raise GeneratorSpecError("null prevalence range must satisfy 0 <= lo <= hi <= 1")
        null = self.null_codes()
        for code in null:
            DiagnosisCode(code)
        if set(null) & (set(planted) | set(index_codes)):
            raise GeneratorSpecError("null codes overlap planted or index codes")


@dataclass
class GroundTruth:
    rows: list[tuple[str, str, str, str, str, str]] = field(default_factory=list)

    def add(self, kind, code="", index="", age_group="*", parameter="", value=""):
        self.rows.append((kind, code, index, age_group, parameter,
                          value if isinstance(value, str) else fmt_float(value)))

    def lookup(self, kind: str, code: str, parameter: str, age_group: str = "*") -> str:
        for row in self.rows:
            if row[0] == kind and row[1] == code and row[4] == parameter and row[3] == age_group:
                return row[5]
        raise KeyError((kind, code, parameter, age_group))

    def write(self, path: str | Path) -> Path:
        return write_tsv(path, MANIFEST_COLUMNS, self.rows)

    @classmethod
    def read(cls, path: str | Path) -> "GroundTruth":
        _, rows = read_tsv(path)
        return cls([tuple(r) for r in rows])


def _manifest(spec: GeneratorSpec, null_codes, null_prev) -> GroundTruth:
    truth = GroundTruth()
    truth.add("population", parameter="size", value=str(spec.population_size))
    truth.add("population", parameter="seed", value=str(spec.seed))
    truth.add("population", parameter="window", value=str(spec.window))
    truth.add("population", parameter="sex_ratio", value=spec.sex_ratio)
    truth.add("population", parameter="inpatient_rate", value=spec.inpatient_rate)
    truth.add("population", parameter="death_rate", value=spec.death_rate)
    weights = spec.pyramid()
    for g in AGE_GROUPS:
        if weights[g.index] > 0:
            truth.add("population", age_group=g.label, parameter="age_weight",
                      value=weights[g.index] / weights.sum())
    for idx in spec.indices:
        prev = idx.prevalence_by_group()
        for g in AGE_GROUPS:
            truth.add("index", idx.code, age_group=g.label, parameter="prevalence", value=prev[g.index])
    for e in spec.planted_effects:
        base, rr = e.control_prevalence(), e.rr_by_group()
        for g in AGE_GROUPS:
            truth.add("effect", e.diagnosis, e.index, g.label, "target_rr", rr[g.index])
            truth.add("effect", e.diagnosis, e.index, g.label, "control_prevalence", base[g.index])
        truth.add("effect", e.diagnosis, e.index, parameter="gender_skew",
                  value=1.0 if e.gender_skew is None else e.gender_skew)
        if e.temporal:
            truth.add("effect", e.diagnosis, e.index, parameter="index_first_prob",
                      value=e.index_first_prob or 0.0)
            truth.add("effect", e.diagnosis, e.index, parameter="other_first_prob",
                      value=e.other_first_prob or 0.0)
    for code, p in zip(null_codes, null_prev):
        truth.add("null", code, parameter="prevalence", value=p)
    return truth


def _random_year_sets(rng, k: int, n_years: int, year_prob: np.ndarray) -> np.ndarray:
    """Non-empty random subsets of the window as bit masks, one per carrier."""
    bits = rng.random((k, n_years)) < year_prob
    empty = ~bits.any(axis=1)
    if empty.any():
        pick = rng.choice(n_years, size=int(empty.sum()), p=year_prob / year_prob.sum())
        bits[np.flatnonzero(empty), pick] = True
    return (bits * (1 << np.arange(n_years))).sum(axis=1).astype(np.int64)


def _chronic_masks(onset: np.ndarray, n_years: int) -> np.ndarray:
    """Bit mask of years from ``onset`` (offset) to the end of the window."""
    full = (1 << n_years) - 1
    return full & ~((1 << onset.astype(np.int64)) - 1)


def _ordered_onsets(rng, k: int, n_years: int) -> tuple[np.ndarray, np.ndarray]:
    """Uniform random pairs (early, late) of distinct year offsets, early < late."""
    pairs = np.array([(i, j) for i in range(n_years) for j in range(i + 1, n_years)])
    pick = pairs[rng.integers(0, len(pairs), k)]
    return pick[:, 0], pick[:, 1]


def _expand(patients: np.ndarray, codes: np.ndarray, masks: np.ndarray, first_year: int,
            n_years: int):
    """Turn (patient, code, year mask) triples into one event per set bit."""
    out_p, out_c, out_y = [], [], []
    for offset in range(n_years):
        hit = (masks >> offset) & 1 == 1
        out_p.append(patients[hit])
        out_c.append(codes[hit])
        out_y.append(np.full(int(hit.sum()), first_year + offset, dtype=np.int64))
    return np.concatenate(out_p), np.concatenate(out_c), np.concatenate(out_y)


def _generate_chunk(spec: GeneratorSpec, chunk: int, start: int, n: int,
                    dx_vocab: list[str], null_prev: np.ndarray):
    rng = np.random.default_rng([spec.seed, chunk])
    window = spec.window
    n_years = len(window.years)
    weights = spec.pyramid()
    group = rng.choice(N_AGE_GROUPS, size=n, p=weights / weights.sum())
    age = group * AGE_GROUP_WIDTH + rng.integers(0, AGE_GROUP_WIDTH, n)
    female = rng.random(n) < spec.sex_ratio
    inpatient = rng.random(n) < spec.inpatient_rate
    died = rng.random(n) < spec.death_rate

    # mutually exclusive index status: -1 = none, k = spec.indices[k]
    index_of = np.full(n, -1, dtype=np.int64)
    u = rng.random(n)
    cum = np.zeros(n)
    for k, idx in enumerate(spec.indices):
        prev = idx.prevalence_by_group()[group]
        index_of[(u >= cum) & (u < cum + prev)] = k
        cum += prev

    year_prob = spec.year_probs()
    code_id = {c: i for i, c in enumerate(dx_vocab)}
    pat, code, mask, fixed = [], [], [], []
    index_masks, index_fixed = {}, {}
    for k, idx in enumerate(spec.indices):
        who = np.flatnonzero(index_of == k)
        index_masks[k] = (who, _random_year_sets(rng, who.size, n_years, year_prob))
        index_fixed[k] = np.zeros(who.size, dtype=bool)

    for e in spec.planted_effects:
        k = [i.code for i in spec.indices].index(e.index)
        is_case = index_of == k
        p = e.control_prevalence()[group]
        if e.gender_skew is not None:
            p = np.where(female, p * e.gender_skew, p)
        p = np.where(is_case, p * e.rr_by_group()[group], p)
        who = np.flatnonzero(rng.random(n) < p)
        x_mask = _random_year_sets(rng, who.size, n_years, year_prob)
        x_fixed = np.zeros(who.size, dtype=bool)
        if e.temporal:
            case_who, d_mask = index_masks[k]
            comorbid = np.flatnonzero(is_case[who])  # positions within who
            pos_in_case = np.searchsorted(case_who, who[comorbid])
            r = rng.random(comorbid.size)
            ip, op = e.index_first_prob or 0.0, e.other_first_prob or 0.0
            early, late = _ordered_onsets(rng, comorbid.size, n_years)
            index_first = r < ip
            other_first = (r >= ip) & (r < ip + op)
            d_new = d_mask[pos_in_case]
            x_new = x_mask[comorbid]
            d_new = np.where(index_first, _chronic_masks(early, n_years), d_new)
            x_new = np.where(index_first, _chronic_masks(late, n_years), x_new)
            d_new = np.where(other_first, _chronic_masks(late, n_years), d_new)
            x_new = np.where(other_first, _chronic_masks(early, n_years), x_new)
            d_mask[pos_in_case] = d_new
            x_mask[comorbid] = x_new
            ordered = index_first | other_first
            index_fixed[k][pos_in_case[ordered]] = True
            x_fixed[comorbid[ordered]] = True
        pat.append(who)
        code.append(np.full(who.size, code_id[e.diagnosis]))
        mask.append(x_mask)
        fixed.append(x_fixed)

    for k, idx in enumerate(spec.indices):
        who, d_mask = index_masks[k]
        pat.append(who)
        code.append(np.full(who.size, code_id[idx.code]))
        mask.append(d_mask)
        fixed.append(index_fixed[k])

    null_codes = spec.null_codes()
    for j, c in enumerate(null_codes):
        k = rng.binomial(n, null_prev[j])
        who = np.sort(rng.choice(n, size=k, replace=False)) if k else np.zeros(0, dtype=np.int64)
        pat.append(who)
        code.append(np.full(who.size, code_id[c]))
        mask.append(_random_year_sets(rng, who.size, n_years, year_prob))
        fixed.append(np.zeros(who.size, dtype=bool))

    pat = np.concatenate(pat).astype(np.int64)
    code = np.concatenate(code).astype(np.int64)
    mask = np.concatenate(mask)
    fixed = np.concatenate(fixed)
    free_p, free_c, free_y = _expand(pat[~fixed], code[~fixed], mask[~fixed], window.first, n_years)
    # permute years within each patient so that unplanted records are
    # exchangeable over time; planted orderings are added afterwards
    by_patient = np.argsort(free_p, kind="stable")
    shuffled = np.lexsort((rng.random(free_p.size), free_p))
    years = np.empty_like(free_y)
    years[by_patient] = free_y[shuffled]
    fix_p, fix_c, fix_y = _expand(pat[fixed], code[fixed], mask[fixed], window.first, n_years)
    dx_p = np.concatenate([free_p, fix_p])
    dx_c = np.concatenate([free_c, fix_c])
    dx_y = np.concatenate([years, fix_y])

    # prescriptions: A10 for most index patients plus background drugs
    rx_p, rx_c, rx_y = [], [], []
    for k, idx in enumerate(spec.indices):
        who = np.flatnonzero((index_of == k) & (rng.random(n) < idx.atc_prob))
        rx_p.append(who)
        rx_c.append(np.full(who.size, idx.atc_code, dtype="U7"))
        rx_y.append(rng.integers(window.first, window.last + 1, who.size))
    n_rx = rng.poisson(spec.prescriptions_mean, n)
    who = np.repeat(np.arange(n), n_rx)
    rx_p.append(who)
    rx_c.append(np.asarray(BACKGROUND_ATC, dtype="U7")[rng.integers(0, len(BACKGROUND_ATC), who.size)])
    rx_y.append(rng.integers(window.first, window.last + 1, who.size))

    return dict(
        birth_year=window.first - age, female=female, inpatient=inpatient, died=died,
        dx_p=dx_p + start, dx_c=dx_c, dx_y=dx_y,
        rx_p=np.concatenate(rx_p).astype(np.int64) + start,
        rx_c=np.concatenate(rx_c), rx_y=np.concatenate(rx_y).astype(np.int64))


def generate(spec: GeneratorSpec, threads: int = 1) -> tuple[ClaimsDataset, GroundTruth]:
    """Sample a dataset for ``spec``; identical output for any thread count."""
    spec.validate()
    null_codes = spec.null_codes()
    lo, hi = spec.null_diagnoses.prevalence
    null_prev = np.random.default_rng([spec.seed, 2**31]).uniform(lo, hi, len(null_codes))
    dx_vocab = sorted({i.code for i in spec.indices} | {e.diagnosis for e in spec.planted_effects}
                      | set(null_codes))
    n = spec.population_size
    starts = list(range(0, n, CHUNK_SIZE))
    jobs = [(c, s, min(CHUNK_SIZE, n - s)) for c, s in enumerate(starts)]

    def run(job):
        return _generate_chunk(spec, *job, dx_vocab, null_prev)

    if threads > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(run, jobs))
    else:
        parts = [run(job) for job in jobs]

    def cat(key, dtype):
        arrays = [p[key] for p in parts]
        return np.concatenate(arrays).astype(dtype) if arrays else np.zeros(0, dtype=dtype)

    width = max(7, len(str(max(n, 1))))
    ids = np.array([f"P{i:0{width}d}" for i in range(n)], dtype=object)
    vocab = np.asarray(dx_vocab, dtype="U3")
    dx_c = cat("dx_c", np.int64)
    dataset = ClaimsDataset.from_arrays(
        spec.window, ids, cat("birth_year", np.int64), cat("female", np.int8),
        cat("died", bool), cat("inpatient", bool),
        cat("dx_p", np.int64), vocab[dx_c] if dx_c.size else np.zeros(0, "U3"), cat("dx_y", np.int64),
        cat("rx_p", np.int64), cat("rx_c", "U7"), cat("rx_y", np.int64))
    return dataset, _manifest(spec, null_codes, null_prev)


# -- spec files -----------------------------------------------------------------


def _parse_group_key(key: str) -> int:
    key = key.strip()
    if key == "*":
        return -1
    lower = int(key.split("-")[0])
    return AgeGroup(lower).index


def parse_group_values(text: str):
    """``0.05`` or ``60-65:4.0, *:1.0`` -> float or {group index: value}."""
    text = text.strip()
    if ":" not in text:
        return float(text)
    out = {}
    for part in text.split(","):
        if part.strip():
            key, _, value = part.partition(":")
            out[_parse_group_key(key)] = float(value)
    return out


def _optional_float(section, key):
    return float(section[key]) if key in section and section[key].strip() else None


def _optional_floats(section, key):
    if key not in section or not section[key].strip():
        return None
    values = tuple(float(v) for v in section[key].split(","))
    return values[0] if len(values) == 1 else values


def parse_spec(text: str, source: str = "<spec>") -> GeneratorSpec:
    """Parse the INI-style generator spec format (see ``data/paper_like.spec``)."""
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    parser.optionxform = str
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise GeneratorSpecError(str(exc)) from exc
    if "population" not in parser:
        raise GeneratorSpecError(f"{source}: missing [population] section")
    pop = parser["population"]
    try:
        indices, effects = [], []
        for name in parser.sections():
            sec = parser[name]
            if name.startswith("index:"):
                indices.append(IndexDisease(
                    code=name.split(":", 1)[1].strip(),
                    prevalence=parse_group_values(sec.get("prevalence", "0.05")),
                    atc_prob=float(sec.get("atc_prob", "0.9")),
                    atc_code=sec.get("atc_code", "A10BA02").strip()))
            elif name.startswith("effect:"):
                effects.append(PlantedEffect(
                    diagnosis=name.split(":", 1)[1].strip(),
                    index=sec.get("index", "").strip(),
                    baseline=parse_group_values(sec.get("baseline", "0.05")),
                    target_rr=parse_group_values(sec.get("rr", "1.0")),
                    gender_skew=_optional_float(sec, "gender_skew"),
                    index_first_prob=_optional_float(sec, "index_first_prob"),
                    other_first_prob=_optional_float(sec, "other_first_prob")))
            elif name not in ("population", "null"):
                raise GeneratorSpecError(f"{source}: unknown section [{name}]")
        if indices:
            effects = [e if e.index else PlantedEffect(**{**e.__dict__, "index": indices[0].code})
                       for e in effects]
        null = NullDiagnoses()
        if "null" in parser:
            sec = parser["null"]
            lo, _, hi = sec.get("prevalence", "0.02").partition("-")
            codes = tuple(c.strip() for c in sec.get("codes", "").split(",") if c.strip())
            null = NullDiagnoses(count=int(sec.get("count", str(len(codes)))),
                                 prevalence=(float(lo), float(hi or lo)), codes=codes)
        pyramid_text = pop.get("age_pyramid", "uniform").strip()
        pyramid = 1.0 if pyramid_text == "uniform" else parse_group_values(pyramid_text)
        spec = GeneratorSpec(
            population_size=int(pop.get("size", "0")),
            seed=int(pop.get("seed", "0")),
            window=StudyWindow.parse(pop.get("window", "2006-2007")),
            age_pyramid=pyramid,
            sex_ratio=float(pop.get("sex_ratio", "0.5")),
            indices=tuple(indices), planted_effects=tuple(effects), null_diagnoses=null,
            inpatient_rate=float(pop.get("inpatient_rate", "1.0")),
            death_rate=float(pop.get("death_rate", "0.0")),
            year_prob=_optional_floats(pop, "year_prob"),
            prescriptions_mean=float(pop.get("prescriptions_mean", "2.0")))
    except GeneratorSpecError:
        raise
    except ValueError as exc:
        raise GeneratorSpecError(f"{source}: {exc}") from exc
    spec.validate()
    return spec


def load_spec(path: str | Path | None = None) -> GeneratorSpec:
    """Read a spec file; ``None`` loads the bundled ``paper_like.spec``."""
    if path is None:
        text = resources.files("comorbidscan").joinpath("data/paper_like.spec").read_text("utf-8")
        return parse_spec(text, "paper_like.spec")
    return parse_spec(Path(path).read_text(encoding="utf-8"), str(path))


def write_generated(dataset: ClaimsDataset, truth: GroundTruth, directory: str | Path) -> dict[str, Path]:
    paths = write_dataset(dataset, directory)
    paths["manifest"] = truth.write(Path(directory) / "manifest.tsv")
    return paths


# -- demographics ---------------------------------------------------------------


def demographic_summary(dataset: ClaimsDataset, reference_year: int | None = None,
                        assignment: CohortAssignment | None = None) -> list[dict]:
    """Per (age group, sex) population shares and inpatient fractions.

    ``share`` = n / N; it splits exactly into ``inpatient_share`` and
    ``outpatient_share``.  With an assignment, ``case_fraction`` is the share
    of cases among the cohort's eligible patients in the cell.
    """
    if dataset.n_patients == 0:
        return []
    if reference_year is None:
        reference_year = dataset.window.first
    group = age_group_indices(dataset.ages(reference_year)).astype(np.int64)
    key = group * 2 + dataset.sex
    size = N_AGE_GROUPS * 2
    n = np.bincount(key, minlength=size)
    inp = np.bincount(key[dataset.inpatient], minlength=size)
    total = dataset.n_patients
    if assignment is not None:
        cases = np.bincount(key[assignment.case_mask], minlength=size)
        eligible = np.bincount(key[assignment.eligible_mask], minlength=size)
    rows = []
    for g, s in itertools.product(range(N_AGE_GROUPS), (0, 1)):
        k = g * 2 + s
        if n[k] == 0:
            continue
        row = {"age_group": AGE_GROUPS[g].label, "sex": "MF"[s], "n": int(n[k]),
               "share": n[k] / total, "inpatient_share": inp[k] / total,
               "outpatient_share": (n[k] - inp[k]) / total,
               "inpatient_fraction": inp[k] / n[k], "case_fraction": math.nan}
        if assignment is not None and eligible[k]:
            row["case_fraction"] = cases[k] / eligible[k]
        rows.append(row)
    return rows


def export_demographics(rows: Sequence[dict], path: str | Path) -> Path:
    def fmt(v):
        return v if isinstance(v, (str, int)) else fmt_float(v)
    return write_tsv(path, DEMOGRAPHIC_COLUMNS, ([fmt(r[c]) for c in DEMOGRAPHIC_COLUMNS] for r in rows))
