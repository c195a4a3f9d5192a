"""Batch entry point: ``comorbidscan {generate,scan,leadlag,all}``.

Runs are driven by one INI-style config file; see ``example_config()`` for
the recognised sections and keys.  Exit status 0 means success, 1 a runtime
failure and 2 a configuration or input validation failure.
"""
from __future__ import annotations

import argparse
import configparser
import logging
import os
import re
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path

from . import __version__
from .claims import ClaimsDataError, ClaimsFormatError, StudyWindow, read_dataset
from .cohort import (DEFAULT_EXCLUDED_CHAPTERS, PRESETS, CohortConfigError, CohortDefinition,
                     DiagnosisSelector, build_cohort, parse_selector, preset)
from .gender import (KINDS, cells_from_matrix, export_gender_matrices, gender_ratio_count_matrix,
                     gender_ratio_matrix)
from .leadlag import P_MODES, classification_rows, export_leadlag, run_leadlag
from .scan import FAMILY_MODES, export_profile, export_table_s1, matrix_diagnoses, run_scan
from .synthgen import (GeneratorSpecError, demographic_summary, export_demographics, generate,
                       load_spec, write_generated)
from .tsv import write_keyvalue, write_tsv

log = logging.getLogger("comorbidscan")

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG = 0, 1, 2
INPUT_FILES = ("patients.csv", "diagnoses.csv", "prescriptions.csv")
TABLE1_COLUMNS = ("order", "icd", "type", "gender")
LOCK_NAME = ".comorbidscan.lock"

_SECTIONS = {
    "run": {"data", "window", "out", "alpha", "reference_year", "family", "threads", "seed",
            "excluded_chapters", "matrix_rows"},
    "generate": {"spec"},
    "leadlag": {"t1", "t2", "n_surrogates", "p_threshold", "mode"},
}
_COHORT_KEYS = {"preset", "selector", "require_inpatient", "exclude_deceased",
                "control_exclusion", "z", "max_age"}


class ConfigError(ValueError):
    """Invalid run configuration; ``line`` points into the config file when known."""

    def __init__(self, message: str, path=None, line: int | None = None):
        where = ""
        if path is not None:
            where = f"{path}:{line}: " if line else f"{path}: "
        super().__init__(where + message)
        self.line = line


@dataclass
class RunConfig:
    data: Path | None = None
    window: StudyWindow = StudyWindow(2006, 2007)
    out: Path = Path("results")
    alpha: float = 0.01
    reference_year: int | None = None
    family: str = "cohort"
    threads: int | None = None
    seed: int | None = None
    excluded_chapters: frozenset = DEFAULT_EXCLUDED_CHAPTERS
    matrix_rows: str = "comorbidities"
    spec: Path | None = None  # generator spec; None = bundled paper_like.spec
    t1: int | None = None
    t2: int | None = None
    n_surrogates: int = 100
    p_threshold: float = 0.05
    mode: str = "explanation"
    cohorts: list[CohortDefinition] = field(default_factory=list)
    source: str = "<defaults>"

    def echo(self) -> dict[str, str]:
        """Flat key/value view written to the metadata sidecar."""
        items = {
            "config.data": str(self.data or ""), "config.window": f"{self.window.first}-{self.window.last}",
            "config.alpha": repr(self.alpha), "config.family": self.family,
            "config.reference_year": str(self.reference_year or self.window.first),
            "config.seed": "" if self.seed is None else str(self.seed),
            "config.excluded_chapters": ",".join(sorted(self.excluded_chapters)),
            "config.matrix_rows": self.matrix_rows, "config.spec": str(self.spec or "bundled"),
            "config.t1": str(self.t1 or ""), "config.t2": str(self.t2 or ""),
            "config.n_surrogates": str(self.n_surrogates),
            "config.p_threshold": repr(self.p_threshold), "config.mode": self.mode,
            "config.cohorts": ",".join(c.name for c in self.cohorts),
        }
        for c in self.cohorts:
            for k, v in c.describe().items():
                items[f"cohort.{c.name}.{k}"] = v
        return items


def example_config() -> str:
    return """\
[run]
data = data              ; directory holding patients.csv, diagnoses.csv, prescriptions.csv
window = 2006-2007
out = results
alpha = 0.01
family = cohort          ; or age_group
seed = 2006              ; required by generate and leadlag

[generate]
spec =                   ; empty: bundled paper_like.spec

[leadlag]
n_surrogates = 100
p_threshold = 0.05
mode = explanation       ; or literal

[cohort:dm1]
preset = dm1

[cohort:dm2]
preset = dm2

[cohort:dm_atc]
preset = dm_atc
"""


def _key_lines(text: str) -> dict[tuple[str, str], int]:
    """Line number of every ``key = value`` pair, keyed by (section, key)."""
    lines, section = {}, None
    for number, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        m = re.match(r"\[([^\]]+)\]", stripped)
        if m:
            section = m.group(1).strip()
            lines[(section, "")] = number
            continue
        m = re.match(r"([^=:;#\s][^=:]*?)\s*[=:]", stripped)
        if m and section is not None and not line[:1].isspace():
            lines[(section, m.group(1).strip())] = number
    return lines


def _parse_bool(text: str) -> bool:
    value = text.strip().lower()
    if value in ("1", "yes", "true", "on"):
        return True
    if value in ("0", "no", "false", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def parse_config(text: str, source: str = "<config>", base: Path | None = None) -> RunConfig:
    """Parse and validate a run config; relative paths resolve against ``base``."""
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"), interpolation=None)
    parser.optionxform = str
    try:
        parser.read_string(text, source)
    except configparser.Error as exc:
        line = getattr(exc, "lineno", None)
        if line is None and getattr(exc, "errors", None):
            line = exc.errors[0][0]
        raise ConfigError(str(exc).splitlines()[0], source, line) from None
    lines = _key_lines(text)
    base = base or Path.cwd()
    cfg = RunConfig(source=source)

    def fail(message, section, key=""):
        raise ConfigError(message, source, lines.get((section, key)) or lines.get((section, "")))

    def get(section, key, convert, default=None):
        if section not in parser or key not in parser[section]:
            return default
        raw = parser[section][key].strip()
        if raw == "":
            return default
        try:
            return convert(raw)
        except (ValueError, CohortConfigError) as exc:
            fail(f"[{section}] {key}: {exc}", section, key)

    for section in parser.sections():
        if section.startswith("cohort:"):
            allowed = _COHORT_KEYS
        elif section in _SECTIONS:
            allowed = _SECTIONS[section]
        else:
            fail(f"unknown section [{section}]", section)
        for key in parser[section]:
            if key not in allowed:
                fail(f"[{section}] unknown key {key!r}", section, key)

    path = lambda raw: (base / raw).resolve()  # noqa: E731
    cfg.data = get("run", "data", path)
    cfg.window = get("run", "window", StudyWindow.parse, cfg.window)
    cfg.out = get("run", "out", path, (base / "results").resolve())
    cfg.alpha = get("run", "alpha", float, cfg.alpha)
    if not 0.0 < cfg.alpha < 1.0:
        fail("[run] alpha must lie in (0, 1)", "run", "alpha")
    cfg.reference_year = get("run", "reference_year", int)
    cfg.family = get("run", "family", str, cfg.family)
    if cfg.family not in FAMILY_MODES:
        fail(f"[run] family must be one of {FAMILY_MODES}", "run", "family")
    cfg.threads = get("run", "threads", int)
    if cfg.threads is not None and cfg.threads < 1:
        fail("[run] threads must be >= 1", "run", "threads")
    cfg.seed = get("run", "seed", int)
    cfg.excluded_chapters = get("run", "excluded_chapters",
                                lambda s: frozenset(c.strip().upper() for c in s.split(",") if c.strip()),
                                cfg.excluded_chapters)
    cfg.matrix_rows = get("run", "matrix_rows", str, cfg.matrix_rows)
    if cfg.matrix_rows not in ("comorbidities", "all"):
        fail("[run] matrix_rows must be 'comorbidities' or 'all'", "run", "matrix_rows")
    cfg.spec = get("generate", "spec", path)

    cfg.t1 = get("leadlag", "t1", int)
    cfg.t2 = get("leadlag", "t2", int)
    cfg.n_surrogates = get("leadlag", "n_surrogates", int, cfg.n_surrogates)
    if cfg.n_surrogates < 1:
        fail("[leadlag] n_surrogates must be at least 1", "leadlag", "n_surrogates")
    cfg.p_threshold = get("leadlag", "p_threshold", float, cfg.p_threshold)
    if not 0.0 < cfg.p_threshold <= 1.0:
        fail("[leadlag] p_threshold must lie in (0, 1]", "leadlag", "p_threshold")
    cfg.mode = get("leadlag", "mode", str, cfg.mode)
    if cfg.mode not in P_MODES:
        fail(f"[leadlag] mode must be one of {P_MODES}", "leadlag", "mode")
    for name, year in (("t1", cfg.t1), ("t2", cfg.t2)):
        if year is not None and year not in cfg.window:
            fail(f"[leadlag] {name}={year} lies outside the window", "leadlag", name)
    if cfg.t1 is not None and cfg.t2 is not None and cfg.t1 >= cfg.t2:
        fail("[leadlag] t1 must precede t2", "leadlag", "t1")

    sections = [s for s in parser.sections() if s.startswith("cohort:")]
    if not sections:
        cfg.cohorts = [replace(p, excluded_chapters=cfg.excluded_chapters) for p in PRESETS.values()]
    for section in sections:
        name = section.partition(":")[2].strip()
        if not re.fullmatch(r"[A-Za-z0-9_\-]+", name):
            fail(f"cohort name {name!r} must be alphanumeric", section)
        sec = parser[section]
        overrides = {"excluded_chapters": cfg.excluded_chapters}
        for key, attr, convert in (("require_inpatient", "require_inpatient", _parse_bool),
                                   ("exclude_deceased", "exclude_deceased", _parse_bool),
                                   ("z", "leadlag_z", int), ("max_age", "leadlag_max_age", int)):
            value = get(section, key, convert)
            if value is not None:
                overrides[attr] = value
        exclusion = get(section, "control_exclusion",
                        lambda s: frozenset(c.strip() for c in s.split(",") if c.strip()))
        if exclusion is not None:
            overrides["control_exclusion_codes"] = exclusion
        selector = get(section, "selector", parse_selector)
        base_name = sec.get("preset", "").strip()
        try:
            if base_name:
                if selector is not None:
                    overrides["selector"] = selector
                definition = replace(preset(base_name), name=name, **overrides)
            elif selector is not None:
                definition = CohortDefinition(name, selector, **overrides)
            else:
                fail(f"[{section}] needs a preset or a selector", section)
        except (ValueError, CohortConfigError) as exc:
            fail(f"[{section}] {exc}", section, "control_exclusion" if "control" in str(exc) else "")
        if definition.leadlag_z < 0:
            fail(f"[{section}] z must be >= 0", section, "z")
        cfg.cohorts.append(definition)
    if len({c.name for c in cfg.cohorts}) != len(cfg.cohorts):
        fail("duplicate cohort name", sections[0] if sections else "run")
    return cfg


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc.strerror}") from None
    return parse_config(text, str(path), path.resolve().parent)


class OutputLock:
    """Exclusive per-directory lock so two runs never interleave their outputs."""

    def __init__(self, directory: Path):
        self.path = Path(directory) / LOCK_NAME

    def __enter__(self):
        self.path.parent.mkdir(parents=True, exist_ok=True)
        try:
            fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise RuntimeError(f"output directory is locked by another run: {self.path} "
                               "(remove it if no run is active)") from None
        with os.fdopen(fd, "w") as fh:
            fh.write(f"{os.getpid()}\n")
        return self

    def __exit__(self, *exc):
        try:
            self.path.unlink()
        except FileNotFoundError:
            pass
        return False


def _threads(args, cfg: RunConfig | None = None) -> int:
    if args.threads is not None:
        return args.threads
    if cfg is not None and cfg.threads is not None:
        return cfg.threads
    return os.cpu_count() or 1


def _apply_overrides(cfg: RunConfig, args) -> RunConfig:
    if args.out is not None:
        cfg.out = Path(args.out).resolve()
    if args.seed is not None:
        cfg.seed = args.seed
    if args.alpha is not None:
        if not 0.0 < args.alpha < 1.0:
            raise ConfigError("--alpha must lie in (0, 1)")
        cfg.alpha = args.alpha
    return cfg


def _require_inputs(cfg: RunConfig) -> None:
    if cfg.data is None:
        raise ConfigError("[run] data is not set", cfg.source)
    for name in INPUT_FILES:
        p = cfg.data / name
        if not p.is_file():
            raise ConfigError(f"input file not found: {p}")


def _write_run_metadata(cfg: RunConfig, command: str, extra: dict | None = None) -> Path:
    meta = {"version": __version__, "command": command}
    meta.update(cfg.echo())
    if extra:
        meta.update(extra)
    return write_keyvalue(cfg.out / f"{command}_metadata.txt", meta)


def _generate(cfg: RunConfig, out_dir: Path, threads: int) -> dict:
    spec = load_spec(cfg.spec)
    if cfg.seed is not None:
        spec = replace(spec, seed=cfg.seed)
        spec.validate()
    log.info("generating %d patients (seed %d)", spec.population_size, spec.seed)
    dataset, truth = generate(spec, threads=threads)
    write_generated(dataset, truth, out_dir)
    return {"generator.seed": str(spec.seed), "generator.population_size": str(spec.population_size),
            "generator.spec": str(cfg.spec or "bundled"),
            "dataset_fingerprint": dataset.fingerprint()}


def _load(cfg: RunConfig):
    _require_inputs(cfg)
    dataset = read_dataset(cfg.data, cfg.window)
    log.info("ingested %d patients: %s", dataset.n_patients, dataset.report.summary())
    return dataset


def _scan(cfg: RunConfig, dataset, threads: int) -> dict:
    profiles = []
    ref = cfg.reference_year
    export_demographics(demographic_summary(dataset, ref), cfg.out / "demographics.tsv")
    for definition in cfg.cohorts:
        try:
            assignment = build_cohort(dataset, definition, ref)
        except CohortConfigError as exc:
            log.warning("skipping cohort %s: %s", definition.name, exc)
            continue
        profile = run_scan(dataset, definition, cfg.alpha, reference_year=ref, family=cfg.family,
                           threads=threads, assignment=assignment)
        export_profile(profile, cfg.out, matrix_rows=cfg.matrix_rows)
        profiles.append(profile)
        name = definition.name
        groups = profile.age_groups
        # rows follow the RR matrix so the two exports align line for line
        rows = matrix_diagnoses(profile, cfg.matrix_rows)
        matrix = gender_ratio_matrix(assignment, rows)
        export_gender_matrices(cells_from_matrix(rows, matrix, groups),
                               cfg.out / f"{name}_gender_ratio.tsv", keys=rows,
                               age_groups=groups, key_column="icd")
        for kind in KINDS:
            labels, m = gender_ratio_count_matrix(dataset, kind, members=assignment.case_mask,
                                                  reference_year=ref)
            export_gender_matrices(cells_from_matrix(labels, m, groups),
                                   cfg.out / f"{name}_gender_ratio_{kind}.tsv", keys=labels,
                                   age_groups=groups, key_column=f"n_{kind}")
        log.info("%s: %d cases, %d controls, %d comorbidities", name, assignment.n_cases,
                 assignment.n_controls, len(profile.comorbidity_list))
    export_table_s1(profiles, cfg.out / "table_s1.tsv")
    return {"dataset_fingerprint": dataset.fingerprint(),
            "scanned_cohorts": ",".join(p.cohort_name for p in profiles)}


def _leadlag(cfg: RunConfig, dataset, threads: int) -> dict:
    if cfg.seed is None:
        raise ConfigError("[run] seed is required for the lead/lag surrogate test", cfg.source)
    everything = []
    for definition in cfg.cohorts:
        if not isinstance(definition.selector, DiagnosisSelector):
            log.info("skipping lead/lag for %s: index is not a diagnosis", definition.name)
            continue
        try:
            assignment = build_cohort(dataset, definition, cfg.reference_year)
        except CohortConfigError as exc:
            log.warning("skipping cohort %s: %s", definition.name, exc)
            continue
        results = run_leadlag(dataset, assignment, n_surrogates=cfg.n_surrogates, seed=cfg.seed,
                              t1=cfg.t1, t2=cfg.t2, mode=cfg.mode, p_threshold=cfg.p_threshold,
                              threads=threads)
        export_leadlag(results, cfg.out / f"{definition.name}_leadlag.tsv")
        everything.extend(results)
    write_tsv(cfg.out / "table1.tsv", TABLE1_COLUMNS, classification_rows(everything))
    return {"dataset_fingerprint": dataset.fingerprint(),
            "leadlag_tests": str(len(everything)),
            "leadlag_significant": str(sum(bool(r.verdict) for r in everything))}


def cmd_generate(args) -> int:
    if args.config:
        cfg = load_config(args.config)
        if args.spec:
            cfg.spec = Path(args.spec).resolve()
        out = Path(args.out).resolve() if args.out else cfg.data
        if out is None:
            raise ConfigError("no output directory: pass --out or set [run] data", cfg.source)
    else:
        cfg = RunConfig(spec=Path(args.spec).resolve() if args.spec else None)
        if args.out is None:
            raise ConfigError("generate needs --out DIR (or --config)")
        out = Path(args.out).resolve()
    if args.seed is not None:
        cfg.seed = args.seed
    with OutputLock(out):
        extra = _generate(cfg, out, _threads(args, cfg))
        write_keyvalue(out / "generate_metadata.txt", {"version": __version__, **extra})
    return EXIT_OK


def _analysis(args, steps) -> int:
    cfg = _apply_overrides(load_config(args.config), args)
    threads = _threads(args, cfg)
    command = args.command
    if "leadlag" in steps and cfg.seed is None:
        raise ConfigError("[run] seed is required for the lead/lag surrogate test", cfg.source)
    with OutputLock(cfg.out):
        extra = {}
        if "generate" in steps:
            if cfg.data is None:
                raise ConfigError("[run] data is not set", cfg.source)
            extra.update(_generate(cfg, cfg.data, threads))
        dataset = _load(cfg)
        if "scan" in steps:
            extra.update(_scan(cfg, dataset, threads))
        if "leadlag" in steps:
            extra.update(_leadlag(cfg, dataset, threads))
        _write_run_metadata(cfg, command, extra)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="comorbidscan",
                                     description="Age-stratified comorbidity scans on claims data.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config_required=True):
        p.add_argument("--config", required=config_required, help="run configuration (INI)")
        p.add_argument("--out", help="output directory (overrides the config)")
        p.add_argument("--seed", type=int, help="random seed (overrides the config)")
        p.add_argument("--threads", type=int, help="worker threads (default: all cores)")
        p.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS,
                       help="log progress to stderr")

    g = sub.add_parser("generate", help="write a synthetic claims dataset")
    g.add_argument("spec", nargs="?", help="generator spec (default: bundled paper_like.spec)")
    common(g, config_required=False)
    for name, text in (("scan", "comorbidity scan, gender ratios and Table S1"),
                       ("leadlag", "lead/lag surrogate tests and Table 1"),
                       ("all", "generate (when [generate] is set) then scan and leadlag")):
        p = sub.add_parser(name, help=text)
        common(p)
        p.add_argument("--alpha", type=float, help="FDR level (overrides the config)")
    sub.add_parser("example-config", help="print an annotated config file")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "threads", None) is not None and args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        if args.command == "example-config":
            sys.stdout.write(example_config())
            return EXIT_OK
        if args.command == "generate":
            return cmd_generate(args)
        if args.command == "all":
            cfg_has_generate = "generate" in _sections_of(args.config)
            steps = (("generate",) if cfg_has_generate else ()) + ("scan", "leadlag")
            return _analysis(args, steps)
        return _analysis(args, (args.command,))
    except (ConfigError, GeneratorSpecError, CohortConfigError, ClaimsFormatError,
            ClaimsDataError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - top-level diagnostic
        log.debug("runtime failure", exc_info=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


def _sections_of(path) -> set[str]:
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"), interpolation=None)
    try:
        parser.read(path, encoding="utf-8")
    except configparser.Error:
        return set()
    return set(parser.sections())


if __name__ == "__main__":
    sys.exit(main())
