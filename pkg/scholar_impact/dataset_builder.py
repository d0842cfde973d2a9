"""Labeled impact datasets: cohort labeling, label balancing, 8:1:1 splits and JSON-lines files"""

import hashlib
import json
import logging
import math
import os
import tempfile
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import date
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .core_metrics import MetricKind, same_period_window, score_paper
from .exceptions import (
    AllFailed,
    DegenerateCohort,
    DuplicateExample,
    EmptyCohort,
    EmptyInput,
    EmptyResponse,
    GatewayError,
    InvalidCohort,
    SchemaViolation,
    TooFewExamples,
)
from .keyphrase import extract_keyphrase, get_template
from .llm_client import ChatGateway
from .models import ExtrasRecord, PaperRecord
from .prompt_library import PromptTemplate
from .scholar_gateway import ScholarGateway

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
SPLIT_NAMES = ("train", "validation", "test")

RECORD_FIELDS = {
    "id", "arxiv_id", "title", "abstract", "cites", "pub_date", "tncsi", "tncsi_sp",
    "extras", "split", "schema_version", "categories", "cohort_meta", "split_seed",
}
REQUIRED_FIELDS = ("title", "tncsi_sp")
EXTRAS_FIELDS = {"sota_claim", "released_dataset", "open_access_code", "rqm"}


class MetricConfig(BaseModel):
    """How papers are labeled"""

    model_config = ConfigDict(frozen=True)

    half_span_months: int = Field(default=6, ge=0)
    capacity: int = Field(default=1000, ge=1)
    min_cohort_size: int = Field(default=30, ge=1)
    include_tncsi: bool = False
    max_workers: int = Field(default=4, ge=1)


class CohortMeta(BaseModel):
    """Fit summary kept with each label"""

    model_config = ConfigDict(frozen=True, populate_by_name=True)

    rate: float = Field(gt=0, alias="lambda")
    sample_mean: float = Field(ge=0)
    n: int = Field(gt=0)
    cohort_size: int = Field(gt=0)


class LabeledExample(BaseModel):
    """A paper with its impact labels"""

    model_config = ConfigDict(frozen=True)

    paper: PaperRecord
    tncsi: Optional[float] = Field(default=None, ge=0.0, le=1.0)
    tncsi_sp: float = Field(ge=0.0, le=1.0)
    cohort_meta: Optional[CohortMeta] = None

    @property
    def paper_id(self) -> str:
        return self.paper.paper_id


class DatasetSplit(BaseModel):
    """Disjoint train/validation/test partition"""

    model_config = ConfigDict(frozen=True)

    train: List[LabeledExample] = Field(default_factory=list)
    validation: List[LabeledExample] = Field(default_factory=list)
    test: List[LabeledExample] = Field(default_factory=list)
    seed: int = 0

    @model_validator(mode="after")
    def _disjoint(self) -> "DatasetSplit":
        seen: Dict[str, str] = {}
        for name in SPLIT_NAMES:
            for example in getattr(self, name):
                if example.paper_id in seen:
                    raise ValueError(f"paper {example.paper_id} is in both {seen[example.paper_id]} and {name}")
                seen[example.paper_id] = name
        return self

    def sizes(self) -> Tuple[int, int, int]:
        return len(self.train), len(self.validation), len(self.test)

    def all_examples(self) -> List[LabeledExample]:
        return [*self.train, *self.validation, *self.test]


@dataclass
class LabelFailure:
    """Why one paper could not be labeled"""
    paper_id: str
    reason: str
    message: str


@dataclass
class LabelingOutcome:
    examples: List[LabeledExample] = field(default_factory=list)
    failures: List[LabelFailure] = field(default_factory=list)


class _Rejected(Exception):
    def __init__(self, reason: str, message: str):
        super().__init__(message)
        self.reason = reason


def _label_one(
    paper: PaperRecord,
    scholar: ScholarGateway,
    chat: ChatGateway,
    config: MetricConfig,
    template: PromptTemplate,
) -> LabeledExample:
    if paper.publication_date is None:
        raise _Rejected("missing_date", "paper has no publication date")
    if not paper.abstract.strip():
        raise _Rejected("metadata", "paper has no abstract")

    try:
        phrase = extract_keyphrase(paper, template, chat)
    except (GatewayError, EmptyResponse) as e:
        raise _Rejected("keyphrase", str(e)) from e

    def _score(kind: MetricKind):
        window = same_period_window(paper.publication_date, config.half_span_months) if kind is MetricKind.TNCSI_SP else None
        try:
            cohort = scholar.search_cohort(
                phrase, window=window, capacity=config.capacity,
                anchor_date=paper.publication_date if window else None,
            )
        except EmptyCohort as e:
            raise _Rejected("empty_cohort", str(e)) from e
        except GatewayError as e:
            raise _Rejected("gateway", str(e)) from e

        if cohort.size < config.min_cohort_size:
            raise _Rejected(
                "cohort_too_small",
                f"{kind.name} cohort for '{phrase}' has {cohort.size} member(s), need {config.min_cohort_size}",
            )
        try:
            return score_paper(paper, cohort, kind)
        except DegenerateCohort as e:
            raise _Rejected("degenerate_cohort", str(e)) from e
        except (EmptyCohort, InvalidCohort) as e:
            raise _Rejected("empty_cohort", str(e)) from e

    sp = _score(MetricKind.TNCSI_SP)
    plain = _score(MetricKind.TNCSI) if config.include_tncsi else None
    return LabeledExample(
        paper=paper,
        tncsi=plain.value if plain else None,
        tncsi_sp=sp.value,
        cohort_meta=CohortMeta(rate=sp.fit.rate, sample_mean=sp.fit.sample_mean, n=sp.fit.n, cohort_size=sp.cohort_size),
    )


def label_papers(
    papers: Sequence[PaperRecord],
    scholar: ScholarGateway,
    chat: ChatGateway,
    config: Optional[MetricConfig] = None,
    template: Optional[PromptTemplate] = None,
) -> LabelingOutcome:
    """Key phrase, cohort and score for each paper; output keeps input order"""
    if not papers:
        raise EmptyInput("no papers to label")
    config = config or MetricConfig()
    template = template or get_template()

    def _attempt(paper: PaperRecord) -> Union[LabeledExample, LabelFailure]:
        try:
            return _label_one(paper, scholar, chat, config, template)
        except _Rejected as e:
            logger.warning(f"Could not label {paper.paper_id} ({e.reason}): {e}")
            return LabelFailure(paper.paper_id, e.reason, str(e))

    with ThreadPoolExecutor(max_workers=config.max_workers) as executor:
        results = list(executor.map(_attempt, papers))

    outcome = LabelingOutcome()
    for result in results:
        if isinstance(result, LabelFailure):
            outcome.failures.append(result)
        else:
            outcome.examples.append(result)

    logger.info(f"Labeled {len(outcome.examples)} of {len(papers)} paper(s); {len(outcome.failures)} failure(s)")
    if not outcome.examples:
        raise AllFailed(f"none of {len(papers)} paper(s) could be labeled", outcome.failures)
    return outcome


def _bin_of(label: float, bins: int) -> int:
    return min(int(label * bins), bins - 1)


def stratify_uniform(
    examples: Sequence[LabeledExample],
    bins: int = 10,
    per_bin: int = 50,
    seed: int = 0,
) -> List[LabeledExample]:
    """Sample up to ``per_bin`` examples from each equal-width TNCSI_SP bin"""
    if bins < 2:
        raise ValueError(f"bins must be at least 2, got {bins}")
    if per_bin < 1:
        raise ValueError(f"per_bin must be positive, got {per_bin}")

    grouped: List[List[LabeledExample]] = [[] for _ in range(bins)]
    seen = set()
    for example in examples:
        if example.paper_id in seen:
            continue
        seen.add(example.paper_id)
        grouped[_bin_of(example.tncsi_sp, bins)].append(example)

    rng = np.random.default_rng(seed)
    selected: List[LabeledExample] = []
    short = []
    for index, members in enumerate(grouped):
        if len(members) > per_bin:
            picks = np.sort(rng.choice(len(members), size=per_bin, replace=False))
            members = [members[i] for i in picks]
        elif len(members) < per_bin:
            short.append(f"[{index / bins:.1f}, {(index + 1) / bins:.1f}): {len(members)}")
        selected.extend(members)

    if short:
        logger.warning(f"Under-populated label bins (wanted {per_bin} each): {'; '.join(short)}")
    logger.info(f"Stratified {len(seen)} example(s) into {len(selected)} across {bins} bins")
    return selected


def year_histogram(examples: Sequence[LabeledExample]) -> Dict[int, int]:
    """Examples per publication year; undated examples are left out"""
    years = Counter(e.paper.publication_date.year for e in examples if e.paper.publication_date)
    undated = len(examples) - sum(years.values())
    if undated:
        logger.info(f"{undated} example(s) have no publication date")
    return dict(sorted(years.items()))


def split(
    examples: Sequence[LabeledExample],
    ratios: Tuple[int, int, int] = (8, 1, 1),
    seed: int = 0,
) -> DatasetSplit:
    """Seeded shuffle then contiguous cut; validation and test sizes are floored"""
    if len(ratios) != 3 or any(r < 0 for r in ratios) or sum(ratios) == 0:
        raise ValueError(f"ratios must be three non-negative numbers, got {ratios}")
    n = len(examples)
    if n < 10:
        raise TooFewExamples(f"need at least 10 examples to split, got {n}")

    counts = Counter(e.paper_id for e in examples)
    duplicates = sorted(pid for pid, c in counts.items() if c > 1)
    if duplicates:
        raise DuplicateExample(f"duplicate paper ids: {', '.join(duplicates[:5])}")

    total = sum(ratios)
    n_val = math.floor(n * ratios[1] / total)
    n_test = math.floor(n * ratios[2] / total)
    n_train = n - n_val - n_test

    order = np.random.default_rng(seed).permutation(n)
    shuffled = [examples[i] for i in order]
    result = DatasetSplit(
        train=shuffled[:n_train],
        validation=shuffled[n_train:n_train + n_val],
        test=shuffled[n_train + n_val:],
        seed=seed,
    )
    logger.info(f"Split {n} example(s) into {n_train}/{n_val}/{n_test} (seed {seed})")
    return result


def _synthetic_id(title: str) -> str:
    return "title-" + hashlib.sha1(title.encode("utf-8")).hexdigest()[:16]


def example_to_record(example: LabeledExample, split_name: Optional[str] = None, split_seed: Optional[int] = None) -> Dict[str, Any]:
    paper = example.paper
    meta = example.cohort_meta
    return {
        "id": paper.paper_id,
        "arxiv_id": paper.arxiv_id,
        "title": paper.title,
        "abstract": None if paper.missing_abstract else paper.abstract,
        "cites": paper.citation_count,
        "pub_date": paper.publication_date.isoformat() if paper.publication_date else None,
        "categories": list(paper.categories),
        "tncsi": example.tncsi,
        "tncsi_sp": example.tncsi_sp,
        "extras": paper.extras.model_dump() if paper.extras else None,
        "cohort_meta": meta.model_dump(by_alias=True) if meta else None,
        "split": split_name,
        "split_seed": split_seed,
        "schema_version": SCHEMA_VERSION,
    }


def record_to_example(record: Any, line_number: Optional[int] = None) -> Tuple[LabeledExample, Optional[str], Optional[int]]:
    """Parse one dataset record; returns the example, its split name and split seed"""
    if not isinstance(record, dict):
        raise SchemaViolation("record is not a JSON object", line_number)
    unknown = sorted(set(record) - RECORD_FIELDS)
    if unknown:
        raise SchemaViolation(f"unknown field(s): {', '.join(unknown)}", line_number)
    missing = [name for name in REQUIRED_FIELDS if record.get(name) is None]
    if missing:
        raise SchemaViolation(f"missing required field(s): {', '.join(missing)}", line_number)

    version = record.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise SchemaViolation(f"unsupported schema_version {version!r}", line_number)
    split_name = record.get("split")
    if split_name is not None and split_name not in SPLIT_NAMES:
        raise SchemaViolation(f"unknown split {split_name!r}", line_number)
    extras = record.get("extras")
    if extras is not None and (not isinstance(extras, dict) or set(extras) - EXTRAS_FIELDS):
        raise SchemaViolation("extras must be an object with sota_claim, released_dataset, open_access_code, rqm", line_number)

    try:
        abstract = record.get("abstract")
        paper = PaperRecord(
            paper_id=record.get("id") or _synthetic_id(record["title"]),
            arxiv_id=record.get("arxiv_id"),
            title=record["title"],
            abstract=abstract or "",
            missing_abstract=abstract is None,
            citation_count=record.get("cites") or 0,
            publication_date=date.fromisoformat(record["pub_date"]) if record.get("pub_date") else None,
            categories=record.get("categories") or [],
            extras=ExtrasRecord(**extras) if extras is not None else None,
        )
        meta = record.get("cohort_meta")
        example = LabeledExample(
            paper=paper,
            tncsi=record.get("tncsi"),
            tncsi_sp=record["tncsi_sp"],
            cohort_meta=CohortMeta(**meta) if meta is not None else None,
        )
    except (ValidationError, ValueError, TypeError) as e:
        raise SchemaViolation(str(e).splitlines()[0], line_number) from e
    return example, split_name, record.get("split_seed")


def _iter_records(path: Union[str, Path]):
    with open(path, "r", encoding="utf-8") as f:
        for line_number, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as e:
                raise SchemaViolation(f"malformed JSON ({e.msg})", line_number) from e
            yield record_to_example(record, line_number)


def _write_records(records: Sequence[Dict[str, Any]], path: Union[str, Path]) -> Path:
    """Write JSON lines to a temporary sibling, then rename it over ``path``"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as tmp:
            for record in records:
                tmp.write(json.dumps(record, ensure_ascii=False) + "\n")
        os.replace(tmp_name, path)
    except OSError as e:
        logger.error(f"Failed to write {path}: {e}")
        if os.path.exists(tmp_name):
            os.unlink(tmp_name)
        raise
    return path


def write_dataset(dataset: DatasetSplit, path: Union[str, Path]) -> Path:
    """One JSON object per line, split membership on every record"""
    path = _write_records(
        [example_to_record(example, name, dataset.seed) for name in SPLIT_NAMES for example in getattr(dataset, name)],
        path,
    )
    logger.info(f"Wrote {sum(dataset.sizes())} record(s) to {path}")
    return path


def write_examples(examples: Sequence[LabeledExample], path: Union[str, Path]) -> Path:
    """Unsplit example file, as produced by labeling"""
    path = _write_records([example_to_record(example) for example in examples], path)
    logger.info(f"Wrote {len(examples)} example(s) to {path}")
    return path


def read_dataset(path: Union[str, Path]) -> DatasetSplit:
    """Inverse of write_dataset; records without a split go to train"""
    parts: Dict[str, List[LabeledExample]] = {name: [] for name in SPLIT_NAMES}
    seed: Optional[int] = None
    unsplit = 0
    for example, split_name, split_seed in _iter_records(path):
        if split_name is None:
            unsplit += 1
            split_name = "train"
        parts[split_name].append(example)
        if seed is None and split_seed is not None:
            seed = split_seed

    if unsplit:
        logger.warning(f"{unsplit} record(s) in {path} have no split; placed in train")
    try:
        return DatasetSplit(**parts, seed=seed or 0)
    except ValidationError as e:
        raise DuplicateExample(str(e).splitlines()[-1]) from e


def read_labeled_examples(path: Union[str, Path]) -> List[LabeledExample]:
    """All examples in a file, ignoring split membership"""
    return [example for example, _, _ in _iter_records(path)]
