"""Topic key phrase extraction through the chat gateway and prompt evaluation by NED"""

import json
import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Dict, List, Optional, Sequence

from pydantic import BaseModel, ConfigDict, field_validator

from .exceptions import EmptyResponse, GatewayError, SchemaViolation
from .llm_client import ChatGateway
from .models import PaperRecord
from .prompt_library import PromptTemplate, load_template
from .ranking_eval import ned

logger = logging.getLogger(__name__)

BUILTIN_TEMPLATES: Dict[str, PromptTemplate] = {
    "research_field": load_template("research_field", "keyphrase_research_field.txt"),
    "main_area": load_template("main_area", "keyphrase_main_area.txt"),
    "application_technology": load_template("application_technology", "keyphrase_application_technology.txt"),
}
DEFAULT_TEMPLATE = "application_technology"

_QUOTES = "\"'`“”‘’"
_TRAILING = ".,;:!"
_LABEL = re.compile(r"^(?:the\s+)?(?:key\s*phrase|keyword|topic)\s*:\s*")


class FailurePolicy(Enum):
    """What evaluate_template does when one example's extraction fails"""
    FAIL_FAST = "fail_fast"
    SKIP = "skip"


class AnnotatedTopicExample(BaseModel):
    """A title/abstract pair with a human-annotated key phrase"""

    model_config = ConfigDict(frozen=True)

    title: str
    abstract: str
    gold_phrase: str

    @field_validator("title", "abstract")
    @classmethod
    def _not_blank(cls, value: str) -> str:
        if not value.strip():
            raise ValueError("title and abstract must not be blank")
        return value

    @field_validator("gold_phrase")
    @classmethod
    def _normalized_gold(cls, value: str) -> str:
        value = normalize_keyphrase(value)
        if not value:
            raise ValueError("gold phrase must not be empty")
        return value


@dataclass
class TemplateEvaluation:
    """Mean NED of one template over an annotated set (lower is better)"""
    template: str
    mean_ned: float
    scored: int
    skipped: int = 0
    per_example: List[Optional[float]] = field(default_factory=list)


def get_template(name: Optional[str] = None) -> PromptTemplate:
    name = name or DEFAULT_TEMPLATE
    if name not in BUILTIN_TEMPLATES:
        raise KeyError(f"unknown key phrase template '{name}' (choose from {', '.join(BUILTIN_TEMPLATES)})")
    return BUILTIN_TEMPLATES[name]


def render_keyphrase_prompt(template: PromptTemplate, title: str, abstract: str) -> str:
    return template.render(title=title, abstract=abstract)


def normalize_keyphrase(text: str) -> str:
    """Trim, lowercase and peel a leading label, wrapping quotes and trailing punctuation until stable"""
    value = text.strip().lower()
    while True:
        previous = value
        value = _LABEL.sub("", value)
        if len(value) >= 2 and value[0] in _QUOTES and value[-1] in _QUOTES:
            value = value[1:-1].strip()
        value = value.rstrip(_TRAILING).strip()
        if value == previous:
            return value


def extract_keyphrase(
    paper: PaperRecord,
    template: PromptTemplate,
    gateway: ChatGateway,
) -> str:
    """Ask the chat gateway for the paper's topic key phrase"""
    if not paper.title.strip() or not paper.abstract.strip():
        raise ValueError(f"paper {paper.paper_id} needs both a title and an abstract")

    prompt = render_keyphrase_prompt(template, paper.title, paper.abstract)
    try:
        raw = gateway.complete(prompt, system_prompt=template.system_preamble)
    except EmptyResponse:
        raise
    except GatewayError as e:
        logger.error(f"Key phrase extraction failed for {paper.paper_id}: {e}")
        raise

    phrase = normalize_keyphrase(raw)
    if not phrase:
        raise EmptyResponse(f"no key phrase in response for {paper.paper_id}: {raw!r}")
    logger.info(f"Key phrase for {paper.paper_id}: {phrase}")
    return phrase


def evaluate_template(
    template: PromptTemplate,
    examples: Sequence[AnnotatedTopicExample],
    gateway: ChatGateway,
    policy: FailurePolicy = FailurePolicy.FAIL_FAST,
    max_workers: int = 1,
) -> TemplateEvaluation:
    """Mean NED between extracted and gold phrases, aggregated by example index"""
    if not examples:
        raise ValueError("at least one annotated example is required")
    template.validate()

    def _one(index: int) -> float:
        example = examples[index]
        paper = PaperRecord(paper_id=f"example-{index}", title=example.title, abstract=example.abstract)
        return ned(extract_keyphrase(paper, template, gateway), example.gold_phrase)

    scores: List[Optional[float]] = [None] * len(examples)
    with ThreadPoolExecutor(max_workers=max(1, max_workers)) as executor:
        futures = [executor.submit(_one, i) for i in range(len(examples))]
        for index, future in enumerate(futures):
            try:
                scores[index] = future.result()
            except (GatewayError, ValueError) as e:
                if policy is FailurePolicy.FAIL_FAST:
                    for pending in futures[index + 1:]:
                        pending.cancel()
                    raise
                logger.warning(f"Skipping example {index} for template '{template.name}': {e}")

    scored = [s for s in scores if s is not None]
    if not scored:
        raise EmptyResponse(f"template '{template.name}': every example failed")

    result = TemplateEvaluation(
        template=template.name,
        mean_ned=sum(scored) / len(scored),
        scored=len(scored),
        skipped=len(examples) - len(scored),
        per_example=scores,
    )
    logger.info(f"Template '{template.name}': mean NED {result.mean_ned:.4f} over {result.scored} example(s)")
    return result


def load_annotated_examples(path: Path) -> List[AnnotatedTopicExample]:
    """Read annotated key phrases: one JSON object per line with title, abstract and gold (or topic)"""
    examples = []
    with open(path, "r", encoding="utf-8") as f:
        for line_number, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
                examples.append(AnnotatedTopicExample(
                    title=row["title"],
                    abstract=row.get("abstract", ""),
                    gold_phrase=row.get("gold") or row["topic"],
                ))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
                raise SchemaViolation(f"bad annotated example: {e}", line_number) from e
    return examples
