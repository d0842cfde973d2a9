"""Prompt templates stored as text files under prompts/"""

import logging
import os
import re
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional, Tuple

from .exceptions import MissingPlaceholder

logger = logging.getLogger(__name__)

PROMPTS_DIR = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), "prompts")
_FIELD = re.compile(r"\{(\w+)\}")


@dataclass(frozen=True)
class PromptTemplate:
    """A named template with ``{name}`` placeholders, each expected exactly once"""
    name: str
    body: str
    system_preamble: Optional[str] = None
    placeholders: Tuple[str, ...] = field(default=("title", "abstract"))

    def validate(self) -> None:
        for placeholder in self.placeholders:
            occurrences = self.body.count("{" + placeholder + "}")
            if occurrences != 1:
                raise MissingPlaceholder(
                    f"template '{self.name}' must contain {{{placeholder}}} exactly once, found {occurrences}"
                )

    def render(self, **values: str) -> str:
        """Substitute placeholders in one pass; values are spliced verbatim"""
        self.validate()
        missing = [p for p in self.placeholders if p not in values]
        if missing:
            raise MissingPlaceholder(f"template '{self.name}' needs values for {', '.join(missing)}")

        def _splice(match: re.Match) -> str:
            name = match.group(1)
            return str(values[name]) if name in self.placeholders else match.group(0)

        return _FIELD.sub(_splice, self.body)


@lru_cache(maxsize=None)
def load_prompt_text(filename: str) -> str:
    """Read a prompt file, dropping the single trailing newline editors add"""
    path = os.path.join(PROMPTS_DIR, filename)
    with open(path, "r", encoding="utf-8") as f:
        text = f.read()
    logger.debug(f"Loaded prompt {filename}")
    return text[:-1] if text.endswith("\n") else text


def load_template(
    name: str,
    filename: str,
    placeholders: Tuple[str, ...] = ("title", "abstract"),
    system_preamble: Optional[str] = None,
) -> PromptTemplate:
    return PromptTemplate(
        name=name,
        body=load_prompt_text(filename),
        system_preamble=system_preamble,
        placeholders=placeholders,
    )


def template_from_file(path: str, name: Optional[str] = None) -> PromptTemplate:
    """Custom title/abstract template from an arbitrary file"""
    with open(path, "r", encoding="utf-8") as f:
        body = f.read().rstrip("\n")
    template = PromptTemplate(name=name or os.path.splitext(os.path.basename(path))[0], body=body)
    template.validate()
    logger.info(f"Using custom prompt template from {path}")
    return template
