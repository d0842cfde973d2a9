"""Shared domain records: papers, extras, date windows and citation cohorts"""

import logging
from datetime import date
from typing import Iterable, List, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

logger = logging.getLogger(__name__)


class DateWindow(BaseModel):
    """Closed calendar interval [start, end]"""

    model_config = ConfigDict(frozen=True)

    start: date
    end: date

    @model_validator(mode="after")
    def _ordered(self) -> "DateWindow":
        if self.start > self.end:
            raise ValueError(f"window start {self.start} is after end {self.end}")
        return self

    def contains(self, day: Optional[date]) -> bool:
        return day is not None and self.start <= day <= self.end


class ExtrasRecord(BaseModel):
    """Optional signals beyond title and abstract"""

    model_config = ConfigDict(frozen=True)

    sota_claim: Optional[bool] = None
    released_dataset: Optional[bool] = None
    open_access_code: Optional[bool] = None
    rqm: Optional[float] = Field(default=None, ge=0.0, le=1.0)

    def is_complete(self) -> bool:
        return None not in (self.sota_claim, self.released_dataset, self.open_access_code, self.rqm)


class PaperRecord(BaseModel):
    """One scholarly paper as seen by the toolkit"""

    model_config = ConfigDict(frozen=True)

    paper_id: str = Field(min_length=1)
    arxiv_id: Optional[str] = None
    title: str
    abstract: str = ""
    citation_count: int = Field(default=0, ge=0)
    publication_date: Optional[date] = None
    categories: List[str] = Field(default_factory=list)
    extras: Optional[ExtrasRecord] = None
    missing_abstract: bool = False

    @field_validator("title")
    @classmethod
    def _title_present(cls, value: str) -> str:
        if not value or not value.strip():
            raise ValueError("title must not be empty")
        return value


class CohortMember(BaseModel):
    """A retrieved paper reduced to what the citation distribution needs"""

    model_config = ConfigDict(frozen=True)

    paper_id: str = Field(min_length=1)
    citation_count: int = Field(ge=0)
    publication_date: Optional[date] = None


class Cohort(BaseModel):
    """Topic-matched papers, optionally restricted to a same-period window

    Construction validates membership; an empty cohort is representable so that
    the metric operations can report it as ``EmptyCohort``.
    """

    model_config = ConfigDict(frozen=True)

    topic_phrase: str
    anchor_date: Optional[date] = None
    window: Optional[DateWindow] = None
    members: List[CohortMember] = Field(default_factory=list)
    capacity: int = Field(default=1000, ge=1)

    @model_validator(mode="after")
    def _check_members(self) -> "Cohort":
        if len(self.members) > self.capacity:
            raise ValueError(f"cohort has {len(self.members)} members, capacity is {self.capacity}")

        seen = set()
        for member in self.members:
            if member.paper_id in seen:
                raise ValueError(f"duplicate cohort member {member.paper_id}")
            seen.add(member.paper_id)
            if self.window is not None and not self.window.contains(member.publication_date):
                raise ValueError(
                    f"member {member.paper_id} published {member.publication_date} "
                    f"lies outside {self.window.start}..{self.window.end}"
                )
        return self

    @property
    def size(self) -> int:
        return len(self.members)

    @property
    def citation_counts(self) -> List[int]:
        return [m.citation_count for m in self.members]

    @classmethod
    def build(
        cls,
        topic_phrase: str,
        members: Iterable[CohortMember],
        window: Optional[DateWindow] = None,
        anchor_date: Optional[date] = None,
        capacity: int = 1000,
    ) -> "Cohort":
        """Assemble a cohort from raw members

        Keeps the first occurrence of each paper_id, drops members outside the
        window (or undated ones when a window is set) and stops at capacity.
        """
        kept: List[CohortMember] = []
        seen = set()
        duplicates = undated = outside = 0

        for member in members:
            if member.paper_id in seen:
                duplicates += 1
                continue
            if window is not None:
                if member.publication_date is None:
                    undated += 1
                    continue
                if not window.contains(member.publication_date):
                    outside += 1
                    continue
            seen.add(member.paper_id)
            kept.append(member)
            if len(kept) >= capacity:
                break

        if window is None:
            undated = sum(1 for m in kept if m.publication_date is None)
            if undated:
                logger.warning(f"Cohort '{topic_phrase}': kept {undated} member(s) without a publication date")
        elif undated:
            logger.warning(f"Cohort '{topic_phrase}': dropped {undated} undated member(s) from windowed cohort")
        if duplicates:
            logger.info(f"Cohort '{topic_phrase}': removed {duplicates} duplicate member(s)")
        if outside:
            logger.info(f"Cohort '{topic_phrase}': filtered {outside} member(s) outside the window")

        return cls(
            topic_phrase=topic_phrase,
            anchor_date=anchor_date,
            window=window,
            members=kept,
            capacity=capacity,
        )
