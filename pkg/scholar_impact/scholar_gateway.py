"""Semantic Scholar and arXiv acquisition with a JSON-lines response cache and rate limiting"""

import email.utils
import hashlib
import json
import logging
import os
import re
import tempfile
import threading
import time
import xml.etree.ElementTree as ET
from collections import deque
from datetime import date, datetime, timezone
from pathlib import Path
from typing import Any, Callable, Dict, Iterable, Iterator, List, Optional, Sequence

import httpx
from pydantic import BaseModel, ConfigDict, Field, SecretStr

from .exceptions import (
    CacheMiss,
    EmptyCohort,
    GatewayError,
    MalformedResponse,
    NotFound,
    RateLimited,
    TransportFailure,
)
from .models import Cohort, CohortMember, DateWindow, PaperRecord

logger = logging.getLogger(__name__)

ATOM = "{http://www.w3.org/2005/Atom}"
SEARCH_FIELDS = "title,abstract,citationCount,publicationDate,externalIds"
PAPER_FIELDS = "paperId,title,abstract,citationCount,publicationDate,externalIds,fieldsOfStudy"
SURVEY_PATTERN = re.compile(r"\b(survey|review|overview)s?\b", re.IGNORECASE)
RELEVANCE_MODE = "default"


class GatewayConfig(BaseModel):
    """Connection, rate limit and cache settings for the scholar gateway"""

    model_config = ConfigDict(frozen=True)

    base_url: str = "https://api.semanticscholar.org/graph/v1"
    api_key: Optional[SecretStr] = None
    max_requests_per_window: int = Field(default=1, ge=1)
    window_seconds: float = Field(default=1.0, gt=0)
    retry_budget: int = Field(default=3, ge=0)
    backoff_seconds: float = Field(default=1.0, ge=0)
    cache_dir: Path = Path("./.scholar_cache")
    timeout_seconds: float = 30.0
    page_size: int = Field(default=100, ge=1, le=100)
    live: bool = False
    arxiv_api_url: str = "https://export.arxiv.org/api/query"


class RateLimiter:
    """Sliding-window limiter: at most ``max_requests`` acquisitions per ``window_seconds``"""

    def __init__(
        self,
        max_requests: int,
        window_seconds: float,
        clock: Callable[[], float] = time.monotonic,
        sleep: Callable[[float], None] = time.sleep,
    ):
        if max_requests < 1:
            raise ValueError("max_requests must be at least 1")
        self.max_requests = max_requests
        self.window_seconds = window_seconds
        self._clock = clock
        self._sleep = sleep
        self._stamps: deque = deque()
        self._lock = threading.Lock()

    def acquire(self) -> float:
        """Block until a slot is free; returns the timestamp recorded for this request"""
        while True:
            with self._lock:
                now = self._clock()
                while self._stamps and self._stamps[0] <= now - self.window_seconds:
                    self._stamps.popleft()
                if len(self._stamps) < self.max_requests:
                    self._stamps.append(now)
                    return now
                wait = self._stamps[0] + self.window_seconds - now
            logger.debug(f"Rate limit reached, waiting {wait:.3f}s")
            self._sleep(max(wait, 0.0))


def cache_key(kind: str, payload: Dict[str, Any]) -> str:
    """Content hash of a normalised request description"""
    blob = json.dumps({"kind": kind, **payload}, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


class ResponseCache:
    """Append-only JSON-lines cache, one file per request kind

    Each entry echoes the request, stores the raw response bodies and the fetch
    time. Appends rewrite the file through a temporary file and an atomic rename.
    """

    def __init__(self, cache_dir: Path):
        self.cache_dir = Path(cache_dir)
        self._index: Dict[str, Dict[str, Dict[str, Any]]] = {}
        self._lock = threading.Lock()

    def _path(self, kind: str) -> Path:
        return self.cache_dir / f"{kind}.jsonl"

    def _load(self, kind: str) -> Dict[str, Dict[str, Any]]:
        if kind in self._index:
            return self._index[kind]

        entries: Dict[str, Dict[str, Any]] = {}
        path = self._path(kind)
        if path.exists():
            with open(path, "r", encoding="utf-8") as f:
                for line_number, line in enumerate(f, start=1):
                    if not line.strip():
                        continue
                    try:
                        entry = json.loads(line)
                        entries[entry["key"]] = entry
                    except (json.JSONDecodeError, KeyError, TypeError) as e:
                        logger.warning(f"Skipping corrupt cache line {path}:{line_number}: {e}")
        self._index[kind] = entries
        return entries

    def get(self, kind: str, key: str) -> Optional[Dict[str, Any]]:
        with self._lock:
            return self._load(kind).get(key)

    def put(self, kind: str, key: str, request: Dict[str, Any], responses: List[str]) -> Dict[str, Any]:
        entry = {
            "key": key,
            "kind": kind,
            "request": request,
            "responses": responses,
            "fetched_at": datetime.now(timezone.utc).isoformat(),
            "relevance_mode": RELEVANCE_MODE,
        }
        line = json.dumps(entry, ensure_ascii=False) + "\n"

        with self._lock:
            entries = self._load(kind)
            self.cache_dir.mkdir(parents=True, exist_ok=True)
            path = self._path(kind)
            existing = path.read_bytes() if path.exists() else b""
            fd, tmp_name = tempfile.mkstemp(dir=self.cache_dir, prefix=f".{kind}.", suffix=".tmp")
            try:
                with os.fdopen(fd, "wb") as tmp:
                    tmp.write(existing)
                    tmp.write(line.encode("utf-8"))
                os.replace(tmp_name, path)
            except Exception:
                if os.path.exists(tmp_name):
                    os.unlink(tmp_name)
                raise
            entries[key] = entry
        return entry


def _parse_date(value: Any) -> Optional[date]:
    if not value:
        return None
    try:
        return date.fromisoformat(str(value)[:10])
    except ValueError:
        return None


def _load_json(text: str, context: str) -> Any:
    try:
        return json.loads(text)
    except json.JSONDecodeError as e:
        raise MalformedResponse(f"{context}: response is not JSON ({e})") from e


def is_survey_title(title: str) -> bool:
    return bool(SURVEY_PATTERN.search(title or ""))


class ScholarGateway:
    """Client for a Semantic Scholar compatible paper API plus arXiv listings"""

    def __init__(
        self,
        config: GatewayConfig,
        client: Optional[httpx.Client] = None,
        limiter: Optional[RateLimiter] = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self.config = config
        headers = {"User-Agent": "scholar-impact/0.3"}
        if config.api_key is not None:
            headers["x-api-key"] = config.api_key.get_secret_value()
        self.client = client or httpx.Client(timeout=config.timeout_seconds)
        self.client.headers.update(headers)
        self.limiter = limiter or RateLimiter(config.max_requests_per_window, config.window_seconds, sleep=sleep)
        self.cache = ResponseCache(config.cache_dir)
        self._sleep = sleep
        self.requests_sent = 0

    def close(self) -> None:
        self.client.close()

    def _get(self, url: str, params: Dict[str, Any]) -> str:
        """GET with rate limiting and retries on 429, 5xx and transport errors"""
        if not self.config.live:
            raise CacheMiss(f"offline mode: {url} is not cached (set S2_LIVE=true to fetch)")

        last_error: Optional[GatewayError] = None
        for attempt in range(self.config.retry_budget + 1):
            if attempt:
                self._sleep(self.config.backoff_seconds * (2 ** (attempt - 1)))
            self.limiter.acquire()
            self.requests_sent += 1
            try:
                response = self.client.get(url, params=params)
            except httpx.TransportError as e:
                logger.warning(f"Transport error on {url} (attempt {attempt + 1}): {e}")
                last_error = TransportFailure(f"{url}: {e}")
                continue

            if response.status_code == 429:
                logger.warning(f"Rate limited by {url} (attempt {attempt + 1})")
                last_error = RateLimited(f"{url}: HTTP 429 after {attempt + 1} attempt(s)")
                continue
            if response.status_code >= 500:
                logger.warning(f"Server error {response.status_code} on {url} (attempt {attempt + 1})")
                last_error = TransportFailure(f"{url}: HTTP {response.status_code}")
                continue
            if response.status_code == 404:
                raise NotFound(f"{url}: not found")
            if response.status_code >= 400:
                raise TransportFailure(f"{url}: HTTP {response.status_code}: {response.text[:200]}")
            return response.text

        logger.error(f"Giving up on {url} after {self.config.retry_budget + 1} attempt(s): {last_error}")
        raise last_error

    @staticmethod
    def _rows(text: str, context: str) -> Dict[str, Any]:
        payload = _load_json(text, context)
        if not isinstance(payload, dict) or not isinstance(payload.get("data", []), list):
            raise MalformedResponse(f"{context}: expected an object with a 'data' list")
        return payload

    @staticmethod
    def _member(row: Dict[str, Any]) -> Optional[CohortMember]:
        paper_id = row.get("paperId")
        count = row.get("citationCount")
        if not paper_id or not isinstance(count, int) or count < 0:
            return None
        return CohortMember(
            paper_id=paper_id,
            citation_count=count,
            publication_date=_parse_date(row.get("publicationDate")),
        )

    def search_cohort(
        self,
        phrase: str,
        window: Optional[DateWindow] = None,
        capacity: int = 1000,
        anchor_date: Optional[date] = None,
    ) -> Cohort:
        """Collect up to ``capacity`` relevance-ranked papers matching a key phrase"""
        if not phrase or not phrase.strip():
            raise ValueError("search phrase must not be empty")
        if capacity < 1:
            raise ValueError("capacity must be positive")

        normalized = " ".join(phrase.lower().split())
        request = {
            "phrase": normalized,
            "window": [window.start.isoformat(), window.end.isoformat()] if window else None,
            "capacity": capacity,
        }
        key = cache_key("cohort", request)

        entry = self.cache.get("cohorts", key)
        if entry is not None:
            logger.info(f"Cohort '{normalized}' served from cache ({entry['fetched_at']})")
            pages = entry["responses"]
        else:
            pages = self._fetch_cohort_pages(phrase.strip(), window, capacity)
            self.cache.put("cohorts", key, request, pages)

        members: List[CohortMember] = []
        for page_number, text in enumerate(pages):
            payload = self._rows(text, f"search page {page_number}")
            for row in payload.get("data", []):
                member = self._member(row) if isinstance(row, dict) else None
                if member is None:
                    logger.debug(f"Skipping unusable search row: {row!r}")
                    continue
                members.append(member)

        cohort = Cohort.build(normalized, members, window=window, anchor_date=anchor_date, capacity=capacity)
        if cohort.size == 0:
            raise EmptyCohort(f"no usable papers found for '{normalized}'")
        logger.info(f"Cohort '{normalized}': {cohort.size} member(s)")
        return cohort

    def _fetch_cohort_pages(self, phrase: str, window: Optional[DateWindow], capacity: int) -> List[str]:
        url = f"{self.config.base_url.rstrip('/')}/paper/search"
        pages: List[str] = []
        usable = set()
        offset = 0

        while len(usable) < capacity:
            params: Dict[str, Any] = {
                "query": phrase,
                "offset": offset,
                "limit": min(self.config.page_size, capacity),
                "fields": SEARCH_FIELDS,
            }
            if window is not None:
                params["publicationDateOrYear"] = f"{window.start.isoformat()}:{window.end.isoformat()}"

            text = self._get(url, params)
            payload = self._rows(text, f"search offset {offset}")
            pages.append(text)

            data = payload.get("data", [])
            for row in data:
                member = self._member(row) if isinstance(row, dict) else None
                if member is not None and (window is None or window.contains(member.publication_date)):
                    usable.add(member.paper_id)

            if not data or "next" not in payload:
                break
            offset = int(payload["next"])

        logger.info(f"Fetched {len(pages)} search page(s) for '{phrase}'")
        return pages

    def fetch_paper(self, paper_id: str) -> PaperRecord:
        """Metadata for one paper; accepts S2 ids and prefixed ids such as ``arXiv:2106.09685``"""
        if not paper_id or not paper_id.strip():
            raise ValueError("paper id must not be empty")
        paper_id = paper_id.strip()

        request = {"paper_id": paper_id}
        key = cache_key("paper", request)
        entry = self.cache.get("papers", key)
        if entry is not None:
            text = entry["responses"][0]
        else:
            url = f"{self.config.base_url.rstrip('/')}/paper/{paper_id}"
            text = self._get(url, {"fields": PAPER_FIELDS})
            self.cache.put("papers", key, request, [text])

        return self._paper_from_payload(_load_json(text, f"paper {paper_id}"), paper_id)

    @staticmethod
    def _paper_from_payload(payload: Any, requested_id: str) -> PaperRecord:
        if not isinstance(payload, dict) or not payload.get("title"):
            raise MalformedResponse(f"paper {requested_id}: missing title")

        abstract = payload.get("abstract")
        missing_abstract = not abstract
        if missing_abstract:
            logger.warning(f"Paper {requested_id} has no abstract upstream")

        external = payload.get("externalIds") or {}
        count = payload.get("citationCount")
        return PaperRecord(
            paper_id=payload.get("paperId") or requested_id,
            arxiv_id=external.get("ArXiv"),
            title=payload["title"],
            abstract=abstract or "",
            citation_count=count if isinstance(count, int) and count >= 0 else 0,
            publication_date=_parse_date(payload.get("publicationDate")),
            categories=list(payload.get("fieldsOfStudy") or []),
            missing_abstract=missing_abstract,
        )

    def ingest_arxiv(
        self,
        categories: Sequence[str],
        date_range: DateWindow,
        limit: int,
        snapshot_path: Optional[Path] = None,
        exclude_ids: Iterable[str] = (),
    ) -> List[PaperRecord]:
        """Non-survey arXiv papers in the given categories uploaded within ``date_range``"""
        if not categories:
            raise ValueError("at least one arXiv category is required")
        if limit < 1:
            raise ValueError("limit must be positive")

        wanted = set(categories)
        excluded = set(exclude_ids)
        source = (
            iter_arxiv_snapshot(snapshot_path) if snapshot_path is not None
            else self._iter_arxiv_api(categories, date_range)
        )

        records: List[PaperRecord] = []
        surveys = 0
        for record in source:
            if not wanted.intersection(record.categories):
                continue
            if not date_range.contains(record.publication_date):
                continue
            if record.arxiv_id in excluded or record.paper_id in excluded:
                continue
            if is_survey_title(record.title):
                surveys += 1
                continue
            records.append(record)
            if len(records) >= limit:
                break

        logger.info(f"Ingested {len(records)} arXiv paper(s), skipped {surveys} survey-like title(s)")
        return records

    def _iter_arxiv_api(self, categories: Sequence[str], date_range: DateWindow) -> Iterator[PaperRecord]:
        cats = " OR ".join(f"cat:{c}" for c in categories)
        span = f"{date_range.start:%Y%m%d}0000 TO {date_range.end:%Y%m%d}2359"
        query = f"({cats}) AND submittedDate:[{span}]"
        start = 0

        while True:
            text = self._get(self.config.arxiv_api_url, {
                "search_query": query,
                "start": start,
                "max_results": self.config.page_size,
                "sortBy": "submittedDate",
                "sortOrder": "ascending",
            })
            entries = parse_arxiv_feed(text)
            if not entries:
                return
            yield from entries
            start += len(entries)


def parse_arxiv_feed(text: str) -> List[PaperRecord]:
    """Parse an arXiv Atom query response"""
    try:
        root = ET.fromstring(text)
    except ET.ParseError as e:
        raise MalformedResponse(f"arXiv feed is not valid XML: {e}") from e

    records = []
    for entry in root.findall(f"{ATOM}entry"):
        raw_id = (entry.findtext(f"{ATOM}id") or "").rsplit("/abs/", 1)[-1]
        arxiv_id = re.sub(r"v\d+$", "", raw_id.strip())
        title = " ".join((entry.findtext(f"{ATOM}title") or "").split())
        if not arxiv_id or not title:
            logger.warning("Skipping arXiv entry without id or title")
            continue
        published = _parse_date(entry.findtext(f"{ATOM}published"))
        records.append(PaperRecord(
            paper_id=f"arXiv:{arxiv_id}",
            arxiv_id=arxiv_id,
            title=title,
            abstract=" ".join((entry.findtext(f"{ATOM}summary") or "").split()),
            publication_date=published,
            categories=[c.get("term") for c in entry.findall(f"{ATOM}category") if c.get("term")],
        ))
    return records


def _snapshot_upload_date(row: Dict[str, Any]) -> Optional[date]:
    versions = row.get("versions") or []
    if versions and isinstance(versions[0], dict) and versions[0].get("created"):
        try:
            return email.utils.parsedate_to_datetime(versions[0]["created"]).date()
        except (TypeError, ValueError):
            pass
    return _parse_date(row.get("update_date"))


def iter_arxiv_snapshot(path: Path) -> Iterator[PaperRecord]:
    """Read an arXiv metadata snapshot, one JSON object per line; malformed lines are skipped"""
    with open(path, "r", encoding="utf-8") as f:
        for line_number, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
                arxiv_id = str(row["id"]).strip()
                upload = _snapshot_upload_date(row)
                if upload is None:
                    raise ValueError("no upload date")
                categories = row.get("categories") or ""
                if isinstance(categories, str):
                    categories = categories.split()
                yield PaperRecord(
                    paper_id=f"arXiv:{arxiv_id}",
                    arxiv_id=arxiv_id,
                    title=" ".join(str(row["title"]).split()),
                    abstract=" ".join(str(row.get("abstract") or "").split()),
                    publication_date=upload,
                    categories=list(categories),
                )
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
                logger.warning(f"Skipping malformed snapshot line {path}:{line_number}: {e}")
