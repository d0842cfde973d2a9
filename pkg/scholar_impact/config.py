"""Configuration settings for the scholar impact toolkit"""

import logging
import os
import tomllib
from pathlib import Path
from typing import Any, Dict, Optional, Union

from dotenv import load_dotenv
from pydantic import Field
from pydantic_settings import BaseSettings

logger = logging.getLogger(__name__)

# Only load .env if the API key isn't already set
# This allows a calling process to pass env vars directly
if not os.getenv("S2_API_KEY"):
    load_dotenv(override=False)


class Settings(BaseSettings):
    """Application settings"""

    # Semantic Scholar settings
    s2_api_base_url: str = Field(
        default="https://api.semanticscholar.org/graph/v1",
        description="Semantic Scholar Graph API base URL"
    )
    s2_api_key: Optional[str] = Field(
        default=None,
        description="Semantic Scholar API key, sent as the x-api-key header"
    )
    s2_live: bool = Field(
        default=False,
        description="Allow network requests; when false only cached responses are served"
    )
    s2_max_requests_per_window: int = Field(
        default=1,
        ge=1,
        description="Outbound request budget per sliding window"
    )
    s2_window_seconds: float = Field(
        default=1.0,
        gt=0,
        description="Length of the rate limiter's sliding window"
    )
    s2_retry_budget: int = Field(
        default=3,
        ge=0,
        description="Retries on 429/5xx/transport errors before giving up"
    )
    s2_timeout_seconds: float = Field(
        default=30.0,
        description="HTTP timeout for Semantic Scholar and arXiv calls"
    )
    cache_dir: str = Field(
        default="./.scholar_cache",
        description="Directory holding the JSON-lines response cache"
    )
    arxiv_api_url: str = Field(
        default="https://export.arxiv.org/api/query",
        description="arXiv Atom query endpoint"
    )

    # Chat gateway settings
    llm_base_url: str = Field(
        default="https://api.openai.com/v1",
        description="Base URL of a chat-completion compatible gateway"
    )
    llm_api_key: Optional[str] = Field(
        default=os.getenv("OPENAI_API_KEY", None),
        description="Chat gateway key (falls back to OPENAI_API_KEY)"
    )
    llm_model: str = Field(
        default="gpt-3.5-turbo-0125",
        description="Model used for key phrases and remote scoring"
    )
    llm_max_workers: int = Field(
        default=4,
        ge=1,
        description="Fan-out for concurrent chat calls"
    )

    # Metric and dataset settings
    cohort_capacity: int = Field(
        default=1000,
        ge=1,
        description="Number of related papers retrieved per cohort (C)"
    )
    half_span_months: int = Field(
        default=6,
        ge=0,
        description="Same-period window half width in calendar months"
    )
    min_cohort_size: int = Field(
        default=30,
        ge=1,
        description="Smallest cohort accepted for a dataset label"
    )
    ndcg_k: int = Field(
        default=20,
        ge=1,
        description="NDCG position cutoff"
    )
    seed: int = Field(
        default=0,
        description="Default seed for sampling, splitting and training"
    )

    # Service settings
    server_name: str = Field(
        default="scholar-impact",
        description="MCP server name"
    )
    log_level: str = Field(
        default="INFO",
        description="Logging level"
    )

    model_config = {
        "env_file": ".env" if not os.getenv("S2_API_KEY") else None,
        "env_file_encoding": "utf-8",
        "extra": "ignore"
    }

    def validate_settings(self) -> bool:
        """Validate that the settings are usable"""
        errors = []

        if not self.s2_api_base_url:
            errors.append("S2_API_BASE_URL is required")
        if not self.cache_dir:
            errors.append("CACHE_DIR is required")
        if self.log_level.upper() not in logging.getLevelNamesMapping():
            errors.append(f"LOG_LEVEL '{self.log_level}' is not a logging level")

        if errors:
            raise ValueError(f"Configuration errors: {', '.join(errors)}")

        return True

    def require_llm(self) -> bool:
        """Validate settings needed by the chat gateway"""
        errors = []

        if not self.llm_base_url:
            errors.append("LLM_BASE_URL is required")
        if not self.llm_api_key:
            errors.append("LLM_API_KEY is required")

        if errors:
            raise ValueError(f"Configuration errors: {', '.join(errors)}")

        return True

    def gateway_config(self):
        """Build the Semantic Scholar gateway configuration"""
        from .scholar_gateway import GatewayConfig

        return GatewayConfig(
            base_url=self.s2_api_base_url,
            api_key=self.s2_api_key,
            max_requests_per_window=self.s2_max_requests_per_window,
            window_seconds=self.s2_window_seconds,
            retry_budget=self.s2_retry_budget,
            cache_dir=Path(self.cache_dir),
            timeout_seconds=self.s2_timeout_seconds,
            live=self.s2_live,
            arxiv_api_url=self.arxiv_api_url,
        )

    def llm_config(self):
        """Build the chat gateway configuration"""
        from .llm_client import LLMConfig

        return LLMConfig(
            base_url=self.llm_base_url,
            api_key=self.llm_api_key,
            model=self.llm_model,
            max_workers=self.llm_max_workers,
            retry_budget=self.s2_retry_budget,
        )


def load_settings(config_path: Optional[Union[str, Path]] = None, **overrides: Any) -> Settings:
    """Load settings from environment, an optional TOML file and explicit overrides

    File values win over environment values, explicit overrides win over both.
    """
    values: Dict[str, Any] = {}
    if config_path:
        path = Path(config_path)
        try:
            with open(path, "rb") as f:
                data = tomllib.load(f)
        except (OSError, tomllib.TOMLDecodeError) as e:
            logger.error(f"Failed to read config file {path}: {e}")
            raise ValueError(f"Configuration errors: cannot read {path}: {e}") from e

        for key, value in data.items():
            if isinstance(value, dict):
                raise ValueError(f"Configuration errors: nested table '{key}' is not supported")
            values[key.lower()] = value
        logger.info(f"Loaded {len(values)} setting(s) from {path}")

    values.update({k: v for k, v in overrides.items() if v is not None})
    return Settings(**values)
