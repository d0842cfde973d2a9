"""Chat-completion gateway shared by key phrase extraction and remote scoring"""

import logging
import time
from typing import Any, Callable, Dict, List, Optional

import httpx
from pydantic import BaseModel, ConfigDict, Field, SecretStr

from .exceptions import EmptyResponse, GatewayError, MalformedResponse, RateLimited, TransportFailure
from .scholar_gateway import RateLimiter

logger = logging.getLogger(__name__)

DEFAULT_SYSTEM_PROMPT = "You are a helpful assistant."


class LLMConfig(BaseModel):
    """Chat gateway connection settings"""

    model_config = ConfigDict(frozen=True)

    base_url: str = "https://api.openai.com/v1"
    api_key: Optional[SecretStr] = None
    model: str = "gpt-3.5-turbo-0125"
    temperature: float = 0.0
    timeout_seconds: float = 60.0
    retry_budget: int = Field(default=3, ge=0)
    backoff_seconds: float = Field(default=2.0, ge=0)
    max_requests_per_window: int = Field(default=60, ge=1)
    window_seconds: float = Field(default=60.0, gt=0)
    max_workers: int = Field(default=4, ge=1)
    system_prompt: str = DEFAULT_SYSTEM_PROMPT


class ChatGateway:
    """Minimal client for the standard ``/chat/completions`` wire shape"""

    def __init__(
        self,
        config: LLMConfig,
        client: Optional[httpx.Client] = None,
        limiter: Optional[RateLimiter] = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self.config = config
        self.client = client or httpx.Client(timeout=config.timeout_seconds)
        if config.api_key is not None:
            self.client.headers["Authorization"] = f"Bearer {config.api_key.get_secret_value()}"
        self.limiter = limiter or RateLimiter(config.max_requests_per_window, config.window_seconds, sleep=sleep)
        self._sleep = sleep

    def close(self) -> None:
        self.client.close()

    def build_messages(self, prompt: str, system_prompt: Optional[str] = None) -> List[Dict[str, str]]:
        return [
            {"role": "system", "content": system_prompt or self.config.system_prompt},
            {"role": "user", "content": prompt},
        ]

    def complete(self, prompt: str, system_prompt: Optional[str] = None) -> str:
        """Send one user prompt and return the assistant text (unmodified)"""
        url = f"{self.config.base_url.rstrip('/')}/chat/completions"
        body: Dict[str, Any] = {
            "model": self.config.model,
            "messages": self.build_messages(prompt, system_prompt),
            "temperature": self.config.temperature,
        }

        last_error: Optional[GatewayError] = None
        for attempt in range(self.config.retry_budget + 1):
            if attempt:
                self._sleep(self.config.backoff_seconds * (2 ** (attempt - 1)))
            self.limiter.acquire()
            try:
                response = self.client.post(url, json=body)
            except httpx.TransportError as e:
                logger.warning(f"Chat gateway transport error (attempt {attempt + 1}): {e}")
                last_error = TransportFailure(str(e))
                continue

            if response.status_code == 429:
                last_error = RateLimited(f"chat gateway: HTTP 429 after {attempt + 1} attempt(s)")
                continue
            if response.status_code >= 500:
                last_error = TransportFailure(f"chat gateway: HTTP {response.status_code}")
                continue
            if response.status_code >= 400:
                raise GatewayError(f"chat gateway: HTTP {response.status_code}: {response.text[:200]}")

            return self._content(response)

        logger.error(f"Chat gateway failed after {self.config.retry_budget + 1} attempt(s): {last_error}")
        raise last_error

    @staticmethod
    def _content(response: httpx.Response) -> str:
        try:
            payload = response.json()
            content = payload["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as e:
            raise MalformedResponse(f"chat gateway: unexpected response shape ({e})") from e
        if content is None or not str(content).strip():
            raise EmptyResponse("chat gateway returned an empty message")
        return str(content)
