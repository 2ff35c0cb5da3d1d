from __future__ import annotations

import logging
from typing import Iterable, Type

from tenacity import (
    before_sleep_log,
    retry,
    retry_if_exception_type,
    stop_after_attempt,
    wait_exponential_jitter,
)

from .config import settings

logger = logging.getLogger(__name__)


def io_retry(
    max_attempts: int | None = None,
    *,
    initial: float | None = None,
    maximum: float | None = None,
    retry_on: Iterable[Type[BaseException]] | None = None,
):
    """Retry decorator for result-file writes (works on sync and async callables).

    Defaults come from RETRY_MAX_ATTEMPTS, RETRY_INITIAL_DELAY and RETRY_MAX_DELAY.
    Only ``OSError`` is retried unless ``retry_on`` says otherwise; each retry is logged.
    """
    attempts = int(max_attempts or settings.retry_max_attempts)
    first_wait = float(initial or settings.retry_initial_delay)
    wait_cap = float(maximum or settings.retry_max_delay)
    retryable = tuple(retry_on) if retry_on else (OSError,)
    return retry(
        reraise=True,
        stop=stop_after_attempt(attempts),
        wait=wait_exponential_jitter(initial=first_wait, max=wait_cap),
        retry=retry_if_exception_type(retryable),
        before_sleep=before_sleep_log(logger, logging.WARNING),
    )
