import functools
import logging
import sys
import time

import structlog
from prometheus_client import Counter, Histogram

CONSTRUCTIONS_TOTAL = Counter(
    "mixturecraft_constructions_total", "Total number of mixture constructions", ["mode", "status"]
)
CONSTRUCTION_DURATION = Histogram(
    "mixturecraft_construction_duration_seconds", "Construction wall time", ["mode"]
)
COMPONENTS_EMITTED = Histogram(
    "mixturecraft_components_emitted",
    "Number of components in emitted mixtures",
    ["mode"],
    buckets=(1, 10, 100, 1_000, 10_000, 100_000, 1_000_000),
)


def setup_logging(level: str = "WARNING", fmt: str = "json"):
    """Setup structured logging on stderr"""
    logging.basicConfig(
        format="%(message)s",
        stream=sys.stderr,
        level=getattr(logging, level.upper()),
        force=True,
    )

    renderer = structlog.dev.ConsoleRenderer() if fmt == "console" else structlog.processors.JSONRenderer()
    structlog.configure(
        processors=[
            structlog.stdlib.filter_by_level,
            structlog.stdlib.add_logger_name,
            structlog.stdlib.add_log_level,
            structlog.stdlib.PositionalArgumentsFormatter(),
            structlog.processors.TimeStamper(fmt="iso"),
            structlog.processors.StackInfoRenderer(),
            structlog.processors.format_exc_info,
            structlog.processors.UnicodeDecoder(),
            renderer,
        ],
        context_class=dict,
        logger_factory=structlog.stdlib.LoggerFactory(),
        wrapper_class=structlog.stdlib.BoundLogger,
        cache_logger_on_first_use=True,
    )


def get_logger(name: str):
    """Get a structured logger"""
    return structlog.get_logger(name)


logger = get_logger(__name__)


def monitored_construction(mode: str):
    """Wrap a pipeline with timing, counters and start/finish log events.

    The wrapped function must return ``(mixture, report)``.
    """

    def decorator(func):
        @functools.wraps(func)
        def wrapper(*args, **kwargs):
            start_time = time.perf_counter()
            try:
                logger.info("Construction started", mode=mode)
                mixture, report = func(*args, **kwargs)

                duration = time.perf_counter() - start_time
                CONSTRUCTION_DURATION.labels(mode=mode).observe(duration)
                CONSTRUCTIONS_TOTAL.labels(mode=mode, status="success").inc()
                COMPONENTS_EMITTED.labels(mode=mode).observe(len(mixture.components))

                logger.info("Construction completed", mode=mode, duration=duration, m=len(mixture.components))
                return mixture, report

            except Exception as e:
                duration = time.perf_counter() - start_time
                CONSTRUCTION_DURATION.labels(mode=mode).observe(duration)
                CONSTRUCTIONS_TOTAL.labels(mode=mode, status="failure").inc()

                logger.error("Construction failed", mode=mode, error=str(e), duration=duration)
                raise

        return wrapper

    return decorator
