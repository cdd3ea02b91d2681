import logging
import sys

import numpy as np
import structlog

LOG_FORMAT = "%(asctime)s %(levelname)9s %(name)s:%(lineno)4s: %(message)s"


def _plain_numbers(_, __, event_dict):
    # numpy scalars render as np.float32(...) otherwise
    for key, value in event_dict.items():
        if isinstance(value, np.generic):
            event_dict[key] = value.item()
    return event_dict


def setup_logging(level="INFO"):
    """Route stdlib and structlog output to stderr; stdout carries command results."""
    logging.basicConfig(
        level=getattr(logging, str(level).upper(), logging.INFO),
        format=LOG_FORMAT,
        stream=sys.stderr,
    )
    structlog.configure(
        processors=[
            structlog.processors.StackInfoRenderer(),
            structlog.processors.format_exc_info,
            structlog.contextvars.merge_contextvars,
            _plain_numbers,
            structlog.processors.KeyValueRenderer(
                key_order=["event", "command", "epoch", "step", "loss"]
            ),
        ],
        logger_factory=structlog.stdlib.LoggerFactory(),
        cache_logger_on_first_use=False,
    )
