import sys

from loguru import logger

#: Log levels for ``-v`` counts, from none upwards.
_LEVELS = ("WARNING", "INFO", "DEBUG")


def configure_logging(verbosity: int = 0) -> None:
    """
    Enables this library's log output on stderr.

    The library is silent until this is called.

    :param verbosity: 0 for warnings only, 1 for progress, 2 or more for per-sweep detail.
    """

    level = _LEVELS[min(max(verbosity, 0), len(_LEVELS) - 1)]
    logger.remove()
    logger.add(
        sys.stderr,
        level=level,
        format="<green>{time:HH:mm:ss}</green> <level>{level: <7}</level> {name}: {message}",
    )
    logger.enable("lqlab")
