import logging

from p3o.core.config import settings

LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"

def resolve_log_level(level: str = None) -> str:
    """An explicit level wins; otherwise DEBUG mode forces debug output"""
    if level:
        return level.upper()

    return "DEBUG" if settings.DEBUG else settings.LOG_LEVEL.upper()

def configure_logging(level: str = None) -> None:
    """Install a single stream handler on the root logger"""
    logging.basicConfig(
        level  = resolve_log_level(level),
        format = LOG_FORMAT,
        force  = True
    )
