import logging
import logging.config

from app.config import settings


LOGGING_FORMAT = '%(asctime)s - %(levelname)s - %(name)s - %(message)s'
LOG_FILE_PATH = settings.log_dir / 'patchmatch.log'


LOGGING_CONFIG = {
    'version': 1,
    'disable_existing_loggers': False,
    'formatters': {
        'standard': {
            'format': LOGGING_FORMAT
        },
    },
    'handlers': {
        'file': {
            'level': settings.log_level,
            'formatter': 'standard',
            'class': 'logging.FileHandler',
            'filename': str(LOG_FILE_PATH),
            'mode': 'a',
            'encoding': 'utf-8',
        },
        'stderr': {
            'level': settings.log_level,
            'formatter': 'standard',
            'class': 'logging.StreamHandler',
            'stream': 'ext://sys.stderr',
        },
    },
    'loggers': {
        '': {
            'handlers': ['file', 'stderr'],
            'level': settings.log_level,
            'propagate': True
        },
    }
}

_configured = False


def setup_logging() -> None:
    """Create the log directory and apply LOGGING_CONFIG once per process"""
    global _configured
    if _configured:
        return
    settings.log_dir.mkdir(parents=True, exist_ok=True)
    logging.config.dictConfig(LOGGING_CONFIG)
    _configured = True
