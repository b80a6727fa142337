import logging
import os

# Configure logging
LOG_FILE = os.getenv("MMFIT_LOG_FILE", "mmfit.log")
ERROR_LOG_FILE = os.getenv("MMFIT_ERROR_LOG_FILE", "error.log")
LOG_LEVEL = os.getenv("MMFIT_LOG_LEVEL", "INFO").upper()
log_format = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"

handlers = [logging.StreamHandler()]
if LOG_FILE:
    handlers.append(logging.FileHandler(LOG_FILE))

logging.basicConfig(
    level=getattr(logging, LOG_LEVEL, logging.INFO),
    format=log_format,
    handlers=handlers
)

logger = logging.getLogger("MMFIT")

# Add a separate handler for errors
if ERROR_LOG_FILE:
    error_handler = logging.FileHandler(ERROR_LOG_FILE)
    error_handler.setLevel(logging.ERROR)
    error_handler.setFormatter(logging.Formatter(log_format))
    logger.addHandler(error_handler)
