import logging
import os

# Define the logging format
log_format = "%(asctime)s - %(levelname)s - %(module)s: %(message)s"


def configure_logging(level="WARNING", log_dir="logs"):
    """Set up the root logger with a console handler and a file under log_dir."""
    logging_level = getattr(logging, str(level).upper(), logging.WARNING)

    handlers = [logging.StreamHandler()]
    if log_dir:
        os.makedirs(log_dir, exist_ok=True)
        handlers.append(logging.FileHandler(os.path.join(log_dir, "vrl.log"), mode="a"))

    logging.basicConfig(level=logging_level, format=log_format, handlers=handlers, force=True)
    return logging_level


def get_logger(module_name):
    return logging.getLogger(module_name)
