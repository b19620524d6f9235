import logging
from logging.handlers import RotatingFileHandler

from src.logger import log_run_header, setup_logging


def test_setup_logging_writes_rotating_file(tmp_path):
    root = logging.getLogger()
    saved, level = list(root.handlers), root.level
    try:
        logger = setup_logging('DEBUG', str(tmp_path / 'logs'))
        files = [h for h in logger.handlers if isinstance(h, RotatingFileHandler)]
        assert len(files) == 1 and logger.level == logging.DEBUG
        assert logging.getLogger('PIL').level == logging.WARNING
        log_run_header(logger, 'digitize')
        files[0].flush()
        [log_file] = (tmp_path / 'logs').glob('pid_digitize_*.log')
        assert 'P&ID Digitization: digitize' in log_file.read_text(encoding='utf-8')
    finally:
        for handler in list(root.handlers):
            handler.close()
        root.handlers[:] = saved
        root.setLevel(level)
