__version__ = "1.0.0"

from .config import PipelineConfig, load_config
from .report import cli_dispatch, run_all
