import logging
from datetime import datetime
import os
import pandas as pd
from concurrent_log_handler import ConcurrentRotatingFileHandler


LOG_DIR = os.getenv("IDEOLOGY_LOG_DIR", "logs")
LOG_FORMAT = '[%(asctime)s]---%(levelname)s---%(lineno)d---%(filename)s---%(funcName)s()---%(message)s'

def get_current_time_stamp():
    return f"{datetime.now().strftime('%Y-%m-%d-%H-%M-%S')}"

def get_log_file_name():
    return f"log_{get_current_time_stamp()}.log"

LOG_FILE_NAME = get_log_file_name()

os.makedirs(LOG_DIR, exist_ok = True)

LOG_FILE_PATH = os.path.join(LOG_DIR,LOG_FILE_NAME)


# campaign and tagging pools log from worker threads into the same file
logging.basicConfig(handlers = [ConcurrentRotatingFileHandler(LOG_FILE_PATH, mode = "a",
                                                              maxBytes = 50 * 1024 * 1024,
                                                              backupCount = 5, encoding = "utf-8")],
format = LOG_FORMAT,
level = logging.INFO)
logging.getLogger("httpx").setLevel(logging.WARNING)
logging.getLogger("matplotlib").setLevel(logging.WARNING)


def get_log_dataframe(file_path):
    data = []
    with open(file_path, encoding = "utf-8") as log_file:
        for line in log_file.readlines():
            parts = line.rstrip("\n").split("---", 5)
            if len(parts) == 6:
                data.append(parts)

    columns = ["Time stamp","Log Level","line number","file name","function name","message"]
    log_df = pd.DataFrame(data, columns = columns)

    log_df["log_message"] = log_df['Time stamp'].astype(str) +":$"+ log_df["message"]

    return log_df


def count_log_levels(file_path = LOG_FILE_PATH) -> dict[str, int]:
    """WARNING/ERROR line counts of a log file, used by the run report."""
    if not os.path.exists(file_path):
        return {"WARNING": 0, "ERROR": 0}
    log_df = get_log_dataframe(file_path)
    counts = log_df["Log Level"].value_counts()
    return {level: int(counts.get(level, 0)) for level in ("WARNING", "ERROR")}
