import os
from pathlib import Path

THREADS_VAR = "POXBENCH_THREADS"
CACHE_VAR = "POXBENCH_CACHE"


def worker_count(default: int = 1) -> int:
    raw = os.environ.get(THREADS_VAR)
    if not raw:
        return default
    try:
        return max(1, int(raw))
    except ValueError:
        return default


def cache_dir(override: str | Path | None = None) -> Path:
    if override is not None:
        return Path(override)
    raw = os.environ.get(CACHE_VAR)
    return Path(raw) if raw else Path.cwd() / ".poxbench_cache"
