import os

THREADS_ENV = "RBSDE_THREADS"


def thread_count() -> int:
    """Worker threads allowed by ``RBSDE_THREADS`` (unset or 0 means one per CPU)."""
    raw = os.environ.get(THREADS_ENV, "0").strip() or "0"
    try:
        value = int(raw)
    except ValueError:
        value = 0
    if value <= 0:
        value = os.cpu_count() or 1
    return max(1, value)
