import os
from concurrent.futures import ThreadPoolExecutor


def max_threads():
    """Thread cap from ``STRAINFORGE_THREADS`` (default: up to 4 CPUs)."""
    env = os.environ.get("STRAINFORGE_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return max(1, min(4, os.cpu_count() or 1))


def parallel_map(fn, items):
    """Ordered map; results are identical to the serial map."""
    items = list(items)
    n = min(max_threads(), len(items))
    if n <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))
