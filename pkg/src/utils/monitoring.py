"""
Stage tracking and process health
"""
import logging
import os
import time
from collections import defaultdict
from contextlib import contextmanager
from datetime import datetime

import psutil

logger = logging.getLogger(__name__)


class RunTracker:
    def __init__(self):
        self.stages = defaultdict(dict)
        self.success_count = 0
        self.error_count = 0

    def record_success(self, stage, elapsed_s):
        self.stages[stage]['status'] = 'success'
        self.stages[stage]['elapsed_s'] = elapsed_s
        self.success_count += 1
        logger.info(f"✅ Stage {stage} completed in {elapsed_s:.3f}s")

    def record_error(self, stage, error_type, error_message):
        self.stages[stage]['status'] = 'error'
        self.stages[stage]['error_type'] = error_type
        self.stages[stage]['error_message'] = error_message
        self.error_count += 1
        logger.error(f"❌ Stage {stage} failed: {error_type} - {error_message}")

    @contextmanager
    def stage(self, name):
        """Time a block and record its outcome"""
        start = time.perf_counter()
        try:
            yield
        except Exception as e:
            self.record_error(name, type(e).__name__, str(e))
            raise
        self.record_success(name, time.perf_counter() - start)

    def get_stats(self):
        return {
            'total_stages': len(self.stages),
            'success_count': self.success_count,
            'error_count': self.error_count,
            'success_rate': self.success_count / max(len(self.stages), 1) * 100
        }


def get_process_health():
    """CPU and memory figures for this process and the host"""
    try:
        process = psutil.Process(os.getpid())
        memory = psutil.virtual_memory()
        return {
            'timestamp': datetime.now().isoformat(),
            'process': {
                'cpu_percent': process.cpu_percent(interval=None),
                'rss_mb': round(process.memory_info().rss / (1024 ** 2), 2),
            },
            'system': {
                'memory_percent': memory.percent,
                'memory_available_gb': round(memory.available / (1024 ** 3), 2),
            },
        }
    except Exception as e:
        logger.error(f"Health check error: {e}")
        return {
            'timestamp': datetime.now().isoformat(),
            'error': str(e),
        }


def log_stream_health(outputs, footprint_bytes):
    """Log process health alongside the stream's fixed state size"""
    health = get_process_health()
    rss = health.get('process', {}).get('rss_mb', 'n/a')
    logger.info(f"📊 Stream: {outputs} outputs, state {footprint_bytes} bytes, rss {rss} MB")
    return health
