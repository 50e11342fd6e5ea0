import os
import time

import psutil

from dstap.utils.logger import logger


class MemUtil(object):
    """Resident memory and elapsed time at stage boundaries of a long run."""

    def __init__(self, rss_mem=True, timing=True):
        self.rss_mem = rss_mem
        self.timing = timing
        self.rss_mem_init = None
        self.rss_mem_prev = None
        self.t_init = time.perf_counter()
        self.t_prev = self.t_init

    def rss_mb(self):
        return psutil.Process(os.getpid()).memory_info().rss / (1024 ** 2)

    def print_rss_memory_usage(self, stage=''):
        current = self.rss_mb()
        if self.rss_mem_init is None:
            self.rss_mem_init = current
            self.rss_mem_prev = current
        logger.info(f"[{stage}] RSS Mem Usage: cur={current:.2f} incr={current - self.rss_mem_prev:.2f} "
                    f"acc_incr={current - self.rss_mem_init:.2f} MB")
        self.rss_mem_prev = current

    def print_elapsed(self, stage=''):
        now = time.perf_counter()
        logger.info(f"[{stage}] elapsed={now - self.t_prev:.2f}s total={now - self.t_init:.2f}s")
        self.t_prev = now

    def print_memory_usage(self, stage='', rss=None, timing=None):
        rss = self.rss_mem if rss is None else rss
        timing = self.timing if timing is None else timing
        if rss:
            self.print_rss_memory_usage(stage)
        if timing:
            self.print_elapsed(stage)
