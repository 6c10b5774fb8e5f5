"""
Wall-clock accounting for training runs
Timings never enter metrics files; they go to the log and the run summary
"""

import time
import threading
from collections import deque
from typing import Any, Dict


class StepRateMonitor:
    """
    Environment steps per second over a sliding window of episodes
    """

    def __init__(self, window: int = 50):
        self.episode_rates = deque(maxlen=window)
        self.start_time = time.perf_counter()
        self.total_steps = 0
        self._episode_start = self.start_time
        self._lock = threading.Lock()

    def start_episode(self):
        with self._lock:
            self._episode_start = time.perf_counter()

    def end_episode(self, steps: int):
        with self._lock:
            elapsed = time.perf_counter() - self._episode_start
            self.total_steps += steps
            if elapsed > 0:
                self.episode_rates.append(steps / elapsed)

    def steps_per_second(self) -> float:
        with self._lock:
            if not self.episode_rates:
                return 0.0
            return sum(self.episode_rates) / len(self.episode_rates)

class ProfileTimer:
    """
    Accumulating timer for one named section
    """

    def __init__(self, name: str):
        self.name = name
        self.start_time = 0.0
        self.total_time = 0.0
        self.call_count = 0

    def __enter__(self):
        self.start_time = time.perf_counter()
        return self

    def __exit__(self, exc_type, exc_val, exc_tb):
        self.total_time += time.perf_counter() - self.start_time
        self.call_count += 1

    def get_average_time(self) -> float:
        return self.total_time / self.call_count if self.call_count > 0 else 0.0

    def get_stats(self) -> Dict[str, Any]:
        return {
            "name": self.name,
            "total_s": round(self.total_time, 3),
            "calls": self.call_count,
            "average_ms": round(self.get_average_time() * 1000, 3),
        }


class ProfilerManager:
    """
    Named timers for the sections of a training step (act, env, update, probe)
    """

    def __init__(self):
        self.timers: Dict[str, ProfileTimer] = {}
        self._lock = threading.Lock()

    def get_timer(self, name: str) -> ProfileTimer:
        with self._lock:
            if name not in self.timers:
                self.timers[name] = ProfileTimer(name)
            return self.timers[name]

    def get_all_stats(self) -> Dict[str, Dict[str, Any]]:
        with self._lock:
            return {name: timer.get_stats() for name, timer in self.timers.items()}
