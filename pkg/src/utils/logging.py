"""
Centralized logging utilities for the lab
Consistent key=value suffixes for training, probe and harness messages
"""

import time
from typing import Any, Dict, Optional
from .logger import setup_logger


def _format_extra(extra_data: Optional[Dict]) -> str:
    if not extra_data:
        return ""
    return " (" + ", ".join(f"{k}={v}" for k, v in extra_data.items()) + ")"


class LoggingUtils:
    """Centralized logging utilities"""

    @staticmethod
    def _get_logger(component: str):
        """Get logger for component"""
        return setup_logger(component)

    @staticmethod
    def log_info(component: str, message: str, extra_data: Dict = None):
        """Log info message"""
        LoggingUtils._get_logger(component).info(message + _format_extra(extra_data))


class TrainingLogger:
    """Specialized logging for training runs"""

    @staticmethod
    def _get_logger():
        return setup_logger("Trainer")

    @staticmethod
    def log_episode(episode: int, env_steps: int, team_reward: float,
                    critic_updates: int, policy_updates: int, steps_per_second: float = None):
        """Log periodic training progress"""
        extra = {
            "episode": episode,
            "env_steps": env_steps,
            "team_reward": f"{team_reward:.3f}",
            "critic_updates": critic_updates,
            "policy_updates": policy_updates,
        }
        if steps_per_second is not None:
            extra["steps_per_s"] = f"{steps_per_second:.1f}"
        TrainingLogger._get_logger().info("Training progress" + _format_extra(extra))

    @staticmethod
    def log_bias(eval_step: int, agent: int, estimated: float, true_q: float):
        """Log one bias report line"""
        extra = {
            "eval_step": eval_step,
            "agent": agent,
            "estimated": f"{estimated:.4f}",
            "true": f"{true_q:.4f}",
            "bias": f"{estimated - true_q:+.4f}",
        }
        setup_logger("BiasProbe").info("Bias report" + _format_extra(extra))

    @staticmethod
    def log_seed_outcome(seed: int, ok: bool, detail: str = ""):
        """Log the outcome of one seed in a multi-seed run"""
        logger = setup_logger("Harness")
        if ok:
            logger.info("Seed finished" + _format_extra({"seed": seed, "final": detail}))
        else:
            logger.error("Seed failed" + _format_extra({"seed": seed, "error": detail}))


class PerformanceTracker:
    """Times a block and logs its duration"""

    def __init__(self, component: str, operation: str):
        self.component = component
        self.operation = operation
        self.start_time = None
        self.duration_ms = 0.0
        self.extra_data = {}
        self.logger = setup_logger(component)

    def __enter__(self):
        self.start_time = time.perf_counter()
        return self

    def __exit__(self, exc_type, exc_val, exc_tb):
        if self.start_time is not None:
            self.duration_ms = (time.perf_counter() - self.start_time) * 1000
            perf = {"duration_ms": f"{self.duration_ms:.2f}"}
            perf.update(self.extra_data)
            self.logger.info(f"PERFORMANCE: {self.operation} completed" + _format_extra(perf))

    def add_data(self, key: str, value: Any):
        """Add extra data to performance log"""
        self.extra_data[key] = str(value)
