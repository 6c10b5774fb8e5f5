"""
CSV artifacts with a provenance header
Every file starts with '#' comment lines carrying the config hash and build id
"""

import csv
import io
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from config.settings import LabSettings
from src.models.world import World


def format_value(value: Any) -> str:
    """Stable text for a CSV cell; floats use repr so files are bit-reproducible"""
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def provenance_lines(config_hash: str, build_id: Optional[str] = None,
                     comments: Sequence[str] = ()) -> List[str]:
    lines = [f"# config_hash={config_hash} build_id={build_id or LabSettings.BUILD_ID}"]
    lines += [f"# {c}" for c in comments]
    return lines


def render_csv(fieldnames: Sequence[str], rows: Iterable[Dict[str, Any]], config_hash: str,
               build_id: Optional[str] = None, comments: Sequence[str] = ()) -> str:
    buf = io.StringIO()
    for line in provenance_lines(config_hash, build_id, comments):
        buf.write(line + "\n")
    writer = csv.DictWriter(buf, fieldnames=list(fieldnames), extrasaction="ignore", lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: format_value(row.get(k)) for k in fieldnames})
    return buf.getvalue()


def write_csv(path, fieldnames: Sequence[str], rows: Iterable[Dict[str, Any]], config_hash: str,
              build_id: Optional[str] = None, comments: Sequence[str] = ()) -> Path:
    """Write rows under a provenance header"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as f:
        f.write(render_csv(fieldnames, rows, config_hash, build_id, comments))
    return path


def read_csv(path) -> Tuple[Dict[str, str], List[Dict[str, str]]]:
    """(provenance, rows); provenance holds the key=value pairs of the first comment line"""
    provenance: Dict[str, str] = {}
    data_lines = []
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            if line.startswith("#"):
                if not provenance:
                    for token in line[1:].split():
                        if "=" in token:
                            key, value = token.split("=", 1)
                            provenance[key] = value
                continue
            data_lines.append(line)
    return provenance, list(csv.DictReader(data_lines))


class TrajectoryRecorder:
    """
    One CSV row per environment step.
    Columns: episode, t, then x/y/vx/vy per agent, px/py per landmark,
    the flat action vector of each agent, and each agent's reward.
    """

    def __init__(self, path, n_agents: int, n_landmarks: int, action_sizes: Sequence[int],
                 config_hash: str = "", build_id: Optional[str] = None):
        self.path = Path(path)
        self.fieldnames = ["episode", "t"]
        for i in range(n_agents):
            self.fieldnames += [f"agent{i}_x", f"agent{i}_y", f"agent{i}_vx", f"agent{i}_vy"]
        for k in range(n_landmarks):
            self.fieldnames += [f"landmark{k}_x", f"landmark{k}_y"]
        for i, size in enumerate(action_sizes):
            self.fieldnames += [f"agent{i}_a{j}" for j in range(size)]
        self.fieldnames += [f"agent{i}_reward" for i in range(n_agents)]
        self.config_hash = config_hash
        self.build_id = build_id
        self.rows: List[Dict[str, Any]] = []

    def record(self, episode: int, world: World, actions: Sequence[np.ndarray], rewards: np.ndarray):
        """world is the successor state of the step"""
        row: Dict[str, Any] = {"episode": episode, "t": world.t}
        for i, agent in enumerate(world.agents):
            row[f"agent{i}_x"], row[f"agent{i}_y"] = agent.position
            row[f"agent{i}_vx"], row[f"agent{i}_vy"] = agent.velocity
        for k, landmark in enumerate(world.landmarks):
            row[f"landmark{k}_x"], row[f"landmark{k}_y"] = landmark.position
        for i, action in enumerate(actions):
            for j, value in enumerate(action):
                row[f"agent{i}_a{j}"] = value
        for i, r in enumerate(rewards):
            row[f"agent{i}_reward"] = r
        self.rows.append(row)

    def flush(self) -> Path:
        comments = ["trajectory: one row per step; positions/velocities are post-step; columns: "
                    + " ".join(self.fieldnames)]
        return write_csv(self.path, self.fieldnames, self.rows, self.config_hash, self.build_id, comments)
