"""Replay buffer types and their on-disk format.

A buffer directory holds a ``manifest`` (JSON: domain, schema version,
counts, file list) plus one record file per trajectory. Record files are a
magic/version header, a JSON metadata block, then the observation and
action arrays as little-endian IEEE-754 float32. Serialization is
deterministic: identical buffers produce byte-identical directories.
"""
from __future__ import annotations

import hashlib
import json
import os
import struct
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import EmptyBuffer

SCHEMA_VERSION = 1
MAGIC = b"BTRJ"


@dataclass
class TimestepRecord:
    observation: np.ndarray
    action: np.ndarray
    labels: list
    subtask_id: str


@dataclass
class LabeledTrajectory:
    timesteps: list
    root_task: str
    success: bool
    failure_reason: Optional[str] = None    # "timeout" | "invalid_state"
    domain: str = ""
    seed: int = 0
    task: str = ""                           # task template this episode ran
    predicates: dict = field(default_factory=dict)   # node path -> predicate text
    grasp_attempts: int = 0
    failed_grasps: int = 0
    retries: int = 0

    def __post_init__(self):
        if not self.success and self.failure_reason is None:
            raise ValueError("failed trajectories must carry a failure reason")

    def __len__(self):
        return len(self.timesteps)

    def observations(self) -> np.ndarray:
        if not self.timesteps:
            return np.zeros((0, 0), dtype=np.float32)
        return np.stack([t.observation for t in self.timesteps]).astype("<f4")

    def actions(self) -> np.ndarray:
        if not self.timesteps:
            return np.zeros((0, 0), dtype=np.float32)
        return np.stack([t.action for t in self.timesteps]).astype("<f4")


@dataclass
class ReplayBuffer:
    trajectories: list = field(default_factory=list)
    domain: str = ""
    schema_version: int = SCHEMA_VERSION

    def append(self, traj: LabeledTrajectory):
        self.trajectories.append(traj)

    def __len__(self):
        return len(self.trajectories)

    def success_count(self) -> int:
        return sum(1 for t in self.trajectories if t.success)

    def per_task_successes(self) -> dict:
        out = {}
        for t in self.trajectories:
            key = t.task or t.root_task
            out.setdefault(key, 0)
            if t.success:
                out[key] += 1
        return out


def filter_success(buffer: ReplayBuffer) -> ReplayBuffer:
    """Keep exactly the trajectories whose success flag is set."""
    return ReplayBuffer([t for t in buffer.trajectories if t.success],
                        buffer.domain, buffer.schema_version)


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

def _traj_header(traj: LabeledTrajectory) -> dict:
    label_sets = []
    index = {}
    label_idx = []
    subtask_ids = []
    for ts in traj.timesteps:
        key = tuple(ts.labels)
        if key not in index:
            index[key] = len(label_sets)
            label_sets.append(list(key))
        label_idx.append(index[key])
        subtask_ids.append(ts.subtask_id)
    obs = traj.observations()
    act = traj.actions()
    return {
        "root_task": traj.root_task,
        "task": traj.task,
        "success": bool(traj.success),
        "failure_reason": traj.failure_reason,
        "domain": traj.domain,
        "seed": int(traj.seed),
        "n_steps": len(traj.timesteps),
        "obs_dim": int(obs.shape[1]) if obs.size else 0,
        "act_dim": int(act.shape[1]) if act.size else 0,
        "label_sets": label_sets,
        "label_idx": label_idx,
        "subtask_ids": subtask_ids,
        "predicates": dict(sorted(traj.predicates.items())),
        "grasp_attempts": int(traj.grasp_attempts),
        "failed_grasps": int(traj.failed_grasps),
        "retries": int(traj.retries),
    }


def save_trajectory(traj: LabeledTrajectory, path: str):
    header = json.dumps(_traj_header(traj), sort_keys=True,
                        separators=(",", ":")).encode("utf-8")
    obs = traj.observations()
    act = traj.actions()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", SCHEMA_VERSION, len(header)))
        fh.write(header)
        fh.write(obs.tobytes())
        fh.write(act.tobytes())


def load_trajectory(path: str) -> LabeledTrajectory:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != MAGIC:
            raise ValueError(f"{path}: not a trajectory file")
        version, hlen = struct.unpack("<II", fh.read(8))
        if version != SCHEMA_VERSION:
            raise ValueError(f"{path}: schema version {version} unsupported")
        header = json.loads(fh.read(hlen).decode("utf-8"))
        n = header["n_steps"]
        od, ad = header["obs_dim"], header["act_dim"]
        obs = np.frombuffer(fh.read(4 * n * od), dtype="<f4").reshape(n, od)
        act = np.frombuffer(fh.read(4 * n * ad), dtype="<f4").reshape(n, ad)
    steps = []
    for i in range(n):
        labels = header["label_sets"][header["label_idx"][i]]
        steps.append(TimestepRecord(obs[i].copy(), act[i].copy(), list(labels),
                                    header["subtask_ids"][i]))
    traj = LabeledTrajectory(
        steps, header["root_task"], header["success"], header["failure_reason"],
        header["domain"], header["seed"], header.get("task", ""),
        dict(header.get("predicates", {})), header.get("grasp_attempts", 0),
        header.get("failed_grasps", 0), header.get("retries", 0))
    return traj


def save_buffer(buffer: ReplayBuffer, directory: str):
    os.makedirs(directory, exist_ok=True)
    files = []
    for i, traj in enumerate(buffer.trajectories):
        fname = f"ep_{i:05d}.traj"
        save_trajectory(traj, os.path.join(directory, fname))
        files.append(fname)
    manifest = {
        "schema_version": buffer.schema_version,
        "domain": buffer.domain,
        "counts": {
            "trajectories": len(buffer),
            "successes": buffer.success_count(),
        },
        "files": files,
    }
    with open(os.path.join(directory, "manifest"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, sort_keys=True, separators=(",", ":"))
        fh.write("\n")


def load_buffer(directory: str) -> ReplayBuffer:
    manifest_path = os.path.join(directory, "manifest")
    if not os.path.exists(manifest_path):
        raise EmptyBuffer(f"no manifest in {directory}")
    with open(manifest_path, encoding="utf-8") as fh:
        manifest = json.load(fh)
    trajs = [load_trajectory(os.path.join(directory, f)) for f in manifest["files"]]
    return ReplayBuffer(trajs, manifest["domain"], manifest["schema_version"])


def buffer_digest(directory: str) -> str:
    """SHA-256 over the manifest and every record file, in manifest order."""
    h = hashlib.sha256()
    with open(os.path.join(directory, "manifest"), "rb") as fh:
        h.update(fh.read())
    with open(os.path.join(directory, "manifest"), encoding="utf-8") as fh:
        manifest = json.load(fh)
    for fname in manifest["files"]:
        with open(os.path.join(directory, fname), "rb") as fh:
            h.update(fh.read())
    return h.hexdigest()
