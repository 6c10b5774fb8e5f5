"""
Checkpoint files - versioned "MTD3" binary records for networks and bundles
plus a JSON manifest listing agent order and hyperparameters

Record layout (all little-endian):
    magic "MTD3" | version u32 | layer count u32 | layer sizes u32...
    | output kind u32 | lo f64 | hi f64
    | parameters f64 (w0 row-major, b0, w1, b1, ...)
    | has_adam u32 [ t u64 | beta1 f64 | beta2 f64 | eps f64 | m arrays | v arrays ]
Bundle file: record count u32, then records
    (policy, policy target, critics..., critic targets...)
"""

import json
import struct
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from config.settings import LabSettings
from src.models.agent import AgentBundle, UpdateClock
from src.models.network import AdamState, DenseNet, NetRecord, OutputActivation
from src.models.types import Algorithm, CriticScope, OutputKind
from src.models.world import ActionSpec
from src.utils.logger import ComponentLogger
from src.utils.validation import CheckpointFormatError, TopologyMismatchError

logger = ComponentLogger("Checkpoint")

MAGIC = b"MTD3"
FORMAT_VERSION = 1
MANIFEST_NAME = "manifest.json"

_KIND_CODES = {OutputKind.IDENTITY: 0, OutputKind.SIGMOID_SCALED: 1}
_CODE_KINDS = {v: k for k, v in _KIND_CODES.items()}


def _pack_arrays(arrays: List[np.ndarray]) -> bytes:
    return b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for a in arrays)


class _Reader:
    """Cursor over a byte buffer that fails loudly on truncation"""

    def __init__(self, data: bytes, offset: int = 0):
        self.data = data
        self.offset = offset

    def take(self, fmt: str) -> Tuple:
        size = struct.calcsize(fmt)
        if self.offset + size > len(self.data):
            raise CheckpointFormatError(f"truncated checkpoint at byte {self.offset}")
        values = struct.unpack_from(fmt, self.data, self.offset)
        self.offset += size
        return values

    def take_array(self, shape: Tuple[int, ...]) -> np.ndarray:
        count = int(np.prod(shape))
        end = self.offset + 8 * count
        if end > len(self.data):
            raise CheckpointFormatError(f"truncated parameter array at byte {self.offset}")
        arr = np.frombuffer(self.data, dtype="<f8", count=count, offset=self.offset)
        self.offset = end
        return arr.astype(np.float64).reshape(shape)


def encode_net(net: DenseNet, adam: Optional[AdamState] = None) -> bytes:
    """Serialize a network (and optionally its Adam state) into one record"""
    act = net.output_activation
    header = MAGIC + struct.pack(f"<II{len(net.layer_sizes)}I", FORMAT_VERSION,
                                 len(net.layer_sizes), *net.layer_sizes)
    header += struct.pack("<Idd", _KIND_CODES[act.kind], act.lo, act.hi)
    body = _pack_arrays(net.parameters())
    if adam is None:
        return header + body + struct.pack("<I", 0)
    tail = struct.pack("<IQddd", 1, adam.t, adam.beta1, adam.beta2, adam.eps_adam)
    return header + body + tail + _pack_arrays(adam.m) + _pack_arrays(adam.v)


def _decode(reader: _Reader) -> NetRecord:
    magic = reader.data[reader.offset:reader.offset + 4]
    if magic != MAGIC:
        raise CheckpointFormatError(f"bad magic {magic!r} at byte {reader.offset}, expected {MAGIC!r}")
    reader.offset += 4
    version, count = reader.take("<II")
    if version != FORMAT_VERSION:
        raise CheckpointFormatError(f"unsupported checkpoint version {version}")
    sizes = list(reader.take(f"<{count}I"))
    kind_code, lo, hi = reader.take("<Idd")
    if kind_code not in _CODE_KINDS:
        raise CheckpointFormatError(f"unknown output activation code {kind_code}")
    kind = _CODE_KINDS[kind_code]
    activation = OutputActivation(kind, lo, hi) if kind is OutputKind.SIGMOID_SCALED else OutputActivation.identity()

    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        weights.append(reader.take_array((fan_out, fan_in)))
        biases.append(reader.take_array((fan_out,)))
    net = DenseNet(layer_sizes=sizes, weights=weights, biases=biases, output_activation=activation)

    (has_adam,) = reader.take("<I")
    if not has_adam:
        return NetRecord(net)
    t, beta1, beta2, eps = reader.take("<Qddd")
    shapes = [p.shape for p in net.parameters()]
    m = [reader.take_array(s) for s in shapes]
    v = [reader.take_array(s) for s in shapes]
    return NetRecord(net, AdamState(m, v, int(t), beta1, beta2, eps))


def decode_net(data: bytes) -> NetRecord:
    """Parse one record; trailing bytes are an error"""
    reader = _Reader(data)
    record = _decode(reader)
    if reader.offset != len(data):
        raise CheckpointFormatError(f"{len(data) - reader.offset} trailing bytes after record")
    return record


def encode_records(records: List[NetRecord]) -> bytes:
    return struct.pack("<I", len(records)) + b"".join(encode_net(r.net, r.adam) for r in records)


def decode_records(data: bytes) -> List[NetRecord]:
    reader = _Reader(data)
    (count,) = reader.take("<I")
    records = [_decode(reader) for _ in range(count)]
    if reader.offset != len(data):
        raise CheckpointFormatError(f"{len(data) - reader.offset} trailing bytes after {count} records")
    return records


def bundle_records(bundle: AgentBundle) -> List[NetRecord]:
    records = [NetRecord(bundle.policy, bundle.policy_adam), NetRecord(bundle.policy_target)]
    records += [NetRecord(c, a) for c, a in zip(bundle.critics, bundle.critic_adams)]
    records += [NetRecord(t) for t in bundle.critic_targets]
    return records


def bundle_meta(bundle: AgentBundle) -> Dict[str, Any]:
    return {
        "index": bundle.index,
        "algorithm": bundle.algorithm.value,
        "scope": bundle.scope.value,
        "obs_dim": bundle.obs_dim,
        "move_dim": bundle.action_spec.move_dim,
        "comm_dim": bundle.action_spec.comm_dim,
        "critics": len(bundle.critics),
        "policy_delay": bundle.clock.policy_delay,
        "critic_updates": bundle.clock.critic_updates,
        "policy_updates": bundle.clock.policy_updates,
        "target_updates": bundle.clock.target_updates,
        "file": f"agent_{bundle.index}.mtd3",
    }


def bundle_from_records(meta: Dict[str, Any], records: List[NetRecord]) -> AgentBundle:
    n_critics = int(meta["critics"])
    if len(records) != 2 + 2 * n_critics:
        raise CheckpointFormatError(
            f"agent {meta['index']}: expected {2 + 2 * n_critics} records, got {len(records)}"
        )
    policy, policy_target = records[0], records[1]
    critics = records[2:2 + n_critics]
    targets = records[2 + n_critics:]
    if policy.adam is None or any(c.adam is None for c in critics):
        raise CheckpointFormatError(f"agent {meta['index']}: trainable networks must carry Adam state")
    for src_rec, tgt_rec in [(policy, policy_target)] + list(zip(critics, targets)):
        if not src_rec.net.same_topology(tgt_rec.net):
            raise TopologyMismatchError(src_rec.net.layer_sizes, tgt_rec.net.layer_sizes)
    clock = UpdateClock(
        policy_delay=int(meta["policy_delay"]),
        critic_updates=int(meta["critic_updates"]),
        policy_updates=int(meta["policy_updates"]),
        target_updates=int(meta["target_updates"]),
    )
    return AgentBundle(
        index=int(meta["index"]),
        algorithm=Algorithm(meta["algorithm"]),
        scope=CriticScope(meta["scope"]),
        obs_dim=int(meta["obs_dim"]),
        action_spec=ActionSpec(int(meta["move_dim"]), int(meta["comm_dim"])),
        policy=policy.net,
        policy_target=policy_target.net,
        critics=[c.net for c in critics],
        critic_targets=[t.net for t in targets],
        policy_adam=policy.adam,
        critic_adams=[c.adam for c in critics],
        clock=clock,
    )


def save_checkpoint(directory, bundles: List[AgentBundle], scenario_id: str,
                    hyperparams: Dict[str, Any], config_hash: str = "") -> Path:
    """Write one bundle file per agent plus manifest.json"""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    metas = []
    for bundle in bundles:
        meta = bundle_meta(bundle)
        (directory / meta["file"]).write_bytes(encode_records(bundle_records(bundle)))
        metas.append(meta)
    manifest = {
        "format": MAGIC.decode("ascii"),
        "format_version": FORMAT_VERSION,
        "build_id": LabSettings.BUILD_ID,
        "config_hash": config_hash,
        "scenario_id": scenario_id,
        "agents": metas,
        "hyperparams": hyperparams,
    }
    with open(directory / MANIFEST_NAME, "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
    logger.info(f"Checkpoint written: {directory} ({len(bundles)} agents)")
    return directory


def load_checkpoint(directory) -> Tuple[List[AgentBundle], Dict[str, Any]]:
    """Read manifest.json and every bundle file it lists, in agent order"""
    directory = Path(directory)
    manifest_path = directory / MANIFEST_NAME
    try:
        with open(manifest_path, "r", encoding="utf-8") as f:
            manifest = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise CheckpointFormatError(f"cannot read manifest {manifest_path}: {e}") from e
    if manifest.get("format") != MAGIC.decode("ascii"):
        raise CheckpointFormatError(f"{manifest_path} is not an MTD3 manifest")

    bundles = []
    for meta in sorted(manifest["agents"], key=lambda m: m["index"]):
        path = directory / meta["file"]
        try:
            data = path.read_bytes()
        except OSError as e:
            raise CheckpointFormatError(f"missing bundle file {path}: {e}") from e
        bundles.append(bundle_from_records(meta, decode_records(data)))
    logger.debug(f"Checkpoint loaded: {directory} ({len(bundles)} agents)")
    return bundles, manifest
