"""
Unit tests for checkpoint encoding
Network records, Adam state, bundle files and the manifest
"""

import json
import shutil
import tempfile
import unittest
import sys
from pathlib import Path

import numpy as np

project_root = Path(__file__).parent.parent.parent
sys.path.insert(0, str(project_root))

from src.core.learners import agent_update, make_bundles
from src.core.tensor_nn import forward, init_dense_net
from src.models.network import AdamState, OutputActivation
from src.models.types import Algorithm, OutputKind
from src.models.world import ActionSpec
from src.utils.checkpoint import (
    MAGIC, decode_net, decode_records, encode_net, load_checkpoint, save_checkpoint,
)
from src.utils.rng import SeededRng
from src.utils.validation import CheckpointFormatError
from tests.unittest.helpers import tiny_hyperparams
from tests.unittest.test_learners import random_batch


class TestNetRecords(unittest.TestCase):
    """Single network records"""

    def setUp(self):
        """Set up test fixtures"""
        self.net = init_dense_net([5, 7, 3], SeededRng(1), OutputActivation.sigmoid_scaled(-1.0, 1.0))
        self.adam = AdamState.for_net(self.net)
        self.adam.t = 17
        for m, v in zip(self.adam.m, self.adam.v):
            m[...] = 0.25
            v[...] = 0.5

    def test_round_trip_is_bit_exact(self):
        """Parameters, activation and Adam state survive encoding"""
        record = decode_net(encode_net(self.net, self.adam))
        self.assertEqual(record.net.layer_sizes, [5, 7, 3])
        self.assertEqual(record.net.output_activation.kind, OutputKind.SIGMOID_SCALED)
        self.assertEqual(record.net.flat_parameters().tobytes(), self.net.flat_parameters().tobytes())
        self.assertEqual(record.adam.t, 17)
        for a, b in zip(record.adam.v, self.adam.v):
            np.testing.assert_array_equal(a, b)
        x = np.linspace(-1, 1, 5)
        np.testing.assert_array_equal(forward(record.net, x)[0], forward(self.net, x)[0])

    def test_record_without_adam(self):
        """Target networks are stored without optimizer state"""
        record = decode_net(encode_net(self.net))
        self.assertIsNone(record.adam)

    def test_bad_magic(self):
        """A record that does not start with the magic is rejected"""
        data = b"XXXX" + encode_net(self.net)[4:]
        with self.assertRaises(CheckpointFormatError):
            decode_net(data)

    def test_truncated_record(self):
        """Cutting a record short is detected"""
        data = encode_net(self.net, self.adam)
        for cut in (3, 20, len(data) - 1):
            with self.subTest(cut=cut):
                with self.assertRaises(CheckpointFormatError):
                    decode_net(data[:cut])

    def test_trailing_bytes(self):
        """Extra bytes after a record are rejected"""
        with self.assertRaises(CheckpointFormatError):
            decode_net(encode_net(self.net) + b"\x00")

    def test_record_starts_with_magic(self):
        """Encoded records begin with the format magic"""
        self.assertTrue(encode_net(self.net).startswith(MAGIC))


class TestBundleCheckpoint(unittest.TestCase):
    """Checkpoint directories"""

    def setUp(self):
        """Set up test fixtures"""
        self.temp_dir = tempfile.mkdtemp()
        self.hp = tiny_hyperparams()
        self.specs = [ActionSpec(0, 3), ActionSpec(2, 0)]
        self.bundles = make_bundles([Algorithm.MATD3, Algorithm.MADDPG], [3, 11], self.specs,
                                    self.hp, SeededRng(4))
        batch = random_batch(SeededRng(5), [3, 11], self.specs, size=8)
        for agent in range(2):
            for _ in range(3):
                agent_update(self.bundles, agent, batch, self.hp, SeededRng(6))

    def tearDown(self):
        """Clean up test fixtures"""
        shutil.rmtree(self.temp_dir, ignore_errors=True)

    def test_save_and_load(self):
        """Every network, optimizer state and clock is restored"""
        save_checkpoint(self.temp_dir, self.bundles, "cooperative_communication",
                        self.hp.model_dump(mode="json"), "abc123")
        loaded, manifest = load_checkpoint(self.temp_dir)
        self.assertEqual(manifest["scenario_id"], "cooperative_communication")
        self.assertEqual(manifest["config_hash"], "abc123")
        self.assertEqual(len(loaded), 2)
        for original, restored in zip(self.bundles, loaded):
            self.assertEqual(restored.algorithm, original.algorithm)
            self.assertEqual(restored.action_spec, original.action_spec)
            self.assertEqual(restored.clock, original.clock)
            nets_a = [original.policy, original.policy_target, *original.critics, *original.critic_targets]
            nets_b = [restored.policy, restored.policy_target, *restored.critics, *restored.critic_targets]
            for a, b in zip(nets_a, nets_b):
                self.assertEqual(a.flat_parameters().tobytes(), b.flat_parameters().tobytes())
            self.assertEqual(restored.policy_adam.t, original.policy_adam.t)

    def test_manifest_lists_agent_files(self):
        """The manifest names one file per agent"""
        save_checkpoint(self.temp_dir, self.bundles, "cooperative_communication", {}, "")
        with open(Path(self.temp_dir) / "manifest.json", encoding="utf-8") as f:
            manifest = json.load(f)
        files = [m["file"] for m in manifest["agents"]]
        self.assertEqual(files, ["agent_0.mtd3", "agent_1.mtd3"])
        records = decode_records((Path(self.temp_dir) / "agent_0.mtd3").read_bytes())
        self.assertEqual(len(records), 6)

    def test_missing_manifest(self):
        """A directory without a manifest is not a checkpoint"""
        with self.assertRaises(CheckpointFormatError):
            load_checkpoint(self.temp_dir)

    def test_missing_bundle_file(self):
        """A manifest pointing at a missing file is rejected"""
        save_checkpoint(self.temp_dir, self.bundles, "cooperative_communication", {}, "")
        (Path(self.temp_dir) / "agent_1.mtd3").unlink()
        with self.assertRaises(CheckpointFormatError):
            load_checkpoint(self.temp_dir)


if __name__ == '__main__':
    unittest.main()
