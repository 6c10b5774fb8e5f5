"""
Unit tests for the training loop
Update cadence, reproducibility, metrics rows and probe isolation
"""

import shutil
import tempfile
import unittest
import sys
from pathlib import Path

import numpy as np

project_root = Path(__file__).parent.parent.parent
sys.path.insert(0, str(project_root))

from config.settings import ProbeConfig
from src.core.bias_probe import second_half_bias
from src.core.particle_env import ParticleEnv
from src.core.trainer import (
    METRICS_COLUMNS, Trainer, agent_algorithms, evaluate, random_baseline, train,
)
from src.models.types import Algorithm
from src.utils.csv_io import read_csv
from src.utils.rng import SeededRng
from src.utils.validation import ValidationError
from tests.unittest.helpers import tiny_hyperparams


def rng_states(trainer):
    return [r.generator.bit_generator.state for r in
            (trainer.env_rng, trainer.explore_rng, trainer.sample_rng, trainer.smoothing_rng)]


class TestUpdateCadence(unittest.TestCase):
    """Critic, policy and target update counts"""

    def test_policy_delay_floor_relation(self):
        """policy and target updates equal floor(critic updates / d)"""
        env = ParticleEnv("cooperative_navigation", horizon=10, num_agents=2)
        for d in (1, 2, 3):
            with self.subTest(policy_delay=d):
                hp = tiny_hyperparams(policy_delay=d, episodes=6, steps_per_episode=10, warmup=16)
                trainer = Trainer(env, [Algorithm.MATD3] * 2, hp, seed=0)
                trainer.train()
                for bundle in trainer.bundles:
                    clock = bundle.clock
                    self.assertEqual(clock.critic_updates, 60 - 15)
                    self.assertEqual(clock.policy_updates, 45 // d)
                    self.assertEqual(clock.target_updates, 45 // d)

    def test_thousand_critic_updates_with_delay_two(self):
        """1000 critic updates with d = 2 give exactly 500 policy updates"""
        env = ParticleEnv("cooperative_navigation", horizon=25, num_agents=1)
        hp = tiny_hyperparams(policy_delay=2, episodes=41, steps_per_episode=25, warmup=26, hidden_sizes=[4])
        trainer = Trainer(env, [Algorithm.MATD3], hp, seed=1)
        trainer.train()
        clock = trainer.bundles[0].clock
        self.assertEqual((clock.critic_updates, clock.policy_updates, clock.target_updates), (1000, 500, 500))

    def test_no_updates_before_warmup(self):
        """Nothing learns while the buffer holds fewer than warmup transitions"""
        env = ParticleEnv("cooperative_navigation", horizon=10, num_agents=1)
        hp = tiny_hyperparams(episodes=1, steps_per_episode=10, warmup=50)
        trainer = Trainer(env, [Algorithm.MATD3], hp, seed=0)
        log = trainer.train()
        self.assertEqual(trainer.bundles[0].clock.critic_updates, 0)
        self.assertIsNone(log.rows[0].critic_loss_1)

    def test_warmup_covers_batch_size(self):
        """Learning never starts before a full minibatch is stored"""
        env = ParticleEnv("cooperative_navigation", horizon=10, num_agents=1)
        hp = tiny_hyperparams(batch_size=32, warmup=4)
        self.assertEqual(Trainer(env, [Algorithm.MATD3], hp, seed=0).warmup, 32)

    def test_unreachable_warmup_rejected(self):
        """A buffer smaller than the learning threshold is refused before training"""
        env = ParticleEnv("cooperative_navigation", horizon=10, num_agents=1)
        hp = tiny_hyperparams(warmup=16).model_copy(update={"buffer_capacity": 10})
        with self.assertRaises(ValidationError):
            Trainer(env, [Algorithm.MATD3], hp, seed=0)


class TestReproducibility(unittest.TestCase):
    """Seeded runs"""

    def setUp(self):
        """Set up test fixtures"""
        self.env = ParticleEnv("cooperative_navigation", horizon=10)
        self.hp = tiny_hyperparams(episodes=4)

    def _metrics(self, seed: int) -> str:
        trainer = Trainer(self.env, [Algorithm.MATD3] * 3, self.hp, seed=seed)
        return trainer.train().metrics_csv("hash", build_id="test")

    def test_same_seed_identical_metrics(self):
        """Two runs with the same seed write byte-identical metrics"""
        self.assertEqual(self._metrics(3), self._metrics(3))

    def test_different_seed_differs(self):
        """Another seed gives another run"""
        self.assertNotEqual(self._metrics(3), self._metrics(4))

    def test_module_level_train_matches_trainer(self):
        """train() builds the same run as an explicit Trainer"""
        log = train("cooperative_navigation", "matd3", self.hp, seed=3)
        self.assertEqual(log.metrics_csv("hash", build_id="test"), self._metrics(3))


class TestMetrics(unittest.TestCase):
    """Metrics rows and files"""

    def setUp(self):
        """Set up test fixtures"""
        self.temp_dir = tempfile.mkdtemp()
        self.env = ParticleEnv("cooperative_navigation", horizon=10)
        self.hp = tiny_hyperparams(episodes=3)
        self.trainer = Trainer(self.env, [Algorithm.MADDPG] * 3, self.hp, seed=2)
        self.log = self.trainer.train()

    def tearDown(self):
        """Clean up test fixtures"""
        shutil.rmtree(self.temp_dir, ignore_errors=True)

    def test_one_row_per_agent_per_episode(self):
        """Every episode contributes one row per agent"""
        self.assertEqual(len(self.log.rows), 3 * 3)
        self.assertEqual([r.agent for r in self.log.rows[:3]], [0, 1, 2])
        self.assertEqual(self.log.rows[-1].step, 30)

    def test_cooperative_returns_are_shared(self):
        """Agents of a cooperative scenario report the same return"""
        for episode in self.log.episodes:
            self.assertTrue(np.all(episode.returns == episode.returns[0]))
        self.assertEqual(self.log.team_curve(), self.log.agent_returns(1))

    def test_maddpg_rows_leave_second_loss_empty(self):
        """Single-critic runs have no second critic loss"""
        self.assertTrue(all(r.critic_loss_2 is None for r in self.log.rows))
        self.assertIsNotNone(self.log.last(0).critic_loss_1)

    def test_written_file_has_provenance(self):
        """metrics.csv starts with the config hash and carries every column"""
        path = self.log.write(Path(self.temp_dir) / "metrics.csv", "cafe01", build_id="b1")
        provenance, rows = read_csv(path)
        self.assertEqual(provenance["config_hash"], "cafe01")
        self.assertEqual(provenance["build_id"], "b1")
        self.assertEqual(list(rows[0].keys()), METRICS_COLUMNS)
        self.assertEqual(rows[0]["critic_loss_2"], "")


class TestProbeIntegration(unittest.TestCase):
    """Bias probe inside the loop"""

    def setUp(self):
        """Set up test fixtures"""
        self.env = ParticleEnv("cooperative_navigation", horizon=10, num_agents=2)
        self.hp = tiny_hyperparams(episodes=3)

    def test_periodic_reports(self):
        """One report per agent at every cadence boundary"""
        probe = ProbeConfig(enabled=True, pairs=4, cadence=10, rollouts=2, rollout_len=5)
        log = Trainer(self.env, [Algorithm.MATD3] * 2, self.hp, seed=0, probe=probe).train()
        self.assertEqual([r.eval_step for r in log.bias_reports], [10, 10, 20, 20, 30, 30])
        self.assertTrue(all(r.sample_count == 4 for r in log.bias_reports))

    def test_probe_does_not_perturb_training(self):
        """A probe call leaves networks, buffer and training streams bitwise unchanged"""
        probe = ProbeConfig(enabled=True, pairs=5, cadence=10_000, rollouts=3, rollout_len=5)
        trainer = Trainer(self.env, [Algorithm.MATD3] * 2, self.hp, seed=0, probe=probe)
        trainer.train()
        params = [b.policy.flat_parameters().tobytes() + b.critics[0].flat_parameters().tobytes()
                  for b in trainer.bundles]
        buffer_bytes = [a.tobytes() for a in trainer.buffer._obs + trainer.buffer._actions]
        buffer_bytes.append(trainer.buffer._rewards.tobytes())
        states = rng_states(trainer)
        reports = trainer.probe.run(trainer.env_steps, trainer.buffer, trainer.bundles, self.env)
        self.assertEqual(len(reports), 2)
        self.assertEqual(params, [b.policy.flat_parameters().tobytes() + b.critics[0].flat_parameters().tobytes()
                                  for b in trainer.bundles])
        after = [a.tobytes() for a in trainer.buffer._obs + trainer.buffer._actions]
        after.append(trainer.buffer._rewards.tobytes())
        self.assertEqual(buffer_bytes, after)
        self.assertEqual(states, rng_states(trainer))


class TestEvaluation(unittest.TestCase):
    """Noise-free evaluation and baselines"""

    def test_evaluate_and_random_baseline(self):
        """Both return one mean per agent and are reproducible"""
        env = ParticleEnv("cooperative_navigation", horizon=10)
        trainer = Trainer(env, [Algorithm.MATD3] * 3, tiny_hyperparams(), seed=0)
        scores = evaluate(trainer.bundles, env, 2, SeededRng(1))
        self.assertEqual(scores.shape, (3,))
        a = random_baseline(env, 3, SeededRng(2))
        b = random_baseline(env, 3, SeededRng(2))
        np.testing.assert_array_equal(a, b)
        self.assertTrue(np.all(a < 0))

    def test_agent_algorithms_for_adversaries(self):
        """Adversarial agents get the adversary algorithm"""
        env = ParticleEnv("predator_prey")
        algorithms = agent_algorithms(env, Algorithm.MATD3, Algorithm.MADDPG)
        self.assertEqual(algorithms, [Algorithm.MADDPG] * 3 + [Algorithm.MATD3])
        self.assertEqual(agent_algorithms(env, Algorithm.MATD3), [Algorithm.MATD3] * 4)


class TestOverestimation(unittest.TestCase):
    """Critic bias of MADDPG against MATD3 on a short cooperative run"""

    def setUp(self):
        """Set up test fixtures"""
        self.env = ParticleEnv("cooperative_navigation", horizon=25, num_agents=1)
        # identical settings for both algorithms: only the twin-critic minimum differs
        self.hp = tiny_hyperparams(gamma=0.95, tau=0.05, policy_delay=1, smoothing_sigma=0.0, smoothing_clip=0.0,
                                   lr=0.01, batch_size=32, buffer_capacity=2000, episodes=20,
                                   steps_per_episode=25, hidden_sizes=[16], warmup=64)
        self.probe = ProbeConfig(enabled=True, pairs=20, cadence=125, rollouts=1, rollout_len=60)

    def _late_bias(self, algorithm: Algorithm, seed: int) -> float:
        log = Trainer(self.env, [algorithm], self.hp, seed=seed, probe=self.probe).train()
        self.assertEqual(sorted({r.eval_step for r in log.bias_reports}), [125, 250, 375, 500])
        return second_half_bias(log.bias_reports, self.hp.episodes * self.hp.steps_per_episode)

    def test_twin_minimum_lowers_late_bias(self):
        """MADDPG overestimates over the second half of training; MATD3 sits below it"""
        seeds = (0, 1, 2)
        maddpg = [self._late_bias(Algorithm.MADDPG, s) for s in seeds]
        matd3 = [self._late_bias(Algorithm.MATD3, s) for s in seeds]
        self.assertGreater(float(np.mean(maddpg)), 0.0)
        self.assertLess(float(np.mean(matd3)), float(np.mean(maddpg)))


if __name__ == '__main__':
    unittest.main()
