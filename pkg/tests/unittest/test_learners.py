"""
Unit tests for the learners
Critic targets, losses, policy gradients, update clocks and variant wiring
"""

import unittest
import sys
from pathlib import Path

import numpy as np

project_root = Path(__file__).parent.parent.parent
sys.path.insert(0, str(project_root))

from src.core.learners import (
    agent_update, bootstrap_mask, critic_inputs, critic_loss_and_grads, critic_update,
    deterministic_action, il_td3_variant, maddpg_critic_target, make_bundle, make_bundles,
    matd3_critic_target, policy_objective_and_grad, policy_update, select_actions, target_q_values,
)
from src.core.tensor_nn import forward
from src.models.common import Batch
from src.models.types import Algorithm, CriticScope
from src.models.world import ActionSpec
from src.utils.rng import SeededRng
from src.utils.validation import ClockViolationError, VariantMismatchError
from tests.unittest.helpers import constant_net, finite_difference, relative_error, tiny_hyperparams

OBS_SIZES = [3, 2]
SPECS = [ActionSpec(2, 0), ActionSpec(2, 0)]


def random_batch(rng: SeededRng, obs_sizes, specs, size: int = 16) -> Batch:
    n = len(obs_sizes)
    return Batch(
        observations=[rng.normal(size=(size, s)) for s in obs_sizes],
        actions=[rng.uniform(-1, 1, size=(size, spec.size)) for spec in specs],
        rewards=rng.normal(size=(size, n)),
        next_observations=[rng.normal(size=(size, s)) for s in obs_sizes],
        done=np.zeros(size, dtype=bool),
        terminal=np.zeros(size, dtype=bool),
    )


def flat(bundle) -> np.ndarray:
    nets = [bundle.policy, bundle.policy_target, *bundle.critics, *bundle.critic_targets]
    return np.concatenate([n.flat_parameters() for n in nets])


class TestConstruction(unittest.TestCase):
    """Bundle layout per algorithm"""

    def test_critic_counts_and_inputs(self):
        """MADDPG has one centralized critic, MATD3 two, IL-TD3 two local ones"""
        hp = tiny_hyperparams()
        rng = SeededRng(0)
        cases = {
            Algorithm.MADDPG: (1, CriticScope.CENTRALIZED, 9),
            Algorithm.MATD3: (2, CriticScope.CENTRALIZED, 9),
            Algorithm.IL_TD3: (2, CriticScope.LOCAL, 5),
        }
        for algorithm, (count, scope, in_size) in cases.items():
            with self.subTest(algorithm=algorithm.value):
                bundle = make_bundles([algorithm] * 2, OBS_SIZES, SPECS, hp, rng)[0]
                self.assertEqual(len(bundle.critics), count)
                self.assertEqual(bundle.scope, scope)
                self.assertEqual(bundle.critic_input_size, in_size)

    def test_targets_start_as_copies(self):
        """Targets equal their online networks after construction"""
        bundle = make_bundle(0, Algorithm.MATD3, OBS_SIZES, SPECS, [6], SeededRng(1))
        np.testing.assert_array_equal(bundle.policy.flat_parameters(), bundle.policy_target.flat_parameters())
        for c, t in zip(bundle.critics, bundle.critic_targets):
            np.testing.assert_array_equal(c.flat_parameters(), t.flat_parameters())

    def test_il_td3_variant_dimensions(self):
        """The decentralized variant reads only o_i and a_i"""
        bundle = make_bundle(0, Algorithm.MATD3, OBS_SIZES, SPECS, [6], SeededRng(1))
        local = il_td3_variant(bundle, SeededRng(2))
        self.assertEqual(local.critic_input_size, 3 + 2)
        self.assertEqual(local.algorithm, Algorithm.IL_TD3)
        np.testing.assert_array_equal(local.policy.flat_parameters(), bundle.policy.flat_parameters())


class TestActing(unittest.TestCase):
    """Action selection"""

    def setUp(self):
        """Set up test fixtures"""
        self.bundles = make_bundles([Algorithm.MATD3] * 2, OBS_SIZES, SPECS, tiny_hyperparams(), SeededRng(3))
        self.obs = [np.array([0.1, -0.4, 0.9]), np.array([1.5, -0.3])]

    def test_zero_noise_is_deterministic_policy(self):
        """noise_scale 0 returns exactly mu_i(o_i)"""
        joint = select_actions(self.bundles, self.obs, 0.0, SeededRng(0))
        for bundle, obs, move in zip(self.bundles, self.obs, joint.movement):
            np.testing.assert_array_equal(move, deterministic_action(bundle.policy, bundle.action_spec, obs))

    def test_noisy_actions_stay_in_bounds(self):
        """Large exploration noise is clamped to [-1, 1]"""
        rng = SeededRng(1)
        for _ in range(50):
            joint = select_actions(self.bundles, self.obs, 10.0, rng)
            for move in joint.movement:
                self.assertTrue(np.all(np.abs(move) <= 1.0))

    def test_same_seed_same_actions(self):
        """Exploration is reproducible from the seed"""
        a = select_actions(self.bundles, self.obs, 0.3, SeededRng(5)).vectors()
        b = select_actions(self.bundles, self.obs, 0.3, SeededRng(5)).vectors()
        for x, y in zip(a, b):
            np.testing.assert_array_equal(x, y)

    def test_comm_actions_on_simplex(self):
        """Comm channels are probability vectors with and without exploration"""
        specs = [ActionSpec(0, 3), ActionSpec(2, 0)]
        bundles = make_bundles([Algorithm.MATD3] * 2, [3, 11], specs, tiny_hyperparams(), SeededRng(2))
        obs = [np.array([0.0, 1.0, 0.0]), np.linspace(-1, 1, 11)]
        for noise in (0.0, 0.1):
            with self.subTest(noise=noise):
                joint = select_actions(bundles, obs, noise, SeededRng(9))
                self.assertEqual(joint.movement[0].size, 0)
                self.assertAlmostEqual(float(joint.comm[0].sum()), 1.0, places=9)
                self.assertTrue(np.all(joint.comm[0] >= 0.0))


class TestCriticTargets(unittest.TestCase):
    """MATD3 and MADDPG targets"""

    def setUp(self):
        """Set up test fixtures"""
        self.hp = tiny_hyperparams()
        self.rng = SeededRng(11)
        self.bundles = make_bundles([Algorithm.MATD3] * 2, OBS_SIZES, SPECS, self.hp, SeededRng(4))
        self.batch = random_batch(self.rng, OBS_SIZES, SPECS)

    def test_constant_target_critics(self):
        """Q'_1 = 2 and Q'_2 = 5 with r = 1 and gamma 0.95 give 2.9"""
        sizes = self.bundles[0].critics[0].layer_sizes
        self.bundles[0].critic_targets = [constant_net(sizes, 2.0), constant_net(sizes, 5.0)]
        self.batch.rewards[:, 0] = 1.0
        y = matd3_critic_target(self.bundles, 0, self.batch, self.hp, SeededRng(0))
        np.testing.assert_allclose(y, np.full(self.batch.size, 2.9), rtol=0, atol=1e-12)

    def test_zero_discount(self):
        """gamma 0 gives y = r exactly"""
        hp = self.hp.model_copy(update={"gamma": 0.0})
        y = matd3_critic_target(self.bundles, 1, self.batch, hp, SeededRng(0))
        np.testing.assert_array_equal(y, self.batch.rewards[:, 1])

    def test_min_of_twin_targets(self):
        """y uses the smaller target value and never exceeds either single-critic target"""
        r = self.batch.rewards[:, 0]
        q1, q2 = target_q_values(self.bundles, 0, self.batch, self.hp.smoothing_sigma,
                                 self.hp.smoothing_clip, SeededRng(7).fork("smooth"))
        y = matd3_critic_target(self.bundles, 0, self.batch, self.hp, SeededRng(7).fork("smooth"))
        np.testing.assert_allclose(y, r + 0.95 * np.minimum(q1, q2), rtol=0, atol=1e-12)
        self.assertTrue(np.all(y <= r + 0.95 * q1 + 1e-12))
        self.assertTrue(np.all(y <= r + 0.95 * q2 + 1e-12))

    def test_reduces_to_maddpg_without_noise(self):
        """Identical twin targets and sigma = c = 0 reproduce the MADDPG target"""
        hp = tiny_hyperparams(smoothing_sigma=0.0, smoothing_clip=0.0)
        maddpg = make_bundles([Algorithm.MADDPG] * 2, OBS_SIZES, SPECS, hp, SeededRng(4))
        for bundle in self.bundles:
            bundle.critic_targets[1] = bundle.critic_targets[0].copy()
        rng = SeededRng(12)
        for k in range(1000):
            batch = random_batch(rng, OBS_SIZES, SPECS, size=8)
            for agent in range(2):
                y_td3 = matd3_critic_target(self.bundles, agent, batch, hp, rng)
                y_ddpg = maddpg_critic_target(maddpg, agent, batch, hp)
                np.testing.assert_allclose(y_td3, y_ddpg, rtol=0, atol=1e-12)

    def test_update_trajectory_matches_maddpg(self):
        """With identical twins, sigma = c = 0 and d = 1, 1000 MATD3 updates follow MADDPG exactly"""
        hp = tiny_hyperparams(smoothing_sigma=0.0, smoothing_clip=0.0, policy_delay=1)
        td3 = make_bundles([Algorithm.MATD3] * 2, OBS_SIZES, SPECS, hp, SeededRng(4))
        maddpg = make_bundles([Algorithm.MADDPG] * 2, OBS_SIZES, SPECS, hp, SeededRng(4))
        for bundle in td3:
            bundle.critics[1] = bundle.critics[0].copy()
            bundle.critic_targets[1] = bundle.critic_targets[0].copy()
            bundle.critic_adams[1] = bundle.critic_adams[0].copy()
        batches = SeededRng(13)
        td3_rng, maddpg_rng = SeededRng(14), SeededRng(15)
        for k in range(1000):
            batch = random_batch(batches, OBS_SIZES, SPECS, size=8)
            for agent in range(2):
                agent_update(td3, agent, batch, hp, td3_rng)
                agent_update(maddpg, agent, batch, hp, maddpg_rng)
        for a, b in zip(td3, maddpg):
            with self.subTest(agent=a.index):
                self.assertEqual((a.clock.critic_updates, a.clock.policy_updates), (1000, 1000))
                self.assertEqual(a.clock, b.clock)
                pairs = [(a.policy, b.policy), (a.policy_target, b.policy_target),
                         (a.critics[0], b.critics[0]), (a.critic_targets[0], b.critic_targets[0]),
                         (a.critics[1], b.critics[0]), (a.critic_targets[1], b.critic_targets[0])]
                for net_a, net_b in pairs:
                    np.testing.assert_allclose(net_a.flat_parameters(), net_b.flat_parameters(),
                                               rtol=0, atol=1e-12)

    def test_variant_mismatch(self):
        """Single-critic targets on twin bundles (and vice versa) are rejected"""
        maddpg = make_bundles([Algorithm.MADDPG] * 2, OBS_SIZES, SPECS, self.hp, SeededRng(4))
        with self.assertRaises(VariantMismatchError):
            maddpg_critic_target(self.bundles, 0, self.batch, self.hp)
        with self.assertRaises(VariantMismatchError):
            matd3_critic_target(maddpg, 0, self.batch, self.hp, SeededRng(0))

    def test_terminal_and_timeout_masking(self):
        """Terminal rows never bootstrap; horizon rows bootstrap unless disabled"""
        self.batch.terminal[0] = True
        self.batch.done[1] = True
        np.testing.assert_array_equal(bootstrap_mask(self.batch, self.hp)[:3], [0.0, 1.0, 1.0])
        strict = tiny_hyperparams(bootstrap_on_timeout=False)
        np.testing.assert_array_equal(bootstrap_mask(self.batch, strict)[:3], [0.0, 0.0, 1.0])
        y = matd3_critic_target(self.bundles, 0, self.batch, strict, SeededRng(0))
        self.assertEqual(y[0], self.batch.rewards[0, 0])
        self.assertEqual(y[1], self.batch.rewards[1, 0])


class TestUpdates(unittest.TestCase):
    """Critic and policy updates"""

    def setUp(self):
        """Set up test fixtures"""
        self.hp = tiny_hyperparams()
        self.bundles = make_bundles([Algorithm.MATD3] * 2, OBS_SIZES, SPECS, self.hp, SeededRng(5))
        self.batch = random_batch(SeededRng(6), OBS_SIZES, SPECS)

    def test_critic_loss_matches_residuals(self):
        """Loss is the mean squared residual against y"""
        critic = self.bundles[0].critics[0]
        inputs = critic_inputs(self.bundles[0], self.batch.observations, self.batch.actions)
        y = SeededRng(1).normal(size=self.batch.size)
        loss, _ = critic_loss_and_grads(critic, inputs, y)
        q, _ = forward(critic, inputs)
        self.assertAlmostEqual(loss, float(np.mean((q[:, 0] - y) ** 2)), places=12)

    def test_critic_gradient_finite_differences(self):
        """Critic loss gradient agrees with central differences"""
        critic = self.bundles[0].critics[1]
        inputs = critic_inputs(self.bundles[0], self.batch.observations, self.batch.actions)
        y = SeededRng(2).normal(size=self.batch.size)
        _, grads = critic_loss_and_grads(critic, inputs, y)
        numeric = finite_difference(lambda: critic_loss_and_grads(critic, inputs, y)[0], critic.parameters())
        self.assertLess(relative_error(grads.arrays(), numeric), 1e-6)

    def test_zero_residual_keeps_parameters(self):
        """Targets equal to current Q give zero loss and no parameter change"""
        bundle = make_bundle(0, Algorithm.MADDPG, OBS_SIZES, SPECS, [6], SeededRng(3))
        inputs = critic_inputs(bundle, self.batch.observations, self.batch.actions)
        y = forward(bundle.critics[0], inputs)[0][:, 0]
        before = bundle.critics[0].flat_parameters()
        losses = critic_update(bundle, self.batch, y, 0.01)
        self.assertEqual(losses, [0.0])
        np.testing.assert_array_equal(bundle.critics[0].flat_parameters(), before)

    def test_small_step_reduces_loss(self):
        """One small critic step lowers the loss on that sample"""
        bundle = self.bundles[0]
        single = random_batch(SeededRng(8), OBS_SIZES, SPECS, size=1)
        y = np.array([3.0])
        inputs = critic_inputs(bundle, single.observations, single.actions)
        before = [critic_loss_and_grads(c, inputs, y)[0] for c in bundle.critics]
        critic_update(bundle, single, y, 1e-5)
        after = [critic_loss_and_grads(c, inputs, y)[0] for c in bundle.critics]
        for b, a in zip(before, after):
            self.assertLess(a, b)
        self.assertEqual(bundle.clock.critic_updates, 1)

    def test_policy_gradient_finite_differences(self):
        """Policy gradient matches differences of the mean critic value"""
        for obs_sizes, specs in (([3, 2], SPECS), ([3, 11], [ActionSpec(0, 3), ActionSpec(2, 0)])):
            with self.subTest(specs=specs):
                bundles = make_bundles([Algorithm.MATD3] * 2, obs_sizes, specs, self.hp, SeededRng(9))
                batch = random_batch(SeededRng(10), obs_sizes, specs, size=6)
                bundle = bundles[0]
                _, grads = policy_objective_and_grad(bundle, batch)
                numeric = finite_difference(lambda: policy_objective_and_grad(bundle, batch)[0],
                                            bundle.policy.parameters())
                self.assertLess(relative_error(grads.arrays(), numeric), 1e-5)

    def test_action_blind_critic_gives_zero_policy_gradient(self):
        """A critic that ignores a_i produces a zero policy gradient"""
        bundle = self.bundles[0]
        bundle.critics[0] = constant_net(bundle.critics[0].layer_sizes, 4.0)
        objective, grads = policy_objective_and_grad(bundle, self.batch)
        self.assertEqual(objective, 4.0)
        self.assertEqual(grads.norm(), 0.0)

    def test_policy_update_is_isolated(self):
        """Updating agent 0's policy leaves agent 1 and all critics untouched"""
        bundle = self.bundles[0]
        bundle.clock.critic_updates = 2
        other_before = flat(self.bundles[1])
        critics_before = np.concatenate([c.flat_parameters() for c in bundle.critics])
        policy_before = bundle.policy.flat_parameters()
        policy_update(bundle, self.batch, 0.01)
        np.testing.assert_array_equal(flat(self.bundles[1]), other_before)
        np.testing.assert_array_equal(np.concatenate([c.flat_parameters() for c in bundle.critics]),
                                      critics_before)
        self.assertFalse(np.array_equal(bundle.policy.flat_parameters(), policy_before))

    def test_policy_update_before_due(self):
        """A policy update without enough critic updates raises ClockViolationError"""
        with self.assertRaises(ClockViolationError):
            policy_update(self.bundles[0], self.batch, 0.01)

    def test_delayed_policy_and_targets(self):
        """With d = 2 the policy and targets move on every second update"""
        bundle = self.bundles[0]
        targets_before = bundle.policy_target.flat_parameters()
        rng = SeededRng(13)
        first = agent_update(self.bundles, 0, self.batch, self.hp, rng)
        self.assertIsNone(first["policy_grad_norm"])
        self.assertIsNotNone(first["critic_loss_2"])
        np.testing.assert_array_equal(bundle.policy_target.flat_parameters(), targets_before)
        second = agent_update(self.bundles, 0, self.batch, self.hp, rng)
        self.assertIsNotNone(second["policy_grad_norm"])
        self.assertFalse(np.array_equal(bundle.policy_target.flat_parameters(), targets_before))
        self.assertEqual((bundle.clock.critic_updates, bundle.clock.policy_updates,
                          bundle.clock.target_updates), (2, 1, 1))

    def test_maddpg_stats_have_single_loss(self):
        """MADDPG reports no second critic loss"""
        bundles = make_bundles([Algorithm.MADDPG] * 2, OBS_SIZES, SPECS, self.hp, SeededRng(5))
        stats = agent_update(bundles, 1, self.batch, self.hp, SeededRng(0))
        self.assertIsNone(stats["critic_loss_2"])


class TestIndependentLearner(unittest.TestCase):
    """IL-TD3 behaviour"""

    def test_other_actions_do_not_matter(self):
        """Changing a_j for j != i leaves agent i's target and loss unchanged"""
        hp = tiny_hyperparams()
        bundles = make_bundles([Algorithm.IL_TD3] * 2, OBS_SIZES, SPECS, hp, SeededRng(1))
        batch = random_batch(SeededRng(2), OBS_SIZES, SPECS)
        perturbed = batch.with_actions(1, SeededRng(3).uniform(-1, 1, size=(batch.size, 2)))
        y_a = matd3_critic_target(bundles, 0, batch, hp, SeededRng(4))
        y_b = matd3_critic_target(bundles, 0, perturbed, hp, SeededRng(4))
        np.testing.assert_array_equal(y_a, y_b)
        critic = bundles[0].critics[0]
        loss_a, _ = critic_loss_and_grads(critic, critic_inputs(bundles[0], batch.observations, batch.actions), y_a)
        loss_b, _ = critic_loss_and_grads(critic, critic_inputs(bundles[0], perturbed.observations,
                                                                perturbed.actions), y_b)
        self.assertEqual(loss_a, loss_b)

    def test_single_agent_matches_matd3(self):
        """With one agent, IL-TD3 and MATD3 produce identical updates"""
        hp = tiny_hyperparams(policy_delay=2)
        specs = [ActionSpec(2, 0)]
        central = make_bundle(0, Algorithm.MATD3, [4], specs, [6], SeededRng(7), policy_delay=2)
        local = il_td3_variant(central, SeededRng(8))
        local.critics = [c.copy() for c in central.critics]
        local.critic_targets = [c.copy() for c in central.critic_targets]
        local.critic_adams = [a.copy() for a in central.critic_adams]
        data = SeededRng(9)
        for step in range(4):
            batch = random_batch(data, [4], specs, size=8)
            agent_update([central], 0, batch, hp, SeededRng(step))
            agent_update([local], 0, batch, hp, SeededRng(step))
        np.testing.assert_array_equal(flat(central), flat(local))


if __name__ == '__main__':
    unittest.main()
