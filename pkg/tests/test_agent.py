import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from explorelab.agent import (
    IncompatibleCheckpoint,
    NStepLearner,
    NumericalError,
    PolicyTable,
    TrainConfig,
    TransferConfig,
    ac_update,
    act,
    alpha_schedule,
    compose_task_policy,
    entropy_grad,
    greedy,
    masked_softmax,
    pretrain,
    softmax,
    steps_to_success,
    transfer_train,
)
from explorelab.counts import ResetMode, ResetPolicy
from explorelab.rewards import RewardKind, RewardSpec
from explorelab.world import N_ACTIONS, Action, Family

finite = st.floats(-50, 50, allow_nan=False)
logit_rows = st.lists(finite, min_size=N_ACTIONS, max_size=N_ACTIONS).map(np.array)


@given(logit_rows)
def test_softmax_is_a_distribution(f):
    p = softmax(f)
    assert abs(p.sum() - 1.0) < 1e-12
    assert np.all(p >= 0)
    assert np.allclose(softmax(f + 3.0), p)


@given(logit_rows)
def test_masked_softmax_zeroes_unavailable_actions(f):
    p = masked_softmax(f, (0, 1))
    assert abs(p.sum() - 1.0) < 1e-12
    assert np.all(p[2:] == 0)


def test_unseen_state_gives_uniform_policy():
    pol = PolicyTable()
    assert np.allclose(pol.probs(b"never seen"), 1 / N_ACTIONS)
    assert pol.v(b"never seen") == 0.0
    assert len(pol) == 0


def test_act_rejects_bad_logits():
    rng = np.random.default_rng(0)
    with pytest.raises(NumericalError):
        act(np.array([0, 0, np.nan, 0, 0, 0, 0.0]), rng)
    with pytest.raises(ValueError):
        act(np.zeros(3), rng)


def test_act_sampling_frequencies():
    rng = np.random.default_rng(1)
    f = np.log(np.array([1, 2, 3, 4, 5, 6, 7], dtype=float))
    draws = np.bincount([act(f, rng) for _ in range(28_000)], minlength=N_ACTIONS)
    assert np.allclose(draws / 28_000, np.arange(1, 8) / 28, atol=0.01)
    assert set(act(f, rng, (1, 3)) for _ in range(200)) == {1, 3}


def test_greedy_breaks_ties_towards_lowest_index():
    assert greedy(np.zeros(N_ACTIONS)) == Action.LEFT
    assert greedy(np.array([0, 5, 5, 0, 0, 0, 0.0])) == Action.RIGHT
    assert greedy(np.array([9, 1, 2, 0, 0, 0, 0.0]), (1, 2)) == Action.FORWARD


def test_entropy_gradient_matches_finite_differences():
    f = np.array([0.3, -1.0, 2.0, 0.0, 0.5, -0.2, 1.1])

    def entropy(x):
        p = softmax(x)
        return -float(p @ np.log(p))

    eps = 1e-6
    num = np.array([(entropy(f + eps * e) - entropy(f - eps * e)) / (2 * eps) for e in np.eye(7)])
    assert np.allclose(entropy_grad(softmax(f)), num, atol=1e-8)


def test_one_step_update_by_hand():
    cfg = TrainConfig(actor_lr=0.1, critic_lr=0.5, entropy_coeff=0.0, gamma=0.9)
    pol = PolicyTable()
    pol.values[b"t"] = 2.0
    delta = ac_update(pol, b"s", Action.FORWARD, 1.0, b"t", False, cfg)
    assert delta == pytest.approx(1.0 + 0.9 * 2.0)
    assert pol.v(b"s") == pytest.approx(0.5 * 2.8)
    expected = -0.1 * 2.8 * np.full(N_ACTIONS, 1 / 7)
    expected[Action.FORWARD] += 0.1 * 2.8
    assert np.allclose(pol.f(b"s"), expected)
    # a terminal transition ignores the next value
    assert ac_update(PolicyTable(), b"s", 0, 1.0, b"t", True, cfg) == pytest.approx(1.0)


def test_bias_is_read_not_written():
    cfg = TrainConfig(entropy_coeff=0.0)
    pol = PolicyTable()
    bias = np.array([5.0, 0, 0, 0, 0, 0, 0])
    ac_update(pol, b"s", Action.LEFT, 1.0, b"t", True, cfg, bias=bias)
    # gradient uses the biased probabilities, so Left gets a small push
    p = softmax(bias)
    assert pol.f(b"s")[0] == pytest.approx(cfg.actor_lr * (1 - p[0]))
    assert bias[0] == 5.0


def test_n_step_returns_by_hand():
    cfg = TrainConfig(n_step=3, critic_lr=1.0, actor_lr=0.0, entropy_coeff=0.0, gamma=0.5)
    pol = PolicyTable()
    pol.values[b"end"] = 8.0
    learner = NStepLearner(pol, cfg, 0.5)
    learner.push(b"a", 0, 1.0, b"b", False, False)
    learner.push(b"b", 0, 2.0, b"c", False, False)
    assert pol.v(b"a") == 0.0  # not enough steps yet
    learner.push(b"c", 0, 4.0, b"end", False, False)
    assert pol.v(b"a") == pytest.approx(1 + 0.5 * 2 + 0.25 * 4 + 0.125 * 8)
    learner.push(b"end", 0, 0.0, b"x", True, True)
    # the episode end flushes b and c with a terminal tail
    assert pol.v(b"b") == pytest.approx(2 + 0.5 * 4)
    assert pol.v(b"c") == pytest.approx(4.0)
    assert not learner.buf


def test_alpha_schedules():
    assert alpha_schedule(None)(10**9) == 1.0
    assert alpha_schedule(0)(5) == 0.0
    lin = alpha_schedule("linear:100")
    assert [lin(0), lin(50), lin(100), lin(500)] == [1.0, 0.5, 0.0, 0.0]
    assert alpha_schedule("const:0.25")(3) == 0.25
    with pytest.raises(ValueError):
        alpha_schedule("linear:0")


def test_compose_task_policy():
    f_i = np.arange(7.0)
    assert np.array_equal(compose_task_policy(np.zeros(7), f_i, 1.0), f_i)
    assert np.array_equal(compose_task_policy(np.ones(7), f_i, 0.0), np.ones(7))


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(gamma=1.0)
    with pytest.raises(ValueError):
        TrainConfig(n_step=0)
    assert TrainConfig(env_schedule=["Unlock"]).env_schedule == [Family.UNLOCK]


def _small_pretrain(seed=0, steps=3000, **kw):
    cfg = TrainConfig(total_steps=steps, env_schedule=["DoorKey5x5", "Unlock"], **kw)
    return pretrain(cfg, RewardSpec(), ResetPolicy(ResetMode.RANDOM, 0.001), seed)


def test_pretrain_bookkeeping():
    res = _small_pretrain()
    assert res.steps == 3000 == len(res.intrinsic_raw)
    assert sum(e.length for e in res.episodes) == 3000
    assert [e.family for e in res.episodes[:4]] == ["DoorKey5x5", "Unlock"] * 2
    assert all(0 < r <= 0.5 for r in res.intrinsic_raw)
    assert sum(sum(e.action_counts) for e in res.episodes) == 3000
    starts = [e.start_step for e in res.episodes]
    assert starts == sorted(starts) and starts[0] == 0


def test_pretrain_is_reproducible():
    a, b = _small_pretrain(5), _small_pretrain(5)
    assert np.array_equal(a.intrinsic_raw, b.intrinsic_raw)
    assert a.policy.logits.keys() == b.policy.logits.keys()
    assert all(np.array_equal(a.policy.logits[k], b.policy.logits[k]) for k in a.policy.logits)
    c = _small_pretrain(6)
    assert not np.array_equal(a.intrinsic_raw, c.intrinsic_raw)


def test_episodic_resets_happen_once_per_episode():
    cfg = TrainConfig(total_steps=2000, env_schedule=["DoorKey5x5"])
    res = pretrain(cfg, RewardSpec(), ResetPolicy(ResetMode.EPISODIC), 0)
    assert all(e.state_resets == 1 and e.change_resets == 1 for e in res.episodes)


def test_frozen_logits_with_zero_task_logits_reproduce_exploration_policy():
    pre = _small_pretrain(steps=2000)
    frozen = pre.policy
    task = PolicyTable()
    for key, f_i in frozen.logits.items():
        p_task = softmax(compose_task_policy(task.f(key), f_i, 1.0))
        assert np.max(np.abs(p_task - frozen.probs(key))) < 1e-12


def test_transfer_refuses_mismatched_keying():
    pre = _small_pretrain(steps=500)
    with pytest.raises(IncompatibleCheckpoint):
        transfer_train(
            TransferConfig(frozen_exploration=pre.policy), TrainConfig(total_steps=10), 0, keying="hash"
        )
    with pytest.raises(ValueError):
        transfer_train(
            TransferConfig(frozen_exploration=pre.policy, tabula_rasa=True), TrainConfig(total_steps=10), 0
        )


def test_transfer_with_intrinsic_reward_logs_it():
    res = transfer_train(
        TransferConfig(env="DoorKey5x5", tabula_rasa=True),
        TrainConfig(total_steps=1000, env_schedule=["DoorKey5x5"]),
        0,
        reward_spec=RewardSpec(RewardKind.CBET),
    )
    assert np.all(res.intrinsic_raw > 0)
    plain = transfer_train(
        TransferConfig(env="DoorKey5x5"), TrainConfig(total_steps=1000, env_schedule=["DoorKey5x5"]), 0
    )
    assert not plain.intrinsic_raw.any()


class _Ep:
    def __init__(self, start, length, solved):
        self.start_step, self.length, self.solved = start, length, solved


def test_steps_to_success():
    eps = [_Ep(10 * i, 10, i >= 15) for i in range(40)]
    # the 20-episode window first holds 10 successes after episode 24
    assert steps_to_success(eps) == 250
    assert steps_to_success([_Ep(0, 5, False)] * 50) is None


@settings(max_examples=20, deadline=None)
@given(logit_rows, st.integers(0, 6), finite)
def test_actor_step_preserves_row_sum_without_entropy(f, a, target):
    # the softmax gradient (1[b=a] - p_b) sums to zero over actions
    cfg = TrainConfig(entropy_coeff=0.0)
    pol = PolicyTable()
    pol.logits[b"s"] = f.copy()
    ac_update(pol, b"s", a, target, b"t", True, cfg)
    assert pol.f(b"s").sum() == pytest.approx(f.sum(), abs=1e-9)
