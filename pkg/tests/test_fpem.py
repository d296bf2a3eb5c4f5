import math

import numpy as np
import pytest

from conftest import constant_kuhn_policy, random_kuhn_policy, tiny_config
from fpemlab import fpem
from fpemlab.config import default_config
from fpemlab.constants import PLAYER_1
from fpemlab.core import MixedPolicy, SeatedPolicy, UniformPolicy, play_episode
from fpemlab.errors import ConfigurationError, ContractError, DimensionError
from fpemlab.evaluation import nashconv_of
from fpemlab.fpem import (
    MAX,
    MIN,
    BasePolicySet,
    ExpandingSide,
    FpemConfig,
    FpemModel,
    FpemRunner,
    FpemV1Runner,
    LabeledPolicy,
    OpponentPool,
    ReservoirMemory,
    SelectorModel,
    reservoir_insert,
    sample_training_opponent,
    selector_loss,
    train_selector,
)
from fpemlab.kuhn import BET, PASS, KuhnGame, expected_value, kuhn_infostate, nash_conv, posterior_mixture
from fpemlab.nn import Mlp, make_optimizer
from fpemlab.treasure import TreasureGame

# 99th percentile of chi-square with 9 degrees of freedom.
CHI2_9_P01 = 21.666


def chi_square_failures(capacity, n_items, trials, rng):
    failures = 0
    bins = 10
    expected = capacity / bins
    for _ in range(trials):
        memory = ReservoirMemory(capacity, rng)
        for item in range(n_items):
            memory.insert(item)
        counts = np.bincount(np.array(memory.items) * bins // n_items, minlength=bins)
        if ((counts - expected) ** 2 / expected).sum() > CHI2_9_P01:
            failures += 1
    return failures


def test_reservoir_keeps_everything_until_full(rng):
    memory = ReservoirMemory(5, rng)
    for item in range(5):
        reservoir_insert(memory, item, rng)
    assert memory.items == [0, 1, 2, 3, 4]
    for item in range(5, 100):
        memory.insert(item)
    assert len(memory) == 5
    assert memory.seen == 100
    assert len(set(memory.items)) == 5


def test_reservoir_is_uniform(rng):
    assert chi_square_failures(200, 5000, 100, rng) <= 5


@pytest.mark.slow
def test_reservoir_is_uniform_at_scale(rng):
    assert chi_square_failures(1000, 100_000, 100, rng) <= 5


def test_reservoir_records_labels(rng):
    memory = ReservoirMemory(10, rng)
    infostate = kuhn_infostate(PLAYER_1, 2, "")
    memory.record(infostate, 3)
    features, key, label = memory.items[0]
    assert key == "1:K:"
    assert label == 3
    assert np.array_equal(features, infostate.features)


def test_opponent_pool(rng):
    pool = OpponentPool(capacity=2)
    assert isinstance(pool.sample(rng), UniformPolicy)
    assert isinstance(pool.as_policy(), UniformPolicy)
    policies = [random_kuhn_policy(rng, f"p{i}") for i in range(3)]
    for policy in policies:
        pool.add(policy)
    assert pool.policies == policies[1:]
    assert {pool.sample(rng).name for _ in range(100)} == {"p1", "p2"}
    assert isinstance(pool.as_policy(), MixedPolicy)


def test_base_policy_set_capacity():
    policies = BasePolicySet(2)
    policies.add(UniformPolicy())
    policies.add(UniformPolicy())
    with pytest.raises(ContractError):
        policies.add(UniformPolicy())
    assert len(policies[:1]) == 1


def test_selector_grows_with_zero_logits(rng):
    selector = SelectorModel(11, (8,), rng)
    assert selector.size == 0
    selector.grow()
    selector.sync_target()
    selector.grow()
    features = kuhn_infostate(PLAYER_1, 0, "").features
    assert selector.size == 2
    assert selector.target_size == 1
    logits = selector.net(features)
    assert logits[1] == 0.0
    assert selector.distribution(features) == pytest.approx([0.5, 0.5])
    assert selector.distribution(features, target=True) == pytest.approx([1.0])


def test_newest_policy_is_drawn_with_probability_one_over_t(rng):
    current, mixture = UniformPolicy(), random_kuhn_policy(rng)
    assert sample_training_opponent(MIN, 1, None, mixture, current, rng) is current
    assert sample_training_opponent(MIN, 3, None, None, current, rng) is current
    draws = [sample_training_opponent(MIN, 4, None, mixture, current, rng) is current for _ in range(20_000)]
    assert np.mean(draws) == pytest.approx(0.25, abs=0.015)

    pool = OpponentPool()
    pool.add(mixture)
    assert sample_training_opponent(MAX, 4, pool, None, None, rng) is mixture
    with pytest.raises(ContractError):
        sample_training_opponent(MIN, 0, None, mixture, current, rng)
    with pytest.raises(ContractError):
        sample_training_opponent("chance", 1, None, mixture, current, rng)


def labeled_items(rng, n=400):
    features = rng.normal(size=(n, 4))
    labels = (features[:, 0] > 0).astype(int)
    return [(f, "", int(label)) for f, label in zip(features, labels)]


def test_train_selector_learns_the_labels(rng):
    items = labeled_items(rng)
    net = Mlp([4, 16, 2], rng)
    before = selector_loss(net, items)
    after = train_selector(net, items, make_optimizer("adam", 1e-2), 20, rng, batch_size=32)
    assert after < before
    assert after < np.log(2) / 2


def test_train_selector_rejects_bad_labels(rng):
    net = Mlp([4, 8, 2], rng)
    with pytest.raises(ContractError):
        train_selector(net, [], make_optimizer("adam", 1e-3), 1, rng)
    bad = [(np.zeros(4), "", 2)]
    with pytest.raises(ContractError):
        train_selector(net, bad, make_optimizer("adam", 1e-3), 1, rng)
    memory = ReservoirMemory(10, rng)
    memory.insert((np.zeros(4), "", 1))
    assert np.isfinite(train_selector(net, memory, make_optimizer("adam", 1e-3), 1, rng))


def test_fpem_model(rng):
    policies = [random_kuhn_policy(rng), random_kuhn_policy(rng)]
    selector = Mlp([11, 8, 2], rng)
    with pytest.raises(DimensionError):
        FpemModel(policies[:1], selector)
    with pytest.raises(ContractError):
        FpemModel([], selector)

    memory = ReservoirMemory(100, rng)
    model = FpemModel(policies, selector, recorder=memory)
    infostate = kuhn_infostate(PLAYER_1, 1, "")
    weights = model.selection(infostate)
    expected = weights[0] * policies[0].table[infostate.key] + weights[1] * policies[1].table[infostate.key]
    assert np.allclose(model.act_distribution(infostate), expected)

    for _ in range(10):
        model.act(infostate, rng)
    assert len(memory) == 10
    assert {label for _, _, label in memory.items} <= {0, 1}


def test_labeled_policy_records_every_decision(rng):
    memory = ReservoirMemory(10, rng)
    policy = LabeledPolicy(UniformPolicy(), 4, memory)
    policy.act(kuhn_infostate(PLAYER_1, 0, ""), rng)
    policy.act(kuhn_infostate(PLAYER_1, 0, "pb"), rng)
    assert [label for _, _, label in memory.items] == [4, 4]


def test_labeling_opponent_uses_the_target_selector(rng):
    side = ExpandingSide(KuhnGame(), 3, FpemConfig(selector_hidden=(8,), label_mode="executed"), rng)
    first = random_kuhn_policy(rng)
    side.add(first)
    # Before any mixture exists the newest policy always plays.
    sampler = side.labeling_opponent(first, 0)
    assert all(sampler(rng).policy is first for _ in range(10))

    side.retrain(rng)
    second = random_kuhn_policy(rng)
    side.add(second)
    sampler = side.labeling_opponent(second, 1)
    drawn = [sampler(rng) for _ in range(400)]
    live = sum(isinstance(o, LabeledPolicy) and o.policy is second for o in drawn)
    assert 140 < live < 260
    assert any(isinstance(o, FpemModel) for o in drawn)

    with pytest.raises(DimensionError):
        side.labeling_opponent(second, 2)


def test_episode_label_mode_draws_one_index_per_episode(rng):
    side = ExpandingSide(KuhnGame(), 3, FpemConfig(selector_hidden=(8,), label_mode="episode"), rng)
    policies = [random_kuhn_policy(rng) for _ in range(3)]
    side.add(policies[0])
    side.retrain(rng)
    side.add(policies[1])
    side.retrain(rng)
    side.add(policies[2])
    sampler = side.labeling_opponent(policies[2], 2)
    for _ in range(50):
        opponent = sampler(rng)
        assert isinstance(opponent, LabeledPolicy)
        assert opponent.policy is policies[opponent.index]


def test_retrain_reports_losses_and_syncs(rng):
    config = FpemConfig(selector_hidden=(8,), holdout_fraction=0.25, selector_batch=16)
    side = ExpandingSide(KuhnGame(), 2, config, rng)
    side.add(UniformPolicy())
    side.add(UniformPolicy())
    for features, _, label in labeled_items(rng, 100):
        side.memory.insert((np.resize(features, 11), "", label))
    side.retrain(rng)
    assert side.selector_loss is not None
    assert side.heldout_loss is not None
    assert side.selector.target_size == 2
    assert side.selector.net is not side.selector.target


def test_fpem_runner_on_kuhn():
    config = tiny_config("fpem", "kuhn")
    assert config.fpem.both_expand
    runner = FpemRunner(KuhnGame(), config, np.random.default_rng(0), "test", 0)
    records = runner.run()
    assert runner.finished
    assert [r.iteration for r in records] == [1, 2]
    assert all(r.nashconv >= 0 for r in records)
    assert all(0 <= r.win_rate <= 1 for r in records)
    assert records[-1].episodes == runner.episodes

    summary = runner.summary()
    assert summary["base_policies"] == 2
    assert summary["selector_outputs"] == 2
    assert summary["pool_size"] == 2
    nets = runner.networks()
    assert {"max/base_00", "max/base_01", "max/selector", "min/base_00", "min/base_01", "min/selector"} == set(nets)
    # Max and min both trained, and the min side collected its labels.
    per_iteration = 2 * config.solver.max_episodes + config.fpem.label_episodes
    assert runner.episodes == 2 * per_iteration
    assert [(t, role) for t, role, _ in runner.drain_logs()] == [(1, MAX), (1, MIN), (2, MAX), (2, MIN)]
    assert runner.drain_logs() == []


def test_iterations_freeze_earlier_base_policies_and_fit_the_selector():
    config = tiny_config("fpem", "kuhn", run__iterations=3, fpem__holdout_fraction=0.5)
    runner = FpemRunner(KuhnGame(), config, np.random.default_rng(5))
    frozen = {}
    while not runner.finished:
        runner.step()
        nets = runner.networks()
        for name, net in nets.items():
            if "/base_" in name:
                frozen.setdefault(name, net.parameters_bytes())
        for name, blob in frozen.items():
            assert nets[name].parameters_bytes() == blob
        # The selector does at least as well as a uniform guess on its held-out labels.
        for side in (runner.max_side, runner.min_side):
            assert side.heldout_loss is not None
            assert side.heldout_loss <= math.log(len(side)) + 0.05
    assert len(frozen) == 6


def test_selector_mixture_matches_the_uniform_mixture(rng):
    """Labeled per episode, W over the base policies plays like picking one of them per hand."""
    config = FpemConfig(
        selector_hidden=(32,),
        selector_lr=1e-2,
        selector_epochs=30,
        selector_batch=64,
        reservoir_capacity=20_000,
    )
    side = ExpandingSide(KuhnGame(), 2, config, rng)
    policies = [constant_kuhn_policy(PASS, "pass"), constant_kuhn_policy(BET, "bet")]
    side.add(policies[0])
    side.retrain(rng)
    side.add(policies[1])
    sampler = side.labeling_opponent(policies[1], 1)
    for _ in range(4000):
        play_episode(KuhnGame(), sampler(rng), UniformPolicy(), rng)
    side.retrain(rng)

    model = side.model(target=True)
    mixture = posterior_mixture(policies)
    opponents = [UniformPolicy(), random_kuhn_policy(rng), random_kuhn_policy(rng)]
    for opponent in opponents:
        assert expected_value(model, opponent) == pytest.approx(expected_value(mixture, opponent), abs=0.1)
    assert nashconv_of(SeatedPolicy(model, UniformPolicy())) == pytest.approx(
        nashconv_of(SeatedPolicy(mixture, UniformPolicy())), abs=0.1
    )


@pytest.mark.parametrize("name", ["adam", "sgd"])
def test_retrain_uses_the_configured_selector_optimizer(name, rng, monkeypatch):
    made = []

    def recording(kind, lr):
        made.append(kind)
        return make_optimizer(kind, lr)

    monkeypatch.setattr(fpem, "make_optimizer", recording)
    side = ExpandingSide(KuhnGame(), 2, FpemConfig(selector_hidden=(8,), selector_optimizer=name), rng)
    side.add(UniformPolicy())
    side.add(UniformPolicy())
    for features, _, label in labeled_items(rng, 50):
        side.memory.insert((np.resize(features, 11), "", label))
    side.retrain(rng)
    assert made == [name]


def test_selector_settings():
    assert FpemConfig().label_mode == "episode"
    with pytest.raises(ConfigurationError) as info:
        FpemConfig(selector_optimizer="rmsprop").validate()
    assert info.value.field == "fpem.selector_optimizer"


@pytest.mark.parametrize("label_mode", ["executed", "episode"])
def test_fpem_runner_with_an_opponent_pool(label_mode):
    config = tiny_config("fpem", "kuhn", fpem__both_expand="false", fpem__label_mode=label_mode)
    runner = FpemRunner(KuhnGame(), config, np.random.default_rng(1))
    runner.run()
    assert isinstance(runner.min_side, OpponentPool)
    assert len(runner.pool) == 2
    assert runner.episodes == 2 * 2 * config.solver.max_episodes
    assert {"pool/opponent_00", "pool/opponent_01"} <= set(runner.networks())


def test_self_play_pretraining():
    config = tiny_config("fpem", "kuhn", fpem__pretrain_fraction=0.5, run__iterations=1)
    runner = FpemRunner(KuhnGame(), config, np.random.default_rng(2))
    runner.step()
    assert runner.pretrained is not None
    assert runner.episodes == 30 + 2 * config.solver.max_episodes + config.fpem.label_episodes


def test_fpem_v1_runner():
    config = tiny_config("fpemv1", "kuhn")
    runner = FpemV1Runner(KuhnGame(), config, np.random.default_rng(3))
    records = runner.run()
    assert len(records) == 2
    assert len(runner.max_side) == 2
    assert len(runner.min_side) == 2
    assert runner.episodes == 2 * 2 * config.solver.max_episodes


def test_fpem_runner_on_treasure():
    config = tiny_config("fpem", "treasure", run__iterations=1)
    runner = FpemRunner(TreasureGame(config.treasure), config, np.random.default_rng(4))
    (record,) = runner.run()
    assert record.nashconv is None
    assert 0 <= record.win_rate <= 1
    assert runner.seats == (None, None)
    assert isinstance(runner.champion(), FpemModel)
    assert len(runner.pool) == 1


@pytest.mark.slow
@pytest.mark.parametrize("seed", [0, 1, 2])
def test_fpem_learns_kuhn(seed):
    config = default_config("fpem", "kuhn")
    runner = FpemRunner(KuhnGame(), config, np.random.default_rng(seed))
    heldout = []
    records = runner.run(on_iteration=lambda r, _: heldout.append((r.max_side.heldout_loss, len(r.max_side))))
    assert all(loss <= math.log(n) + 1e-3 for loss, n in heldout)
    values = [r.nashconv for r in records]
    assert values[-1] <= 0.3
    assert values[-1] < nash_conv(UniformPolicy(), UniformPolicy())
    assert np.median(values[-3:]) < np.median(values[:3])
