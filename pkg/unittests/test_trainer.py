import json
import random

import numpy as np
import pytest

from questionator.corpus import RawTriple, encode_example
from questionator.errors import ContractError, NumericDomainError
from questionator.model import init_params
from questionator.optim import Adam
from questionator.trainer import (
    CheckpointSet,
    TrainConfig,
    Trainer,
    average_checkpoints,
    grid_search_beta,
    select_checkpoint,
    train_step,
)


def run_steps(spec, cfg, examples, steps):
    params = init_params(spec, cfg.seed)
    optimizer = Adam(params, lr=cfg.learning_rate)
    results = []
    for step in range(steps):
        batch = examples[(step * cfg.batch_size) % len(examples) :][: cfg.batch_size]
        results.append(train_step(batch, params, spec, cfg, optimizer, step))
    return params, results


def test_train_config():
    cfg = TrainConfig.from_config({"train": {"beta": 0.3, "batch_size": 4}, "decode": {"max_len": 9}})
    assert cfg.beta == 0.3
    assert cfg.batch_size == 4
    assert cfg.max_len == 9
    assert TrainConfig(beta=0.0).beta == 0.0

    with pytest.raises(ContractError):
        TrainConfig(beta=-0.1)
    with pytest.raises(ContractError):
        TrainConfig(average_mode="best")


def test_total_loss_identity(toy):
    cfg = TrainConfig(beta=0.6, batch_size=4, learning_rate=0.01)
    _, results = run_steps(toy.spec(), cfg, toy.train, 3)
    for r in results:
        assert r.E_lm > 0
        assert r.E_total == r.E + cfg.beta * r.E_lm


def test_baseline_has_no_lm_term(toy):
    cfg = TrainConfig(beta=0.6, batch_size=4)
    _, results = run_steps(toy.spec(use_lm=False), cfg, toy.train, 2)
    for r in results:
        assert r.E_lm == 0.0
        assert r.E_total == r.E


def test_detached_lm_with_zero_beta_matches_baseline(toy):
    cfg = TrainConfig(beta=0.0, batch_size=4, learning_rate=0.01)
    base_params, base = run_steps(toy.spec(use_lm=False), cfg, toy.train, 4)
    detached_params, detached = run_steps(toy.spec(lm_detached=True), cfg, toy.train, 4)
    _, fed = run_steps(toy.spec(), cfg, toy.train, 4)

    assert [r.E for r in detached] == [r.E for r in base]
    for name in base_params.names():
        assert np.array_equal(detached_params[name].values, base_params[name].values), name
    # the LM states widen the encoder input, so the trajectory changes
    assert [r.E for r in fed] != [r.E for r in base]


def test_train_step_contracts(toy):
    spec = toy.spec()
    cfg = TrainConfig(batch_size=2)
    params = init_params(spec, 1)
    optimizer = Adam(params)
    with pytest.raises(ContractError):
        train_step([], params, spec, cfg, optimizer)

    short = RawTriple(
        sentence=("Alice",),
        pos=("NNP",),
        ner=("PERSON",),
        answer_start=0,
        answer_end=1,
        question=("who", "?"),
    )
    example = encode_example(short, toy.vocab, toy.pos_tags, toy.ner_tags)
    with pytest.raises(ContractError):
        train_step([toy.train[0], example], params, spec, cfg, optimizer)

    # without the LM a single token source is fine
    baseline = toy.spec(use_lm=False)
    baseline_params = init_params(baseline, 1)
    result = train_step([example], baseline_params, baseline, cfg, Adam(baseline_params))
    assert np.isfinite(result.E)


def test_train_step_non_finite(toy):
    spec = toy.spec(use_lm=False)
    cfg = TrainConfig(batch_size=2)
    params = init_params(spec, 1)
    params["qg.out.2.b"] = np.full(params["qg.out.2.b"].shape, np.nan)
    with pytest.raises(NumericDomainError) as e:
        train_step(toy.train[:2], params, spec, cfg, Adam(params), step=3)
    assert e.value.index == 0
    assert "step 3" in str(e.value)


def test_select_checkpoint():
    assert select_checkpoint({100: 5.0, 200: 7.0, 300: 6.0}) == 200
    # ties go to the later step
    assert select_checkpoint({100: 7.0, 200: 7.0, 300: 6.0}) == 200
    assert select_checkpoint([(300, 0.0), (100, 0.0)]) == 300
    with pytest.raises(ContractError):
        select_checkpoint({})


def test_average_checkpoints():
    checkpoints = [{"w": np.full((2, 3), float(i)), "b": np.array([float(i)])} for i in range(5)]
    averaged = average_checkpoints(checkpoints)
    assert averaged.names() == ["b", "w"]
    assert np.array_equal(averaged["w"].values, np.full((2, 3), 2.0))
    assert averaged["b"].values.tolist() == [2.0]


def test_average_checkpoints_is_order_independent():
    rng = np.random.default_rng(5)
    checkpoints = [{"w": rng.normal(size=(3, 4))} for _ in range(5)]
    expected = average_checkpoints(checkpoints)["w"].values
    shuffle = random.Random(2)
    for _ in range(5):
        shuffle.shuffle(checkpoints)
        assert np.array_equal(average_checkpoints(checkpoints)["w"].values, expected)


def test_average_of_equal_checkpoints():
    w = np.random.default_rng(9).normal(size=(4, 4))
    averaged = average_checkpoints([{"w": w.copy()} for _ in range(3)])
    assert np.array_equal(averaged["w"].values, w)


def test_average_checkpoints_contracts():
    with pytest.raises(ContractError):
        average_checkpoints([{"w": np.zeros(2)}])
    with pytest.raises(ContractError):
        average_checkpoints([{"w": np.zeros(2)}, {"w": np.zeros(3)}])
    with pytest.raises(ContractError):
        average_checkpoints([{"w": np.zeros(2)}, {"v": np.zeros(2)}])


def test_checkpoint_set_capacity():
    with pytest.raises(ContractError):
        CheckpointSet(4)

    ring = CheckpointSet(5)
    dropped = [ring.add(step, 0.0, arrays={}) for step in range(1, 8)]
    assert len(ring) == 5
    assert [d.step for d in dropped if d is not None] == [1, 2]
    assert sorted(ring.scores()) == [3, 4, 5, 6, 7]
    with pytest.raises(ContractError):
        ring.find(1)

    unbounded = CheckpointSet()
    for step in range(20):
        assert unbounded.add(step, 0.0) is None
    assert len(unbounded) == 20


def test_checkpoint_window():
    ring = CheckpointSet()
    for step in range(100, 1000, 100):
        ring.add(step, 0.0)

    def steps(entries):
        return [c.step for c in entries]

    assert steps(ring.window(500, 5)) == [300, 400, 500, 600, 700]
    assert steps(ring.window(100, 5)) == [100, 200, 300, 400, 500]
    assert steps(ring.window(900, 5)) == [500, 600, 700, 800, 900]
    assert steps(ring.window(200, 5, mode="last")) == [500, 600, 700, 800, 900]
    assert steps(ring.window(500, 20)) == steps(ring.entries)


def test_fit(toy, tmp_path):
    cfg = TrainConfig(
        beta=0.5, batch_size=8, learning_rate=0.01, max_steps=12, eval_interval=2, keep_checkpoints=5, max_len=6
    )
    trainer = Trainer(toy.spec(), cfg, run_dir=tmp_path)
    result = trainer.fit(toy.train, toy.dev, toy.vocab, log_path=tmp_path / "train.log")

    assert len(result.history) == 12
    evaluated = [row["step"] for row in result.history if row["dev_bleu4"] is not None]
    assert evaluated == [2, 4, 6, 8, 10, 12]
    for row in result.history:
        assert row["E_total"] == row["E"] + cfg.beta * row["E_lm"]

    rows = [json.loads(line) for line in (tmp_path / "train.log").read_text().splitlines()]
    assert rows == result.history

    # six checkpoints were written; the oldest left the ring and its file was removed
    files = sorted(p.name for p in (tmp_path / "checkpoints").iterdir())
    assert files == [f"ckpt-{step:08d}.bin" for step in (4, 6, 8, 10, 12)]

    assert result.best_step in result.checkpoints.scores()
    assert result.best_score == result.checkpoints.scores()[result.best_step]
    assert result.averaged.names() == result.params.names()


def test_fit_without_dev_set(toy):
    cfg = TrainConfig(batch_size=8, max_steps=2, eval_interval=1, max_len=4)
    result = Trainer(toy.spec(use_lm=False), cfg).fit(toy.train[:8], [], toy.vocab)
    assert len(result.checkpoints) == 2
    # checkpoints are kept in memory without a run directory
    assert all(c.path is None and c.arrays is not None for c in result.checkpoints.entries)

    with pytest.raises(ContractError):
        Trainer(toy.spec(), cfg).fit([], toy.dev, toy.vocab)


def test_fit_is_reproducible(toy):
    cfg = TrainConfig(batch_size=4, max_steps=3, eval_interval=3, max_len=4)
    first = Trainer(toy.spec(), cfg).fit(toy.train, toy.dev[:2], toy.vocab)
    second = Trainer(toy.spec(), cfg).fit(toy.train, toy.dev[:2], toy.vocab)
    assert first.history == second.history
    for name in first.params.names():
        assert np.array_equal(first.params[name].values, second.params[name].values)


def test_grid_search_beta(toy):
    cfg = TrainConfig(batch_size=8, learning_rate=0.01, eval_interval=2, max_len=6)
    best, table = grid_search_beta([0.3, 0.0, 0.3], 2, toy.train, toy.dev[:4], toy.vocab, toy.spec(), cfg, threads=2)

    assert [beta for beta, _ in table] == [0.3, 0.0, 0.3]
    # identical trials score identically, whichever thread runs them
    assert table[0][1] == table[2][1]
    top = max(score for _, score in table)
    assert best == min(beta for beta, score in table if score == top)


def test_grid_search_beta_contracts(toy):
    cfg = TrainConfig(batch_size=8, max_len=4)
    with pytest.raises(ContractError):
        grid_search_beta([], 2, toy.train, toy.dev, toy.vocab, toy.spec(), cfg)
    with pytest.raises(ContractError):
        grid_search_beta([-0.5], 1, toy.train, toy.dev, toy.vocab, toy.spec(), cfg)


def test_overfit_single_example(vocab, pos_tags, ner_tags, make_spec):
    t = RawTriple(
        sentence=("Zorblat", "is", "city"),
        pos=("NNP", "VBZ", "NN"),
        ner=("LOCATION", "O", "O"),
        answer_start=0,
        answer_end=1,
        question=("what", "is", "Zorblat", "?"),
    )
    example = encode_example(t, vocab, pos_tags, ner_tags)
    spec = make_spec(vocab_size=len(vocab), word_dim=32, feature_dim=8, hidden=32, lm_hidden=16, output_hidden=32)
    cfg = TrainConfig(beta=0.6, learning_rate=0.05, batch_size=1)
    _, results = run_steps(spec, cfg, [example], 200)
    assert results[-1].E < 0.1
    assert results[-1].E < results[0].E
