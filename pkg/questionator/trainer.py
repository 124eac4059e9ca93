import json
import math
import pathlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields, replace

import numpy as np

from . import checkpoint, root_logger
from .autograd import Tape, add, backward, mean, scale, stack
from .errors import ContractError, NumericDomainError
from .metrics import bleu
from .model import forward, init_params
from .optim import Adam, clip_grad_norm
from .params import ModelParams
from .search import decode_dataset


@dataclass(frozen=True)
class TrainConfig:
    beta: float = 0.6
    learning_rate: float = 0.001
    batch_size: int = 32
    max_steps: int = 20000
    eval_interval: int = 1000
    seed: int = 1
    configuration: str = "full"
    clip_norm: float = 5.0
    average: int = 5
    average_mode: str = "nearest"
    keep_checkpoints: int = None
    dev_beam: int = 1
    max_len: int = 30

    def __post_init__(self):
        if self.beta < 0:
            raise ContractError(f"beta must be non-negative, got {self.beta}")
        if self.average_mode not in ("nearest", "last"):
            raise ContractError(f"unknown checkpoint averaging mode '{self.average_mode}'")

    @classmethod
    def from_config(cls, raw):
        known = {f.name for f in fields(cls)}
        values = {k: v for k, v in raw["train"].items() if k in known}
        return cls(max_len=raw.get("decode", {}).get("max_len", 30), **values)


@dataclass
class StepResult:
    step: int
    E: float
    E_lm: float
    E_total: float
    grad_norm: float


def train_step(batch, params, spec, cfg, optimizer, step=0):
    """One update on E_total = E + beta E_lm, each term averaged over the batch."""
    if not batch:
        raise ContractError("training batch is empty")
    if spec.use_lm:
        for i, example in enumerate(batch):
            if len(example.src_ids) < 2:
                raise ContractError(f"example {i} of the batch has fewer than 2 source tokens")

    with Tape() as tape:
        losses = []
        for i, example in enumerate(batch):
            try:
                result = forward(example, params, spec)
            except NumericDomainError as e:
                raise NumericDomainError(f"example {i} of the batch at step {step}: {e.message}", index=i)
            values = [result.E.item()] if result.E_lm is None else [result.E.item(), result.E_lm.item()]
            if not all(math.isfinite(v) for v in values):
                raise NumericDomainError(f"non-finite loss at example {i} of the batch at step {step}", index=i)
            losses.append(result)
        E = mean(stack([r.E for r in losses]))
        if spec.use_lm:
            E_lm = mean(stack([r.E_lm for r in losses]))
            total = add(E, scale(E_lm, cfg.beta))
        else:
            E_lm = None
            total = E

    backward(tape, total, params=params.tensors())
    if tape.diagnostics["clamped"]:
        root_logger.debug(f"step {step}: {tape.diagnostics['clamped']} probabilities clamped")
    norm = clip_grad_norm(params, cfg.clip_norm)
    optimizer.step()
    return StepResult(
        step=step,
        E=E.item(),
        E_lm=E_lm.item() if E_lm is not None else 0.0,
        E_total=total.item(),
        grad_norm=norm,
    )


@dataclass
class Checkpoint:
    step: int
    score: float
    path: pathlib.Path = None
    arrays: dict = field(default=None, repr=False)

    def load(self):
        return self.arrays if self.arrays is not None else checkpoint.load(self.path)


class CheckpointSet:
    """Ring of the most recent checkpoints with their dev scores.

    A capacity of None retains every checkpoint."""

    def __init__(self, capacity=None):
        if capacity is not None and capacity < 5:
            raise ContractError(f"at least 5 checkpoints must be retained, capacity is {capacity}")
        self.capacity = capacity
        self.entries = []

    def __len__(self):
        return len(self.entries)

    def add(self, step, score, path=None, arrays=None):
        self.entries.append(Checkpoint(step=step, score=score, path=path, arrays=arrays))
        self.entries.sort(key=lambda c: c.step)
        if self.capacity is not None and len(self.entries) > self.capacity:
            dropped = self.entries.pop(0)
            root_logger.debug(f"checkpoint of step {dropped.step} left the retained set")
            return dropped
        return None

    def scores(self):
        return {c.step: c.score for c in self.entries}

    def find(self, step):
        for c in self.entries:
            if c.step == step:
                return c
        raise ContractError(f"no retained checkpoint for step {step}")

    def window(self, step, k, mode="nearest"):
        """The k checkpoints to average: centred on `step` when possible, or the last k."""
        if mode == "last":
            return self.entries[-k:]
        index = [c.step for c in self.entries].index(self.find(step).step)
        start = min(max(index - (k - 1) // 2, 0), max(len(self.entries) - k, 0))
        return self.entries[start : start + k]


def select_checkpoint(scores):
    """Step with the best dev score; ties go to the later step."""
    items = list(scores.items()) if isinstance(scores, dict) else list(scores)
    if not items:
        raise ContractError("no checkpoint scores to select from")
    return max(items, key=lambda kv: (kv[1], kv[0]))[0]


def average_checkpoints(checkpoints):
    """Elementwise mean of each named tensor over a set of checkpoints.

    Checkpoints are summed in ascending step order (content hash for equal or
    missing steps), as offsets from the first one, so identical inputs average
    to themselves exactly."""
    if isinstance(checkpoints, CheckpointSet):
        checkpoints = checkpoints.entries
    keyed = []
    for c in checkpoints:
        if isinstance(c, Checkpoint):
            arrays, step = c.load(), c.step
        else:
            arrays, step = c, None
        keyed.append(((-1 if step is None else step, checkpoint.digest(arrays)), arrays))
    if len(keyed) < 2:
        raise ContractError(f"averaging needs at least 2 checkpoints, got {len(keyed)}")
    keyed.sort(key=lambda kv: kv[0])
    ordered = [arrays for _, arrays in keyed]

    first = ordered[0]
    names = sorted(first)
    for arrays in ordered[1:]:
        if sorted(arrays) != names:
            missing = sorted(set(names) ^ set(arrays))
            raise ContractError(f"checkpoints disagree on tensor names: {missing[0]}")
        for name in names:
            if np.shape(arrays[name]) != np.shape(first[name]):
                raise ContractError(f"tensor '{name}' has shapes {np.shape(first[name])} and {np.shape(arrays[name])}")

    averaged = {}
    for name in names:
        base = np.asarray(first[name], dtype=np.float64)
        offset = np.zeros_like(base)
        for arrays in ordered[1:]:
            offset += np.asarray(arrays[name], dtype=np.float64) - base
        averaged[name] = base + offset / len(ordered)
    return ModelParams.from_arrays(averaged)


@dataclass
class TrainResult:
    params: ModelParams
    averaged: ModelParams
    best_step: int
    best_score: float
    history: list
    checkpoints: CheckpointSet


class Trainer:
    def __init__(self, spec, cfg, word_table=None, run_dir=None):
        self._logger = root_logger
        self.spec = spec
        self.cfg = cfg
        self.params = init_params(spec, cfg.seed, word_table)
        self.optimizer = Adam(self.params, lr=cfg.learning_rate)
        self.checkpoints = CheckpointSet(cfg.keep_checkpoints)
        self.run_dir = pathlib.Path(run_dir) if run_dir is not None else None
        self.history = []

    def batches(self, examples):
        """Endless stream of batches, reshuffled every epoch from the run seed."""
        rng = np.random.default_rng(self.cfg.seed)
        while True:
            order = rng.permutation(len(examples))
            for start in range(0, len(order), self.cfg.batch_size):
                yield [examples[i] for i in order[start : start + self.cfg.batch_size]]

    def decode(self, examples, vocab, params=None):
        return decode_dataset(
            examples,
            params or self.params,
            self.spec,
            vocab,
            beam_size=self.cfg.dev_beam,
            max_len=self.cfg.max_len,
            greedy=self.cfg.dev_beam == 1,
        )

    def dev_bleu4(self, dev, vocab, params=None):
        return bleu(self.decode(dev, vocab, params), [e.tgt_tokens for e in dev])[3]

    def save_checkpoint(self, step, score):
        if self.run_dir is None:
            self.checkpoints.add(step, score, arrays=self.params.snapshot())
            return None
        path = checkpoint.save(self.run_dir / "checkpoints" / f"ckpt-{step:08d}.bin", self.params.snapshot())
        dropped = self.checkpoints.add(step, score, path=path)
        if dropped is not None and dropped.path is not None:
            dropped.path.unlink()
        self._logger.debug(f"checkpoint {path}")
        return path

    def fit(self, train, dev, vocab, log_path=None):
        if not train:
            raise ContractError("the training set is empty")
        if not dev:
            self._logger.warning("no dev set: checkpoints are scored on the training set")
            dev = train
        cfg = self.cfg
        self._logger.info(
            f"training {cfg.configuration}: {len(train)} examples, {cfg.max_steps} steps, "
            f"batch {cfg.batch_size}, beta {cfg.beta}, lr {cfg.learning_rate}"
        )

        log = log_path.open("w") if log_path is not None else None
        try:
            batches = self.batches(train)
            for step in range(1, cfg.max_steps + 1):
                result = train_step(next(batches), self.params, self.spec, cfg, self.optimizer, step)
                row = {"step": step, "E": result.E, "E_lm": result.E_lm, "E_total": result.E_total, "dev_bleu4": None}
                if step % cfg.eval_interval == 0 or step == cfg.max_steps:
                    row["dev_bleu4"] = self.dev_bleu4(dev, vocab)
                    self.save_checkpoint(step, row["dev_bleu4"])
                    self._logger.info(
                        f"step {step:6d}  E {result.E:.4f}  E_lm {result.E_lm:.4f}  "
                        f"E_total {result.E_total:.4f}  dev BLEU-4 {row['dev_bleu4']:.2f}"
                    )
                else:
                    self._logger.debug(f"step {step:6d}  E {result.E:.6f}  E_lm {result.E_lm:.6f}")
                self.history.append(row)
                if log is not None:
                    log.write(json.dumps(row) + "\n")
        finally:
            if log is not None:
                log.close()

        best = select_checkpoint(self.checkpoints.scores())
        window = self.checkpoints.window(best, cfg.average, cfg.average_mode)
        if len(window) >= 2:
            averaged = average_checkpoints(window)
            self._logger.info(f"best checkpoint: step {best}; averaged steps {[c.step for c in window]}")
        else:
            averaged = ModelParams.from_arrays(self.checkpoints.find(best).load())
            self._logger.info(f"best checkpoint: step {best}; too few checkpoints to average")
        return TrainResult(
            params=self.params,
            averaged=averaged,
            best_step=best,
            best_score=self.checkpoints.find(best).score,
            history=self.history,
            checkpoints=self.checkpoints,
        )


def grid_search_beta(values, budget, train, dev, vocab, spec, cfg, word_table=None, threads=1):
    """Train one model per beta under the same seed and step budget.

    Returns the beta with the best dev BLEU-4 (ties to the smaller beta) and
    the (beta, BLEU-4) table in the order of `values`."""
    values = [float(v) for v in values]
    if not values:
        raise ContractError("beta grid is empty")

    def trial(beta):
        trainer = Trainer(spec, replace(cfg, beta=beta, max_steps=budget), word_table=word_table)
        result = trainer.fit(train, dev, vocab)
        root_logger.info(f"beta {beta}: dev BLEU-4 {result.best_score:.2f}")
        return result.best_score

    with ThreadPoolExecutor(max_workers=max(threads, 1)) as pool:
        scores = list(pool.map(trial, values))
    table = list(zip(values, scores))
    best = min(table, key=lambda kv: (-kv[1], kv[0]))[0]
    return best, table
