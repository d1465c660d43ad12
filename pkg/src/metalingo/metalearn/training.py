# The MIT License (MIT)

# Copyright (c) 2024 metalingo contributors

# Permission is hereby granted, free of charge, to any person obtaining a copy
# of this software and associated documentation files (the "Software"), to deal
# in the Software without restriction, including without limitation the rights
# to use, copy, modify, merge, publish, distribute, sublicense, and/or sell
# copies of the Software, and to permit persons to whom the Software is
# furnished to do so, subject to the following conditions:

# The above copyright notice and this permission notice shall be included in
# all copies or substantial portions of the Software.

# THE SOFTWARE IS PROVIDED "AS IS", WITHOUT WARRANTY OF ANY KIND, EXPRESS OR
# IMPLIED, INCLUDING BUT NOT LIMITED TO THE WARRANTIES OF MERCHANTABILITY,
# FITNESS FOR A PARTICULAR PURPOSE AND NONINFRINGEMENT. IN NO EVENT SHALL THE
# AUTHORS OR COPYRIGHT HOLDERS BE LIABLE FOR ANY CLAIM, DAMAGES OR OTHER
# LIABILITY, WHETHER IN AN ACTION OF CONTRACT, TORT OR OTHERWISE, ARISING FROM,
# OUT OF OR IN CONNECTION WITH THE SOFTWARE OR THE USE OR OTHER DEALINGS IN
# THE SOFTWARE.
"""Training loops for every regime, and fine-tuning on a target dataset"""
import logging
import math
from dataclasses import dataclass, replace

import numpy as np
from tqdm import tqdm

from ..corpus import DataError
from ..episodes import TaskQueue, build_episode, sample_companions, sample_task
from ..model import head_loss
from ..numerics import AdamWState, NumericError, adamw_step
from . import REGIMES, LoopConfig
from .evaluation import episode_accuracy, evaluate
from .maml import MamlConfig, maml_step
from .metrics import RunMetrics
from .protonet import ProtoConfig, proto_episode_loss
from .reptile import ReptileConfig, reptile_inner, reptile_outer

logger = logging.getLogger(__name__)

FINETUNE_MODES = ("episodic", "non_episodic")


@dataclass(frozen=True)
class NonEpisodicConfig(LoopConfig):
    """Shuffled single-task mini-batches trained with AdamW cross-entropy"""

    batch_size: int = 32

    def __post_init__(self):
        super().__post_init__()
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")


CONFIG_TYPES = {
    "reptile": ReptileConfig,
    "maml": MamlConfig,
    "protonet": ProtoConfig,
    "non_episodic": NonEpisodicConfig,
}


def regime_of(config):
    """Regime name matching a learner config"""
    for regime, config_type in CONFIG_TYPES.items():
        if type(config) is config_type:
            return regime
    raise ValueError("not a learner config: {!r}".format(config))


def examples_per_iteration(regime, config):
    """Examples one iteration of the regime consumes"""
    shape = config.episode
    if regime == "reptile":
        return config.tasks_per_update * shape.way * shape.shot
    if regime == "maml":
        return config.tasks_per_update * shape.way * (shape.shot + shape.query)
    if regime == "protonet":
        return shape.way * (shape.shot + shape.query)
    return config.batch_size


def resolve_iterations(regime, config, queue):
    """Iterations per epoch; "auto" covers every queued example once per epoch"""
    if config.iterations != "auto":
        return config.iterations
    return int(math.ceil(queue.total_examples / examples_per_iteration(regime, config)))


class _Batches:
    """Endless stream of shuffled single-task mini-batches, reshuffled per pass"""

    def __init__(self, datasets, batch_size, rng):
        self.datasets = list(datasets)
        self.batch_size = batch_size
        self.rng = rng
        self.pending = []

    def _refill(self):
        plan = []
        for dataset in self.datasets:
            order = self.rng.permutation(dataset.size)
            for start in range(0, dataset.size, self.batch_size):
                plan.append((dataset, order[start : start + self.batch_size]))
        self.pending = [plan[int(i)] for i in self.rng.permutation(len(plan))]

    def next(self):
        """Next (dataset, example indices) batch"""
        if not self.pending:
            self._refill()
        return self.pending.pop(0)


class _Trainer:
    def __init__(self, model, regime, queue, config, rng, target=None):
        self.model = model
        self.regime = regime
        self.queue = queue
        self.config = config
        self.target = target
        self.task_rng = rng.child("tasks")
        self.episode_rng = rng.child("episodes")
        self.dropout_rng = rng.child("dropout") if model.config.dropout_rate > 0 else None
        self.state = AdamWState.zeros(model.parameter_count, config.adamw)
        if regime == "non_episodic":
            datasets = [d for d, p in zip(queue.datasets, queue.probabilities) if p > 0]
            self.batches = _Batches(datasets, config.batch_size, rng.child("batches"))

    def _episode(self, datasets, query):
        shape = self.config.episode
        datasets = [datasets] if hasattr(datasets, "examples") else list(datasets)
        first = datasets[0]
        # the target only joins episodes of its own task
        mixed = self.target is not None and self.target.task == first.task
        return build_episode(
            datasets,
            shape.way_for(first),
            shape.shot,
            query,
            scenario=shape.scenario if mixed else "aux_only",
            target_dataset=self.target if mixed else None,
            rng=self.episode_rng,
            target_fraction=shape.target_fraction,
        )

    def _adamw(self, grad, tag):
        indices = self.model.parameter_indices(tag)
        params, self.state = adamw_step(self.model.flat, grad, self.state, indices)
        self.model.load_flat(params)

    def step(self, iteration, total):
        """One iteration; returns its loss"""
        config = self.config
        if self.regime == "reptile":
            adapted, losses = [], []
            for _ in range(config.tasks_per_update):
                dataset = sample_task(self.queue, self.task_rng)
                # Reptile episodes hold a support set only
                episode = build_episode(
                    dataset,
                    config.episode.way_for(dataset),
                    config.episode.shot,
                    0,
                    rng=self.episode_rng,
                )
                vector, inner = reptile_inner(
                    self.model,
                    episode.support,
                    episode.task,
                    config.inner_steps,
                    config.adamw,
                    self.dropout_rng,
                )
                adapted.append(vector)
                losses.append(inner[0])
            beta = config.beta_at(iteration, total)
            self.model.load_flat(reptile_outer(self.model.flat, adapted, beta))
            return float(np.mean(losses))
        if self.regime == "maml":
            episodes = [
                self._episode(sample_task(self.queue, self.task_rng), config.episode.query)
                for _ in range(config.tasks_per_update)
            ]
            updated, loss = maml_step(
                self.model,
                episodes,
                config.inner_lr,
                config.outer_lr,
                config.inner_steps,
                self.dropout_rng,
            )
            self.model.load_flat(updated.flat)
            return loss
        if self.regime == "protonet":
            first = sample_task(self.queue, self.task_rng)
            sources = sample_companions(
                self.queue, first, config.languages_per_episode, self.task_rng
            )
            episode = self._episode(sources, config.episode.query)
            result = proto_episode_loss(
                self.model,
                episode,
                config.lambda_dce,
                config.lambda_ce,
                self.dropout_rng,
                config.distance,
            )
            self._adamw(result.gradient, episode.task)
            return result.loss
        dataset, indices = self.batches.next()
        examples = [dataset.examples[int(i)] for i in indices]
        labels = np.array([e.label for e in examples], dtype=np.int64)
        mode = "eval" if self.dropout_rng is None else "train"
        loss, grad = head_loss(
            self.model, examples, labels, dataset.task, mode=mode, rng=self.dropout_rng
        )
        self._adamw(grad, dataset.task)
        return loss


def dev_accuracy(model, regime, config, dev, seed_rng):
    """Held-out accuracy averaged over the dev datasets, None without dev data"""
    if not dev:
        return None
    scores = []
    for dataset in dev:
        if regime == "protonet":
            if config.dev_episodes < 1:
                return None
            # the same episodes at every row, so rows are comparable
            rng = seed_rng.child(dataset.name)
            scores.append(
                episode_accuracy(
                    model, dataset, config.episode, config.dev_episodes, rng, config.distance
                )
            )
        elif model.has_head(dataset.task):
            scores.append(evaluate(model, dataset).accuracy)
    return float(np.mean(scores)) if scores else None


def train(model, regime, queue, config, rng, dev=None, target=None, progress=False):
    """Trains ``model`` in place and returns it with its RunMetrics.

    ``target`` feeds the query side of the mixed episode scenario. A metric
    row is recorded every ``eval_interval`` iterations with the mean loss
    since the previous row and the dev accuracy.
    """
    if regime not in REGIMES:
        raise ValueError("unknown regime: {}".format(regime))
    if regime_of(config) != regime:
        raise ValueError("{} config given for regime {}".format(regime_of(config), regime))
    for task in queue.tasks:
        if not model.has_head(task):
            raise ValueError("no head registered for task {}".format(task))
    if config.episode.scenario == "aux_support_mixed_query" and regime in ("maml", "protonet"):
        if target is None:
            raise DataError("the mixed episode scenario needs a target dataset")
    metrics = RunMetrics()
    per_epoch = resolve_iterations(regime, config, queue)
    total = per_epoch * config.epochs
    if per_epoch == 0:
        return model, metrics

    trainer = _Trainer(
        model,
        regime,
        queue,
        config,
        rng,
        target if config.episode.scenario == "aux_support_mixed_query" else None,
    )
    dev_rng = rng.child("dev")
    window = []
    logger.info("training %s for %d iterations (%d epochs)", regime, total, config.epochs)
    for iteration in tqdm(range(total), desc=regime, disable=not progress):
        try:
            loss = trainer.step(iteration, total)
            if not math.isfinite(loss):
                raise NumericError("non-finite loss")
        except NumericError as e:
            logger.error("aborting %s at iteration %d: %s", regime, iteration + 1, e)
            raise
        window.append(loss)
        if (iteration + 1) % config.eval_interval == 0:
            accuracy = dev_accuracy(model, regime, config, dev, dev_rng)
            metrics.record(iteration + 1, np.mean(window), accuracy)
            logger.info(
                "%s iteration %d loss %.6f accuracy %s",
                regime,
                iteration + 1,
                np.mean(window),
                "n/a" if accuracy is None else "%.4f" % accuracy,
            )
            window = []
    return model, metrics


def ensure_head(model, dataset, rng=None):
    """Registers a head for the dataset's task unless a compatible one exists"""
    if model.has_head(dataset.task):
        if model.heads[dataset.task] != dataset.num_labels:
            raise DataError(
                "head {} has {} classes, {} has {} labels".format(
                    dataset.task, model.heads[dataset.task], dataset.name, dataset.num_labels
                )
            )
        return model
    return model.register_head(dataset.task, dataset.num_labels, rng)


def finetune(model, target, mode, config, rng, dev=None, progress=False):
    """Fine-tunes on the target dataset.

    ``non_episodic`` needs a NonEpisodicConfig. ``episodic`` reuses the
    meta-training learner given by the config type (ProtoNet episodes for
    ProtoNet, inner-loop adaptation for Reptile and MAML).
    """
    if mode not in FINETUNE_MODES:
        raise ValueError("unknown fine-tuning mode: {}".format(mode))
    regime = regime_of(config)
    if mode == "non_episodic" and regime != "non_episodic":
        raise ValueError("non-episodic fine-tuning needs a NonEpisodicConfig")
    if mode == "episodic" and regime == "non_episodic":
        raise ValueError("episodic fine-tuning needs an episodic learner config")
    ensure_head(model, target, rng.child("head"))
    if config.episode.scenario != "aux_only" and regime != "non_episodic":
        config = _with_scenario(config, "aux_only")
    return train(model, regime, TaskQueue([target]), config, rng, dev=dev, progress=progress)


def _with_scenario(config, scenario):
    return replace(config, episode=replace(config.episode, scenario=scenario))
