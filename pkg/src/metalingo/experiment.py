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
"""Experiment pipeline: datasets, queue, model, and the train / finetune /
eval / analyze / dreca runs that write into a run directory.
"""
import json
import logging
import os
from dataclasses import dataclass

import numpy as np

from . import analysis, dreca
from .checkpoint import check_compatible, load_checkpoint, save_checkpoint
from .corpus import (
    DataError,
    SyntheticSpec,
    dump_jsonl,
    generate_synthetic,
    load_jsonl,
    load_labels,
    load_tsv,
    save_labels,
    split,
)
from .episodes import EpisodeShape, TaskQueue, episode_capable
from .experiment_settings import RESOLVED_FILENAME
from .metalearn.evaluation import evaluate
from .metalearn.maml import MamlConfig
from .metalearn.protonet import ProtoConfig
from .metalearn.reptile import ReptileConfig
from .metalearn.training import NonEpisodicConfig, ensure_head, finetune, train
from .model import EncoderConfig, Model
from .numerics import AdamWConfig, Rng
from .settings import ConfigError

logger = logging.getLogger(__name__)

AUX_TASK = "aux-cls"
CHECKPOINT_FILENAME = "checkpoint.bin"
SUMMARY_FILENAME = "summary.json"
DRECA_FILENAME = "dreca.json"


class RunDirectory:
    """Writes the files of one run; removes them again if the run fails"""

    def __init__(self, path):
        self.path = path
        self.written = []

    def __enter__(self):
        os.makedirs(self.path, exist_ok=True)
        return self

    def __exit__(self, exc_type, exc_val, exc_tb):
        if exc_type is None:
            return
        for filename in reversed(self.written):
            try:
                os.remove(self.path_of(filename))
            except OSError:
                pass
        logger.warning("run failed, removed %d partial outputs", len(self.written))
        self.written = []

    def path_of(self, filename):
        """Full path of a file in the run directory"""
        return os.path.join(self.path, filename)

    def track(self, filename):
        """Records a file about to be written by someone else and returns its path"""
        if filename not in self.written:
            self.written.append(filename)
        return self.path_of(filename)

    def write(self, filename, data):
        """Writes the data into the filename, truncating the file first"""
        with open(self.track(filename), "w", encoding="utf-8", newline="\n") as file:
            file.write(data)


@dataclass(frozen=True)
class Splits:
    """Train, dev and test parts of one dataset"""

    train: object
    dev: object
    test: object


@dataclass(frozen=True)
class ExperimentData:
    """Auxiliary datasets (every task family) and the optional target"""

    auxiliary: tuple
    target: object = None
    task: str = "nli"

    @property
    def feature_dim(self):
        """Feature width shared by all datasets"""
        return self.auxiliary[0].train.feature_dim

    @property
    def main(self):
        """Auxiliary splits of the main task"""
        return [s for s in self.auxiliary if s.train.task == self.task]

    def datasets(self):
        """Every loaded split"""
        parts = list(self.auxiliary) + ([self.target] if self.target else [])
        return [d for s in parts for d in (s.train, s.dev, s.test)]


def _split(dataset, config, salt):
    seed = Rng(config.seed).child("split").child(salt).integers(2**31)
    return Splits(*split(dataset, config.data.split, int(seed)))


def synthetic_spec(config, task=None, num_labels=None):
    """SyntheticSpec of the configured family, or of its auxiliary task family"""
    settings = config.data.synthetic
    seed = settings.seed if settings.seed is not None else config.seed
    return SyntheticSpec(
        num_languages=settings.num_languages,
        num_labels=num_labels or settings.num_labels,
        feature_dim=settings.feature_dim,
        clusters_per_label=settings.clusters_per_label,
        separation=settings.separation,
        cluster_separation=settings.cluster_separation,
        noise=settings.noise,
        shift=settings.shift,
        samples_per_label=settings.samples_per_label,
        seed=seed,
        task=task or settings.task,
    )


def _synthetic_data(config):
    spec = synthetic_spec(config)
    languages = spec.language_tags
    target_language = config.data.target or languages[-1]
    if target_language not in languages:
        raise ConfigError(
            "data.target {} is not one of {}".format(target_language, list(languages))
        )
    if len(languages) < 2:
        raise ConfigError("synthetic data needs an auxiliary and a target language")
    auxiliary, target = [], None
    families = [generate_synthetic(spec)]
    if config.data.synthetic.aux_task_labels:
        families.append(
            generate_synthetic(
                synthetic_spec(config, AUX_TASK, config.data.synthetic.aux_task_labels)
            )
        )
    for family in families:
        for dataset in family:
            if dataset.task == spec.task and dataset.language == target_language:
                target = _split(dataset, config, dataset.name)
            elif dataset.language != target_language:
                auxiliary.append(_split(dataset, config, dataset.name))
    return ExperimentData(tuple(auxiliary), target, spec.task)


def _load_file(path, data, known):
    try:
        if data.format == "tsv":
            dataset = load_tsv(
                path, data.task, label_names=known.get(data.task), dim=data.feature_dim
            )
        else:
            dataset = load_jsonl(path)
            names = known.get(dataset.task)
            if names is not None and dataset.label_names != names:
                dataset = load_jsonl(path, names)
    except OSError as e:
        raise DataError("cannot read {}: {}".format(path, e)) from e
    known.setdefault(dataset.task, dataset.label_names)
    return dataset


def _file_data(config):
    data = config.data
    known = {}
    if data.labels is not None:
        try:
            known[data.task] = tuple(load_labels(data.labels))
        except OSError as e:
            raise DataError("cannot read {}: {}".format(data.labels, e)) from e
    auxiliary = [
        _split(_load_file(path, data, known), config, path) for path in data.auxiliary
    ]
    target = None
    if data.target is not None:
        target = _split(_load_file(data.target, data, known), config, data.target)
    main = auxiliary[0].train.task if data.format == "jsonl" else data.task
    return ExperimentData(tuple(auxiliary), target, target.train.task if target else main)


def load_data(config):
    """Loads or generates every dataset and splits it"""
    data = _synthetic_data(config) if config.data.source == "synthetic" else _file_data(config)
    dims = {d.feature_dim for d in data.datasets()}
    if len(dims) != 1:
        raise DataError("datasets have different feature widths: {}".format(sorted(dims)))
    logger.info(
        "%d auxiliary datasets, target %s",
        len(data.auxiliary),
        data.target.train.name if data.target else "none",
    )
    return data


def encoder_config(config, input_dim):
    """EncoderConfig of the experiment for the given feature width"""
    encoder = config.encoder
    return EncoderConfig(
        input_dim=input_dim,
        hidden_dim=encoder.hidden_dim,
        num_layers=encoder.num_layers,
        activation=encoder.activation,
        dropout_rate=encoder.dropout_rate,
        seed=config.seed,
    )


def head_layout(data):
    """(task, classes) for every task in the data, in first-appearance order"""
    layout = {}
    for part in list(data.auxiliary) + ([data.target] if data.target else []):
        layout.setdefault(part.train.task, part.train.num_labels)
    return list(layout.items())


def build_model(config, data):
    """Freshly initialised model with a head per task"""
    model = Model(encoder_config(config, data.feature_dim))
    for part in list(data.auxiliary) + ([data.target] if data.target else []):
        ensure_head(model, part.train)
    return model


def load_model(config, data, path):
    """Checkpoint checked against the experiment's architecture"""
    model = load_checkpoint(path)
    check_compatible(model, encoder_config(config, data.feature_dim), head_layout(data))
    for part in list(data.auxiliary) + ([data.target] if data.target else []):
        ensure_head(model, part.train)
    return model


def learner_config(config, regime=None, iterations=None, epochs=None):
    """Learner config of a regime built from the settings"""
    learner = config.learner
    regime = regime or learner.regime
    episode = learner.episode
    shape = EpisodeShape(
        way=episode.way or (2 if regime == "reptile" else 3),
        shot=episode.shot,
        query_per_class=episode.query_per_class,
        scenario=episode.scenario,
        target_fraction=episode.target_fraction,
    )
    adamw = learner.adamw
    common = dict(
        iterations=learner.iterations if iterations is None else iterations,
        epochs=learner.epochs if epochs is None else epochs,
        eval_interval=learner.eval_interval,
        dev_episodes=config.evaluation.dev_episodes,
        adamw=AdamWConfig(
            lr=adamw.lr,
            beta1=adamw.beta1,
            beta2=adamw.beta2,
            eps=adamw.eps,
            weight_decay=adamw.weight_decay,
        ),
        episode=shape,
    )
    if regime == "reptile":
        reptile = learner.reptile
        return ReptileConfig(
            inner_steps=reptile.inner_steps,
            beta=reptile.beta,
            beta_decay=reptile.beta_decay,
            tasks_per_update=reptile.tasks_per_update,
            **common
        )
    if regime == "maml":
        maml = learner.maml
        return MamlConfig(
            inner_lr=maml.inner_lr,
            outer_lr=maml.outer_lr,
            inner_steps=maml.inner_steps,
            tasks_per_update=maml.tasks_per_update,
            **common
        )
    if regime == "protonet":
        protonet = learner.protonet
        return ProtoConfig(
            lambda_dce=protonet.lambda_dce,
            lambda_ce=protonet.lambda_ce,
            distance=protonet.distance,
            languages_per_episode=protonet.languages_per_episode,
            **common
        )
    return NonEpisodicConfig(batch_size=learner.non_episodic.batch_size, **common)


def _embedding(config, model):
    return model if config.dreca.embed == "encoder" else None


def dreca_config(config):
    """DrecaConfig from the settings"""
    settings = config.dreca
    return dreca.DrecaConfig(
        clusters=settings.clusters,
        embed=settings.embed,
        restarts=settings.restarts,
        max_iterations=settings.max_iterations,
        tolerance=settings.tolerance,
        seed=config.seed,
        mixing=settings.mixing,
    )


def decompose_all(config, data, model):
    """DReCa tasks of every auxiliary training split, keyed by dataset name"""
    settings = dreca_config(config)
    rng = Rng(config.seed).child("dreca")
    return {
        part.train.name: dreca.decompose(
            part.train, settings, _embedding(config, model), rng.child(part.train.name)
        )
        for part in data.auxiliary
    }


def build_queue(config, data, model, learner=None):
    """Meta-training queue: auxiliary training splits, the target when
    requested, then DReCa tasks when enabled.

    Returns the queue and the DReCa tasks (empty without augmentation).
    """
    datasets = [part.train for part in data.auxiliary]
    if config.queue.add_target:
        if data.target is None:
            raise ConfigError("queue.add_target needs a target dataset")
        datasets.append(data.target.train)
    queue = TaskQueue(datasets, config.queue.temperature)
    tasks = {}
    if config.dreca.enabled:
        learner = learner or learner_config(config)
        tasks = decompose_all(config, data, model)
        candidates = [
            task_dataset
            for part in data.auxiliary
            for task_dataset in dreca.task_datasets(part.train, tasks[part.train.name])
        ]
        queue = dreca.augment_queue(
            queue,
            candidates,
            config.dreca.mixing,
            learner.episode.shot,
            learner.episode.query,
        )
    return queue, tasks


def dev_sets(splits, learner):
    """Dev splits usable for held-out scoring under a learner"""
    dev = [part.dev for part in splits]
    if isinstance(learner, ProtoConfig):
        shape = learner.episode
        dev = [d for d in dev if episode_capable(d, shape.shot, shape.query)]
    return dev


def _manifest_json(tasks):
    return (
        json.dumps({name: dreca.manifest(t) for name, t in tasks.items()}, sort_keys=True, indent=2)
        + "\n"
    )


def run_train(config, progress=False):
    """Meta-trains (or pre-trains) a model and writes checkpoint, metrics and config"""
    data = load_data(config)
    model = build_model(config, data)
    learner = learner_config(config)
    queue, tasks = build_queue(config, data, model, learner)
    target = data.target.train if data.target else None
    with RunDirectory(config.output_directory()) as run:
        run.write(RESOLVED_FILENAME, config.dumps())
        if tasks:
            run.write(DRECA_FILENAME, _manifest_json(tasks))
        model, metrics = train(
            model,
            config.learner.regime,
            queue,
            learner,
            Rng(config.seed).child("train"),
            dev=dev_sets(data.auxiliary, learner),
            target=target,
            progress=progress,
        )
        metrics.write(run, "metrics")
        save_checkpoint(model, run.track(CHECKPOINT_FILENAME))
    logger.info("wrote %s", run.path_of(CHECKPOINT_FILENAME))
    return model, metrics


def finetune_model(config, data, model, mode, progress=False):
    """Fine-tunes a copy of the model on the target training split"""
    if data.target is None:
        raise ConfigError("fine-tuning needs a target dataset")
    regime = "non_episodic" if mode == "non_episodic" else config.learner.regime
    if mode == "episodic" and regime == "non_episodic":
        raise ConfigError("episodic fine-tuning needs an episodic learner.regime")
    learner = learner_config(
        config, regime, config.finetune.iterations, config.finetune.epochs
    )
    return finetune(
        model.copy(),
        data.target.train,
        mode,
        learner,
        Rng(config.seed).child("finetune").child(mode),
        dev=dev_sets([data.target], learner),
        progress=progress,
    )


def run_finetune(config, checkpoint, mode, progress=False):
    """Fine-tunes a checkpoint and writes checkpoint-<mode>.bin and metrics-<mode>.*"""
    data = load_data(config)
    model = load_model(config, data, checkpoint)
    with RunDirectory(config.output_directory()) as run:
        run.write(RESOLVED_FILENAME, config.dumps())
        tuned, metrics = finetune_model(config, data, model, mode, progress)
        metrics.write(run, "metrics-" + mode)
        save_checkpoint(tuned, run.track("checkpoint-%s.bin" % mode))
    return tuned, metrics


def evaluation_method(config):
    """Configured method, or the regime's natural one"""
    if config.evaluation.method is not None:
        return config.evaluation.method
    return "prototype" if config.learner.regime == "protonet" else "head"


def _score(config, data, model, cell):
    method = evaluation_method(config)
    source = None
    if method == "prototype":
        use_target = cell != "zero_shot" and config.evaluation.prototype_source == "target_train"
        source = [data.target.train] if use_target else [part.train for part in data.main]
    return evaluate(
        model,
        data.target.test,
        method=method,
        prototype_source=source,
        distance=config.learner.protonet.distance,
    )


def evaluation_grid(config, data, model, progress=False):
    """Evaluation of every planned grid cell on the target test split"""
    plan = list(config.evaluation.plan)
    if not plan:
        return {}
    if data.target is None:
        raise ConfigError("evaluation needs a target dataset")
    if "meta_train_with_target" in plan and not config.queue.add_target:
        raise ConfigError("meta_train_with_target needs queue.add_target")
    results = {}
    for cell in plan:
        if cell in ("zero_shot", "meta_train_with_target"):
            scored = model
        else:
            mode = "non_episodic" if cell == "non_episodic_ft" else "episodic"
            scored, _ = finetune_model(config, data, model, mode, progress)
        results[cell] = _score(config, data, scored, cell)
        logger.info("%s accuracy %.4f", cell, results[cell].accuracy)
    return results


def _confusion_csv(matrix, label_names):
    lines = [",".join(["true"] + list(label_names))]
    for name, row in zip(label_names, matrix):
        lines.append(",".join([name] + [str(int(v)) for v in row]))
    return "\n".join(lines) + "\n"


def run_eval(config, checkpoint, progress=False):
    """Computes the experiment grid and writes summary.json plus confusion-<cell>.csv"""
    summary = {"cells": {}, "method": evaluation_method(config)}
    with RunDirectory(config.output_directory()) as run:
        run.write(RESOLVED_FILENAME, config.dumps())
        if config.evaluation.plan:
            data = load_data(config)
            model = load_model(config, data, checkpoint)
            summary["target"] = data.target.test.name if data.target else None
            for cell, result in evaluation_grid(config, data, model, progress).items():
                summary["cells"][cell] = {
                    "accuracy": result.accuracy,
                    "confusion": result.confusion.tolist(),
                }
                run.write(
                    "confusion-%s.csv" % cell,
                    _confusion_csv(result.confusion, data.target.test.label_names),
                )
        run.write(SUMMARY_FILENAME, json.dumps(summary, sort_keys=True, indent=2) + "\n")
    return summary


def _sample(dataset, count, rng):
    if dataset.size <= count:
        return dataset
    chosen = np.sort(rng.choice(dataset.size, size=count, replace=False))
    return dataset.subset(chosen, dataset.name)


def representation_sets(config, data, model, tag):
    """Encodings of each main-task auxiliary training split and the target test split"""
    rng = Rng(config.seed).child("analysis")
    count = config.analysis.samples
    sets = [
        analysis.encode(
            model,
            _sample(part.train, count, rng.child(part.train.name)),
            label="%s:%s" % (tag, part.train.language),
        )
        for part in data.main
    ]
    target = analysis.encode(
        model,
        _sample(data.target.test, count, rng.child(data.target.test.name)),
        label="%s:%s" % (tag, data.target.test.language),
    )
    return sets, target


def hausdorff_pairs(config, data, models):
    """(pair name, distance) for every auxiliary language against the target"""
    pairs = []
    for tag, model in models:
        sets, target = representation_sets(config, data, model, tag)
        for aux in sets:
            pairs.append(("%s~%s" % (aux.label, target.label), analysis.hausdorff(aux, target)))
    return pairs


def run_analyze(config, checkpoint, after=None, progress=False):
    """Writes pca.csv, cca.csv and hausdorff.csv for a checkpoint.

    ``after`` is a fine-tuned checkpoint for the per-layer CCA profile;
    without it the model is fine-tuned non-episodically first.
    """
    data = load_data(config)
    if data.target is None:
        raise ConfigError("analysis needs a target dataset")
    model = load_model(config, data, checkpoint)
    settings = config.analysis
    with RunDirectory(config.output_directory()) as run:
        run.write(RESOLVED_FILENAME, config.dumps())
        if settings.hausdorff:
            fresh = Model(model.config)
            pairs = hausdorff_pairs(config, data, [("trained", model), ("init", fresh)])
            run.write("hausdorff.csv", analysis.hausdorff_csv(pairs))
        if settings.pca:
            sets, target = representation_sets(config, data, model, "trained")
            stacked = analysis.stack(sets + [target], "trained")
            run.write("pca.csv", analysis.pca_csv(stacked, analysis.pca2(stacked)))
        if settings.cca:
            if after is not None:
                tuned = load_model(config, data, after)
            else:
                tuned, _ = finetune_model(config, data, model, "non_episodic", progress)
            probe = data.target.test if settings.probe == "target_test" else data.target.train
            probe = _sample(probe, settings.samples, Rng(config.seed).child("probe"))
            profile = analysis.layer_cca_profile(model, tuned, probe)
            run.write("cca.csv", analysis.cca_csv(profile))


def run_dreca(config, checkpoint=None):
    """Writes the DReCa task manifest of every auxiliary training split"""
    data = load_data(config)
    if checkpoint is not None:
        model = load_model(config, data, checkpoint)
    else:
        model = build_model(config, data)
    tasks = decompose_all(config, data, model)
    with RunDirectory(config.output_directory()) as run:
        run.write(DRECA_FILENAME, _manifest_json(tasks))
    return tasks


def generate_files(spec, directory):
    """Writes ``<task>_<language>.jsonl`` per language plus ``<task>.labels``"""
    datasets = generate_synthetic(spec)
    with RunDirectory(directory) as run:
        for dataset in datasets:
            dump_jsonl(dataset, run.track("%s_%s.jsonl" % (dataset.task, dataset.language)))
        save_labels(spec.labels, run.track("%s.labels" % spec.task))
    logger.info("wrote %d datasets to %s", len(datasets), directory)
    return datasets


def load_spec(path):
    """SyntheticSpec from a JSON file"""
    try:
        with open(path, "r", encoding="utf-8") as file:
            document = json.load(file)
    except OSError as e:
        raise ConfigError("cannot read %s: %s" % (path, e)) from e
    except ValueError as e:
        raise ConfigError("%s is not valid JSON: %s" % (path, e)) from e
    return SyntheticSpec.from_dict(document)
