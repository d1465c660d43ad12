"""Learning-direction checks on synthetic task families (run with -m slow)"""
import json
import os

import numpy as np
import pytest

pytestmark = pytest.mark.slow

SEEDS = range(5)


def _family(seed, num_languages):
    from metalingo.corpus import SyntheticSpec, generate_synthetic

    spec = SyntheticSpec(
        num_languages=num_languages,
        num_labels=3,
        feature_dim=8,
        separation=8.0,
        noise=0.5,
        samples_per_label=40,
        seed=seed,
    )
    return generate_synthetic(spec)


def _model(seed):
    from metalingo.model import EncoderConfig, Model

    config = EncoderConfig(
        input_dim=8, hidden_dim=16, num_layers=2, activation="tanh", dropout_rate=0.0, seed=seed
    )
    return Model(config).register_head("nli", 3)


def test_protonet_reaches_high_held_out_episode_accuracy():
    from metalingo.corpus import split
    from metalingo.episodes import EpisodeShape, TaskQueue
    from metalingo.metalearn.evaluation import episode_accuracy
    from metalingo.metalearn.protonet import ProtoConfig
    from metalingo.metalearn.training import train
    from metalingo.numerics import AdamWConfig, Rng

    parts = [split(dataset, [0.75, 0.25], seed=11) for dataset in _family(11, 3)]
    seen = [part[0] for part in parts]
    held_out = [part[1] for part in parts]
    for shot in (1, 4):
        shape = EpisodeShape(way=3, shot=shot, query_per_class=4)
        config = ProtoConfig(
            iterations=2000,
            epochs=1,
            eval_interval=500,
            dev_episodes=0,
            adamw=AdamWConfig(lr=1e-3),
            episode=shape,
        )
        model, _ = train(_model(shot), "protonet", TaskQueue(seen), config, Rng(shot))
        scores = [
            episode_accuracy(model, dataset, shape, 50, Rng(100 + shot).child(dataset.name))
            for dataset in held_out
        ]
        assert np.mean(scores) >= 0.95, (shot, scores)


def test_reptile_transfers_to_a_held_out_language():
    from metalingo.episodes import EpisodeShape, TaskQueue
    from metalingo.metalearn.evaluation import evaluate
    from metalingo.metalearn.reptile import ReptileConfig
    from metalingo.metalearn.training import train
    from metalingo.numerics import AdamWConfig, Rng

    config = ReptileConfig(
        iterations=600,
        epochs=1,
        eval_interval=600,
        dev_episodes=0,
        adamw=AdamWConfig(lr=1e-2),
        episode=EpisodeShape(way=3, shot=4, query_per_class=0),
    )
    gains = []
    for seed in SEEDS:
        datasets = _family(seed, 5)
        auxiliary, target = datasets[:-1], datasets[-1]
        initial = _model(seed)
        baseline = evaluate(initial, target).accuracy
        trained, _ = train(initial.copy(), "reptile", TaskQueue(auxiliary), config, Rng(seed))
        gains.append(evaluate(trained, target).accuracy - baseline)
    assert np.median(gains) >= 0.15, gains


def _grid_config(make_config, seed, evaluation=None, **synthetic):
    return make_config(
        seed=seed,
        data={
            "synthetic": {
                "num_languages": 4,
                "num_labels": 3,
                "feature_dim": 8,
                "samples_per_label": 100,
                "separation": 8.0,
                "noise": 0.5,
                **synthetic,
            }
        },
        encoder={"hidden_dim": 16, "num_layers": 2, "dropout_rate": 0.0},
        learner={
            "regime": "protonet",
            "iterations": 400,
            "epochs": 1,
            "eval_interval": 100,
            "adamw": {"lr": 1e-2},
            "episode": {"way": 3, "shot": 4, "query_per_class": 4},
            "protonet": {"languages_per_episode": 2},
        },
        finetune={"iterations": 100},
        evaluation={
            "plan": ["zero_shot", "non_episodic_ft", "episodic_ft"],
            "dev_episodes": 0,
            **(evaluation or {}),
        },
        analysis={"samples": 40},
    )


def test_episodic_finetuning_keeps_up_with_non_episodic(make_config):
    from metalingo import experiment

    wins, grids = 0, []
    for seed in SEEDS:
        # overlapping classes and a shifted target keep accuracy below 1
        config = _grid_config(
            make_config,
            seed,
            evaluation={"prototype_source": "target_train"},
            separation=3.0,
            noise=1.0,
            shift=2.0,
            samples_per_label=200,
        )
        experiment.run_train(config)
        directory = config.output_directory()
        summary = experiment.run_eval(
            config, os.path.join(directory, experiment.CHECKPOINT_FILENAME)
        )
        with open(os.path.join(directory, experiment.SUMMARY_FILENAME)) as file:
            assert json.load(file)["cells"] == summary["cells"]
        grid = {cell: values["accuracy"] for cell, values in summary["cells"].items()}
        assert sorted(grid) == ["episodic_ft", "non_episodic_ft", "zero_shot"]
        grids.append(grid)
        if grid["episodic_ft"] >= grid["non_episodic_ft"]:
            wins += 1
    assert any(grid["non_episodic_ft"] < 1.0 for grid in grids), grids
    assert wins >= 4, grids


def test_meta_training_shrinks_the_language_gap(make_config):
    from metalingo import experiment
    from metalingo.model import Model

    wins = 0
    for seed in SEEDS:
        config = _grid_config(make_config, seed)
        model, _ = experiment.run_train(config)
        data = experiment.load_data(config)
        pairs = experiment.hausdorff_pairs(
            config, data, [("trained", model), ("init", Model(model.config))]
        )
        trained = np.mean([d for name, d in pairs if name.startswith("trained:")])
        initial = np.mean([d for name, d in pairs if name.startswith("init:")])
        if trained < initial:
            wins += 1
    assert wins >= 4


def test_hausdorff_metric_properties_on_random_sets():
    from metalingo.analysis import hausdorff
    from metalingo.numerics import Rng

    rng = Rng(31)
    for _ in range(50):
        s = rng.normal(size=(int(rng.integers(1, 12)), 5))
        t = rng.normal(size=(int(rng.integers(1, 12)), 5))
        assert hausdorff(s, t) == pytest.approx(hausdorff(t, s), abs=1e-12)
        assert hausdorff(s, s) == pytest.approx(0.0, abs=1e-12)
        assert 0.0 <= hausdorff(s, t) <= 2.0


def test_task_frequencies_follow_the_temperature_rule(make_dataset):
    from metalingo.episodes import TaskQueue, queue_probabilities, sample_task
    from metalingo.numerics import Rng
    from scipy.stats import chisquare

    sizes = [50, 10, 4]
    datasets = [
        make_dataset(np.zeros((n, 1)), [0, 1] * (n // 2), language="lang%d" % i)
        for i, n in enumerate(sizes)
    ]
    draws = 100000
    for temperature in (1.0, 4.0, float("inf")):
        expected = queue_probabilities(sizes, temperature)
        queue = TaskQueue(datasets, temperature=temperature)
        rng = Rng(41).child(str(temperature))
        index = {dataset.name: i for i, dataset in enumerate(datasets)}
        observed = np.zeros(len(sizes))
        for _ in range(draws):
            observed[index[sample_task(queue, rng).name]] += 1
        assert np.all(np.abs(observed / draws - expected) <= 0.02)
        assert chisquare(observed, expected * draws).pvalue > 1e-3
