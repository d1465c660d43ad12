import json
import os

import pytest


def test_run_directory_removes_partial_outputs(tmp_path):
    from metalingo.experiment import RunDirectory

    keep = tmp_path / "keep.txt"
    keep.write_text("old")
    with pytest.raises(RuntimeError):
        with RunDirectory(str(tmp_path)) as run:
            run.write("a.txt", "a")
            with open(run.track("b.bin"), "wb") as file:
                file.write(b"\x00")
            assert os.path.isfile(run.path_of("a.txt"))
            raise RuntimeError("boom")
    assert sorted(os.listdir(tmp_path)) == ["keep.txt"]


def test_run_directory_keeps_outputs_on_success(tmp_path):
    from metalingo.experiment import RunDirectory

    target = tmp_path / "nested" / "run"
    with RunDirectory(str(target)) as run:
        run.write("a.txt", "héllo")
        with open(run.track("b.bin"), "wb") as file:
            file.write(b"\x01\x02")
    assert (target / "a.txt").read_text(encoding="utf-8") == "héllo"
    assert (target / "b.bin").read_bytes() == b"\x01\x02"
    assert run.written == ["a.txt", "b.bin"]


def test_load_synthetic_data(make_config):
    from metalingo.experiment import head_layout, load_data

    data = load_data(make_config())
    assert [part.train.name for part in data.auxiliary] == ["nli/lang0:train", "nli/lang1:train"]
    assert data.target.test.name == "nli/lang2:test"
    assert data.feature_dim == 6
    # 90 examples per language split 0.8 / 0.1 / 0.1
    assert (data.target.train.size, data.target.dev.size, data.target.test.size) == (72, 9, 9)
    assert len(data.main) == 2
    assert head_layout(data) == [("nli", 3)]


def test_load_synthetic_data_with_auxiliary_task(make_config, experiment_document):
    from metalingo.experiment import head_layout, load_data

    synthetic = dict(experiment_document["data"]["synthetic"], aux_task_labels=2)
    data = load_data(make_config(data={"synthetic": synthetic, "target": "lang0"}))
    names = [part.train.name for part in data.auxiliary]
    assert names == [
        "nli/lang1:train",
        "nli/lang2:train",
        "aux-cls/lang1:train",
        "aux-cls/lang2:train",
    ]
    assert data.target.train.language == "lang0"
    assert len(data.main) == 2
    assert head_layout(data) == [("nli", 3), ("aux-cls", 2)]


def test_unknown_target_language(make_config):
    from metalingo.experiment import load_data
    from metalingo.settings import ConfigError

    with pytest.raises(ConfigError):
        load_data(make_config(data={"target": "klingon"}))


def test_split_is_deterministic(make_config):
    from metalingo.experiment import load_data

    first = load_data(make_config())
    second = load_data(make_config())
    assert [e.id for e in first.target.test.examples] == [e.id for e in second.target.test.examples]


def test_load_file_data(tmp_path, make_config, small_spec):
    from metalingo.experiment import generate_files, load_data

    directory = tmp_path / "data"
    generate_files(small_spec, str(directory))
    data = load_data(
        make_config(
            data={
                "source": "files",
                "auxiliary": [str(directory / "nli_lang0.jsonl"), str(directory / "nli_lang1.jsonl")],
                "target": str(directory / "nli_lang2.jsonl"),
                "labels": str(directory / "nli.labels"),
            }
        )
    )
    assert data.task == "nli"
    assert data.target.train.language == "lang2"
    assert data.auxiliary[0].train.label_names == small_spec.labels


def test_missing_file_is_a_data_error(tmp_path, make_config):
    from metalingo.corpus import DataError
    from metalingo.experiment import load_data

    config = make_config(data={"source": "files", "auxiliary": [str(tmp_path / "none.jsonl")]})
    with pytest.raises(DataError):
        load_data(config)


def test_learner_config(make_config):
    from metalingo.experiment import learner_config
    from metalingo.metalearn.protonet import ProtoConfig
    from metalingo.metalearn.reptile import ReptileConfig

    config = make_config()
    reptile = learner_config(config)
    assert isinstance(reptile, ReptileConfig)
    assert reptile.episode.way == 2
    assert reptile.adamw.lr == 0.01
    proto = learner_config(config, "protonet", iterations=7)
    assert isinstance(proto, ProtoConfig)
    assert proto.episode.way == 3
    assert proto.iterations == 7
    assert proto.dev_episodes == 2


def test_build_queue(make_config):
    from metalingo.experiment import build_model, build_queue, load_data
    from metalingo.settings import ConfigError

    config = make_config(queue={"add_target": True})
    data = load_data(config)
    queue, tasks = build_queue(config, data, build_model(config, data))
    assert [d.name for d in queue.datasets] == [
        "nli/lang0:train",
        "nli/lang1:train",
        "nli/lang2:train",
    ]
    assert tasks == {}

    config = make_config(dreca={"enabled": True, "embed": "identity"})
    data = load_data(config)
    queue, tasks = build_queue(config, data, build_model(config, data))
    assert sorted(tasks) == ["nli/lang0:train", "nli/lang1:train"]
    assert len(queue) > 2
    assert abs(sum(queue.probabilities[:2]) - 0.5) < 1e-12

    config = make_config(queue={"add_target": True})
    data = load_data(config)
    data = type(data)(data.auxiliary, None, data.task)
    with pytest.raises(ConfigError):
        build_queue(config, data, build_model(config, data))


def test_run_train_writes_outputs(make_config):
    from metalingo.checkpoint import load_checkpoint
    from metalingo.experiment import CHECKPOINT_FILENAME, run_train
    from metalingo.experiment_settings import RESOLVED_FILENAME

    config = make_config()
    model, metrics = run_train(config)
    directory = config.output_directory()
    for name in [RESOLVED_FILENAME, "metrics.csv", "metrics.json", CHECKPOINT_FILENAME]:
        assert os.path.isfile(os.path.join(directory, name))
    assert [row[0] for row in metrics.rows] == [2, 4]
    loaded = load_checkpoint(os.path.join(directory, CHECKPOINT_FILENAME))
    assert loaded.flat.tobytes() == model.flat.tobytes()
    with open(os.path.join(directory, RESOLVED_FILENAME)) as file:
        assert json.load(file)["seed"] == 5


def test_run_train_with_an_auxiliary_task_family(tmp_path, make_config, experiment_document):
    import numpy as np
    from metalingo.experiment import run_train

    synthetic = dict(experiment_document["data"]["synthetic"], aux_task_labels=2)
    cases = [
        (regime, scenario)
        for regime in ("protonet", "maml")
        for scenario in ("aux_only", "aux_support_mixed_query")
    ]
    for regime, scenario in cases:
        learner = dict(
            experiment_document["learner"],
            regime=regime,
            iterations=20,
            eval_interval=10,
            episode={"way": 3, "shot": 2, "query_per_class": 1, "scenario": scenario},
        )
        config = make_config(
            data={"synthetic": synthetic},
            learner=learner,
            output={"directory": str(tmp_path / regime / scenario)},
        )
        model, metrics = run_train(config)
        assert model.heads == {"nli": 3, "aux-cls": 2}
        assert [row[0] for row in metrics.rows] == [10, 20]
        assert all(np.isfinite(row[1]) for row in metrics.rows)


def test_same_seed_gives_identical_checkpoints(tmp_path, make_config):
    from metalingo.experiment import CHECKPOINT_FILENAME, run_train

    blobs = []
    for name in ("a", "b"):
        config = make_config(output={"directory": str(tmp_path / name)})
        run_train(config)
        with open(os.path.join(config.output_directory(), CHECKPOINT_FILENAME), "rb") as file:
            blobs.append(file.read())
    assert blobs[0] == blobs[1]


def test_resolved_config_reproduces_the_run(
    tmp_path, monkeypatch, make_config, experiment_document
):
    from metalingo.experiment import CHECKPOINT_FILENAME, run_train
    from metalingo.experiment_settings import OUTPUT_DIR_ENV, RESOLVED_FILENAME, load_config

    config = make_config(learner=dict(experiment_document["learner"], regime="protonet"))
    run_train(config)
    first = config.output_directory()
    replayed = load_config(os.path.join(first, RESOLVED_FILENAME))
    assert replayed.dumps() == config.dumps()
    monkeypatch.setenv(OUTPUT_DIR_ENV, str(tmp_path / "replay"))
    run_train(replayed)
    second = replayed.output_directory()
    assert second != first
    for name in [CHECKPOINT_FILENAME, "metrics.csv", "metrics.json", RESOLVED_FILENAME]:
        with open(os.path.join(first, name), "rb") as a:
            with open(os.path.join(second, name), "rb") as b:
                assert a.read() == b.read(), name


def test_zero_iterations_checkpoint_is_the_initial_model(make_config):
    from metalingo.experiment import build_model, load_data, run_train

    config = make_config(learner={"iterations": 0})
    model, metrics = run_train(config)
    assert len(metrics) == 0
    initial = build_model(config, load_data(config))
    assert model.flat.tobytes() == initial.flat.tobytes()


def test_failed_run_leaves_no_outputs(mocker, make_config):
    from metalingo.experiment import run_train
    from metalingo.numerics import NumericError

    mocker.patch("metalingo.experiment.train", side_effect=NumericError("non-finite loss"))
    config = make_config()
    with pytest.raises(NumericError):
        run_train(config)
    assert os.listdir(config.output_directory()) == []


def test_finetune_and_eval(make_config):
    from metalingo.experiment import CHECKPOINT_FILENAME, run_eval, run_finetune, run_train

    config = make_config()
    run_train(config)
    checkpoint = os.path.join(config.output_directory(), CHECKPOINT_FILENAME)
    tuned, metrics = run_finetune(config, checkpoint, "non_episodic")
    assert os.path.isfile(os.path.join(config.output_directory(), "checkpoint-non_episodic.bin"))
    assert os.path.isfile(os.path.join(config.output_directory(), "metrics-non_episodic.csv"))

    summary = run_eval(config, checkpoint)
    assert summary["method"] == "head"
    assert summary["target"] == "nli/lang2:test"
    assert sorted(summary["cells"]) == ["episodic_ft", "non_episodic_ft", "zero_shot"]
    for cell in summary["cells"].values():
        assert 0.0 <= cell["accuracy"] <= 1.0
        assert sum(map(sum, cell["confusion"])) == 9
    with open(os.path.join(config.output_directory(), "confusion-zero_shot.csv")) as file:
        assert file.readline() == "true,class0,class1,class2\n"


def test_eval_with_an_empty_plan(make_config):
    from metalingo.experiment import SUMMARY_FILENAME, run_eval

    config = make_config(evaluation={"plan": []})
    summary = run_eval(config, "unused.bin")
    assert summary == {"cells": {}, "method": "head"}
    with open(os.path.join(config.output_directory(), SUMMARY_FILENAME)) as file:
        assert json.load(file)["cells"] == {}


def test_eval_grid_rules(make_config):
    from metalingo.experiment import build_model, evaluation_grid, evaluation_method, load_data
    from metalingo.settings import ConfigError

    config = make_config(evaluation={"plan": ["meta_train_with_target"]})
    data = load_data(config)
    with pytest.raises(ConfigError):
        evaluation_grid(config, data, build_model(config, data))

    assert evaluation_method(make_config(learner={"regime": "protonet"})) == "prototype"
    assert evaluation_method(make_config(evaluation={"method": "head"})) == "head"


def test_prototype_zero_shot_uses_auxiliary_prototypes(mocker, make_config):
    from metalingo.experiment import build_model, evaluation_grid, load_data
    from metalingo.metalearn import evaluation

    config = make_config(
        learner={"regime": "protonet"},
        evaluation={"plan": ["zero_shot"], "prototype_source": "target_train"},
    )
    data = load_data(config)
    evaluate = mocker.patch("metalingo.experiment.evaluate", wraps=evaluation.evaluate)
    evaluation_grid(config, data, build_model(config, data))
    kwargs = evaluate.call_args.kwargs
    assert kwargs["method"] == "prototype"
    assert [d.name for d in kwargs["prototype_source"]] == ["nli/lang0:train", "nli/lang1:train"]


def test_analyze_writes_every_output(make_config):
    from metalingo.experiment import CHECKPOINT_FILENAME, run_analyze, run_train

    config = make_config()
    run_train(config)
    directory = config.output_directory()
    run_analyze(config, os.path.join(directory, CHECKPOINT_FILENAME))
    with open(os.path.join(directory, "hausdorff.csv")) as file:
        rows = file.read().splitlines()
    assert rows[0] == "pair,distance"
    assert len(rows) == 1 + 2 * 2
    assert rows[1].startswith("trained:lang0~trained:lang2,")
    with open(os.path.join(directory, "cca.csv")) as file:
        rows = file.read().splitlines()
    assert rows[0] == "layer,similarity,ridge"
    assert len(rows) == 1 + 2
    with open(os.path.join(directory, "pca.csv")) as file:
        # 20 samples of each auxiliary language plus the 9 target test examples
        assert len(file.read().splitlines()) == 1 + 20 + 20 + 9


def test_analyze_flags(make_config):
    from metalingo.experiment import CHECKPOINT_FILENAME, run_analyze, run_train

    config = make_config(analysis={"samples": 20, "hausdorff": False, "cca": False})
    run_train(config)
    directory = config.output_directory()
    run_analyze(config, os.path.join(directory, CHECKPOINT_FILENAME))
    assert os.path.isfile(os.path.join(directory, "pca.csv"))
    assert not os.path.exists(os.path.join(directory, "hausdorff.csv"))
    assert not os.path.exists(os.path.join(directory, "cca.csv"))


def test_checkpoint_must_match_the_config(make_config):
    from metalingo.checkpoint import CheckpointError
    from metalingo.experiment import CHECKPOINT_FILENAME, load_data, load_model, run_train

    config = make_config()
    run_train(config)
    checkpoint = os.path.join(config.output_directory(), CHECKPOINT_FILENAME)
    other = make_config(encoder={"hidden_dim": 4})
    with pytest.raises(CheckpointError):
        load_model(other, load_data(other), checkpoint)


def test_run_dreca(make_config):
    from metalingo.experiment import DRECA_FILENAME, run_dreca

    config = make_config(dreca={"clusters": 2})
    tasks = run_dreca(config)
    assert all(len(t) == 2 ** 3 for t in tasks.values())
    with open(os.path.join(config.output_directory(), DRECA_FILENAME)) as file:
        manifest = json.load(file)
    assert sorted(manifest) == ["nli/lang0:train", "nli/lang1:train"]
    assert manifest["nli/lang0:train"][0]["clusters"] == [0, 0, 0]


def test_generate_files_is_reproducible(tmp_path, small_spec):
    from metalingo.experiment import generate_files

    generate_files(small_spec, str(tmp_path / "a"))
    generate_files(small_spec, str(tmp_path / "b"))
    names = sorted(os.listdir(tmp_path / "a"))
    assert names == ["nli.labels", "nli_lang0.jsonl", "nli_lang1.jsonl", "nli_lang2.jsonl"]
    for name in names:
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_load_spec(tmp_path):
    from metalingo.experiment import load_spec
    from metalingo.settings import ConfigError

    good = tmp_path / "spec.json"
    good.write_text(json.dumps({"num_languages": 2, "seed": 4}))
    assert load_spec(str(good)).num_languages == 2
    cases = ["{", json.dumps({"num_languages": 0}), json.dumps({"langs": 2})]
    for i, text in enumerate(cases):
        path = tmp_path / ("bad%d.json" % i)
        path.write_text(text)
        with pytest.raises(ConfigError):
            load_spec(str(path))
    with pytest.raises(ConfigError):
        load_spec(str(tmp_path / "missing.json"))
