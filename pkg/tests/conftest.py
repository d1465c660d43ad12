import pytest


@pytest.fixture
def small_spec():
    from metalingo.corpus import SyntheticSpec

    return SyntheticSpec(
        num_languages=3,
        num_labels=3,
        feature_dim=6,
        clusters_per_label=2,
        separation=6.0,
        cluster_separation=2.0,
        noise=0.5,
        shift=1.0,
        samples_per_label=12,
        seed=7,
    )


@pytest.fixture
def small_datasets(small_spec):
    from metalingo.corpus import generate_synthetic

    return generate_synthetic(small_spec)


@pytest.fixture
def small_model():
    from metalingo.model import EncoderConfig, Model

    config = EncoderConfig(
        input_dim=6, hidden_dim=5, num_layers=2, activation="tanh", dropout_rate=0.0, seed=3
    )
    return Model(config).register_head("nli", 3)


@pytest.fixture
def make_dataset():
    def build(features, labels, language="xx", task="nli", label_names=None, name=None):
        import numpy as np
        from metalingo.corpus import Example, TaskDataset

        features = np.asarray(features, dtype=np.float64)
        label_names = label_names or ["class%d" % i for i in range(max(labels) + 1)]
        examples = [
            Example(
                id="%s/%d" % (language, i),
                features=row,
                label=int(label),
                language=language,
                task=task,
            )
            for i, (row, label) in enumerate(zip(features, labels))
        ]
        return TaskDataset(
            name or "%s/%s" % (task, language), task, language, label_names, examples
        )

    return build


@pytest.fixture
def experiment_document(tmp_path):
    return {
        "seed": 5,
        "data": {
            "synthetic": {
                "num_languages": 3,
                "num_labels": 3,
                "feature_dim": 6,
                "samples_per_label": 30,
                "separation": 6.0,
                "noise": 0.5,
            }
        },
        "encoder": {"hidden_dim": 5, "num_layers": 2, "dropout_rate": 0.0},
        "learner": {
            "iterations": 4,
            "epochs": 1,
            "eval_interval": 2,
            "adamw": {"lr": 0.01},
            "episode": {"shot": 2, "query_per_class": 1},
        },
        "finetune": {"iterations": 3},
        "evaluation": {"dev_episodes": 2},
        "analysis": {"samples": 20},
        "output": {"directory": str(tmp_path / "run")},
    }


@pytest.fixture(autouse=True)
def no_output_override(monkeypatch):
    from metalingo.experiment_settings import OUTPUT_DIR_ENV

    monkeypatch.delenv(OUTPUT_DIR_ENV, raising=False)


@pytest.fixture
def make_config(experiment_document):
    def build(**overrides):
        import copy

        from metalingo.experiment_settings import ExperimentConfig

        document = copy.deepcopy(experiment_document)
        for key, value in overrides.items():
            if isinstance(value, dict) and isinstance(document.get(key), dict):
                document[key] = {**document[key], **value}
            else:
                document[key] = value
        return ExperimentConfig.from_dict(document)

    return build
