import pytest


def _identity_model():
    import numpy as np
    from metalingo.model import EncoderConfig, Model

    config = EncoderConfig(input_dim=2, hidden_dim=2, num_layers=1, activation="relu", dropout_rate=0.0)
    model = Model(config).register_head("nli", 2)
    # layer weight, layer bias, head weight, head bias
    model.load_flat(np.array([1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 0.0]))
    return model


def test_confusion_matrix():
    import numpy as np
    from metalingo.metalearn.evaluation import confusion_matrix

    matrix = confusion_matrix([0, 0, 1, 2], [0, 1, 1, 0], 3)
    assert np.array_equal(matrix, [[1, 1, 0], [0, 1, 0], [1, 0, 0]])
    assert matrix.sum() == 4


def test_evaluate_by_head(make_dataset):
    import numpy as np
    from metalingo.metalearn.evaluation import evaluate

    model = _identity_model()
    dataset = make_dataset([[1.0, 0.0], [0.0, 1.0], [2.0, 0.5]], [0, 1, 1])
    result = evaluate(model, dataset)
    assert list(result.predictions) == [0, 1, 0]
    assert result.accuracy == pytest.approx(2.0 / 3.0)
    assert np.array_equal(result.confusion, [[1, 0], [1, 1]])


def test_evaluate_by_prototype(make_dataset):
    import numpy as np
    from metalingo.corpus import DataError
    from metalingo.metalearn.evaluation import evaluate, prototype_centers

    model = _identity_model()
    source = make_dataset([[1.0, 0.0], [3.0, 0.0], [0.0, 2.0], [0.0, 4.0]], [0, 0, 1, 1])
    assert np.allclose(prototype_centers(model, source), [[2.0, 0.0], [0.0, 3.0]])
    extra = make_dataset([[0.0, 6.0], [0.0, 6.0]], [1, 1], language="yy", label_names=["class0", "class1"])
    # each pooled source alone may lack labels, the pool may not
    with pytest.raises(DataError):
        prototype_centers(model, extra)
    assert np.allclose(prototype_centers(model, [source, extra]), [[2.0, 0.0], [0.0, 4.5]])

    dataset = make_dataset([[1.9, 0.1], [0.2, 2.5]], [0, 1], language="zz")
    result = evaluate(model, dataset, method="prototype", prototype_source=source)
    assert list(result.predictions) == [0, 1]
    assert result.accuracy == 1.0


def test_evaluate_errors(make_dataset):
    from metalingo.corpus import DataError
    from metalingo.metalearn.evaluation import evaluate

    model = _identity_model()
    dataset = make_dataset([[1.0, 0.0], [0.0, 1.0]], [0, 1])
    misaligned = make_dataset([[1.0, 0.0], [0.0, 1.0]], [0, 1], label_names=["a", "b"])
    other_task = make_dataset([[1.0, 0.0], [0.0, 1.0]], [0, 1], task="aux-cls")
    cases = [
        (dict(dataset=dataset, method="vote"), ValueError),
        (dict(dataset=dataset, method="prototype"), ValueError),
        (dict(dataset=dataset, method="prototype", prototype_source=misaligned), DataError),
        (dict(dataset=other_task), ValueError),
    ]
    for kwargs, error in cases:
        with pytest.raises(error):
            evaluate(model, **kwargs)


def test_episode_accuracy(small_model, small_datasets):
    from metalingo.episodes import EpisodeShape
    from metalingo.metalearn.evaluation import episode_accuracy
    from metalingo.numerics import Rng

    shape = EpisodeShape(way=3, shot=2, query_per_class=2)
    first = episode_accuracy(small_model, small_datasets[0], shape, 5, Rng(1))
    second = episode_accuracy(small_model, small_datasets[0], shape, 5, Rng(1))
    assert first == second
    assert 0.0 <= first <= 1.0
    with pytest.raises(ValueError):
        episode_accuracy(small_model, small_datasets[0], shape, 0, Rng(1))


def test_episode_accuracy_caps_the_way(small_model, make_dataset):
    from metalingo.episodes import EpisodeShape
    from metalingo.metalearn.evaluation import episode_accuracy
    from metalingo.numerics import Rng

    binary = make_dataset(Rng(2).normal(size=(12, 6)), [0, 1] * 6, task="aux-cls")
    shape = EpisodeShape(way=3, shot=2, query_per_class=2)
    assert 0.0 <= episode_accuracy(small_model, binary, shape, 4, Rng(3)) <= 1.0
