import pytest


def _config(**overrides):
    from metalingo.model import EncoderConfig

    values = dict(input_dim=4, hidden_dim=3, num_layers=2, activation="tanh", dropout_rate=0.0)
    values.update(overrides)
    return EncoderConfig(**values)


def test_encoder_config_validation():
    from metalingo.model import EncoderConfig

    cases = [
        dict(input_dim=0),
        dict(input_dim=2, hidden_dim=0),
        dict(input_dim=2, num_layers=0),
        dict(input_dim=2, activation="gelu"),
        dict(input_dim=2, dropout_rate=1.0),
        dict(input_dim=2, dropout_rate=-0.1),
    ]
    for case in cases:
        with pytest.raises(ValueError):
            EncoderConfig(**case)
    config = EncoderConfig(input_dim=2)
    assert EncoderConfig.from_dict(config.to_dict()) == config


def test_parameter_layout():
    from metalingo.model import Model

    model = Model(_config(input_dim=4, hidden_dim=3, num_layers=2))
    assert model.parameter_count == 4 * 3 + 3 + 3 * 3 + 3
    assert model.weight(0).shape == (4, 3)
    assert model.weight(1).shape == (3, 3)
    assert model.slot("layer1.bias").offset == 4 * 3 + 3 + 3 * 3


def test_register_head_grows_flat_vector():
    from metalingo.model import Model, register_head

    model = Model(_config(hidden_dim=7))
    start = model.parameter_count
    register_head(model, "nli", 3)
    assert model.parameter_count == start + (7 + 1) * 3
    register_head(model, "aux-cls", 2)
    assert model.parameter_count == start + (7 + 1) * 3 + (7 + 1) * 2
    assert model.heads == {"nli": 3, "aux-cls": 2}
    with pytest.raises(ValueError):
        register_head(model, "nli", 3)


def test_initialisation_is_seeded_and_bounded():
    import numpy as np
    from metalingo.model import Model

    a = Model(_config(seed=4)).register_head("nli", 3)
    b = Model(_config(seed=4)).register_head("nli", 3)
    c = Model(_config(seed=5)).register_head("nli", 3)
    assert np.array_equal(a.flat, b.flat)
    assert not np.array_equal(a.flat, c.flat)
    bound = 1.0 / np.sqrt(3)
    assert np.all(np.abs(a.head_weight("nli")) <= bound)
    assert np.all(np.abs(a.head_bias("nli")) <= bound)


def test_flatten_unflatten_identity():
    import numpy as np
    from metalingo.model import Model
    from metalingo.numerics import Rng

    model = Model(_config()).register_head("nli", 3)
    rng = Rng(1)
    for _ in range(5):
        vector = rng.normal(size=model.parameter_count)
        assert np.array_equal(model.unflatten(vector).flatten(), vector)
    with pytest.raises(ValueError):
        model.load_flat(np.zeros(model.parameter_count + 1))


def test_forward_zero_weights():
    import numpy as np
    from metalingo.model import Model, forward

    model = Model(_config()).register_head("nli", 3)
    model.load_flat(np.zeros(model.parameter_count))
    trace = forward(model, np.ones((2, 4)), head="nli")
    assert trace.num_layers == 2
    for activation in trace.activations:
        assert np.array_equal(activation, np.zeros((2, 3)))
    assert np.array_equal(trace.logits["nli"], np.zeros((2, 3)))


def test_forward_relu_hand_case():
    import numpy as np
    from metalingo.model import Model, forward

    model = Model(_config(input_dim=1, hidden_dim=1, num_layers=1, activation="relu"))
    model.load_flat(np.array([1.0, 0.0]))
    assert forward(model, np.array([[-2.0]])).encoding[0, 0] == 0.0
    assert forward(model, np.array([[2.5]])).encoding[0, 0] == 2.5


def test_forward_eval_is_deterministic(small_model):
    import numpy as np
    from metalingo.model import forward
    from metalingo.numerics import Rng

    batch = Rng(2).normal(size=(4, 6))
    a = forward(small_model, batch, head="nli")
    b = forward(small_model, batch, head="nli")
    assert np.array_equal(a.logits["nli"], b.logits["nli"])
    assert all(mask is None for mask in a.masks)


def test_forward_errors(small_model):
    import numpy as np
    from metalingo.model import forward

    cases = [
        dict(batch=np.zeros((2, 5))),
        dict(batch=np.zeros((2, 6)), head="missing"),
        dict(batch=np.zeros((2, 6)), mode="predict"),
        dict(batch=[]),
    ]
    for case in cases:
        with pytest.raises(ValueError):
            forward(small_model, **case)


def test_train_mode_without_dropout_equals_eval(small_model):
    import numpy as np
    from metalingo.model import forward
    from metalingo.numerics import Rng

    batch = Rng(3).normal(size=(4, 6))
    train = forward(small_model, batch, head="nli", mode="train", rng=Rng(0))
    evaluation = forward(small_model, batch, head="nli", mode="eval")
    assert np.array_equal(train.logits["nli"], evaluation.logits["nli"])


def test_dropout_masks_replay_exactly():
    import numpy as np
    from metalingo.model import Model, forward
    from metalingo.numerics import Rng

    model = Model(_config(dropout_rate=0.5)).register_head("nli", 3)
    batch = Rng(4).normal(size=(5, 4))
    with pytest.raises(ValueError):
        forward(model, batch, mode="train")
    first = forward(model, batch, head="nli", mode="train", rng=Rng(9))
    replay = forward(model, batch, head="nli", mode="train", masks=first.masks)
    assert np.array_equal(first.logits["nli"], replay.logits["nli"])
    # inverted dropout keeps units at 0 or 1/keep
    assert set(np.unique(first.masks[0])) <= {0.0, 2.0}


def test_backward_zero_upstream(small_model):
    import numpy as np
    from metalingo.model import backward, forward

    trace = forward(small_model, np.ones((2, 6)), head="nli")
    grad = backward(small_model, trace, logits_grad={"nli": np.zeros((2, 3))})
    assert np.array_equal(grad, np.zeros(small_model.parameter_count))


def test_backward_single_linear_unit_hand_case():
    import numpy as np
    from metalingo.model import Model, backward, forward

    # relu in its linear region: y = w * x + b, loss = (y - t)^2
    model = Model(_config(input_dim=1, hidden_dim=1, num_layers=1, activation="relu"))
    model.load_flat(np.array([2.0, 0.5]))
    x, target = 3.0, 1.0
    trace = forward(model, np.array([[x]]))
    y = trace.encoding[0, 0]
    assert y == 6.5
    grad = backward(model, trace, encoding_grad=np.array([[2.0 * (y - target)]]))
    assert np.allclose(grad, [2.0 * (y - target) * x, 2.0 * (y - target)])


def test_backward_rejects_stale_trace(small_model):
    import numpy as np
    from metalingo.model import backward, forward

    trace = forward(small_model, np.ones((1, 6)), head="nli")
    small_model.load_flat(small_model.flat)
    with pytest.raises(ValueError):
        backward(small_model, trace, logits_grad={"nli": np.zeros((1, 3))})
    other = small_model.copy().load_flat(small_model.flat)
    fresh = forward(small_model, np.ones((1, 6)), head="nli")
    with pytest.raises(ValueError):
        backward(other, fresh, logits_grad={"nli": np.zeros((1, 3))})


def test_gradient_suite_matches_finite_differences():
    import numpy as np
    from metalingo.model import EncoderConfig, Model, backward, forward
    from metalingo.numerics import Rng, batch_cross_entropy, finite_diff_check

    rng = Rng(1234)
    for case in range(20):
        config = EncoderConfig(
            input_dim=int(rng.integers(1, 6)),
            hidden_dim=int(rng.integers(1, 6)),
            num_layers=int(rng.integers(1, 5)),
            activation="tanh",
            dropout_rate=0.0,
            seed=case,
        )
        classes = int(rng.integers(2, 4))
        model = Model(config).register_head("nli", classes)
        batch = rng.normal(size=(3, config.input_dim))
        labels = rng.integers(0, classes, size=3)
        trace = forward(model, batch, head="nli")
        _, g = batch_cross_entropy(trace.logits["nli"], labels)
        analytic = backward(model, trace, logits_grad={"nli": g})

        def loss(vector, model=model, batch=batch, labels=labels):
            logits = forward(model.unflatten(vector), batch, head="nli").logits["nli"]
            return batch_cross_entropy(logits, labels)[0]

        assert finite_diff_check(loss, model.flat, analytic) < 1e-4


def test_encoding_gradient_matches_finite_differences():
    import numpy as np
    from metalingo.model import EncoderConfig, Model, backward, forward
    from metalingo.numerics import Rng, finite_diff_check

    rng = Rng(77)
    config = EncoderConfig(input_dim=3, hidden_dim=4, num_layers=3, dropout_rate=0.0)
    model = Model(config)
    batch = rng.normal(size=(2, 3))
    weights = rng.normal(size=(2, 4))

    def loss(vector):
        return float(np.sum(weights * forward(model.unflatten(vector), batch).encoding))

    analytic = backward(model, forward(model, batch), encoding_grad=weights)
    assert finite_diff_check(loss, model.flat, analytic) < 1e-4


def test_head_loss_touches_encoder_and_own_head_only():
    import numpy as np
    from metalingo.model import EncoderConfig, Model, head_loss

    model = Model(EncoderConfig(input_dim=3, hidden_dim=4, num_layers=1, dropout_rate=0.0))
    model.register_head("nli", 3).register_head("aux-cls", 2)
    _, grad = head_loss(model, np.ones((2, 3)), [0, 2], "nli")
    slots = [model.slot("head:aux-cls.weight"), model.slot("head:aux-cls.bias")]
    aux = np.concatenate([np.arange(s.offset, s.offset + s.size) for s in slots])
    assert np.array_equal(grad[aux], np.zeros(aux.size))
    keep = model.parameter_indices("nli")
    assert not np.any(np.isin(aux, keep))
    assert keep.size == model.parameter_count - aux.size


def test_copy_is_independent(small_model):
    import numpy as np

    clone = small_model.copy()
    clone.load_flat(np.zeros(clone.parameter_count))
    assert not np.array_equal(clone.flat, small_model.flat)
    assert clone.same_architecture(small_model)
    clone.register_head("aux-cls", 2)
    assert not clone.same_architecture(small_model)
