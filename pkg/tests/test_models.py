import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from birnode.data import TimedSequence, make_batch, reversed_times
from birnode.exceptions import ContractError, NormalizationError, TimeOrderError
from birnode.models import (
    ModelConfig,
    build_model,
    count_parameters,
    load_checkpoint,
    save_checkpoint,
)
from birnode.ode import SolverConfig
from birnode.training import cross_entropy

from gradcheck import max_grad_error
from oracles import birnn_logits, rnn_logits

EULER = SolverConfig("euler", steps_per_unit_time=8)


def make(arch, width=3, hidden=6, seed=0, **kw):
    kw.setdefault("dynamics_layers", (5,))
    kw.setdefault("solver", EULER)
    return build_model(ModelConfig(arch, input_width=width, hidden_width=hidden, **kw), seed=seed)


def random_seq(n, width=3, seed=0, event="e"):
    rng = np.random.default_rng(seed)
    return TimedSequence(event, np.sort(rng.uniform(size=n)), rng.standard_normal((n, width)), rng.integers(0, 2, n))


def logits_of(model, s):
    return model.predict_logits(make_batch([s]))[0]


def zero_dynamics(model):
    for name, p in model.parameters().items():
        if name.startswith("dynamics"):
            p.data = np.zeros_like(p.data)


def test_zero_dynamics_reduces_to_vanilla_rnn():
    model = make("RNODE")
    zero_dynamics(model)
    s = random_seq(7)
    np.testing.assert_allclose(logits_of(model, s), rnn_logits(model, s.x), rtol=0, atol=1e-12)


@pytest.mark.parametrize("aggregation", ["concat", "average"])
def test_zero_dynamics_reduces_to_bidirectional_rnn(aggregation):
    model = make("BiRNODE", aggregation=aggregation)
    zero_dynamics(model)
    s = random_seq(6, seed=3)
    ref = birnn_logits(model, s.x, aggregation)
    np.testing.assert_allclose(logits_of(model, s), ref, rtol=0, atol=1e-12)


def test_single_post_at_time_zero():
    model = make("RNODE")
    s = TimedSequence("e", np.array([0.0]), np.array([[0.3, -1.0, 2.0]]))
    # no elapsed time, so the dynamics cannot contribute
    np.testing.assert_allclose(logits_of(model, s), rnn_logits(model, s.x), rtol=0, atol=1e-12)


def test_gap_changes_rnode_logits():
    model = make("RNODE", seed=4)
    x = np.random.default_rng(0).standard_normal((3, 3))
    a = logits_of(model, TimedSequence("a", np.array([0.05, 0.1, 1.0]), x))
    b = logits_of(model, TimedSequence("b", np.array([0.05, 0.9, 1.0]), x))
    assert np.max(np.abs(a[1] - b[1])) > 1e-8


TIMING_ARCHS = ["RNODE", "BiRNODE", "LSTMTimeGap"]
BLIND_ARCHS = ["LSTM", "GRU", "BiLSTM", "BiGRU"]


def _perturbed_pair():
    rng = np.random.default_rng(11)
    x = rng.standard_normal((5, 3))
    return (
        TimedSequence("a", np.array([0.1, 0.2, 0.5, 0.6, 1.0]), x),
        TimedSequence("b", np.array([0.1, 0.4, 0.5, 0.9, 1.0]), x),
    )


@pytest.mark.parametrize("arch", BLIND_ARCHS)
def test_discrete_baselines_ignore_timestamps(arch):
    model = make(arch, seed=2)
    a, b = _perturbed_pair()
    assert logits_of(model, a).tobytes() == logits_of(model, b).tobytes()


@pytest.mark.parametrize("arch", TIMING_ARCHS)
def test_time_aware_models_see_timestamps(arch):
    model = make(arch, seed=2)
    a, b = _perturbed_pair()
    assert np.max(np.abs(logits_of(model, a) - logits_of(model, b))) > 1e-8


def test_palindrome_with_shared_directions_is_symmetric():
    model = make("BiRNODE", aggregation="average", seed=5)
    params = model.parameters()
    for name, p in params.items():
        if "_b." in name:
            p.data = params[name.replace("_b.", ".")].data.copy()
    x = np.random.default_rng(1).standard_normal((2, 3))
    x = np.concatenate([x, x[::-1]])
    # dyadic times so the reversed axis reproduces them exactly
    s = TimedSequence("p", np.array([0.25, 0.5, 0.75, 1.0]), x)
    out = logits_of(model, s)
    np.testing.assert_allclose(out, out[::-1], rtol=0, atol=1e-12)


def test_hidden_trace_alignment():
    model = make("BiRNODE", seed=1)
    s = random_seq(5, seed=2)
    H, Hb = model.hidden_trace(make_batch([s]))
    assert H.shape == Hb.shape == (1, 5, 6)
    # backward trace at post i equals a forward pass of the backward block on the reversed sequence
    mirror = make("RNODE", seed=99)
    for suffix in ("dynamics", "cell"):
        for name, p in model.modules[f"{suffix}_b"].parameters().items():
            mirror.modules[suffix].parameters()[name].data = p.data.copy()
    back = TimedSequence("r", reversed_times(s.t), s.x[::-1])
    Hm, _ = mirror.hidden_trace(make_batch([back]))
    np.testing.assert_allclose(Hb[0], Hm[0][::-1], rtol=0, atol=1e-12)


def test_majority_predicts_mode():
    model = make("Majority", num_classes=2)
    model.fit_labels([1, 1, 1, 0])
    out = logits_of(model, random_seq(4))
    assert out.argmax(axis=1).tolist() == [1, 1, 1, 1]
    assert count_parameters(model) == 0


def test_parameter_counts_at_width_64():
    cfg = dict(input_width=4, hidden_width=64, dynamics_layers=(64,))
    rnode = count_parameters(build_model(ModelConfig("RNODE", **cfg)))
    birnode = count_parameters(build_model(ModelConfig("BiRNODE", **cfg)))
    lstm = count_parameters(build_model(ModelConfig("LSTM", **cfg)))
    assert rnode < lstm
    assert 1 < birnode / rnode <= 2


def test_parameter_count_formula():
    # dynamics (6+1)*5+5 + 5*6+6, cell 3*6+6*6+6, head 6*6+6 + 6*2+2
    assert count_parameters(make("RNODE")) == 40 + 36 + 60 + 42 + 14


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 1000), st.floats(-50, 50))
def test_argmax_invariant_to_constant_shift(seed, c):
    logits = np.random.default_rng(seed).standard_normal((10, 3))
    assert np.array_equal(logits.argmax(axis=1), (logits + c).argmax(axis=1))


@pytest.mark.parametrize("arch", ["RNODE", "BiRNODE"])
def test_end_to_end_gradients(arch):
    model = build_model(
        ModelConfig(arch, input_width=2, hidden_width=8, dynamics_layers=(8,), solver=EULER),
        seed=3,
    )
    for name, p in model.parameters().items():
        if name.split(".")[1].startswith("b"):
            p.data = p.data + 0.1 * np.random.default_rng(len(name)).standard_normal(p.shape)
    rng = np.random.default_rng(0)
    s = TimedSequence("g", np.array([0.2, 0.45, 0.9]), rng.standard_normal((3, 2)), np.array([0, 1, 1]))
    batch = make_batch([s])

    def loss():
        return cross_entropy(model.forward(batch).logits, s.y, np.ones(3))

    groups = {}
    for name, p in model.parameters().items():
        groups.setdefault(name.split(".")[0], []).append(p)
    for group, params in groups.items():
        assert max_grad_error(loss, params) < 1e-3, group


def test_checkpoint_round_trip_is_bit_identical(tmp_path):
    model = make("BiRNODE", seed=8)
    s = random_seq(6)
    before = logits_of(model, s)
    save_checkpoint(model, tmp_path / "m.json", extra={"note": 1})
    back, extra = load_checkpoint(tmp_path / "m.json", return_extra=True)
    assert extra == {"note": 1}
    assert logits_of(back, s).tobytes() == before.tobytes()


def test_majority_checkpoint_keeps_class(tmp_path):
    model = make("Majority")
    model.fit_labels([1, 1, 0])
    save_checkpoint(model, tmp_path / "m.json")
    assert load_checkpoint(tmp_path / "m.json").majority_class == 1


@pytest.mark.parametrize("arch", ["RNODE", "BiRNODE", "LSTMTimeGap", "BiGRU"])
def test_padded_batch_matches_individual_sequences(arch):
    model = make(arch, seed=6)
    seqs = [random_seq(n, seed=n) for n in (2, 5, 3)]
    batched = model.predict_logits(make_batch(seqs))
    for b, s in enumerate(seqs):
        np.testing.assert_allclose(batched[b, : len(s)], logits_of(model, s), rtol=0, atol=1e-12)


def test_duplicate_timestamps_allowed():
    model = make("RNODE")
    s = TimedSequence("d", np.array([0.3, 0.3, 0.7]), np.ones((3, 3)))
    assert np.all(np.isfinite(logits_of(model, s)))


def test_bad_timestamps_rejected():
    model = make("RNODE")
    with pytest.raises(TimeOrderError):
        logits_of(model, TimedSequence("e", np.array([0.5, 0.2]), np.ones((2, 3))))
    with pytest.raises(NormalizationError):
        logits_of(model, TimedSequence("e", np.array([0.5, 1.2]), np.ones((2, 3))))


def test_config_validation():
    with pytest.raises(ContractError):
        ModelConfig("Transformer")
    with pytest.raises(ContractError):
        ModelConfig("RNODE", num_classes=1)
    with pytest.raises(ContractError):
        ModelConfig("BiRNODE", aggregation="max")
    assert ModelConfig("bi-rnode").arch == "BiRNODE"


def test_dropout_only_in_training():
    model = make("RNODE", dropout_rate=0.5)
    batch = make_batch([random_seq(4)])
    a = model.forward(batch).logits.data
    b = model.forward(batch).logits.data
    c = model.forward(batch, training=True, rng=np.random.default_rng(0)).logits.data
    assert a.tobytes() == b.tobytes()
    assert not np.allclose(a, c)
