import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from sasteer.attention import NormalizerKind
from sasteer.data import GeneratorConfig, generate_sequence, generate_split
from sasteer.ensemble import (
    DataMode,
    Ensemble,
    aggregate_predict,
    attention_correlation,
    bootstrap_indices,
    map_stream_correlation,
    sparsity_from_maps,
    sparsity_stats,
    train_ensemble,
)
from sasteer.errors import InvalidInputError
from sasteer.pipeline import ModelDims, ModelParams, TrainConfig, fit, init_model, predict_sequence

GEN = GeneratorConfig(M=3, N=3, K=5, frames=60)
CFG = TrainConfig(lr=1e-2, epochs=2, hidden=4, fcn_hidden=3, bptt=10)


@pytest.fixture(scope="module")
def seqs():
    return generate_split(GEN, (1, 2, 3))


def _constant_model(value, kind=NormalizerKind.SPARSE):
    m = ModelParams(ModelDims(5, 4, 3), kind)
    m["head2.b"][0] = value
    return m


def test_single_member_matches_model(seqs):
    model = init_model(ModelDims(5, 4, 3), seed=3)
    trace = aggregate_predict(Ensemble([model]), seqs[0], 4)
    np.testing.assert_array_equal(trace.predictions, predict_sequence(model, seqs[0], 4).predictions)


def test_identical_members(seqs):
    model = init_model(ModelDims(5, 4, 3), seed=3)
    trace = aggregate_predict(Ensemble([model, model.copy(), model.copy()]), seqs[0])
    np.testing.assert_allclose(trace.predictions, predict_sequence(model, seqs[0]).predictions, atol=1e-15)


def test_opposite_members_cancel(seqs):
    trace = aggregate_predict(Ensemble([_constant_model(0.4), _constant_model(-0.4)]), seqs[0])
    np.testing.assert_array_equal(trace.predictions, 0.0)


def test_aggregate_bound_and_member_order(seqs):
    members = [init_model(ModelDims(5, 4, 3), seed=s) for s in (0, 1, 2)]
    fwd = aggregate_predict(Ensemble(members), seqs[1], 3)
    rev = aggregate_predict(Ensemble(members[::-1]), seqs[1], 3)
    np.testing.assert_allclose(fwd.predictions, rev.predictions, atol=1e-15)
    assert fwd.mae <= np.mean([fwd.member_mae(i) for i in range(3)]) + 1e-12


def test_mixed_architectures_rejected():
    with pytest.raises(InvalidInputError):
        Ensemble([init_model(ModelDims(5, 4, 3)), init_model(ModelDims(5, 4, 4))])
    with pytest.raises(InvalidInputError):
        Ensemble([])


def test_train_ensemble_same_data(seqs):
    ens = train_ensemble(3, CFG, [0, 1, 2], seqs[:2], seqs[2:])
    assert len(ens) == 3 and ens.mode is DataMode.SAME
    thetas = [m.theta for m in ens.members]
    assert all(not np.array_equal(thetas[i], thetas[j]) for i in range(3) for j in range(i))
    assert ens.members[1] == fit(seqs[:2], seqs[2:], TrainConfig(**{**CFG.__dict__, "seed": 1}))[0]
    trace = aggregate_predict(ens, seqs[2])
    assert trace.mae <= np.mean([trace.member_mae(i) for i in range(3)]) + 1e-12


def test_train_ensemble_bootstrap_provenance(seqs):
    ens = train_ensemble(2, CFG, [5, 8], seqs, [], mode=DataMode.BOOTSTRAP)
    ids = [s.id for s in seqs]
    for seed, used in zip((5, 8), ens.member_sequences):
        assert used == [ids[i] for i in bootstrap_indices(3, seed)]


def test_train_ensemble_rejects_bad_seeds(seqs):
    with pytest.raises(InvalidInputError):
        train_ensemble(2, CFG, [1, 1], seqs, [])
    with pytest.raises(InvalidInputError):
        train_ensemble(3, CFG, [1, 2], seqs, [])


def test_correlation_examples():
    corr = map_stream_correlation([[1, 0, 1, 0], [0, 1, 0, 1], [1, 0, 1, 0]])
    np.testing.assert_allclose(corr.values, [[1, -1, 1], [-1, 1, -1], [1, -1, 1]])
    assert not corr.warning


def test_degenerate_correlation_flagged():
    corr = map_stream_correlation([[0.5, 0.5, 0.5, 0.5], [1, 0, 0, 1]])
    assert corr.warning and corr.values[0, 1] == 0.0
    np.testing.assert_array_equal(np.diag(corr.values), 1.0)


@given(arrays(np.float64, (3, 12), elements=st.floats(0, 1)))
def test_correlation_matrix_properties(streams):
    corr = map_stream_correlation(streams)
    np.testing.assert_allclose(corr.values, corr.values.T)
    assert np.all(np.abs(corr.values) <= 1.0)
    np.testing.assert_array_equal(np.diag(corr.values), 1.0)


def test_correlation_needs_two_members(seqs):
    with pytest.raises(InvalidInputError):
        attention_correlation(Ensemble([init_model(ModelDims(5, 4, 3))]), seqs[0])


def test_sparsity_statistics(seqs):
    soft = init_model(ModelDims(5, 4, 3), NormalizerKind.SOFT, seed=1)
    assert sparsity_stats(soft, seqs[0]) == (9.0, 0.0)
    none = init_model(ModelDims(5, 4, 3), NormalizerKind.NONE, seed=1)
    assert sparsity_stats(none, seqs[0])[0] == 9.0
    sharp = init_model(ModelDims(5, 4, 3), NormalizerKind.SPARSE, seed=1)
    sharp["att.w_f"][:] *= 50
    support, zeros = sparsity_stats(sharp, seqs[0])
    assert support < 9 and zeros == pytest.approx(1 - support / 9)
    assert sparsity_from_maps([[1, 0, 0, 0], [0.5, 0.5, 0, 0]]) == (1.5, 0.625)
