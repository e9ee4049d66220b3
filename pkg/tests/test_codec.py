import numpy as np
import pytest

from vlaforge import codec
from vlaforge.codec import FastCodecConfig, TokenSequence
from vlaforge.core import ActionChunk, DatasetStatistics, DimStats, EmbodimentTag
from vlaforge.errors import CodecError, EmptyDataset, ShapeError


def chunk_of(values, normalized=False, mask=None):
    values = np.asarray(values, dtype=np.float64)
    if mask is None:
        mask = np.ones(values.shape[1], dtype=bool)
    return ActionChunk(values=values, normalized=normalized, dof_mask=np.asarray(mask))


# ---------------------------------------------------------------------------
# statistics


def test_constant_data_statistics():
    chunks = [chunk_of(np.full((4, 1), 3.0)) for _ in range(5)]
    s = codec.compute_statistics(chunks, dims=1)
    d = s.per_dim[0]
    assert d.q01 == d.q99 == d.mean == d.min == d.max == 3.0
    assert d.std == 0.0
    assert s.sample_count == 20


def test_percentiles_linear_interpolation():
    # brute-force oracle: sort, pos = (n-1)*p, linear interpolation
    values = np.arange(1, 101, dtype=np.float64)

    def oracle(p):
        data = np.sort(values)
        pos = (len(data) - 1) * p
        lo, hi = int(np.floor(pos)), int(np.ceil(pos))
        return data[lo] + (pos - lo) * (data[hi] - data[lo])

    chunks = [chunk_of(values.reshape(-1, 1))]
    s = codec.compute_statistics(chunks, dims=1)
    assert s.per_dim[0].q01 == pytest.approx(oracle(0.01), abs=1e-12)
    assert s.per_dim[0].q99 == pytest.approx(oracle(0.99), abs=1e-12)
    assert s.per_dim[0].q01 == pytest.approx(1.99, abs=1e-9)
    assert s.per_dim[0].q99 == pytest.approx(99.01, abs=1e-9)


def test_second_dim_all_zero():
    values = np.stack([np.arange(10.0), np.zeros(10)], axis=1)
    s = codec.compute_statistics([chunk_of(values)], dims=2)
    d = s.per_dim[1]
    assert d.q01 == d.q99 == d.mean == d.std == d.min == d.max == 0.0


def test_empty_stream():
    with pytest.raises(EmptyDataset):
        codec.compute_statistics([], dims=3)


def test_random_statistics_against_numpy_oracle():
    rng = np.random.default_rng(11)
    data = rng.normal(size=(500, 4))
    s = codec.compute_statistics([chunk_of(data)], dims=4)
    for d in range(4):
        assert s.per_dim[d].q01 == pytest.approx(np.percentile(data[:, d], 1), abs=1e-12)
        assert s.per_dim[d].mean == pytest.approx(data[:, d].mean(), abs=1e-12)
        assert s.per_dim[d].std == pytest.approx(data[:, d].std(), abs=1e-12)


# ---------------------------------------------------------------------------
# normalization


def stats_for(lo, hi, dims):
    per = tuple(
        DimStats(q01=lo[d], q99=hi[d], mean=0.0, std=1.0, min=lo[d] - 1, max=hi[d] + 1)
        for d in range(dims)
    )
    return DatasetStatistics(per_dim=per, sample_count=1)


def test_normalize_endpoints_and_midpoint():
    s = stats_for([2.0], [6.0], 1)
    c = chunk_of([[6.0], [2.0], [4.0]])
    n = codec.normalize(c, s)
    assert n.normalized
    assert n.values[:, 0] == pytest.approx([1.0, -1.0, 0.0])


def test_normalize_degenerate_spread():
    s = stats_for([5.0], [5.0], 1)
    n = codec.normalize(chunk_of([[5.0]]), s)
    assert n.values[0, 0] == 0.0
    # and unnormalize maps it back to the constant
    back = codec.unnormalize(n, s)
    assert back.values[0, 0] == 5.0


def test_round_trip_oracle_10k():
    rng = np.random.default_rng(3)
    lo = rng.uniform(-4, 0, size=6)
    hi = lo + rng.uniform(0.5, 3.0, size=6)
    s = stats_for(lo, hi, 6)
    values = lo + rng.random((10_000, 6)) * (hi - lo)  # inside [q01, q99]
    c = chunk_of(values)
    back = codec.unnormalize(codec.normalize(c, s), s)
    assert np.max(np.abs(back.values - values)) <= 1e-9


def test_normalize_dim_mismatch():
    with pytest.raises(ShapeError):
        codec.normalize(chunk_of(np.zeros((2, 3))), stats_for([0.0], [1.0], 1))


def test_normalize_clips_outside_quantiles():
    s = stats_for([0.0], [1.0], 1)
    n = codec.normalize(chunk_of([[2.0], [-3.0]]), s)
    assert n.values[:, 0] == pytest.approx([1.0, -1.0])


# ---------------------------------------------------------------------------
# padding


def test_pad_7_to_32():
    tag = EmbodimentTag("arm", 7, "delta")
    c = chunk_of(np.arange(14.0).reshape(2, 7))
    p = codec.pad_to_unified(c, tag)
    assert p.dims == 32
    assert np.array_equal(p.values[:, :7], c.values)
    assert np.all(p.values[:, 7:] == 0)
    assert p.dof_mask[:7].all() and not p.dof_mask[7:].any()


def test_pad_identity_at_32():
    tag = EmbodimentTag("full", 32, "delta")
    c = chunk_of(np.ones((3, 32)))
    assert codec.pad_to_unified(c, tag) is c


def test_unpad_inverts_pad_exactly():
    rng = np.random.default_rng(5)
    for dof in (1, 3, 7, 14, 32):
        tag = EmbodimentTag("e", dof, "delta")
        c = chunk_of(rng.normal(size=(4, dof)))
        back = codec.unpad_from_unified(codec.pad_to_unified(c, tag), tag)
        assert np.array_equal(back.values, c.values)
        assert np.array_equal(back.dof_mask, c.dof_mask)


def test_pad_wrong_dof():
    with pytest.raises(ShapeError):
        codec.pad_to_unified(chunk_of(np.zeros((2, 5))), EmbodimentTag("e", 7, "delta"))


# ---------------------------------------------------------------------------
# delta -> absolute


def test_delta_zero_gives_initial_state():
    c = chunk_of(np.zeros((4, 3)))
    out = codec.delta_to_absolute(np.array([1.0, -2.0, 0.5]), c)
    assert np.allclose(out.values, np.tile([1.0, -2.0, 0.5], (4, 1)))


def test_delta_cumsum():
    c = chunk_of(np.array([[1.0], [1.0], [1.0]]))
    out = codec.delta_to_absolute(np.array([0.0]), c)
    assert out.values[:, 0] == pytest.approx([1.0, 2.0, 3.0])


def test_delta_random_against_prefix_sum_oracle():
    rng = np.random.default_rng(9)
    deltas = rng.normal(size=(6, 4))
    init = rng.normal(size=4)
    out = codec.delta_to_absolute(np.array(init), chunk_of(deltas), gripper_dims=[3])
    for i in range(6):
        expected = init[:3] + deltas[: i + 1, :3].sum(axis=0)
        assert out.values[i, :3] == pytest.approx(expected, abs=1e-12)
        assert out.values[i, 3] == deltas[i, 3]  # gripper passes through


def test_delta_gripper_out_of_range():
    with pytest.raises(ShapeError):
        codec.delta_to_absolute(np.zeros(2), chunk_of(np.zeros((2, 2))), gripper_dims=[5])


# ---------------------------------------------------------------------------
# FAST tokenizer


def norm_chunk(values):
    return chunk_of(values, normalized=True)


def test_constant_chunk_has_only_dc():
    cfg = FastCodecConfig(horizon=8, dims=3, quant_scale=0.02, alphabet_size=1024,
                          bpe_vocab_size=1024)
    values = np.tile(np.array([0.5, -0.25, 0.125]), (8, 1))
    q = codec.quantize_chunk(norm_chunk(values), cfg)
    assert np.all(q[1:, :] == 0)  # higher frequencies vanish for constant signal
    assert np.all(q[0, :] != 0)


def test_encode_decode_error_within_brute_force_bound():
    cfg = FastCodecConfig(horizon=8, dims=7, quant_scale=0.02, alphabet_size=1024,
                          bpe_vocab_size=1024)
    # brute-force perturbation oracle: worst inverse-DCT of a +-gamma/2 vector
    c = codec.dct_matrix(cfg.horizon)
    per_step_bound = (cfg.quant_scale / 2.0) * np.abs(c).sum(axis=0).max()
    analytic = codec.decode_error_bound(cfg)
    assert per_step_bound <= analytic + 1e-12

    rng = np.random.default_rng(21)
    worst = 0.0
    for _ in range(1000):
        # smooth random trajectories inside [-1, 1]
        base = rng.uniform(-0.7, 0.7, size=(1, cfg.dims))
        drift = rng.uniform(-0.02, 0.02, size=(cfg.horizon, cfg.dims)).cumsum(axis=0)
        values = np.clip(base + drift, -1, 1)
        chunk = norm_chunk(values)
        back = codec.fast_decode(codec.fast_encode(chunk, cfg), cfg)
        worst = max(worst, float(np.max(np.abs(back.values - values))))
    assert worst <= per_step_bound + 1e-12
    assert worst <= analytic + 1e-12


def test_alphabet_overflow_names_index():
    cfg = FastCodecConfig(horizon=4, dims=1, quant_scale=0.001, alphabet_size=16,
                          bpe_vocab_size=16)
    with pytest.raises(CodecError, match="index"):
        codec.fast_encode(norm_chunk(np.ones((4, 1))), cfg)


def test_symbol_count_mismatch_rejected():
    cfg = FastCodecConfig(horizon=2, dims=2, alphabet_size=8, bpe_vocab_size=8)
    with pytest.raises(CodecError, match="symbols"):
        codec.symbols_to_chunk([0, 0, 0], cfg)  # wants 4


def test_unknown_token_rejected():
    cfg = FastCodecConfig(horizon=2, dims=1, alphabet_size=8, bpe_vocab_size=8)
    with pytest.raises(CodecError):
        codec.fast_decode([99], cfg)


def test_zigzag_round_trip():
    for n in range(-50, 51):
        z = codec.zigzag(n)
        assert z >= 0
        assert codec.unzigzag(z) == n


def test_dct_orthonormal():
    for k in (1, 2, 8, 16):
        c = codec.dct_matrix(k)
        assert np.allclose(c @ c.T, np.eye(k), atol=1e-12)


def test_bpe_compresses_smooth_trajectories():
    k, d = 8, 7
    t = np.linspace(0, 2 * np.pi, k)[:, None]
    rng = np.random.default_rng(2)
    base_cfg = FastCodecConfig(horizon=k, dims=d, quant_scale=0.02,
                               alphabet_size=1024, bpe_vocab_size=1024)
    corpus = []
    chunks = []
    for _ in range(64):
        amp = rng.uniform(0.1, 0.6, size=(1, d))
        phase = rng.uniform(0, np.pi, size=(1, d))
        values = amp * np.sin(t + phase)
        chunks.append(norm_chunk(values))
        corpus.append(codec.base_symbols(chunks[-1], base_cfg))
    merges = codec.bpe_train(corpus, vocab_size=1024 + 64, alphabet_size=1024)
    assert merges  # some pairs repeat
    cfg = FastCodecConfig(horizon=k, dims=d, quant_scale=0.02, alphabet_size=1024,
                          bpe_vocab_size=1024 + 64, bpe_merges=merges)
    shorter = 0
    for chunk in chunks:
        raw = codec.base_symbols(chunk, cfg)
        toks = codec.fast_encode(chunk, cfg)
        assert len(toks.tokens) <= len(raw)
        shorter += len(toks.tokens) < len(raw)
        back = codec.fast_decode(toks, cfg)
        assert np.max(np.abs(back.values - chunk.values)) <= codec.decode_error_bound(cfg)
    assert shorter > 32  # strictly compressed on most sinusoids


def test_bpe_single_merge_on_abab():
    merges = codec.bpe_train([[0, 1, 0, 1]], vocab_size=3, alphabet_size=2)
    assert merges == ((0, 1),)


def test_bpe_tie_breaks_lexicographically():
    # pairs (0,1) and (1,0) both occur twice; (0,1) is smaller
    merges = codec.bpe_train([[0, 1, 0, 1, 0]], vocab_size=3, alphabet_size=2)
    assert merges[0] == (0, 1)


def test_bpe_expansion_inverts_merging_on_random_corpora():
    rng = np.random.default_rng(13)
    for trial in range(1000):
        alphabet = int(rng.integers(2, 6))
        corpus = [
            list(rng.integers(0, alphabet, size=rng.integers(1, 30)))
            for _ in range(int(rng.integers(1, 6)))
        ]
        merges = codec.bpe_train(corpus, vocab_size=alphabet + int(rng.integers(0, 8)),
                                 alphabet_size=alphabet)
        cfg = FastCodecConfig(horizon=1, dims=1, alphabet_size=alphabet,
                              bpe_vocab_size=alphabet + len(merges), bpe_merges=merges)
        for seq in corpus:
            merged = codec.apply_merges(seq, cfg)
            assert codec.expand_merges(merged, cfg) == seq


def test_bpe_empty_corpus():
    with pytest.raises(EmptyDataset):
        codec.bpe_train([], vocab_size=10, alphabet_size=4)


def test_token_sequence_validates_vocab():
    with pytest.raises(CodecError):
        TokenSequence(tokens=(9,), vocab_size=4)


# ---------------------------------------------------------------------------
# statistics file format


def test_statistics_json_round_trip(tmp_path):
    rng = np.random.default_rng(1)
    s = codec.compute_statistics([chunk_of(rng.normal(size=(50, 3)))], dims=3)
    path = tmp_path / "dataset_statistics.json"
    codec.write_statistics_json(path, {"point_reach": s})
    doc = path.read_text()
    for key in ('"dims"', '"sample_count"', '"per_dim"', '"q01"', '"q99"',
                '"mean"', '"std"', '"min"', '"max"'):
        assert key in doc
    back = codec.read_statistics_json(path)
    assert list(back) == [""]  # single dataset stores the bare object
    for a, b in zip(back[""].per_dim, s.per_dim):
        assert a == b


def test_statistics_json_multi_dataset(tmp_path):
    s1 = codec.compute_statistics([chunk_of(np.ones((4, 2)))], dims=2)
    s2 = codec.compute_statistics([chunk_of(np.zeros((4, 1)))], dims=1)
    path = tmp_path / "dataset_statistics.json"
    codec.write_statistics_json(path, {"a": s1, "b": s2})
    back = codec.read_statistics_json(path)
    assert set(back) == {"a", "b"}
    assert back["a"].dims == 2 and back["b"].dims == 1
