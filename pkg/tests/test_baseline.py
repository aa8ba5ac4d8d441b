"""Constant-weight-code search, ML decoding, and CSI perturbation."""

import itertools

import numpy as np
import pytest

from ooklearn.baseline import (
    CsiModel,
    SearchConfig,
    ml_decode,
    perturb_csi,
    search_codebook,
)
from ooklearn.channel import (
    KINGBRIGHT_LED,
    LedModel,
    led_forward,
    make_isi_channel,
)
from ooklearn.codebook import Codebook, load_fixture


def _pairwise_min_distance(words):
    words = np.asarray(words)
    best = words.shape[1] + 1
    for i, j in itertools.combinations(range(len(words)), 2):
        best = min(best, int(np.sum(words[i] != words[j])))
    return best


def _brute_force_strict_optimum(n, m, weight):
    """Exact best min distance over all strict-CWC codebooks (small cases)."""
    words = [np.array(w, dtype=np.uint8)
             for w in itertools.product((0, 1), repeat=n)
             if sum(w) == weight]
    best = 0
    for combo in itertools.combinations(range(len(words)), m):
        best = max(best, _pairwise_min_distance([words[i] for i in combo]))
    return best


def test_search_config_validation():
    with pytest.raises(ValueError, match="constraint"):
        SearchConfig(8, 4, 4.0, constraint="loose").validate()
    with pytest.raises(ValueError, match="integer weight"):
        SearchConfig(8, 4, 2.5, constraint="strict").validate()
    with pytest.raises(ValueError, match="total weight"):
        SearchConfig(8, 4, 2.1, constraint="relaxed").validate()
    with pytest.raises(ValueError, match="outside"):
        SearchConfig(8, 4, 9.0, constraint="relaxed").validate()
    with pytest.raises(ValueError, match="two codewords"):
        SearchConfig(8, 1, 4.0).validate()
    # non-integer average weight is exactly what relaxed mode is for
    SearchConfig(8, 4, 2.5, constraint="relaxed").validate()


def test_csi_model_validation():
    with pytest.raises(ValueError, match="csi mode"):
        CsiModel(mode="oracle")
    with pytest.raises(ValueError, match="variance"):
        CsiModel(mode="perturbed", variance=-1.0)
    assert CsiModel().mode == "perfect"


def test_search_strict_reaches_known_optimum_n8_m4_w4():
    rng = np.random.default_rng(0)
    cfg = SearchConfig(8, 4, 4.0, constraint="strict", target_min_distance=4)
    result = search_codebook(cfg, rng)
    assert result.min_distance == 4
    assert np.all(result.codebook.words.sum(axis=1) == 4)
    assert result.spectrum[0] == 4


def test_search_two_word_complement_pair():
    rng = np.random.default_rng(1)
    cfg = SearchConfig(4, 2, 2.0, constraint="strict", target_min_distance=4)
    result = search_codebook(cfg, rng)
    assert result.min_distance == 4  # e.g. 1100 / 0011
    assert _brute_force_strict_optimum(4, 2, 2) == 4


def test_search_sixteen_words_weight_two():
    rng = np.random.default_rng(2)
    cfg = SearchConfig(8, 16, 2.0, constraint="strict", target_min_distance=2)
    result = search_codebook(cfg, rng)
    # only four disjoint weight-2 supports exist in eight slots, so some
    # pair of the sixteen words must intersect: the optimum is exactly 2
    assert result.min_distance == 2
    assert len(np.unique(result.codebook.words, axis=0)) == 16


@pytest.mark.parametrize("n,m,weight", [(5, 4, 2), (6, 4, 3)])
def test_search_matches_exhaustive_optimum(n, m, weight):
    optimum = _brute_force_strict_optimum(n, m, weight)
    rng = np.random.default_rng(3)
    cfg = SearchConfig(n, m, float(weight), constraint="strict",
                       max_iterations=4_000, restarts=10)
    result = search_codebook(cfg, rng)
    assert result.min_distance == optimum


def test_search_strict_constraint_holds_across_seeds():
    for seed in range(5):
        rng = np.random.default_rng(seed)
        cfg = SearchConfig(8, 8, 3.0, constraint="strict",
                           max_iterations=400, restarts=4)
        result = search_codebook(cfg, rng)
        assert np.all(result.codebook.words.sum(axis=1) == 3)


def test_search_relaxed_preserves_average_weight():
    rng = np.random.default_rng(4)
    cfg = SearchConfig(8, 4, 2.5, constraint="relaxed",
                       max_iterations=2_000, restarts=5)
    result = search_codebook(cfg, rng)
    avg = result.codebook.words.sum() / 4
    assert abs(avg - 2.5) <= 1 / 8
    assert result.min_distance >= 1


def test_search_nonlinear_power_constraint():
    # with g(1) = 1 and memory 0.05 the codebook power grid is fine enough
    # to hold a 3.0 target: total weight 23 puts every arrangement inside
    # the 0.05 window
    led = LedModel((0.9, 0.1), 0.05)
    rng = np.random.default_rng(5)
    cfg = SearchConfig(8, 8, 3.0, constraint="nonlinear", led=led,
                       max_iterations=2_000, restarts=5, power_tol=0.05)
    result = search_codebook(cfg, rng)
    power = led_forward(result.codebook.words.astype(float), led).sum() / 8
    assert abs(power - 3.0) <= 0.05


def test_search_nonlinear_unreachable_power_target_raises():
    # one on-bit through the Kingbright polynomial contributes about
    # 10.97*1.1/M to the codebook average, so with four words the grid
    # around 4.0 is {3.017, 5.486, ...} and the repair must say so
    rng = np.random.default_rng(6)
    cfg = SearchConfig(8, 4, 4.0, constraint="nonlinear", led=KINGBRIGHT_LED,
                       max_iterations=100, restarts=2, power_tol=0.05)
    with pytest.raises(RuntimeError, match="could not reach"):
        search_codebook(cfg, rng)


def test_search_early_stop_saves_budget():
    rng = np.random.default_rng(6)
    cfg = SearchConfig(4, 2, 2.0, constraint="strict",
                       target_min_distance=4, max_iterations=20_000)
    result = search_codebook(cfg, rng)
    assert result.iterations_used < 20_000
    assert result.trace[-1][2] == 4


def test_ml_decode_noiseless_round_trip():
    book = load_fixture("IIa")
    h, _ = make_isi_channel(1.0, 8)
    images = led_forward(book.words.astype(float), KINGBRIGHT_LED) @ h.T
    got = ml_decode(images, book, h, led=KINGBRIGHT_LED)
    assert np.array_equal(got, np.arange(4))


def test_ml_decode_two_word_hand_example():
    book = Codebook(2, 2, 1.0, np.array([[0, 0], [1, 1]], dtype=np.uint8))
    # squared distances: 0.81 + 0.64 = 1.45 against 0.01 + 0.04 = 0.05
    assert ml_decode([0.9, 0.8], book, np.eye(2))[0] == 1


def test_ml_decode_tie_breaks_to_lowest_index():
    book = Codebook(2, 2, 1.0, np.array([[0, 0], [1, 1]], dtype=np.uint8))
    assert ml_decode([0.5, 0.5], book, np.eye(2))[0] == 0


def test_ml_decode_commutes_with_index_permutation():
    book = load_fixture("IIb")
    h = np.eye(8)
    rng = np.random.default_rng(7)
    for _ in range(20):
        r = rng.normal(0.0, 1.0, size=(6, 8))
        base = ml_decode(r, book, h)
        perm = rng.permutation(8)
        shuffled = Codebook(8, 8, book.dimming, book.words[perm])
        got = ml_decode(r, shuffled, h)
        assert np.array_equal(perm[got], base)


def test_ml_decode_per_sample_matrices_match_loop():
    book = load_fixture("IIa")
    rng = np.random.default_rng(8)
    mats = np.stack([make_isi_channel(p, 8)[0]
                     for p in rng.uniform(0, 3, size=5)])
    r = rng.normal(0.0, 1.0, size=(5, 8))
    batched = ml_decode(r, book, mats)
    for i in range(5):
        assert ml_decode(r[i], book, mats[i])[0] == batched[i]


def test_perturb_csi_zero_variance_is_identity_copy():
    h, _ = make_isi_channel(0.5, 8)
    rng = np.random.default_rng(9)
    out = perturb_csi(h, 0.0, rng)
    assert np.array_equal(out, h)
    assert out is not h
    with pytest.raises(ValueError):
        perturb_csi(h, -0.1, rng)


def test_perturb_csi_statistics_and_sparsity():
    h, _ = make_isi_channel(1.0, 8)
    rng = np.random.default_rng(10)
    target = 0.04
    draws = np.stack([perturb_csi(h, target, rng) for _ in range(4_000)])
    errors = draws - h
    assert np.all(errors[:, h == 0] == 0.0)
    measured = errors[:, h != 0].var()
    assert abs(measured - target) / target < 0.02


def test_perturbed_csi_never_beats_perfect_csi():
    book = load_fixture("IIa")
    h, _ = make_isi_channel(1.5, 8)
    rng = np.random.default_rng(11)
    trials = 10_000
    messages = rng.integers(0, 4, size=trials)
    sent = book.words[messages].astype(float) @ h.T
    r = sent + rng.normal(0.0, np.sqrt(0.5), size=sent.shape)
    perfect = ml_decode(r, book, h)
    estimates = h + rng.normal(0.0, np.sqrt(0.1), size=(trials, 8, 8)) * (h != 0)
    perturbed = ml_decode(r, book, estimates)
    assert np.sum(perturbed == messages) <= np.sum(perfect == messages)
