import numpy as np
import pytest

from distillation import (
    AdParams,
    DistillParams,
    ad_decode,
    ad_encode,
    ad_rates,
    estimate_bsc,
    filter_rates,
    pack_bits,
    privacy_amplify,
    public_error_filter,
    reconcile,
    run_distillation,
    simulate_ad_rates,
    toeplitz_seed,
    unpack_bits,
)


def noisy_copy(bits, eps, rng):
    return bits ^ (rng.random(len(bits)) < eps).astype(np.uint8)


def test_estimate_bsc():
    est = estimate_bsc([0, 1, 1, 0], [0, 1, 0, 0])
    assert est.epsilon == pytest.approx(0.25)
    assert est.sample_count == 4
    with pytest.raises(ValueError):
        estimate_bsc([0, 1], [0])


def test_ad_encode_decode():
    a = np.array([1, 0, 1, 1, 0], dtype=np.uint8)
    m = ad_encode(1, a)
    assert ad_decode(m, a) == (True, 1)
    b = a.copy()
    b[2] ^= 1
    assert ad_decode(m, b) == (False, None)
    # 全部位都翻转时仍被接受，但输出错误比特
    assert ad_decode(m, a ^ 1) == (True, 0)
    with pytest.raises(ValueError):
        ad_encode(2, a)


def test_ad_params_validation():
    with pytest.raises(ValueError):
        AdParams(0)


def test_ad_rates_closed_form():
    rates = ad_rates(0.1, 0.25, 7)
    assert rates["accept"] == pytest.approx(0.9 ** 7 + 0.1 ** 7)
    assert rates["err_b"] < 1e-3
    assert rates["err_e"] == pytest.approx(1.0 / (1.0 + 3.0 ** 7))
    with pytest.raises(ValueError):
        ad_rates(1.5, 0.1, 3)


@pytest.mark.parametrize("eps_ab, eps_ae, L", [(0.05, 0.2, 3), (0.1, 0.25, 5), (0.2, 0.3, 3)])
def test_ad_rates_match_simulation(eps_ab, eps_ae, L):
    trials = 100_000
    rates = ad_rates(eps_ab, eps_ae, L)
    sim = simulate_ad_rates(eps_ab, eps_ae, L, trials, np.random.default_rng(L))

    def within(observed, expected, count):
        sigma = np.sqrt(expected * (1 - expected) / count)
        return abs(observed - expected) <= 4 * sigma + 3.0 / count

    assert within(sim["accept"], rates["accept"], trials)
    assert within(sim["err_b"], rates["err_b"], sim["accepted"])
    assert within(sim["err_e"], rates["err_e"], sim["e_consistent"])


def test_majority_decoding_error_for_opponent():
    sim = simulate_ad_rates(0.1, 0.25, 7, 100_000, np.random.default_rng(8))
    assert sim["err_e_majority"] == pytest.approx(0.0705566, abs=0.005)
    assert sim["err_b"] < sim["err_e_majority"]


def test_reconcile_identical_strings_leak_only_parities():
    rng = np.random.default_rng(0)
    a = rng.integers(0, 2, 100, dtype=np.uint8)
    result = reconcile(a, a, block=10, passes=3, rng=np.random.default_rng(1))
    np.testing.assert_array_equal(result.corrected, a)
    assert result.leaked == 30
    assert result.corrections == 0
    assert result.residual == 0


def test_reconcile_removes_errors():
    rng = np.random.default_rng(2)
    residuals = []
    for _ in range(10):
        a = rng.integers(0, 2, 4000, dtype=np.uint8)
        b = noisy_copy(a, 0.01, rng)
        result = reconcile(a, b, block=8, passes=4, rng=rng)
        residuals.append(np.mean(result.corrected != a))
        assert result.residual == np.count_nonzero(result.corrected != a)
        assert result.leaked >= 4 * 500
    assert np.mean(residuals) < 1e-3


def test_reconcile_leak_bound_and_monotone_mismatches():
    rng = np.random.default_rng(21)
    n, block, passes = 1000, 16, 3
    bound = passes * int(np.ceil(n / block)) * (1 + int(np.ceil(np.log2(block))))
    for eps in (0.01, 0.05, 0.2):
        a = rng.integers(0, 2, n, dtype=np.uint8)
        b = noisy_copy(a, eps, rng)
        initial = int(np.count_nonzero(a != b))
        result = reconcile(a, b, block=block, passes=passes, rng=rng)
        assert result.leaked <= bound
        history = [initial] + result.mismatches
        assert all(later <= earlier for earlier, later in zip(history, history[1:]))
        assert initial - result.residual == result.corrections


def test_reconcile_validation():
    with pytest.raises(ValueError):
        reconcile([0, 1], [0, 1], block=1, passes=1, rng=np.random.default_rng(0))
    with pytest.raises(ValueError):
        reconcile([0, 1], [0], block=2, passes=1, rng=np.random.default_rng(0))


def test_privacy_amplification_is_toeplitz():
    bits = np.array([1, 0, 1, 1, 0, 1], dtype=np.uint8)
    out_len = 3
    t = toeplitz_seed(7, len(bits), out_len)
    N = len(bits)
    matrix = np.array([[t[r - c + N - 1] for c in range(N)] for r in range(out_len)])
    np.testing.assert_array_equal(privacy_amplify(bits, 7, out_len), matrix @ bits % 2)


def test_privacy_amplification_is_linear():
    rng = np.random.default_rng(3)
    a = rng.integers(0, 2, 256, dtype=np.uint8)
    b = rng.integers(0, 2, 256, dtype=np.uint8)
    np.testing.assert_array_equal(privacy_amplify(a ^ b, 11, 64),
                                  privacy_amplify(a, 11, 64) ^ privacy_amplify(b, 11, 64))


def test_privacy_amplification_bounds():
    bits = np.ones(8, dtype=np.uint8)
    assert len(privacy_amplify(bits, 1, 0)) == 0
    with pytest.raises(ValueError):
        privacy_amplify(bits, 1, 9)


def test_pack_bits_keeps_bit_count():
    bits = np.array([1, 0, 1, 1, 0, 0, 1, 0, 1, 1], dtype=np.uint8)
    packed = pack_bits(bits)
    assert packed["bits"] == 10
    np.testing.assert_array_equal(unpack_bits(packed), bits)
    with pytest.raises(ValueError):
        unpack_bits({"bits": 17, "hex": "ff"})


def test_run_distillation_produces_shared_key():
    rng = np.random.default_rng(4)
    a = rng.integers(0, 2, 20_000, dtype=np.uint8)
    b = noisy_copy(a, 0.05, rng)
    eve = noisy_copy(a, 0.3, rng)
    params = DistillParams(ad=AdParams(5), block=16, passes=2, out_len=128)
    report = run_distillation(a, b, {"eve": eve}, params, seed=1)
    assert report.key_len == 128
    assert report.key_match
    assert report.err_b < report.err_e["eve"]
    assert report.leaked_bits > 0
    assert report.key["bits"] == 128
    data = report.to_dict()
    assert data["eps_ae"]["eve"]["sample_count"] == 20_000


def test_run_distillation_is_deterministic():
    rng = np.random.default_rng(5)
    a = rng.integers(0, 2, 5000, dtype=np.uint8)
    b = noisy_copy(a, 0.05, rng)
    params = DistillParams(out_len=64)
    first = run_distillation(a, b, {}, params, seed=3).to_dict()
    second = run_distillation(a, b, {}, params, seed=3).to_dict()
    assert first == second


def test_run_distillation_rejects_mismatched_lengths():
    with pytest.raises(ValueError):
        run_distillation([0, 1, 1], [0, 1], {}, DistillParams(), seed=0)


def test_privacy_amplification_output_is_unbiased():
    rng = np.random.default_rng(22)
    bits = rng.integers(0, 2, 2048, dtype=np.uint8)
    out = privacy_amplify(bits, 5, 1024)
    sigma = np.sqrt(0.25 / len(out))
    assert abs(out.mean() - 0.5) <= 4 * sigma


@pytest.mark.parametrize("eps_ab", [0.05, 0.1, 0.25])
@pytest.mark.parametrize("L", [3, 5, 7, 9])
def test_ad_gives_legitimate_advantage(eps_ab, L):
    eps_ae = eps_ab + 0.1
    rates = ad_rates(eps_ab, eps_ae, L)
    assert rates["err_b"] < rates["err_e"]


def test_run_distillation_reports_reconcile_residual():
    rng = np.random.default_rng(23)
    a = rng.integers(0, 2, 20_000, dtype=np.uint8)
    b = noisy_copy(a, 0.1, rng)
    report = run_distillation(a, b, {}, DistillParams(ad=AdParams(3), passes=1, out_len=64), seed=2)
    data = report.to_dict()
    assert data["corrections"] > 0
    assert data["residual_bits"] >= 0
    assert data["residual_error"] == pytest.approx(
        data["residual_bits"] / round(report.accept_rate * (report.raw_bits // 3)))


def test_public_filter_accepts_identical_strings():
    a = np.random.default_rng(24).integers(0, 2, 103, dtype=np.uint8)
    result = public_error_filter(a, a, block=4, checks=1, rng=np.random.default_rng(0))
    assert result.blocks == 25
    assert result.accepted_blocks == 25
    assert result.leaked == 25
    assert result.keep.sum() == 25 * 3
    assert not result.keep[100:].any()
    assert not result.keep[::4][:25].any()


def test_public_filter_detects_single_errors():
    rng = np.random.default_rng(25)
    blocks, block, checks = 20_000, 4, 3
    a = rng.integers(0, 2, blocks * block, dtype=np.uint8)
    b = a.copy()
    b[np.arange(blocks) * block + rng.integers(0, block, blocks)] ^= 1
    result = public_error_filter(a, b, block, checks, rng)
    expected = 0.5 ** checks
    sigma = np.sqrt(expected * (1 - expected) / blocks)
    assert abs(result.accepted_blocks / blocks - expected) <= 4 * sigma


def test_public_filter_discards_unfavorable_runs():
    # 有利运行的比特误差为0.05，不利运行的比特独立
    rng = np.random.default_rng(26)
    runs = 40_000
    favorable = rng.random(runs) < 0.25
    a = rng.integers(0, 2, runs, dtype=np.uint8)
    b = np.where(favorable, noisy_copy(a, 0.05, rng), rng.integers(0, 2, runs, dtype=np.uint8)).astype(np.uint8)
    result = public_error_filter(a, b, block=2, checks=1, rng=rng)
    public = filter_rates(result.keep, favorable)
    oracle = filter_rates(favorable, favorable)
    assert oracle["false_accept_rate"] == 0.0
    assert oracle["accept_rate"] == pytest.approx(favorable.mean())
    assert public["false_accept_rate"] < 1.0 - favorable.mean()
    assert np.mean(a[result.keep] != b[result.keep]) < np.mean(a != b)


def test_public_filter_validation():
    with pytest.raises(ValueError):
        public_error_filter([0, 1], [0, 1], block=1, checks=1, rng=np.random.default_rng(0))
    with pytest.raises(ValueError):
        public_error_filter([0, 1], [0, 1], block=2, checks=2, rng=np.random.default_rng(0))
    with pytest.raises(ValueError):
        public_error_filter([0, 1], [0], block=2, checks=1, rng=np.random.default_rng(0))
    empty = public_error_filter([0, 1, 1], [0, 1, 1], block=4, checks=1, rng=np.random.default_rng(0))
    assert empty.blocks == 0
    assert not empty.keep.any()


def test_distill_params_filter_validation():
    assert DistillParams().filter == "oracle"
    with pytest.raises(ValueError):
        DistillParams(filter="secret")
    with pytest.raises(ValueError):
        DistillParams(filter_block=3, filter_checks=3)
