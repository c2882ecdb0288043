import numpy as np
import pytest

from src.simulation.compress import (
    CompressorSpec, bit_cost, certify, check_certificate, compress, compress_rows, message_bits, phi_round,
    privacy_delta, wrap_certificate,
)
from src.utils.error_handler import InputError, ParameterError


def rng(seed=0):
    return np.random.default_rng(seed)


@pytest.mark.parametrize('spec, d, expected', [
    (CompressorSpec('sign_norm'), 9, 41),
    (CompressorSpec('quantizer_b', bits=2), 9, 59),
    (CompressorSpec('quantizer_b_improved', bits=2), 9, 43),
    (CompressorSpec('sign_norm_improved'), 9, 25),
    (CompressorSpec('identity'), 30, 960),
    (CompressorSpec('zero'), 5, 0),
])
def test_bit_cost(spec, d, expected):
    assert bit_cost(spec, d) == expected


def test_privacy_flag_costs_one_bit():
    spec = CompressorSpec('quantizer_b_improved', bits=2, privacy_q=0.2)
    assert bit_cost(spec, 9) == 44
    assert message_bits(spec, 9, suppressed=True) == 1


def test_identity_is_exact():
    x = np.array([0.1, -2.5, 3.0])
    msg = compress(CompressorSpec('identity'), x, rng())
    assert np.array_equal(msg.payload, x)
    assert msg.bits == 96
    assert not msg.suppressed


def test_sign_norm_payload():
    msg = compress(CompressorSpec('sign_norm'), [3.0, -1.0, 0.0], rng())
    assert np.allclose(msg.payload, [1.5, -1.5, 0.0])


def test_sign_norm_improved_rounds_the_scale():
    payloads = {tuple(compress(CompressorSpec('sign_norm_improved'), [2.5, -1.0], rng(s)).payload)
                for s in range(40)}
    # scale rounds to 2 or 3, halved
    assert payloads <= {(1.0, -1.0), (1.5, -1.5)}
    assert len(payloads) == 2


def test_quantizer_zero_vector_stays_zero():
    msg = compress(CompressorSpec('quantizer_b', bits=3), np.zeros(4), rng())
    assert np.array_equal(msg.payload, np.zeros(4))


def test_quantizer_mean_is_shrunk_input():
    x = np.array([1.0, -2.0, 0.5, 3.0])
    spec = CompressorSpec('quantizer_b', bits=2)
    payloads, _ = compress_rows(spec, np.repeat(x[None, :], 20000, axis=0), rng(1))
    levels = 2.0
    xi = 1 + min(4 / levels ** 2, 2 / levels)
    assert np.allclose(payloads.mean(axis=0), x / xi, atol=0.05)


def test_phi_round_is_unbiased_and_checks_input():
    g = rng(2)
    assert phi_round(3.0, g) == 3
    draws = [phi_round(2.3, g) for _ in range(20000)]
    assert set(draws) == {2, 3}
    assert np.mean(draws) == pytest.approx(2.3, abs=0.02)
    with pytest.raises(InputError):
        phi_round(-0.5, g)
    with pytest.raises(InputError):
        phi_round(float('nan'), g)


def test_full_suppression_sends_flags_only():
    spec = CompressorSpec('sign_norm', privacy_q=1.0)
    payloads, suppressed = compress_rows(spec, np.ones((5, 3)), rng())
    assert suppressed.all()
    assert np.array_equal(payloads, np.zeros((5, 3)))


@pytest.mark.parametrize('q', [0.1, 0.2, 0.5])
def test_suppression_rate_within_binomial_band(q):
    spec = CompressorSpec('identity', privacy_q=q)
    calls = 100000
    _, suppressed = compress_rows(spec, np.ones((calls, 2)), rng(3))
    band = 5 * np.sqrt(q * (1 - q) / calls)
    assert abs(suppressed.mean() - q) <= band


def test_invalid_specs_and_inputs():
    with pytest.raises(ParameterError):
        CompressorSpec('topk')
    with pytest.raises(ParameterError):
        CompressorSpec('quantizer_b', bits=0)
    with pytest.raises(ParameterError):
        CompressorSpec('identity', privacy_q=1.5)
    with pytest.raises(InputError):
        compress(CompressorSpec('identity'), [1.0, np.inf], rng())


def test_identity_certificate():
    cert = certify(CompressorSpec('identity'), samples=100, trials_per_sample=2, rng=rng())
    assert cert.phi == 1.0
    assert cert.sigma_c == 0.0
    assert cert.violation_rate == 0.0
    assert cert.r0 == 0.0


def test_zero_compressor_needs_absolute_error():
    cert = certify(CompressorSpec('zero'), samples=100, trials_per_sample=2, rng=rng(), dim=3)
    # ||x||^2 <= (1 - phi)||x||^2 + sigma_c on the radius-10 ball forces sigma_c >= 100 phi
    assert cert.phi == pytest.approx(0.01)
    assert 1.0 - 1e-9 <= cert.sigma_c < 1.3


def test_sign_norm_certificate_holds():
    spec = CompressorSpec('sign_norm')
    points = rng(5).standard_normal((150, 9))
    cert = certify(spec, points=points, trials_per_sample=2, rng=rng(4))
    assert 0 < cert.phi <= 1
    assert cert.violation_rate == 0.0
    assert check_certificate(spec, cert.phi, cert.sigma_c, points, 2, rng(6), max_violation=0.0)


def test_certify_guards():
    with pytest.raises(ParameterError):
        certify(CompressorSpec('identity'), samples=50, rng=rng())
    with pytest.raises(InputError):
        certify(CompressorSpec('sign_norm_improved'), points=np.array([[70000.0, 0.0]]), trials_per_sample=2,
                rng=rng())


def test_wrapped_certificate_and_delta():
    base = certify(CompressorSpec('identity'), samples=100, trials_per_sample=2, rng=rng())
    wrapped = wrap_certificate(base, 0.2)
    assert wrapped.phi == pytest.approx(0.8)
    assert wrapped.sigma_c == 0.0
    assert wrapped.kind == 'identity+q0.2'
    assert privacy_delta(CompressorSpec('identity', privacy_q=0.2)) == pytest.approx(0.8)
    assert privacy_delta(CompressorSpec('identity')) is None
    with pytest.raises(ParameterError):
        wrap_certificate(base, 1.0)


@pytest.mark.slow
@pytest.mark.parametrize('spec', [
    CompressorSpec('identity'),
    CompressorSpec('sign_norm'),
    CompressorSpec('quantizer_b', bits=2),
    CompressorSpec('sign_norm_improved'),
    CompressorSpec('quantizer_b_improved', bits=2),
])
def test_full_size_certificates(spec):
    cert = certify(spec, r=1.0, domain_radius=10.0, samples=1000, trials_per_sample=200, rng=rng(7))
    assert cert.phi > 0
    assert cert.violation_rate <= 0.01
    if spec.kind == 'identity':
        assert (cert.phi, cert.sigma_c) == (1.0, 0.0)


@pytest.mark.parametrize('q', [0.2, 0.5])
def test_suppression_wrapped_sign_norm_keeps_the_scaled_certificate(q):
    points = rng(11).standard_normal((150, 9))
    base = certify(CompressorSpec('sign_norm'), points=points, trials_per_sample=2, rng=rng(12))
    wrapped = wrap_certificate(base, q)
    assert wrapped.phi == pytest.approx(base.phi * (1 - q))
    assert wrapped.sigma_c == pytest.approx(base.sigma_c * (1 - q))
    spec = CompressorSpec('sign_norm', privacy_q=q)
    assert check_certificate(spec, wrapped.phi, wrapped.sigma_c, points, 400, rng(13))


@pytest.mark.parametrize('kind', ['quantizer_b', 'quantizer_b_improved'])
def test_quantizer_never_flips_a_sign(kind):
    spec = CompressorSpec(kind, bits=2)
    x = rng(21).standard_normal((500, 9))
    payloads, _ = compress_rows(spec, x, rng(22))
    assert np.all(payloads * x >= 0)
