import numpy as np
import pytest
from scipy.stats import norm

from cvdisc.sampler import ancestral_sample, mwg_log_ratio, mwg_ratio, mwg_run
from cvdisc.vae import encode
from toys import batch_means_se, exact_encoder, linear_decoder, linear_encoder, marginal_cov

A = np.array([[1.5], [-0.8]])
B = np.array([0.3, -0.2])
S2 = np.array([0.4, 0.6])


@pytest.fixture(scope="module")
def lin():
    return linear_decoder(A, B, np.log(S2)), exact_encoder(A, B, S2)


# --------------------------------------------------------------- ancestral

def test_ancestral_constant_decoder_returns_bias():
    dec = linear_decoder(np.zeros((3, 2)), np.array([1.0, -2.0, 0.5]), -200.0)
    x = ancestral_sample(dec, 0, 50)
    np.testing.assert_allclose(x, np.tile([1.0, -2.0, 0.5], (50, 1)), rtol=0, atol=1e-30)


def test_ancestral_linear_covariance(lin):
    dec, _ = lin
    n = 100_000
    x = ancestral_sample(dec, np.random.default_rng(1), n)
    xc = x - x.mean(0)
    prods = xc[:, :, None] * xc[:, None, :]
    emp = prods.mean(0)
    se = prods.std(0) / np.sqrt(n)
    assert np.all(np.abs(emp - marginal_cov(A, S2)) < 4 * se)
    assert np.all(np.abs(x.mean(0) - B) < 4 * np.sqrt(np.diag(marginal_cov(A, S2)) / n))


def test_ancestral_deterministic_and_latents(lin):
    dec, _ = lin
    a = ancestral_sample(dec, 5, 20)
    b, z = ancestral_sample(dec, 5, 20, return_latents=True)
    assert a.tobytes() == b.tobytes()
    assert z.shape == (20, 1)
    with pytest.raises(ValueError):
        ancestral_sample(dec, 0, 0)


# --------------------------------------------------------------- MwG ratio

def test_ratio_identical_states_is_one(lin):
    dec, _ = lin
    enc = linear_encoder([[0.3, 0.1]], [0.2], [-0.4])
    assert mwg_ratio(enc, dec, np.array([0.5, -1.0]), np.array([0.7]), np.array([0.7])) == 1.0


def test_ratio_exact_posterior_is_one(lin):
    dec, enc = lin
    rng = np.random.default_rng(2)
    for _ in range(100):
        x, z, zp = rng.normal(size=2) * 2, rng.normal(size=1) * 2, rng.normal(size=1) * 2
        assert mwg_ratio(enc, dec, x, z, zp) == pytest.approx(1.0, abs=1e-12)


def test_ratio_scalar_oracle():
    a, b, s2 = 1.7, -0.4, 0.3
    dec = linear_decoder([[a]], [b], np.log(s2))
    g, c, lv = 0.45, 0.1, np.log(0.6)
    enc = linear_encoder([[g]], [c], [lv])
    rng = np.random.default_rng(3)
    for _ in range(20):
        x, z, zp = rng.normal(), rng.normal(), rng.normal()
        mq, sq = g * x + c, np.sqrt(np.exp(lv))
        log_rho = (norm.logpdf(x, a * zp + b, np.sqrt(s2)) + norm.logpdf(zp)
                   - norm.logpdf(x, a * z + b, np.sqrt(s2)) - norm.logpdf(z)
                   - norm.logpdf(zp, mq, sq) + norm.logpdf(z, mq, sq))
        got = mwg_ratio(enc, dec, np.array([x]), np.array([z]), np.array([zp]))
        assert got == pytest.approx(np.exp(log_rho), rel=1e-12)


def test_log_ratio_finite_for_tiny_sigma():
    dec = linear_decoder(A, B, np.log(1e-12))
    enc = linear_encoder([[0.3, 0.1]], [0.0], [np.log(1e-12)])
    rng = np.random.default_rng(4)
    for _ in range(50):
        x, z, zp = rng.normal(size=2), rng.normal(size=1), rng.normal(size=1)
        assert np.isfinite(mwg_log_ratio(enc, dec, x, z, zp))


# ------------------------------------------------------------------ chain

def test_chain_bookkeeping(lin):
    dec, enc = lin
    out = mwg_run(enc, dec, np.zeros(2), T=5, burn_in=0, thin=1, rng=0)
    assert out.samples.shape == (5, 2) and out.latents.shape == (5, 1)
    assert out.n_proposed == 5 and out.seed == 0
    out = mwg_run(enc, dec, np.zeros(2), T=20, burn_in=5, thin=3, rng=0)
    assert out.samples.shape[0] == len(range(6, 21, 3))
    with pytest.raises(ValueError):
        mwg_run(enc, dec, np.zeros(2), T=5, burn_in=5)
    with pytest.raises(ValueError):
        mwg_run(enc, dec, np.zeros(2), T=5, z0=np.zeros(3))


def test_chain_exact_posterior_accepts_everything_and_matches_marginal(lin):
    dec, enc = lin
    out = mwg_run(enc, dec, np.zeros(2), T=20_000, rng=5)
    assert out.acceptance_rate == 1.0
    se = batch_means_se(out.samples)
    assert np.all(np.abs(out.samples.mean(0) - B) < 4 * se)
    xc = out.samples - B
    prods = (xc[:, :, None] * xc[:, None, :]).reshape(len(xc), -1)
    assert np.all(np.abs(prods.mean(0) - marginal_cov(A, S2).ravel()) < 4 * batch_means_se(prods))


def test_acceptance_drops_with_perturbed_proposal(lin):
    dec, enc = lin
    shifted = exact_encoder(A, B, S2, shift=0.5)
    exact = mwg_run(enc, dec, np.zeros(2), T=5000, rng=6).acceptance_rate
    pert = mwg_run(shifted, dec, np.zeros(2), T=5000, rng=6).acceptance_rate
    assert exact >= pert and pert < 1.0


def test_chain_is_seeded(lin):
    dec, _ = lin
    enc = exact_encoder(A, B, S2, shift=0.3)
    a = mwg_run(enc, dec, np.ones(2), T=300, rng=9)
    b = mwg_run(enc, dec, np.ones(2), T=300, rng=9)
    assert a.samples.tobytes() == b.samples.tobytes() and a.n_accepted == b.n_accepted


def test_default_start_latent_is_encoder_mean(lin):
    dec, enc = lin
    x0 = np.array([0.4, -0.3])
    a = mwg_run(enc, dec, x0, T=10, rng=1)
    b = mwg_run(enc, dec, x0, T=10, rng=1, z0=encode(enc, x0).mu)
    assert a.samples.tobytes() == b.samples.tobytes()


def test_multiple_chains_advance_independently(lin):
    dec, _ = lin
    enc = exact_encoder(A, B, S2, shift=0.3)
    x0 = np.array([[0.0, 0.0], [3.0, -3.0], [1.0, 1.0]])
    out = mwg_run(enc, dec, x0, T=40, burn_in=10, thin=2, rng=3)
    n_keep = len(range(11, 41, 2))
    assert out.samples.shape == (3 * n_keep, 2) and out.n_chains == 3 and out.n_proposed == 120
    single = mwg_run(enc, dec, x0[:1], T=40, burn_in=10, thin=2, rng=3)
    flat = mwg_run(enc, dec, x0[0], T=40, burn_in=10, thin=2, rng=3)
    assert single.samples.tobytes() == flat.samples.tobytes()
