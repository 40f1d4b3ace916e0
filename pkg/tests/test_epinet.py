import json

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from coarsebind.affinity import AssayRecord
from coarsebind.epinet import (
    Epinet,
    EpinetConfig,
    EpinetPosterior,
    decode_posterior,
    encode_posterior,
    epinet_forward,
    index_stream,
    iqr_calibration,
    load_epinet_checkpoint,
    marginal_stats,
    sample_posterior,
    save_epinet_checkpoint,
    train_epinet,
)
from coarsebind.errors import FormatError, InputError

from scenarios import iqr_direction_holds, shift_toy_run

CFG = EpinetConfig(index_dim=16, hidden=(12,), seed=3)


@pytest.fixture
def net():
    return Epinet(5, CFG)


class TestForward:
    def test_zero_index(self, net, rng):
        assert epinet_forward(net, rng.standard_normal(5), np.zeros(16)) == 0.0

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**31), st.floats(-5, 5))
    def test_head_is_linear_in_index(self, seed, a):
        net = Epinet(5, CFG)
        rng = np.random.default_rng(seed)
        g = torch.as_tensor(rng.standard_normal((3, 5)))
        z = torch.as_tensor(rng.standard_normal((2, 16))) / 4
        with torch.no_grad():
            v = net.learnable.body(torch.cat([g.unsqueeze(0).expand(2, 3, -1), z.unsqueeze(1).expand(2, 3, -1)], -1))
            torch.testing.assert_close(net.learnable.head(v, a * z), a * net.learnable.head(v, z))
            z2 = torch.as_tensor(rng.standard_normal((2, 16)))
            torch.testing.assert_close(net.learnable.head(v, z + z2), net.learnable.head(v, z) + net.learnable.head(v, z2))

    def test_prior_contribution(self, rng):
        net = Epinet(5, EpinetConfig(index_dim=16, hidden=(12,), prior_scale=2.5))
        with torch.no_grad():
            for p in net.learnable.parameters():
                p.zero_()
        g, z = rng.standard_normal(5), rng.standard_normal(16)
        r = epinet_forward(net, g, z)
        with torch.no_grad():
            prior = float(net.prior(torch.as_tensor(g)[None], torch.as_tensor(z)[None])[0, 0])
        assert r != 0.0
        assert r == pytest.approx(2.5 * prior, abs=1e-12)

    def test_dimension_mismatch(self, net, rng):
        with pytest.raises(InputError):
            epinet_forward(net, rng.standard_normal(4), rng.standard_normal(16))
        with pytest.raises(InputError):
            epinet_forward(net, rng.standard_normal(5), rng.standard_normal(15))

    def test_latent_receives_no_gradient(self, net, rng):
        g = torch.as_tensor(rng.standard_normal((2, 5)), dtype=torch.float64).requires_grad_(True)
        net.residual(g, torch.as_tensor(rng.standard_normal((1, 16)))).sum().backward()
        assert g.grad is None


class TestSampling:
    def test_paths_share_the_index(self, net, rng):
        g = rng.standard_normal((4, 5))
        g[3] = g[1]
        post = sample_posterior(net, g, np.zeros(4), k=50, seed=1)
        np.testing.assert_array_equal(post.samples[:, 1], post.samples[:, 3])
        z = index_stream(16, 50, 1)
        for k in (0, 17, 49):
            assert post.samples[k, 2] == pytest.approx(epinet_forward(net, g[2], z[k]), abs=1e-12)

    def test_prefix_stability(self, net, rng):
        g, base = rng.standard_normal((6, 5)), rng.normal(6, 1, 6)
        big = sample_posterior(net, g, base, k=300, seed=9, chunk=64)
        small = sample_posterior(net, g, base, k=70, seed=9)
        np.testing.assert_allclose(big.samples[:70], small.samples, atol=1e-12)

    def test_repeatable(self, net, rng):
        g = rng.standard_normal((3, 5))
        a = sample_posterior(net, g, np.zeros(3), k=1, seed=2)
        b = sample_posterior(net, g, np.zeros(3), k=1, seed=2)
        assert a.K == 1 and np.array_equal(a.samples, b.samples)

    def test_column_means_near_base(self, rng):
        net = Epinet(5, EpinetConfig(index_dim=16, hidden=(12,)))
        g, base = rng.standard_normal((4, 5)), np.array([5.0, 6.0, 7.0, 8.0])
        post = sample_posterior(net, g, base, k=20_000, seed=0)
        # z also feeds the body, so the mean residual is small rather than exactly zero
        sem = post.samples.std(axis=0) / np.sqrt(post.K)
        assert np.all(np.abs(post.samples.mean(axis=0) - base) < 5 * sem + 0.05)

    def test_base_length_checked(self, net, rng):
        with pytest.raises(InputError):
            sample_posterior(net, rng.standard_normal((3, 5)), np.zeros(2), k=2)


class TestStats:
    def test_constant_column(self):
        s = marginal_stats(EpinetPosterior(np.full((10, 1), 3.0)), 0)
        assert s == {"mean": 3.0, "std": 0.0, "iqr": 0.0}

    def test_uniform_grid_iqr(self):
        col = np.arange(1, 1001) / 1000
        assert marginal_stats(EpinetPosterior(col[:, None]), 0)["iqr"] == pytest.approx(0.4995, abs=1e-12)

    def test_direct_formula(self, rng):
        x = rng.standard_normal((101, 3))
        s = marginal_stats(EpinetPosterior(x), 2)
        col = np.sort(x[:, 2])
        # linear interpolation at positions 25 and 75 of 0..100
        assert s["iqr"] == pytest.approx(col[75] - col[25], abs=1e-12)
        assert s["std"] == pytest.approx(np.sqrt(np.sum((col - col.mean()) ** 2) / 100), abs=1e-12)

    def test_small_k_has_no_iqr(self):
        assert marginal_stats(EpinetPosterior(np.ones((3, 2))), 0)["iqr"] is None

    def test_iqr_calibration(self):
        rep = iqr_calibration([1, 2, 3, 4], [1, 2, 3, 4], [0.1, 0.2, 0.3, 0.4], edges=[0, 0.25, 0.5])
        assert rep.success_rate == (1.0, 1.0)
        pred, truth = [5.0, 5.0, 5.0, 5.0, 5.0, 5.0], [5.5, 7.0, 5.0, 6.0, 3.0, 4.5]
        iqr = [0.1, 0.1, 0.3, 0.3, 0.6, 0.6]
        rep = iqr_calibration(pred, truth, iqr, edges=[0, 0.2, 0.4, 0.8])
        assert rep.success_rate == (0.5, 1.0, 0.5) and rep.counts == (2, 2, 2)
        with pytest.raises(InputError):
            iqr_calibration([1.0], [1.0, 2.0], [0.1])


class TestFormat:
    def _posterior(self, rng):
        return EpinetPosterior(rng.normal(6, 1, (7, 3)), ids=("a", "b", "c"))

    def test_round_trip(self, rng):
        data = encode_posterior(self._posterior(rng))
        back = decode_posterior(data)
        assert encode_posterior(back) == data
        assert back.ids == ("a", "b", "c") and back.samples.shape == (7, 3)

    def test_header(self, rng):
        header = json.loads(encode_posterior(self._posterior(rng)).split(b"\n")[0])
        assert header == {"K": 7, "N": 3, "ids": ["a", "b", "c"]}

    @pytest.mark.parametrize("header", [
        {"K": 7, "N": 3},
        {"K": 7, "N": 3, "ids": ["a", "a", "c"]},
        {"K": 0, "N": 3, "ids": ["a", "b", "c"]},
        {"K": 7, "N": 2, "ids": ["a", "b", "c"]},
        {"K": 7, "N": 3, "ids": ["a", "b", 3]},
    ])
    def test_bad_header(self, rng, header):
        payload = encode_posterior(self._posterior(rng)).split(b"\n")[1]
        with pytest.raises(FormatError):
            decode_posterior(json.dumps(header).encode() + b"\n" + payload + b"\n")

    def test_truncated(self, rng):
        with pytest.raises(FormatError):
            decode_posterior(encode_posterior(self._posterior(rng))[:-12])

    def test_posterior_validation(self):
        with pytest.raises(InputError):
            EpinetPosterior(np.array([[np.nan]]))
        with pytest.raises(InputError):
            EpinetPosterior(np.zeros((2, 2)), ids=("a",))


def test_checkpoint_round_trip(net, rng):
    back = load_epinet_checkpoint(save_epinet_checkpoint(net))
    g, z = rng.standard_normal(5), rng.standard_normal(16)
    assert epinet_forward(back, g, z) == pytest.approx(epinet_forward(net, g, z), abs=1e-5)
    assert back.cfg == net.cfg


def test_training_needs_continuous_records(net):
    with pytest.raises(InputError):
        train_epinet([AssayRecord("a", "x", "binary", 1.0)], {"x": np.zeros(5)}, {"x": 5.0}, net=net)


@pytest.fixture(scope="module")
def shift_run():
    return shift_toy_run(0, prior_scale=3.0)


def test_prior_is_frozen(shift_run):
    assert shift_run.prior_unchanged


def test_uncertainty_grows_off_distribution(shift_run):
    assert shift_run.train_std < shift_run.ood_std


def test_training_loss_halves(shift_run):
    losses = np.array(shift_run.losses)
    assert losses[-50:].mean() <= 0.5 * losses[:50].mean()


def test_low_iqr_predictions_are_more_accurate(shift_run):
    assert iqr_direction_holds(shift_run.report)
