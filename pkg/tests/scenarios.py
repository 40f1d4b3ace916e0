"""End-to-end toy runs shared by module tests and the acceptance suite."""

from dataclasses import dataclass

import numpy as np
import torch

from coarsebind.epinet import EpinetConfig, iqr_calibration, make_shift_toy, sample_posterior, train_epinet


@dataclass
class ShiftRun:
    prior_unchanged: bool
    train_std: float
    ood_std: float
    report: object
    losses: list


def shift_toy_run(seed, prior_scale=1.0, steps=1000, k=500):
    toy = make_shift_toy(seed)
    cfg = EpinetConfig(hidden=(64,), seed=seed, prior_scale=prior_scale)
    from coarsebind.epinet import Epinet

    net = Epinet(toy.train_latents.shape[1], cfg)
    before = [p.detach().clone() for p in net.prior.parameters()]
    net, hist = train_epinet(toy.records(), toy.latent_map(), toy.base_map(), net=net, seed=seed, steps=steps)
    unchanged = all(torch.equal(a, b) for a, b in zip(before, net.prior.parameters()))
    train = sample_posterior(net, toy.train_latents, toy.train_base, k=k, seed=seed)
    test = sample_posterior(net, toy.test_latents, toy.test_base, k=k, seed=seed)
    ood = toy.test_shift > 2.0
    q1, q3 = np.quantile(test.samples, [0.25, 0.75], axis=0)
    report = iqr_calibration(test.samples.mean(axis=0), toy.test_y, q3 - q1)
    return ShiftRun(
        unchanged,
        float(np.median(train.samples.std(axis=0))),
        float(np.median(test.samples.std(axis=0)[ood])),
        report,
        hist.losses,
    )


def iqr_direction_holds(report):
    rates = report.occupied_rates
    return rates[0] >= rates[-1]
