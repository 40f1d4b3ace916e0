"""Affinity heads on frozen features, then epinet uncertainty under a distribution shift."""

# %% Continuous affinities in several assays with their own offsets
import numpy as np
from scipy.stats import pearsonr

from coarsebind.affinity import AffinityConfig, AffinityModel, predict_batch, synthetic_affinity_data, train_affinity
from coarsebind.epinet import Epinet, EpinetConfig, iqr_calibration, make_shift_toy, sample_posterior, train_epinet

data = synthetic_affinity_data(n_assays=6, per_assay=10, seed=0)
held = {r.assay_id for r in data.records[-10:]}
train_recs = [r for r in data.records if r.assay_id not in held]
test_recs = [r for r in data.records if r.assay_id in held]
model = AffinityModel(AffinityConfig(n_layers=1, seed=0))
model, hist = train_affinity(train_recs, data.features, model, seed=0, steps=200, learning_rate=3e-3)
_, y_hat, _ = predict_batch(model, [data.features[r.complex_id] for r in test_recs])
print(f"held-out assay: Pearson r = {pearsonr(y_hat, [r.value for r in test_recs])[0]:.2f}")

# %% An epinet on a toy problem whose test points drift away from the training cloud
toy = make_shift_toy(seed=0)
cfg = EpinetConfig(hidden=(64,), seed=0)
net, _ = train_epinet(toy.records(), toy.latent_map(), toy.base_map(), Epinet(8, cfg), cfg, seed=0, steps=1000)
post = sample_posterior(net, toy.test_latents, toy.test_base, k=500, seed=0)
spread = post.samples.std(axis=0)
for lo, hi in [(0, 1), (1, 2), (2, 3)]:
    sel = (toy.test_shift >= lo) & (toy.test_shift < hi)
    err = np.abs(post.samples.mean(axis=0) - toy.test_y)[sel].mean()
    print(f"shift {lo}-{hi}: sample std {np.median(spread[sel]):.2f}, abs error {err:.2f}")

# %% Wider interquartile ranges should mean fewer predictions within 1 log unit
q1, q3 = np.quantile(post.samples, [0.25, 0.75], axis=0)
report = iqr_calibration(post.samples.mean(axis=0), toy.test_y, q3 - q1)
print("IQR bins:", np.round(report.bin_edges, 2), "success:", report.success_rate)
