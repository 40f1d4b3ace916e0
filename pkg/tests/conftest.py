import warnings

import numpy as np
import pytest

from coarsebind.complexmodel import SyntheticGenConfig, generate_synthetic_complex
from coarsebind.errors import CoarseBindWarning


@pytest.fixture
def small_complex():
    return generate_synthetic_complex(SyntheticGenConfig(n_ligand=5, n_protein=20, seed=3))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(autouse=True)
def _quiet_package_warnings():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", CoarseBindWarning)
        yield


def random_rotation(rng):
    q, r = np.linalg.qr(rng.standard_normal((3, 3)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


def random_distribution(rng, shape=(), n_bins=64):
    p = rng.random(shape + (n_bins,)) ** 3
    return p / p.sum(-1, keepdims=True)


def recover_pose(c, cfg):
    """True coords -> one-hot distogram -> pose; chirality-blind ligand RMSD of the best sample."""
    from coarsebind.complexmodel import distance_matrix
    from coarsebind.distogram import delta_distogram
    from coarsebind.metrics import ligand_rmsd
    from coarsebind.posegen import generate_pose

    d = delta_distogram(distance_matrix(c.coords), [t.kind for t in c.tokens])
    ref, samples, best = generate_pose(d, cfg)
    idx = list(ref.token_indices)
    n_lig = len(ref.ligand)
    rmsd = ligand_rmsd(samples[best].coords, c.coords[idx], list(range(n_lig)),
                       list(range(n_lig, len(idx))), chirality_blind=True)
    return rmsd, ref, samples, best
