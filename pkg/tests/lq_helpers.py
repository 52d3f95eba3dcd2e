import numpy as np

from deepteams.lq_core import DistributionSpec, LqTeamModel


def orthonormal_alpha(rng, n, z):
    """n x z impact factors with (1/n) alpha' alpha = I."""
    q, _ = np.linalg.qr(rng.standard_normal((n, z)))
    return np.sqrt(n) * q


def random_spd(rng, k, floor=0.1):
    m = rng.standard_normal((k, k))
    return m @ m.T / k + floor * np.eye(k)


def random_lq_model(rng, n, z, hx, hu, beta=0.9, couple=0.3):
    return LqTeamModel(
        n=n,
        A=0.5 * rng.standard_normal((hx, hx)),
        B=rng.standard_normal((hx, hu)),
        abar=tuple(couple * rng.standard_normal((hx, z * hx)) for _ in range(z)),
        bbar=tuple(couple * rng.standard_normal((hx, z * hu)) for _ in range(z)),
        Q=random_spd(rng, hx), R=random_spd(rng, hu),
        qbar=random_spd(rng, z * hx, 0.0), rbar=random_spd(rng, z * hu, 0.0),
        alpha=orthonormal_alpha(rng, n, z), beta=beta,
        noise=DistributionSpec.normal(np.zeros(hx), 0.05 * np.eye(hx)),
        initial=DistributionSpec.normal(np.ones(hx), 0.1 * np.eye(hx)),
    )
