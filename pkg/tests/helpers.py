"""Shared builders for tracker-level tests."""

import numpy as np

from vavit.core import GaussianBelief
from vavit.sim import make_synthetic_mapping
from vavit.tracker import AudioObservation, PersonTrack, VisualObservation


def random_spd(rng, d, scale=1.0):
    a = rng.normal(size=(d, d))
    return scale * (a @ a.T + d * np.eye(d))


def make_track(rng, track_id=1, d_app=8, cov_scale=20.0):
    mean = np.array([
        rng.uniform(100.0, 1800.0),
        rng.uniform(100.0, 1100.0),
        rng.uniform(50.0, 120.0),
        rng.uniform(70.0, 160.0),
        rng.normal(0.0, 3.0),
        rng.normal(0.0, 3.0),
    ])
    return PersonTrack(
        id=track_id,
        belief=GaussianBelief(mean, random_spd(rng, 6, scale=cov_scale)),
        appearance=rng.dirichlet(np.ones(d_app)),
        dynamics_cov=random_spd(rng, 6, scale=2.0),
    )


def make_visual(rng, pos=None, size=None, d_app=8, phi_std=5.0, u=None):
    if pos is None:
        pos = [rng.uniform(0.0, 1920.0), rng.uniform(0.0, 1200.0)]
    if size is None:
        size = [rng.uniform(40.0, 200.0), rng.uniform(40.0, 200.0)]
    if u is None:
        u = rng.dirichlet(np.ones(d_app))
    return VisualObservation(
        v=np.array([pos[0], pos[1], size[0], size[1]]),
        Phi=phi_std**2 * np.eye(4),
        u=u,
    )


def small_mapping(seed=0, k_subbands=3, j_freqs=1, r_experts=2):
    return make_synthetic_mapping(
        k_subbands=k_subbands, j_freqs=j_freqs, r_experts=r_experts, seed=seed
    )


def make_audio(rng, mapping, k, x, noise_scale=1.0):
    from vavit.avmap import sample_feature

    _, g = sample_feature(mapping.subbands[k], np.asarray(x, float), rng, noise_scale)
    return AudioObservation(k=k, g=g)


def kalman_update(mean, cov, transition, process_cov, obs_matrix, obs_cov, y):
    """Plain covariance-form Kalman predict + update (independent oracle)."""
    m_pred = transition @ mean
    p_pred = transition @ cov @ transition.T + process_cov
    innov_cov = obs_matrix @ p_pred @ obs_matrix.T + obs_cov
    gain = p_pred @ obs_matrix.T @ np.linalg.inv(innov_cov)
    m_new = m_pred + gain @ (y - obs_matrix @ m_pred)
    closed = np.eye(mean.shape[0]) - gain @ obs_matrix
    p_new = closed @ p_pred @ closed.T + gain @ obs_cov @ gain.T
    return m_new, p_new
