"""Variational audio-visual multi-person tracker.

Per frame the tracker alternates closed-form coordinate updates: assignment
posteriors for visual detections (alpha) and audio sub-band features (beta),
a Gaussian state update per person fusing both modalities with the dynamic
prior, and an adaptive re-estimate of each person's process covariance. A
birth process promotes smooth sequences of clutter-assigned detections to new
tracks, and per-frame speaking activity falls out of the audio assignments.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .avmap import AudioMappingModel
from .core import (
    BOX_PROJECTION,
    LOG_2PI,
    POSITION_PROJECTION,
    SPD_EPS,
    STATE_DIM,
    TRANSITION,
    DynamicsModel,
    GaussianBelief,
    InputError,
    NumericError,
    bhattacharyya_coefficient,
    cholesky_spd,
    gaussian_logpdf,
    predict_belief,
    spd_project,
)

M_STEP_MODES = ("every-iteration", "per-frame", "off")


# ---------------------------------------------------------------------------
# Configuration and observation types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TrackerConfig:
    """All tracker knobs. Every field is echoed into run outputs.

    Volumes vol_v / vol_g / vol_h are the uniform-density supports of the
    clutter hypotheses; None means "derive": vol_v from the image and max_box,
    vol_g from the mapping model file.
    """

    image_rect: tuple = (1920.0, 1200.0)
    n_iter: int = 5
    vol_v: float | None = None
    vol_g: float | None = None
    vol_h: float = 1.0
    max_box: float = 400.0
    gamma: float = 0.25
    birth_window: int = 3
    birth_threshold: float = -110.0
    birth_gate: float = 60.0
    birth_prior_cov: float = 1e4
    lambda_app: float = 10.0
    appearance_rate: float = 0.1
    init_cov_scale: float = 1e6
    placeholder_box: tuple = (100.0, 100.0)
    dynamics_cov_init: tuple = (4.0, 4.0, 4.0, 4.0, 1.0, 1.0)
    fixed_n: int = 0
    spd_eps: float = SPD_EPS
    m_step_mode: str = "per-frame"
    pin_alpha: bool = False
    dormant_threshold: float = 0.1
    dormant_frames: int = 25

    def __post_init__(self):
        if len(self.image_rect) != 2 or min(self.image_rect) <= 0:
            raise InputError(f"image_rect must be two positive sizes, got {self.image_rect}")
        for name in (
            "vol_h", "max_box", "birth_gate", "birth_prior_cov", "lambda_app",
            "init_cov_scale", "spd_eps",
        ):
            if getattr(self, name) <= 0:
                raise InputError(f"{name} must be positive, got {getattr(self, name)}")
        for name in ("vol_v", "vol_g"):
            value = getattr(self, name)
            if value is not None and value <= 0:
                raise InputError(f"{name} must be positive, got {value}")
        if not 0.0 < self.gamma < 1.0:
            raise InputError(f"gamma must lie in (0, 1), got {self.gamma}")
        if self.n_iter < 1:
            raise InputError(f"n_iter must be >= 1, got {self.n_iter}")
        if self.birth_window < 1:
            raise InputError(f"birth_window must be >= 1, got {self.birth_window}")
        if not 0.0 <= self.appearance_rate <= 1.0:
            raise InputError(f"appearance_rate must lie in [0, 1], got {self.appearance_rate}")
        if self.fixed_n < 0:
            raise InputError(f"fixed_n must be >= 0, got {self.fixed_n}")
        if self.m_step_mode not in M_STEP_MODES:
            raise InputError(f"m_step_mode must be one of {M_STEP_MODES}, got {self.m_step_mode!r}")
        if len(self.dynamics_cov_init) != STATE_DIM or min(self.dynamics_cov_init) <= 0:
            raise InputError("dynamics_cov_init must be six positive variances")
        if self.dormant_threshold < 0 or self.dormant_frames < 1:
            raise InputError("dormant_threshold must be >= 0 and dormant_frames >= 1")

    def resolved_vol_v(self) -> float:
        if self.vol_v is not None:
            return self.vol_v
        return self.image_rect[0] * self.image_rect[1] * self.max_box**2


def resolve_vol_g(config: TrackerConfig, mapping: AudioMappingModel | None) -> float:
    """Clutter support volume for audio features: config overrides the model file."""
    if config.vol_g is not None:
        return config.vol_g
    if mapping is not None and mapping.vol_g is not None:
        return mapping.vol_g
    raise InputError("vol_g is not set in the config and the mapping carries none")


@dataclass(frozen=True, eq=False)
class VisualObservation:
    """A detected bounding box: geometry v, measurement covariance, descriptor u."""

    v: np.ndarray    # (4,) center x, center y, width, height
    Phi: np.ndarray  # (4, 4) SPD
    u: np.ndarray    # (d,) appearance descriptor on the simplex

    def __post_init__(self):
        object.__setattr__(self, "v", np.asarray(self.v, dtype=float))
        object.__setattr__(self, "Phi", np.asarray(self.Phi, dtype=float))
        object.__setattr__(self, "u", np.asarray(self.u, dtype=float))
        if self.v.shape != (4,) or self.Phi.shape != (4, 4) or self.u.ndim != 1:
            raise InputError(
                f"bad observation shapes: v {self.v.shape}, Phi {self.Phi.shape}, u {self.u.shape}"
            )


@dataclass(frozen=True, eq=False)
class AudioObservation:
    """One active sub-band: its index and the inter-channel feature vector."""

    k: int
    g: np.ndarray  # (2J,)

    def __post_init__(self):
        object.__setattr__(self, "g", np.asarray(self.g, dtype=float))
        if self.k < 0 or self.g.ndim != 1:
            raise InputError(f"bad audio observation: k={self.k}, g shape {self.g.shape}")


@dataclass(frozen=True, eq=False)
class FrameObservations:
    """Everything observed in one frame; either modality may be absent."""

    visuals: tuple = ()
    audios: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "visuals", tuple(self.visuals))
        object.__setattr__(self, "audios", tuple(self.audios))
        ks = [a.k for a in self.audios]
        if len(set(ks)) != len(ks):
            raise InputError(f"duplicate sub-band indices in frame: {sorted(ks)}")

    def validate_subbands(self, k_total: int) -> None:
        bad = [a.k for a in self.audios if a.k >= k_total]
        if bad:
            raise InputError(f"sub-band index {bad[0]} out of range [0, {k_total})")


@dataclass(eq=False)
class PersonTrack:
    """Belief and bookkeeping of one tracked person."""

    id: int
    belief: GaussianBelief
    appearance: np.ndarray
    dynamics_cov: np.ndarray
    born_at: int = 0
    confirmed: bool = True
    dormant: bool = False
    low_resp_streak: int = 0

    def __post_init__(self):
        self.appearance = np.asarray(self.appearance, dtype=float)
        self.dynamics_cov = np.asarray(self.dynamics_cov, dtype=float)


@dataclass(frozen=True, eq=False)
class AssignmentPosterior:
    """Variational responsibilities: alpha (visual) and beta (audio).

    alpha has shape (M, N+1) with column 0 the clutter hypothesis; beta has
    shape (K_t, N+1, R) and its clutter slice carries the clutter mass spread
    uniformly over the region index, so it is independent of r by construction.
    """

    alpha: np.ndarray
    beta: np.ndarray

    def __post_init__(self):
        alpha = np.asarray(self.alpha, dtype=float)
        beta = np.asarray(self.beta, dtype=float)
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "beta", beta)
        if alpha.ndim != 2 or beta.ndim != 3:
            raise InputError(f"bad assignment shapes: alpha {alpha.shape}, beta {beta.shape}")
        for name, arr in (("alpha", alpha), ("beta", beta)):
            if arr.size and (arr.min() < -1e-12 or arr.max() > 1.0 + 1e-8):
                raise NumericError(f"{name} entries leave [0, 1]")
        if alpha.shape[0] and np.max(np.abs(alpha.sum(axis=1) - 1.0)) > 1e-8:
            raise NumericError("alpha rows do not sum to 1 within 1e-8")
        if beta.shape[0] and np.max(np.abs(beta.sum(axis=(1, 2)) - 1.0)) > 1e-8:
            raise NumericError("beta sub-band slices do not sum to 1 within 1e-8")


@dataclass(frozen=True, eq=False)
class TrackState:
    """Per-frame output snapshot of one track."""

    id: int
    mean: np.ndarray
    cov: np.ndarray
    speaking: bool
    dormant: bool


@dataclass(frozen=True, eq=False)
class FrameOutput:
    frame: int
    tracks: tuple
    assignments: AssignmentPosterior
    births: tuple


# ---------------------------------------------------------------------------
# Caches
# ---------------------------------------------------------------------------

class _ExpertCache:
    __slots__ = (
        "expert", "log_weight", "chol", "half_logdet", "lt_si", "fisher",
        "region_chol", "region_half_logdet",
    )

    def __init__(self, expert):
        self.expert = expert
        self.log_weight = math.log(expert.weight) if expert.weight > 0 else -np.inf
        self.chol = cholesky_spd(expert.residual_cov, "expert residual covariance")
        self.half_logdet = float(np.sum(np.log(np.diag(self.chol))))
        si = scipy.linalg.cho_solve((self.chol, True), np.eye(expert.feature_dim))
        self.lt_si = expert.gain.T @ si           # (2, 2J)
        self.fisher = self.lt_si @ expert.gain     # (2, 2)
        self.region_chol = cholesky_spd(expert.region_cov, "expert region covariance")
        self.region_half_logdet = float(np.sum(np.log(np.diag(self.region_chol))))


class _MappingCache:
    def __init__(self, mapping: AudioMappingModel):
        self.mapping = mapping
        self.subbands = [
            [_ExpertCache(e) for e in s.experts] for s in mapping.subbands
        ]


def _logpdf_chol(x, mean, chol, half_logdet) -> float:
    z = scipy.linalg.solve_triangular(chol, x - mean, lower=True)
    return -0.5 * (x.shape[0] * LOG_2PI + z @ z) - half_logdet


def _normalize_log(logits: np.ndarray) -> np.ndarray:
    """Softmax over a flat logit array using an order-independent exact sum."""
    top = np.max(logits)
    if not np.isfinite(top):
        raise NumericError("all assignment logits are -inf")
    p = np.exp(logits - top)
    return p / math.fsum(p)


def _log_region_posterior(experts, position) -> np.ndarray:
    """Log posterior over a sub-band's expert regions at a naive position.

    The normalized posterior keeps the person-vs-clutter comparison free of
    the region density scale; when every region underflows the priors are
    used, mirroring the degenerate branch of the mapping module.
    """
    raw = np.array([
        ec.log_weight
        + _logpdf_chol(position, ec.expert.region_mean, ec.region_chol, ec.region_half_logdet)
        for ec in experts
    ])
    top = np.max(raw)
    if not np.isfinite(top):
        raw = np.array([ec.log_weight for ec in experts])
        top = np.max(raw)
    return raw - (top + math.log(math.fsum(np.exp(raw - top))))


# ---------------------------------------------------------------------------
# E and M steps
# ---------------------------------------------------------------------------

def e_step_visual(tracks, visuals, config: TrackerConfig) -> np.ndarray:
    """Visual assignment posteriors alpha of shape (M, N+1); column 0 is clutter."""
    n_tracks = len(tracks)
    alpha = np.zeros((len(visuals), n_tracks + 1))
    if not visuals:
        return alpha
    if config.pin_alpha and n_tracks == 0:
        raise InputError("pin_alpha requires at least one track")
    log_eta = -math.log(n_tracks + 1)
    log_clutter = -math.log(config.resolved_vol_v()) - math.log(config.vol_h)
    for m, obs in enumerate(visuals):
        chol = cholesky_spd(obs.Phi, "visual measurement covariance")
        half_logdet = float(np.sum(np.log(np.diag(chol))))
        phi_inv = scipy.linalg.cho_solve((chol, True), np.eye(4))
        logits = np.empty(n_tracks + 1)
        logits[0] = -np.inf if config.pin_alpha else log_eta + log_clutter
        for n, track in enumerate(tracks):
            mean, cov = track.belief.mean, track.belief.cov
            logits[n + 1] = (
                log_eta
                + _logpdf_chol(obs.v, mean[:4], chol, half_logdet)
                - 0.5 * float(np.sum(phi_inv * cov[:4, :4]))
                - config.lambda_app * (1.0 - bhattacharyya_coefficient(obs.u, track.appearance))
            )
        alpha[m] = _normalize_log(logits)
    return alpha


def e_step_audio(
    tracks,
    audios,
    mapping: AudioMappingModel | None,
    prev_means,
    config: TrackerConfig,
    cache: _MappingCache | None = None,
) -> np.ndarray:
    """Audio assignment posteriors beta of shape (K_t, N+1, R).

    prev_means supplies the previous-frame posterior state means from which
    the naive position estimates (position + velocity) are formed for the
    region prior factor.
    """
    n_tracks = len(tracks)
    n_experts = mapping.n_experts if mapping is not None else 1
    beta = np.zeros((len(audios), n_tracks + 1, n_experts))
    if not audios:
        return beta
    if mapping is None:
        raise InputError("audio observations supplied but no mapping model is configured")
    if cache is None:
        cache = _MappingCache(mapping)
    log_rho = -math.log(n_tracks + 1)
    log_clutter = log_rho - math.log(resolve_vol_g(config, mapping))
    naive_pos = [pm[:2] + pm[4:6] for pm in prev_means]
    for j, obs in enumerate(audios):
        if obs.k >= mapping.n_subbands:
            raise InputError(f"sub-band index {obs.k} out of range [0, {mapping.n_subbands})")
        experts = cache.subbands[obs.k]
        logits = np.full((n_tracks, n_experts), -np.inf)
        for n, track in enumerate(tracks):
            mean, cov = track.belief.mean, track.belief.cov
            pos, pos_cov = mean[:2], cov[:2, :2]
            log_region = _log_region_posterior(experts, naive_pos[n])
            for r, ec in enumerate(experts):
                e = ec.expert
                logits[n, r] = (
                    log_rho
                    + log_region[r]
                    + _logpdf_chol(obs.g, e.gain @ pos + e.offset, ec.chol, ec.half_logdet)
                    - 0.5 * float(np.sum(ec.fisher * pos_cov))
                )
        top = max(float(np.max(logits, initial=-np.inf)), log_clutter)
        person_mass = np.exp(logits - top)
        clutter_mass = math.exp(log_clutter - top)
        total = math.fsum(person_mass.ravel()) + clutter_mass
        beta[j, 0, :] = clutter_mass / total / n_experts
        beta[j, 1:, :] = person_mass / total
    return beta


def e_step_state(
    tracks,
    alpha: np.ndarray,
    beta: np.ndarray,
    visuals,
    audios,
    mapping: AudioMappingModel | None,
    predicted,
    config: TrackerConfig,
    cache: _MappingCache | None = None,
):
    """Per-person Gaussian state update in information form.

    Fuses the responsibility-weighted audio and visual observation terms with
    the dynamic prior `predicted` (one Gaussian per track). Updates the
    beliefs of confirmed tracks in place and returns them.
    """
    if cache is None and mapping is not None and audios:
        cache = _MappingCache(mapping)
    phi_invs = []
    for obs in visuals:
        chol = cholesky_spd(obs.Phi, "visual measurement covariance")
        phi_invs.append(scipy.linalg.cho_solve((chol, True), np.eye(4)))
    eye = np.eye(STATE_DIM)
    for n, track in enumerate(tracks):
        if not track.confirmed:
            continue
        prior = predicted[n]
        prior_cov = 0.5 * (prior.cov + prior.cov.T)
        try:
            prior_prec = scipy.linalg.cho_solve(
                (cholesky_spd(prior_cov, "predicted covariance"), True), eye
            )
        except NumericError:
            prior_prec = scipy.linalg.cho_solve(
                (cholesky_spd(spd_project(prior_cov, config.spd_eps)), True), eye
            )
        prior_prec = 0.5 * (prior_prec + prior_prec.T)
        info = prior_prec.copy()
        vec = prior_prec @ prior.mean
        for m, obs in enumerate(visuals):
            w = alpha[m, n + 1]
            if w < 1e-15:
                continue
            info[:4, :4] += w * phi_invs[m]
            vec[:4] += w * (phi_invs[m] @ obs.v)
        if audios:
            for j, obs in enumerate(audios):
                experts = cache.subbands[obs.k]
                for r, ec in enumerate(experts):
                    w = beta[j, n + 1, r]
                    if w < 1e-15:
                        continue
                    info[:2, :2] += w * ec.fisher
                    vec[:2] += w * (ec.lt_si @ (obs.g - ec.expert.offset))
        info = 0.5 * (info + info.T)
        try:
            factor = (cholesky_spd(info, "state information matrix"), True)
        except NumericError:
            factor = (cholesky_spd(spd_project(info, 1.0 / config.init_cov_scale)), True)
        cov = scipy.linalg.cho_solve(factor, eye)
        cov = spd_project(0.5 * (cov + cov.T), config.spd_eps)
        mean = scipy.linalg.cho_solve(factor, vec)
        track.belief = GaussianBelief(mean, cov)
    return [t.belief for t in tracks]


def m_step(prev_beliefs, updated_beliefs, eps: float = SPD_EPS):
    """Closed-form per-person process covariance update.

    Lambda = proj_SPD(Gamma_t - D Gamma_{t-1} D^T + e e^T) where e is the
    innovation of the posterior mean against the dynamics prediction.
    """
    out = []
    for prev, cur in zip(prev_beliefs, updated_beliefs):
        e = cur.mean - TRANSITION @ prev.mean
        raw = cur.cov - TRANSITION @ prev.cov @ TRANSITION.T + np.outer(e, e)
        out.append(spd_project(0.5 * (raw + raw.T), eps))
    return out


def update_appearance(h: np.ndarray, weights, features, rate: float) -> np.ndarray:
    """Exponential moving average of the appearance prototype on the simplex.

    The effective rate scales with the total responsibility so unmatched
    tracks keep their prototype untouched.
    """
    weights = np.asarray(weights, dtype=float)
    if len(features) == 0 or weights.size == 0:
        return h
    total = math.fsum(weights)
    if total <= 0.0:
        return h
    ubar = np.zeros_like(h)
    for w, u in zip(weights, features):
        ubar += w * np.asarray(u, dtype=float)
    ubar /= total
    rho = rate * min(1.0, total)
    mixed = (1.0 - rho) * h + rho * ubar
    return mixed / mixed.sum()


def diarize(beta: np.ndarray, k_active: int, gamma: float) -> np.ndarray:
    """Per-person speaking flags from audio responsibilities.

    A person speaks when the average (over active sub-bands) of their summed
    region responsibilities reaches gamma. No audio activity means nobody is
    flagged as speaking.
    """
    n_tracks = beta.shape[1] - 1
    if k_active == 0:
        return np.zeros(n_tracks, dtype=bool)
    scores = beta[:, 1:, :].sum(axis=(0, 2)) / k_active
    return scores >= gamma


# ---------------------------------------------------------------------------
# Birth process
# ---------------------------------------------------------------------------

def kalman_log_marginal(observations, obs_covs, transition, process_cov, obs_matrix,
                        prior_mean, prior_cov):
    """Exact Gaussian sequence marginal via the prediction-error decomposition.

    Runs a Kalman filter over the observation sequence and accumulates the log
    predictive densities. Returns (log marginal, final mean, final covariance);
    the final filtered state equals the smoother's terminal state.
    """
    transition = np.asarray(transition, dtype=float)
    process_cov = np.asarray(process_cov, dtype=float)
    obs_matrix = np.asarray(obs_matrix, dtype=float)
    mean = np.asarray(prior_mean, dtype=float).copy()
    cov = np.asarray(prior_cov, dtype=float).copy()
    dim = mean.shape[0]
    eye = np.eye(dim)
    loglik = 0.0
    for i, (y, rcov) in enumerate(zip(observations, obs_covs)):
        y = np.asarray(y, dtype=float)
        rcov = np.asarray(rcov, dtype=float)
        if i > 0:
            mean = transition @ mean
            cov = transition @ cov @ transition.T + process_cov
        innov_cov = obs_matrix @ cov @ obs_matrix.T + rcov
        predicted_obs = obs_matrix @ mean
        loglik += gaussian_logpdf(y, predicted_obs, innov_cov)
        gain = np.linalg.solve(innov_cov, obs_matrix @ cov).T
        mean = mean + gain @ (y - predicted_obs)
        closed = eye - gain @ obs_matrix
        cov = closed @ cov @ closed.T + gain @ rcov @ gain.T  # Joseph form
    return loglik, mean, 0.5 * (cov + cov.T)


def _lift_box(v: np.ndarray) -> np.ndarray:
    """Embed a bounding-box observation into the 6-D state with zero velocity."""
    return np.concatenate([v, np.zeros(2)])


def _birth_filter(seq, phis, dyn: DynamicsModel, prior_cov_scale: float):
    prior_mean = _lift_box(np.asarray(seq[-1], dtype=float))
    prior_cov = prior_cov_scale * np.eye(STATE_DIM)
    return kalman_log_marginal(
        seq, phis, dyn.transition, dyn.process_cov, BOX_PROJECTION, prior_mean, prior_cov
    )


def sequence_marginal_likelihood(seq, phis, dyn: DynamicsModel, prior_cov_scale: float) -> float:
    """Log marginal likelihood of a bounding-box sequence under the track model.

    The state prior is centered at the last observation (lifted to the 6-D
    state with zero velocity) with covariance prior_cov_scale * I.
    """
    if len(seq) != len(phis):
        raise InputError(f"sequence length {len(seq)} != covariance count {len(phis)}")
    if len(seq) < 2:
        raise InputError("sequence must span at least two frames")
    return _birth_filter(seq, phis, dyn, prior_cov_scale)[0]


def _nearest_within(position: np.ndarray, candidates, gate: float):
    """Closest observation by box center within the gate; ties pick the lower index."""
    best = None
    best_d = gate
    for obs in candidates:
        d = float(np.hypot(obs.v[0] - position[0], obs.v[1] - position[1]))
        if d < best_d or (best is None and d == best_d):
            best = obs
            best_d = d
    return best


# ---------------------------------------------------------------------------
# Tracker
# ---------------------------------------------------------------------------

class Tracker:
    """Stateful per-frame tracker. A single instance must not be stepped concurrently."""

    def __init__(self, config: TrackerConfig, mapping: AudioMappingModel | None = None):
        self.config = config
        self.mapping = mapping
        self._cache = _MappingCache(mapping) if mapping is not None else None
        self.frame = -1
        self.tracks: list[PersonTrack] = []
        self._pool = deque(maxlen=config.birth_window + 1)
        self._next_id = 1
        for _ in range(config.fixed_n):
            self.tracks.append(self._placeholder_track())

    def _placeholder_track(self) -> PersonTrack:
        cfg = self.config
        width, height = cfg.image_rect
        mean = np.array([
            width / 2.0, height / 2.0,
            cfg.placeholder_box[0], cfg.placeholder_box[1],
            0.0, 0.0,
        ])
        belief = GaussianBelief(mean, cfg.init_cov_scale * np.eye(STATE_DIM))
        track = PersonTrack(
            id=self._next_id,
            belief=belief,
            appearance=np.full(1, 1.0),  # replaced on first confirmation
            dynamics_cov=np.diag(cfg.dynamics_cov_init),
            born_at=0,
            confirmed=False,
        )
        self._next_id += 1
        return track

    def step(self, observations: FrameObservations) -> FrameOutput:
        """Run one frame: predict, iterate the E/M updates, diarize, scan births."""
        cfg = self.config
        self.frame += 1
        if self.mapping is not None:
            observations.validate_subbands(self.mapping.n_subbands)
        elif observations.audios:
            raise InputError("audio observations supplied but no mapping model is configured")
        visuals, audios = observations.visuals, observations.audios
        if visuals:
            # placeholder prototypes adopt the descriptor dimension lazily
            d_obs = visuals[0].u.shape[0]
            for track in self.tracks:
                if not track.confirmed and track.appearance.shape[0] != d_obs:
                    track.appearance = np.full(d_obs, 1.0 / d_obs)

        prev_beliefs = [t.belief for t in self.tracks]
        prev_means = [b.mean for b in prev_beliefs]

        for track in self.tracks:
            if track.confirmed:
                dyn = DynamicsModel(TRANSITION, track.dynamics_cov)
                track.belief = predict_belief(track.belief, dyn, cfg.spd_eps)

        n_tracks = len(self.tracks)
        n_experts = self.mapping.n_experts if self.mapping is not None else 1
        alpha = np.zeros((0, n_tracks + 1))
        beta = np.zeros((0, n_tracks + 1, n_experts))
        for _ in range(cfg.n_iter):
            alpha = e_step_visual(self.tracks, visuals, cfg)
            beta = e_step_audio(self.tracks, audios, self.mapping, prev_means, cfg, self._cache)
            predicted = [
                GaussianBelief(
                    TRANSITION @ prev_beliefs[n].mean,
                    spd_project(
                        TRANSITION @ prev_beliefs[n].cov @ TRANSITION.T + t.dynamics_cov,
                        cfg.spd_eps,
                    ),
                )
                if t.confirmed
                else t.belief
                for n, t in enumerate(self.tracks)
            ]
            e_step_state(
                self.tracks, alpha, beta, visuals, audios, self.mapping, predicted, cfg, self._cache
            )
            if cfg.m_step_mode == "every-iteration":
                self._apply_m_step(prev_beliefs)
        if cfg.m_step_mode == "per-frame":
            self._apply_m_step(prev_beliefs)

        if visuals:
            features = [o.u for o in visuals]
            for n, track in enumerate(self.tracks):
                if track.confirmed:
                    track.appearance = update_appearance(
                        track.appearance, alpha[:, n + 1], features, cfg.appearance_rate
                    )

        for n, track in enumerate(self.tracks):
            resp = float(alpha[:, n + 1].sum() + beta[:, n + 1, :].sum())
            track.low_resp_streak = track.low_resp_streak + 1 if resp < cfg.dormant_threshold else 0
            track.dormant = track.low_resp_streak >= cfg.dormant_frames

        speaking = diarize(beta, len(audios), cfg.gamma)
        assignments = AssignmentPosterior(alpha, beta)
        births = self._birth_scan(alpha, visuals)

        snapshots = tuple(
            TrackState(
                id=track.id,
                mean=track.belief.mean.copy(),
                cov=track.belief.cov.copy(),
                speaking=bool(speaking[n]) if n < speaking.shape[0] else False,
                dormant=track.dormant,
            )
            for n, track in enumerate(self.tracks)
        )
        return FrameOutput(self.frame, snapshots, assignments, tuple(births))

    def _apply_m_step(self, prev_beliefs):
        for n, track in enumerate(self.tracks):
            if not track.confirmed:
                continue
            track.dynamics_cov = m_step(
                [prev_beliefs[n]], [track.belief], self.config.spd_eps
            )[0]

    def _birth_scan(self, alpha, visuals):
        cfg = self.config
        clutter = []
        if len(visuals) and alpha.size:
            clutter = [visuals[m] for m in range(len(visuals)) if int(np.argmax(alpha[m])) == 0]
        elif len(visuals):
            clutter = list(visuals)
        self._pool.append(list(clutter))
        if len(self._pool) < cfg.birth_window + 1:
            return []
        frames = list(self._pool)
        dyn = DynamicsModel(TRANSITION, np.diag(cfg.dynamics_cov_init))
        candidates = []
        for idx, end_obs in enumerate(frames[-1]):
            chain = [end_obs]
            for earlier in reversed(frames[:-1]):
                match = _nearest_within(chain[-1].v[:2], earlier, cfg.birth_gate)
                if match is None:
                    chain = None
                    break
                chain.append(match)
            if chain is None:
                continue
            chain.reverse()
            loglik, mean, cov = _birth_filter(
                [o.v for o in chain], [o.Phi for o in chain], dyn, cfg.birth_prior_cov
            )
            candidates.append((loglik, idx, chain, mean, cov))
        candidates.sort(key=lambda c: (-c[0], c[1]))

        births = []
        consumed = set()
        for loglik, _idx, chain, mean, cov in candidates:
            if loglik <= cfg.birth_threshold:
                continue
            members = {id(o) for o in chain}
            if members & consumed:
                continue
            track = self._claim_track()
            if track is None:
                break
            track.belief = GaussianBelief(mean, spd_project(cov, cfg.spd_eps))
            track.appearance = chain[-1].u / chain[-1].u.sum()
            track.dynamics_cov = np.diag(cfg.dynamics_cov_init)
            track.born_at = self.frame
            track.confirmed = True
            track.low_resp_streak = 0
            track.dormant = False
            births.append(track.id)
            consumed |= members
            for bucket in self._pool:
                bucket[:] = [o for o in bucket if id(o) not in members]
        return births

    def _claim_track(self) -> PersonTrack | None:
        if self.config.fixed_n:
            for track in self.tracks:
                if not track.confirmed:
                    return track
            return None
        track = PersonTrack(
            id=self._next_id,
            belief=GaussianBelief(np.zeros(STATE_DIM), np.eye(STATE_DIM)),
            appearance=np.full(1, 1.0),
            dynamics_cov=np.diag(self.config.dynamics_cov_init),
            born_at=self.frame,
        )
        self._next_id += 1
        self.tracks.append(track)
        return track


def frame_record(output: FrameOutput) -> dict:
    """One-line JSON record of a frame's outputs, with deterministic field order."""
    return {
        "t": output.frame,
        "tracks": [
            {
                "id": t.id,
                "mu": t.mean.tolist(),
                "gamma": t.cov.tolist(),
                "speaking": t.speaking,
                "dormant": t.dormant,
            }
            for t in output.tracks
        ],
        "births": list(output.births),
    }
