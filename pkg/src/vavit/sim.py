"""Generative scenario simulator.

Produces ground-truth trajectories under the tracker's own linear-Gaussian
dynamics, intermittent speech scripts, and observation streams drawn from the
visual and audio observation models, with optional partial-field-of-view
masking that removes detections inside two lateral blind strips while audio
coverage stays full-width.

All randomness flows through per-frame substreams derived from (seed, stream,
frame), so masking one stream never perturbs another and identical configs
yield byte-identical scenario bundles.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import avmap
from .core import BOX_PROJECTION, InputError, TRANSITION
from .fileio import dataclass_to_dict, dump_json, load_json, read_jsonl, write_jsonl
from .tracker import AudioObservation, FrameObservations, VisualObservation

# Substream identifiers; values are part of the on-disk determinism contract.
_STREAM_INIT = 0
_STREAM_DYNAMICS = 1
_STREAM_SPEECH = 2
_STREAM_VISUAL = 3
_STREAM_AUDIO = 4
_STREAM_PAIRS = 5
_STREAM_MAPPING = 6


def _rng(seed: int, stream: int, index: int | None = None) -> np.random.Generator:
    entropy = (seed, stream) if index is None else (seed, stream, index)
    return np.random.default_rng(np.random.SeedSequence(entropy))


@dataclass(frozen=True)
class ScenarioConfig:
    """Everything a scenario needs; echoed verbatim into the bundle metadata."""

    n_persons: int = 3
    n_frames: int = 500
    image_rect: tuple = (1920.0, 1200.0)
    seed: int = 0
    # dynamics
    position_noise: float = 1.0
    size_noise: float = 0.05
    velocity_noise: float = 0.15
    initial_speed: float = 0.0
    initial_states: list | None = None
    box_size: tuple = (70.0, 100.0)
    box_size_jitter: float = 10.0
    # visual observations
    detection_prob: float = 0.95
    clutter_rate_visual: float = 1.0
    visual_noise: tuple = (5.0, 5.0, 5.0, 5.0)
    appearance_dim: int = 64
    prototype_concentration: float = 1.0
    observation_concentration: float = 600.0
    clutter_box_max: float = 400.0
    # speech script
    speech_mean_frames: int = 60
    silence_mean_frames: int = 60
    speech_min_frames: int = 5
    overlap_prob: float = 0.3
    # audio observations
    subband_count: int = 16
    subband_freqs: int = 8
    active_subbands: tuple = (8, 16)
    clutter_rate_audio: float = 0.05
    audio_noise_scale: float = 1.0
    mapping: dict | None = None
    # field of view
    fov: str = "full"
    strip_width: float = 768.0

    def __post_init__(self):
        if self.n_persons < 0 or self.n_frames < 0:
            raise InputError("n_persons and n_frames must be nonnegative")
        if len(self.image_rect) != 2 or min(self.image_rect) <= 0:
            raise InputError(f"image_rect must be two positive sizes, got {self.image_rect}")
        for name in ("detection_prob",):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise InputError(f"{name} must lie in [0, 1]")
        if not 0.0 <= self.overlap_prob <= 1.0:
            raise InputError("overlap_prob must lie in [0, 1]")
        if not 0.0 <= self.clutter_rate_audio <= 1.0:
            raise InputError("clutter_rate_audio must lie in [0, 1]")
        if self.clutter_rate_visual < 0:
            raise InputError("clutter_rate_visual must be nonnegative")
        if self.fov not in ("full", "partial"):
            raise InputError(f"fov must be 'full' or 'partial', got {self.fov!r}")
        if self.fov == "partial" and not 0 < self.strip_width <= self.image_rect[0]:
            raise InputError("strip_width must lie in (0, image width]")
        if self.speech_min_frames < 1 or self.speech_mean_frames < 1:
            raise InputError("speech segment lengths must be positive")
        if self.silence_mean_frames < 0:
            raise InputError("silence_mean_frames must be nonnegative")
        if len(self.active_subbands) != 2 or self.active_subbands[0] > self.active_subbands[1]:
            raise InputError("active_subbands must be an inclusive (low, high) range")
        if self.initial_states is not None and len(self.initial_states) != self.n_persons:
            raise InputError("initial_states must list one 6-vector per person")

    def blind_strips(self):
        """[(lo, hi)] intervals of image x hidden from the detector, or []."""
        if self.fov == "full":
            return []
        width = self.image_rect[0]
        margin = (width - self.strip_width) / 2.0
        return [(0.0, margin), (width - margin, width)]


@dataclass(eq=False)
class GroundTruth:
    """True per-frame states, speaking flags, and per-person appearance prototypes."""

    states: np.ndarray      # (T, N, 6)
    speaking: np.ndarray    # (T, N) bool
    prototypes: np.ndarray  # (N, d)


def _reflect(value: float, velocity: float, low: float, high: float):
    while value < low or value > high:
        if value < low:
            value = 2.0 * low - value
        else:
            value = 2.0 * high - value
        velocity = -velocity
    return value, velocity


def _speech_script(t_total, rng, others_speaking, config: ScenarioConfig) -> np.ndarray:
    """Alternating silent/speaking segments with geometric lengths.

    A pending speaking segment defers (with probability 1 - overlap_prob)
    while anyone already scripted is speaking at its start frame.
    """
    out = np.zeros(t_total, dtype=bool)
    always_on = config.silence_mean_frames == 0
    speaking = bool(always_on or rng.random() < 0.5)
    t = 0
    while t < t_total:
        if speaking:
            length = max(config.speech_min_frames, int(rng.geometric(1.0 / config.speech_mean_frames)))
            if (
                not always_on
                and others_speaking[t]
                and rng.random() > config.overlap_prob
            ):
                speaking = False
                continue
            out[t : t + length] = True
        else:
            length = max(1, int(rng.geometric(1.0 / max(config.silence_mean_frames, 1))))
        t += length
        speaking = always_on or not speaking
    return out


def generate_trajectories(config: ScenarioConfig) -> GroundTruth:
    """Sample ground-truth kinematics and speech activity for all persons."""
    t_total, n = config.n_frames, config.n_persons
    width, height = config.image_rect
    rng = _rng(config.seed, _STREAM_INIT)

    states = np.zeros((t_total, n, 6))
    if n and t_total:
        if config.initial_states is not None:
            init = np.asarray(config.initial_states, dtype=float)
            if init.shape != (n, 6):
                raise InputError(f"initial_states must have shape ({n}, 6)")
        else:
            init = np.zeros((n, 6))
            init[:, 0] = rng.uniform(0.1 * width, 0.9 * width, size=n)
            init[:, 1] = rng.uniform(0.1 * height, 0.9 * height, size=n)
            init[:, 2] = np.maximum(config.box_size[0] + rng.normal(0, config.box_size_jitter, n), 8.0)
            init[:, 3] = np.maximum(config.box_size[1] + rng.normal(0, config.box_size_jitter, n), 8.0)
            init[:, 4:6] = rng.normal(0.0, config.initial_speed, size=(n, 2)) if config.initial_speed else 0.0
        states[0] = init
        for t in range(1, t_total):
            rng_t = _rng(config.seed, _STREAM_DYNAMICS, t)
            s = states[t - 1] @ TRANSITION.T
            s[:, 0:2] += rng_t.normal(0.0, config.position_noise, size=(n, 2))
            s[:, 2:4] += rng_t.normal(0.0, config.size_noise, size=(n, 2))
            s[:, 4:6] += rng_t.normal(0.0, config.velocity_noise, size=(n, 2))
            for i in range(n):
                s[i, 0], s[i, 4] = _reflect(s[i, 0], s[i, 4], 0.0, width)
                s[i, 1], s[i, 5] = _reflect(s[i, 1], s[i, 5], 0.0, height)
            s[:, 2:4] = np.maximum(s[:, 2:4], 4.0)
            states[t] = s

    speaking = np.zeros((t_total, n), dtype=bool)
    others = np.zeros(t_total, dtype=bool)
    for i in range(n):
        script = _speech_script(t_total, _rng(config.seed, _STREAM_SPEECH, i), others, config)
        speaking[:, i] = script
        others |= script

    prototypes = np.zeros((n, config.appearance_dim))
    for i in range(n):
        proto_rng = _rng(config.seed, _STREAM_INIT, i + 1)
        prototypes[i] = proto_rng.dirichlet(
            np.full(config.appearance_dim, config.prototype_concentration)
        )
    return GroundTruth(states=states, speaking=speaking, prototypes=prototypes)


def _in_blind_strip(x: float, strips) -> bool:
    return any(lo <= x < hi for lo, hi in strips)


def render_visual(gt: GroundTruth, config: ScenarioConfig):
    """Per-frame visual observations: noisy detections plus uniform clutter.

    Detection draws are made for every person regardless of masking, so a
    partial-FOV run differs from the full-FOV run exactly by the observations
    whose centers fall inside the blind strips.
    """
    width, height = config.image_rect
    stds = np.asarray(config.visual_noise, dtype=float)
    phi = np.diag(stds**2)
    strips = config.blind_strips()
    d = config.appearance_dim
    frames = []
    for t in range(config.n_frames):
        rng_t = _rng(config.seed, _STREAM_VISUAL, t)
        candidates = []
        for i in range(config.n_persons):
            detected = rng_t.random() < config.detection_prob
            noise = rng_t.normal(0.0, 1.0, size=4) * stds
            u = rng_t.dirichlet(
                config.observation_concentration * gt.prototypes[i] + 1e-6
            )
            if detected:
                v = BOX_PROJECTION @ gt.states[t, i] + noise
                candidates.append(VisualObservation(v=v, Phi=phi, u=u))
        n_clutter = rng_t.poisson(config.clutter_rate_visual)
        for _ in range(n_clutter):
            v = np.array([
                rng_t.uniform(0.0, width),
                rng_t.uniform(0.0, height),
                rng_t.uniform(0.0, config.clutter_box_max),
                rng_t.uniform(0.0, config.clutter_box_max),
            ])
            u = rng_t.dirichlet(np.ones(d))
            candidates.append(VisualObservation(v=v, Phi=phi, u=u))
        kept = [o for o in candidates if not _in_blind_strip(o.v[0], strips)]
        order = rng_t.permutation(len(kept))
        frames.append([kept[j] for j in order])
    return frames


def render_audio(gt: GroundTruth, mapping, config: ScenarioConfig):
    """Per-frame audio observations from the mapping's generative model.

    Silent frames emit nothing. Active sub-bands pick a speaker uniformly and
    draw a feature from their expert mixture; a sub-band flips to clutter with
    probability clutter_rate_audio, drawing uniformly over the feature box.
    Audio coverage ignores the camera field of view.
    """
    if mapping is None:
        return [[] for _ in range(config.n_frames)]
    if mapping.n_subbands != config.subband_count:
        raise InputError(
            f"mapping has {mapping.n_subbands} sub-bands, scenario expects {config.subband_count}"
        )
    if mapping.feature_range is None:
        raise InputError("mapping carries no feature_range; cannot sample audio clutter")
    lo, hi = mapping.feature_range
    k_total = mapping.n_subbands
    frames = []
    for t in range(config.n_frames):
        rng_t = _rng(config.seed, _STREAM_AUDIO, t)
        speakers = np.flatnonzero(gt.speaking[t])
        if speakers.size == 0:
            frames.append([])
            continue
        low, high = config.active_subbands
        count = int(rng_t.integers(low, high + 1))
        count = max(0, min(count, k_total))
        ks = np.sort(rng_t.choice(k_total, size=count, replace=False))
        obs = []
        for k in ks:
            if rng_t.random() < config.clutter_rate_audio:
                g = rng_t.uniform(lo, hi)
            else:
                speaker = int(speakers[rng_t.integers(speakers.size)])
                x = gt.states[t, speaker, :2]
                _, g = avmap.sample_feature(
                    mapping.subbands[k], x, rng_t, config.audio_noise_scale
                )
            obs.append(AudioObservation(k=int(k), g=g))
        frames.append(obs)
    return frames


# ---------------------------------------------------------------------------
# Synthetic mappings and training pairs
# ---------------------------------------------------------------------------

def make_synthetic_mapping(
    k_subbands: int = 16,
    j_freqs: int = 8,
    r_experts: int = 3,
    image_rect: tuple = (1920.0, 1200.0),
    seed: int = 0,
    gain_scale: float = 0.01,
    offset_scale: float = 1.0,
    residual_std: float = 0.3,
) -> avmap.AudioMappingModel:
    """A random ground-truth mapping whose expert regions tile the image."""
    width, height = image_rect
    rng = _rng(seed, _STREAM_MAPPING)
    dim = 2 * j_freqs
    angles = 2.0 * math.pi * (np.arange(r_experts) + rng.uniform(0.0, 1.0)) / max(r_experts, 1)
    radius = 0.28 * min(width, height)
    region_means = np.stack([
        np.array([width / 2.0 + radius * math.cos(a), height / 2.0 + radius * math.sin(a)])
        for a in angles
    ])
    if r_experts == 1:
        region_means = np.array([[width / 2.0, height / 2.0]])
    region_cov = np.diag([(width / 4.0) ** 2, (height / 4.0) ** 2])
    subbands = []
    for _ in range(k_subbands):
        experts = []
        for r in range(r_experts):
            gain = rng.normal(0.0, gain_scale, size=(dim, 2))
            offset = rng.normal(0.0, offset_scale, size=dim)
            experts.append(
                avmap.AffineExpert(
                    weight=1.0 / r_experts,
                    region_mean=region_means[r],
                    region_cov=region_cov.copy(),
                    gain=gain,
                    offset=offset,
                    residual_cov=residual_std**2 * np.eye(dim),
                )
            )
        subbands.append(avmap.SubbandMapping(experts=tuple(experts), freqs_per_subband=j_freqs))
    lo = np.full(dim, np.inf)
    hi = np.full(dim, -np.inf)
    corners = [
        np.array([0.0, 0.0]), np.array([width, 0.0]),
        np.array([0.0, height]), np.array([width, height]),
    ]
    for s in subbands:
        for e in s.experts:
            for c in corners:
                pred = e.predict(c)
                lo = np.minimum(lo, pred - 4.0 * residual_std)
                hi = np.maximum(hi, pred + 4.0 * residual_std)
    span = np.maximum(hi - lo, 1e-9)
    return avmap.AudioMappingModel(
        subbands=subbands,
        mode="learned-mapping",
        vol_g=float(np.prod(span)),
        feature_range=np.stack([lo, hi]),
    )


def sample_training_pairs(
    mapping: avmap.AudioMappingModel,
    n_pairs: int,
    seed: int = 0,
    image_rect: tuple = (1920.0, 1200.0),
    noise_scale: float = 1.0,
):
    """Draw supervised (position, features) pairs from a mapping's generative model."""
    width, height = image_rect
    rng = _rng(seed, _STREAM_PAIRS)
    weights = np.array([e.weight for e in mapping.subbands[0].experts], dtype=float)
    weights = weights / weights.sum()
    pairs = []
    for _ in range(n_pairs):
        for _attempt in range(1000):
            r = int(rng.choice(weights.size, p=weights))
            expert = mapping.subbands[0].experts[r]
            x = rng.multivariate_normal(expert.region_mean, expert.region_cov)
            if 0.0 <= x[0] <= width and 0.0 <= x[1] <= height:
                break
        else:
            raise InputError("could not sample a training position inside the image")
        g = np.stack([
            avmap.sample_feature(sub, x, rng, noise_scale)[1] for sub in mapping.subbands
        ])
        pairs.append(avmap.TrainingPair(x=x, g=g))
    return pairs


def resolve_mapping(config: ScenarioConfig) -> avmap.AudioMappingModel | None:
    """Instantiate the mapping referenced by a scenario config (or None)."""
    spec = config.mapping
    if spec is None:
        return None
    if not isinstance(spec, dict) or "mode" not in spec:
        raise InputError("scenario mapping must be an object with a 'mode' field")
    mode = spec["mode"]
    known_by_mode = {
        "synthetic": {"mode", "R", "mapping_seed", "gain_scale", "offset_scale", "residual_std"},
        "doa-point": {"mode", "sigma"},
        "file": {"mode", "path"},
    }
    if mode not in known_by_mode:
        raise InputError(f"unknown mapping mode {mode!r}")
    unknown = sorted(set(spec) - known_by_mode[mode])
    if unknown:
        raise InputError(f"unknown mapping key(s): {', '.join(unknown)}")
    if mode == "synthetic":
        return make_synthetic_mapping(
            k_subbands=config.subband_count,
            j_freqs=config.subband_freqs,
            r_experts=spec.get("R", 3),
            image_rect=config.image_rect,
            seed=spec.get("mapping_seed", config.seed),
            gain_scale=spec.get("gain_scale", 0.01),
            offset_scale=spec.get("offset_scale", 1.0),
            residual_std=spec.get("residual_std", 0.3),
        )
    if mode == "doa-point":
        return avmap.doa_point_model(
            spec.get("sigma", 5.0), config.image_rect, k_subbands=config.subband_count
        )
    return avmap.load_mapping(spec["path"])


def simulate_scenario(config: ScenarioConfig):
    """Full scenario draw: (ground truth, visual frames, audio frames, mapping)."""
    gt = generate_trajectories(config)
    mapping = resolve_mapping(config)
    visual = render_visual(gt, config)
    audio = render_audio(gt, mapping, config)
    return gt, visual, audio, mapping


# ---------------------------------------------------------------------------
# Scenario bundle I/O
# ---------------------------------------------------------------------------

def write_scenario(out_dir, config: ScenarioConfig, gt: GroundTruth, visual, audio) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_jsonl(
        (
            {
                "t": t,
                "states": gt.states[t].tolist(),
                "speaking": [bool(x) for x in gt.speaking[t]],
            }
            for t in range(config.n_frames)
        ),
        out_dir / "gt.jsonl",
    )
    write_jsonl(
        (
            {
                "t": t,
                "observations": [
                    {"v": o.v.tolist(), "Phi": o.Phi.tolist(), "u": o.u.tolist()}
                    for o in visual[t]
                ],
            }
            for t in range(config.n_frames)
        ),
        out_dir / "visual.jsonl",
    )
    write_jsonl(
        (
            {
                "t": t,
                "observations": [{"k": o.k, "g": o.g.tolist()} for o in audio[t]],
            }
            for t in range(config.n_frames)
        ),
        out_dir / "audio.jsonl",
    )
    meta = {
        "config": dataclass_to_dict(config),
        "seed": config.seed,
        "n_frames": config.n_frames,
        "blind_strips": config.blind_strips(),
        "prototypes": gt.prototypes.tolist(),
    }
    dump_json(meta, out_dir / "scenario.meta.json")


def read_ground_truth(scenario_dir):
    """(states (T,N,6), speaking (T,N)) from a scenario bundle."""
    rows = read_jsonl(Path(scenario_dir) / "gt.jsonl")
    t_total = len(rows)
    if t_total == 0:
        return np.zeros((0, 0, 6)), np.zeros((0, 0), dtype=bool)
    n = len(rows[0]["states"])
    states = np.zeros((t_total, n, 6))
    speaking = np.zeros((t_total, n), dtype=bool)
    for row in rows:
        states[row["t"]] = np.asarray(row["states"], dtype=float).reshape(n, 6)
        speaking[row["t"]] = np.asarray(row["speaking"], dtype=bool).reshape(n)
    return states, speaking


def read_observations(scenario_dir, visual_only=False, audio_only=False):
    """Per-frame FrameObservations from a scenario bundle, checked for gaps."""
    scenario_dir = Path(scenario_dir)
    visual_rows = read_jsonl(scenario_dir / "visual.jsonl")
    audio_rows = read_jsonl(scenario_dir / "audio.jsonl")
    by_t_visual = {row["t"]: row for row in visual_rows}
    by_t_audio = {row["t"]: row for row in audio_rows}
    ts = sorted(set(by_t_visual) | set(by_t_audio))
    if ts and ts != list(range(ts[0], ts[0] + len(ts))):
        missing = sorted(set(range(ts[0], ts[-1] + 1)) - set(ts))
        raise InputError(f"frame index gap in scenario: missing t={missing[:5]}")
    frames = []
    for t in ts:
        visuals = []
        if not audio_only:
            for o in by_t_visual.get(t, {}).get("observations", []):
                visuals.append(VisualObservation(v=o["v"], Phi=o["Phi"], u=o["u"]))
        audios = []
        if not visual_only:
            for o in by_t_audio.get(t, {}).get("observations", []):
                audios.append(AudioObservation(k=o["k"], g=o["g"]))
        frames.append(FrameObservations(visuals=tuple(visuals), audios=tuple(audios)))
    return frames


def read_meta(scenario_dir) -> dict:
    return load_json(Path(scenario_dir) / "scenario.meta.json")
