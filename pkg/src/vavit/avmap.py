"""Audio-to-position mapping models.

Each frequency sub-band carries a mixture of R affine experts mapping a 2-D
source position to a 2J-dimensional inter-channel feature vector. Training
fits a full-covariance Gaussian mixture on the joint (position, feature)
vectors of one sub-band and converts every component into an affine expert by
conditioning. A degenerate single-expert "doa-point" variant covers setups
where audio arrives as projected direction-of-arrival points instead of
spectral features.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .core import (
    InputError,
    NumericError,
    cholesky_spd,
    gaussian_logpdf,
    gaussian_logpdf_batch,
    spd_project,
)

MODES = ("learned-mapping", "doa-point")


@dataclass(frozen=True, eq=False)
class AffineExpert:
    """One affine expert: g ~ N(gain @ x + offset, residual_cov) on its region.

    The region itself is Gaussian in position space: x ~ N(region_mean,
    region_cov) with prior probability `weight`.
    """

    weight: float
    region_mean: np.ndarray  # (2,)
    region_cov: np.ndarray   # (2, 2)
    gain: np.ndarray         # (2J, 2)
    offset: np.ndarray       # (2J,)
    residual_cov: np.ndarray  # (2J, 2J)

    def __post_init__(self):
        for name in ("region_mean", "region_cov", "gain", "offset", "residual_cov"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        if self.weight < 0.0:
            raise InputError(f"expert weight must be nonnegative, got {self.weight}")
        dim = self.gain.shape[0]
        if self.gain.shape != (dim, 2) or self.offset.shape != (dim,):
            raise InputError(f"bad affine shapes: gain {self.gain.shape}, offset {self.offset.shape}")
        if self.residual_cov.shape != (dim, dim):
            raise InputError(f"residual covariance must be {dim}x{dim}")
        if self.region_mean.shape != (2,) or self.region_cov.shape != (2, 2):
            raise InputError("region parameters must be 2-D")
        for name, mat in (("residual_cov", self.residual_cov), ("region_cov", self.region_cov)):
            scale = max(1.0, float(np.max(np.abs(mat))))
            if np.max(np.abs(mat - mat.T)) > 1e-8 * scale:
                raise InputError(f"{name} is not symmetric")
            if float(np.linalg.eigvalsh(mat)[0]) <= 0.0:
                raise NumericError(f"{name} is not positive definite")

    @property
    def feature_dim(self) -> int:
        return self.gain.shape[0]

    def predict(self, x) -> np.ndarray:
        return self.gain @ np.asarray(x, dtype=float) + self.offset


@dataclass(frozen=True, eq=False)
class SubbandMapping:
    """The R-expert mixture of one frequency sub-band."""

    experts: tuple
    freqs_per_subband: int  # J

    def __post_init__(self):
        object.__setattr__(self, "experts", tuple(self.experts))
        if len(self.experts) < 1:
            raise InputError("a sub-band needs at least one expert")
        dim = self.experts[0].feature_dim
        if dim != 2 * self.freqs_per_subband:
            raise InputError(
                f"feature dim {dim} inconsistent with J={self.freqs_per_subband}"
            )
        if any(e.feature_dim != dim for e in self.experts):
            raise InputError("experts of one sub-band must share the feature dimension")
        total = math.fsum(e.weight for e in self.experts)
        if abs(total - 1.0) > 1e-8:
            raise InputError(f"expert weights must sum to 1 within 1e-8, got {total}")

    @property
    def n_experts(self) -> int:
        return len(self.experts)

    @property
    def feature_dim(self) -> int:
        return self.experts[0].feature_dim


@dataclass(eq=False)
class AudioMappingModel:
    """All K sub-band mappings plus bookkeeping shared by the tracker and simulator."""

    subbands: list
    mode: str = "learned-mapping"
    sigma_doa: float | None = None
    vol_g: float | None = None
    feature_range: np.ndarray | None = None  # (2, 2J): per-dim min / max
    training_info: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.subbands = list(self.subbands)
        if self.mode not in MODES:
            raise InputError(f"mode must be one of {MODES}, got {self.mode!r}")
        if not self.subbands:
            raise InputError("model needs at least one sub-band")
        j = self.subbands[0].freqs_per_subband
        r = self.subbands[0].n_experts
        if any(s.freqs_per_subband != j or s.n_experts != r for s in self.subbands):
            raise InputError("all sub-bands must share J and R")
        if self.mode == "doa-point":
            if self.sigma_doa is None or self.sigma_doa <= 0.0:
                raise InputError("doa-point mode requires sigma_doa > 0")
        if self.feature_range is not None:
            self.feature_range = np.asarray(self.feature_range, dtype=float)
            if self.feature_range.shape != (2, self.feature_dim):
                raise InputError("feature_range must be a (2, 2J) min/max array")

    @property
    def n_subbands(self) -> int:
        return len(self.subbands)

    @property
    def freqs_per_subband(self) -> int:
        return self.subbands[0].freqs_per_subband

    @property
    def n_experts(self) -> int:
        return self.subbands[0].n_experts

    @property
    def feature_dim(self) -> int:
        return self.subbands[0].feature_dim


def affine_loglik(subband: SubbandMapping, g, x, r: int) -> float:
    """Log-likelihood of feature g under expert r of a sub-band at position x."""
    if not 0 <= r < subband.n_experts:
        raise InputError(f"expert index {r} out of range [0, {subband.n_experts})")
    expert = subband.experts[r]
    return gaussian_logpdf(g, expert.predict(x), expert.residual_cov)


def region_posterior(subband: SubbandMapping, x) -> np.ndarray:
    """Posterior over expert regions at position x, computed in log-space.

    Returns nonnegative weights summing to 1. When every region density
    underflows (x absurdly far from all regions) the prior weights are
    returned and a degeneracy warning is issued.
    """
    x = np.asarray(x, dtype=float)
    logits = np.empty(subband.n_experts)
    for r, expert in enumerate(subband.experts):
        logw = math.log(expert.weight) if expert.weight > 0.0 else -np.inf
        logits[r] = logw + gaussian_logpdf(x, expert.region_mean, expert.region_cov)
    top = np.max(logits)
    if not np.isfinite(top):
        warnings.warn("region posterior degenerate: all densities underflow", RuntimeWarning)
        priors = np.array([e.weight for e in subband.experts], dtype=float)
        return priors / priors.sum()
    p = np.exp(logits - top)
    total = math.fsum(p)
    if total == 0.0:
        warnings.warn("region posterior degenerate: all densities underflow", RuntimeWarning)
        priors = np.array([e.weight for e in subband.experts], dtype=float)
        return priors / priors.sum()
    return p / total


def forward_prediction(subband: SubbandMapping, x) -> np.ndarray:
    """Region-weighted mean feature prediction at position x."""
    weights = region_posterior(subband, x)
    out = np.zeros(subband.feature_dim)
    for w, expert in zip(weights, subband.experts):
        out += w * expert.predict(x)
    return out


def sample_feature(subband: SubbandMapping, x, rng, noise_scale: float = 1.0):
    """Draw (region index, feature vector) from the generative model at x."""
    weights = region_posterior(subband, x)
    r = int(rng.choice(subband.n_experts, p=weights / weights.sum()))
    expert = subband.experts[r]
    g = expert.predict(x)
    if noise_scale != 0.0:
        chol = cholesky_spd(expert.residual_cov)
        g = g + noise_scale * (chol @ rng.standard_normal(subband.feature_dim))
    return r, g


def doa_point_model(
    sigma: float,
    image_rect: tuple = (1920.0, 1200.0),
    k_subbands: int = 16,
) -> AudioMappingModel:
    """Degenerate mapping for 2-D direction-of-arrival points.

    Every sub-band carries a single identity expert with isotropic residual
    sigma^2 I, so the tracker's audio equations apply unchanged to DOA points.
    """
    if sigma <= 0.0:
        raise InputError(f"sigma must be positive, got {sigma}")
    width, height = float(image_rect[0]), float(image_rect[1])
    center = np.array([width / 2.0, height / 2.0])
    # flat region: peak density equals the uniform density 1/(W*H), so the
    # region factor cancels against the clutter support and the assignment
    # reduces to DOA likelihood versus uniform clutter
    two_pi = 2.0 * math.pi
    flat_cov = np.diag([width**2 / two_pi, height**2 / two_pi])
    expert = AffineExpert(
        weight=1.0,
        region_mean=center,
        region_cov=flat_cov,
        gain=np.eye(2),
        offset=np.zeros(2),
        residual_cov=sigma**2 * np.eye(2),
    )
    subband = SubbandMapping(experts=(expert,), freqs_per_subband=1)
    return AudioMappingModel(
        subbands=[subband] * k_subbands,
        mode="doa-point",
        sigma_doa=float(sigma),
        vol_g=width * height,
        feature_range=np.array([[0.0, 0.0], [width, height]]),
    )


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class TrainingPair:
    """One supervised example: source position x and per-sub-band features g."""

    x: np.ndarray  # (2,)
    g: np.ndarray  # (K, 2J)

    def __post_init__(self):
        object.__setattr__(self, "x", np.asarray(self.x, dtype=float))
        object.__setattr__(self, "g", np.asarray(self.g, dtype=float))
        if self.x.shape != (2,) or self.g.ndim != 2:
            raise InputError(f"bad pair shapes: x {self.x.shape}, g {self.g.shape}")
        if not (np.all(np.isfinite(self.x)) and np.all(np.isfinite(self.g))):
            raise InputError("training pair has non-finite entries")


_COLLAPSE_FLOOR = 1e-10


def _farthest_point_seeds(z: np.ndarray, r: int, rng) -> np.ndarray:
    """Deterministic farthest-point seeding: indices of r spread-out rows."""
    n = z.shape[0]
    idx = [int(rng.integers(n))]
    d2 = np.sum((z - z[idx[0]]) ** 2, axis=1)
    for _ in range(1, r):
        idx.append(int(np.argmax(d2)))
        d2 = np.minimum(d2, np.sum((z - z[idx[-1]]) ** 2, axis=1))
    return np.asarray(idx)


def _ensure_spd(cov: np.ndarray):
    """Symmetrize and, on collapse, floor the spectrum. Returns (cov, repaired)."""
    cov = 0.5 * (cov + cov.T)
    floor = _COLLAPSE_FLOOR * max(1.0, float(np.trace(cov)) / cov.shape[0])
    try:
        scipy.linalg.cholesky(cov, lower=True)
        return cov, 0
    except scipy.linalg.LinAlgError:
        return spd_project(cov, floor), 1


def _fit_joint_gmm(z: np.ndarray, r: int, rng, max_iter: int, tol: float):
    """Full-covariance GMM by EM with farthest-point initialization.

    Returns (weights, means, covs, loglik_trace, n_regularized). The data
    log-likelihood is non-decreasing across iterations except immediately
    after a covariance-collapse repair, which is counted in n_regularized.
    """
    n, d = z.shape
    seeds = _farthest_point_seeds(z, r, rng)
    centers = z[seeds]
    assign = np.argmin(
        np.sum((z[:, None, :] - centers[None, :, :]) ** 2, axis=2), axis=1
    )
    weights = np.empty(r)
    means = np.empty((r, d))
    covs = np.empty((r, d, d))
    n_regularized = 0
    pooled = np.atleast_2d(np.cov(z.T)) if n > 1 else np.eye(d)
    pooled, reg = _ensure_spd(pooled)
    n_regularized += reg
    for j in range(r):
        members = z[assign == j]
        weights[j] = max(len(members), 1) / n
        means[j] = members.mean(axis=0) if len(members) else centers[j]
        if len(members) > d:
            covs[j], reg = _ensure_spd(np.cov(members.T))
            n_regularized += reg
        else:
            covs[j] = pooled
    weights = weights / weights.sum()

    trace = []
    log_resp = np.empty((n, r))
    compare_from = 0  # first trace index eligible for the monotonicity check
    for it in range(max_iter):
        for j in range(r):
            logw = math.log(weights[j]) if weights[j] > 0 else -np.inf
            log_resp[:, j] = logw + gaussian_logpdf_batch(z, means[j], covs[j])
        top = log_resp.max(axis=1)
        norm = top + np.log(np.sum(np.exp(log_resp - top[:, None]), axis=1))
        ll = math.fsum(norm)
        trace.append(ll)
        if len(trace) - 1 > compare_from and ll - trace[-2] < -1e-9:
            raise NumericError(
                f"EM log-likelihood decreased by {trace[-2] - ll} at iteration {it}"
            )
        if len(trace) >= 2 and 0 <= ll - trace[-2] < tol * max(1.0, abs(ll)):
            break
        resp = np.exp(log_resp - norm[:, None])
        bulk = resp.sum(axis=0)
        regularized = False
        for j in range(r):
            if bulk[j] < 1e-10:
                # dead component: keep previous parameters, weight goes to zero
                weights[j] = 0.0
                n_regularized += 1
                regularized = True
                continue
            weights[j] = bulk[j] / n
            means[j] = resp[:, j] @ z / bulk[j]
            diff = z - means[j]
            covs[j] = (resp[:, j] * diff.T) @ diff / bulk[j]
            covs[j], reg = _ensure_spd(covs[j])
            if reg:
                n_regularized += 1
                regularized = True
        weights = weights / weights.sum()
        if regularized:
            compare_from = len(trace)
    return weights, means, covs, trace, n_regularized


def _component_to_expert(weight, mean, cov, j_freqs) -> AffineExpert:
    """Condition a joint (x, g) Gaussian component into an affine expert."""
    dim_g = 2 * j_freqs
    m_x, m_g = mean[:2], mean[2:]
    c_xx = cov[:2, :2]
    c_xg = cov[:2, 2:]
    c_gg = cov[2:, 2:]
    c_xx = spd_project(c_xx, 1e-9 * max(1.0, float(np.trace(c_xx)) / 2.0))
    gain = scipy.linalg.solve(c_xx, c_xg, assume_a="pos").T
    offset = m_g - gain @ m_x
    resid = c_gg - gain @ c_xg
    resid = spd_project(resid, 1e-9 * max(1.0, float(np.trace(c_gg)) / dim_g))
    return AffineExpert(
        weight=float(weight),
        region_mean=m_x,
        region_cov=c_xx,
        gain=gain,
        offset=offset,
        residual_cov=resid,
    )


def train_mapping(
    pairs,
    r_experts: int = 3,
    k_subbands: int | None = None,
    seed: int = 0,
    max_iter: int = 100,
    tol: float = 1e-7,
) -> AudioMappingModel:
    """Fit per-sub-band mixtures of affine experts from (position, feature) pairs.

    For every sub-band independently, an R-component full-covariance Gaussian
    mixture is fitted by EM on the joint (x; g_k) vectors and each component is
    converted into an affine expert by conditioning g on x.

    Parameters
    ----------
    pairs : iterable of TrainingPair (or (x, g) tuples)
    r_experts : number of affine experts per sub-band
    k_subbands : expected number of sub-bands (validated against the data)
    seed : seed for the deterministic initialization
    max_iter, tol : EM stopping rule (relative log-likelihood improvement)
    """
    pairs = [p if isinstance(p, TrainingPair) else TrainingPair(*p) for p in pairs]
    if r_experts < 1:
        raise InputError(f"r_experts must be >= 1, got {r_experts}")
    if len(pairs) < 10 * r_experts:
        raise InputError(
            f"need at least {10 * r_experts} pairs for R={r_experts}, got {len(pairs)}"
        )
    k = pairs[0].g.shape[0]
    dim_g = pairs[0].g.shape[1]
    if k_subbands is not None and k != k_subbands:
        raise InputError(f"pairs carry {k} sub-bands, expected {k_subbands}")
    if k < 1 or dim_g < 2 or dim_g % 2:
        raise InputError(f"bad feature layout: K={k}, 2J={dim_g}")
    if any(p.g.shape != (k, dim_g) for p in pairs):
        raise InputError("all pairs must share the (K, 2J) feature layout")
    j_freqs = dim_g // 2

    x = np.stack([p.x for p in pairs])
    g = np.stack([p.g for p in pairs])  # (N, K, 2J)

    subbands = []
    traces = []
    n_regularized = 0
    for ki in range(k):
        z = np.hstack([x, g[:, ki, :]])
        rng = np.random.default_rng(np.random.SeedSequence((seed, ki)))
        weights, means, covs, trace, reg = _fit_joint_gmm(z, r_experts, rng, max_iter, tol)
        n_regularized += reg
        experts = [
            _component_to_expert(weights[j], means[j], covs[j], j_freqs)
            for j in range(r_experts)
        ]
        total = math.fsum(e.weight for e in experts)
        experts = [
            AffineExpert(
                weight=e.weight / total,
                region_mean=e.region_mean,
                region_cov=e.region_cov,
                gain=e.gain,
                offset=e.offset,
                residual_cov=e.residual_cov,
            )
            for e in experts
        ]
        subbands.append(SubbandMapping(experts=tuple(experts), freqs_per_subband=j_freqs))
        traces.append(trace)

    flat = g.reshape(-1, dim_g)
    lo, hi = flat.min(axis=0), flat.max(axis=0)
    span = np.maximum(hi - lo, 1e-9)
    model = AudioMappingModel(
        subbands=subbands,
        mode="learned-mapping",
        vol_g=float(np.prod(span)),
        feature_range=np.stack([lo, hi]),
    )
    model.training_info = {
        "loglik": [t[-1] for t in traces],
        "loglik_trace": traces,
        "regularized": n_regularized,
    }
    return model


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

def mapping_to_dict(model: AudioMappingModel) -> dict:
    doc = {
        "mode": model.mode,
        "K": model.n_subbands,
        "J": model.freqs_per_subband,
        "R": model.n_experts,
    }
    if model.sigma_doa is not None:
        doc["sigma_doa"] = model.sigma_doa
    if model.vol_g is not None:
        doc["vol_g"] = model.vol_g
    if model.feature_range is not None:
        doc["feature_range"] = model.feature_range.tolist()
    doc["subbands"] = [
        {
            "experts": [
                {
                    "pi": e.weight,
                    "nu": e.region_mean.tolist(),
                    "Omega": e.region_cov.tolist(),
                    "L": e.gain.tolist(),
                    "l": e.offset.tolist(),
                    "Sigma": e.residual_cov.tolist(),
                }
                for e in s.experts
            ]
        }
        for s in model.subbands
    ]
    return doc


def mapping_from_dict(doc: dict) -> AudioMappingModel:
    known = {"mode", "K", "J", "R", "sigma_doa", "vol_g", "feature_range", "subbands"}
    unknown = set(doc) - known
    if unknown:
        raise InputError(f"unknown model field(s): {sorted(unknown)}")
    try:
        subbands = [
            SubbandMapping(
                experts=tuple(
                    AffineExpert(
                        weight=e["pi"],
                        region_mean=e["nu"],
                        region_cov=e["Omega"],
                        gain=e["L"],
                        offset=e["l"],
                        residual_cov=e["Sigma"],
                    )
                    for e in s["experts"]
                ),
                freqs_per_subband=doc["J"],
            )
            for s in doc["subbands"]
        ]
    except KeyError as exc:
        raise InputError(f"model document missing field {exc}") from exc
    model = AudioMappingModel(
        subbands=subbands,
        mode=doc["mode"],
        sigma_doa=doc.get("sigma_doa"),
        vol_g=doc.get("vol_g"),
        feature_range=doc.get("feature_range"),
    )
    if model.n_subbands != doc["K"] or model.n_experts != doc["R"]:
        raise InputError("model document K/R fields disagree with sub-band contents")
    return model


def save_mapping(model: AudioMappingModel, path) -> None:
    """Write the model as a self-describing JSON document.

    Floats are serialized with repr (shortest exact round-trip, at most 17
    significant digits), so save -> load -> save is byte-identical.
    """
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(mapping_to_dict(model), fh, indent=1)
        fh.write("\n")


def load_mapping(path) -> AudioMappingModel:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise InputError(f"model file {path} is not valid JSON: {exc}") from exc
    return mapping_from_dict(doc)
