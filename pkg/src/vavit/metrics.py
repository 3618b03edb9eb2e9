"""Tracking and diarization evaluation.

CLEAR-MOT events (false positives, misses, identity switches, MOTA, MT/ML),
the labeled optimal-sub-pattern-assignment distance for track sets (OSPA-T),
and a frame-based diarization error rate with a boundary collar.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .core import InputError, NumericError
from .fileio import dataclass_from_dict

_INVALID = 1e9


class UndefinedScoreError(NumericError):
    """A score's denominator is empty (no ground truth to score against)."""


@dataclass(frozen=True)
class MetricConfig:
    iou_gate: float = 0.1
    point_gate: float = 40.0
    blind_gate_factor: float = 2.0
    ospa_p: float = 1.0
    ospa_c: float = 100.0
    ospa_label_penalty: float = 25.0
    der_collar: int = 6

    def __post_init__(self):
        if not 0.0 < self.iou_gate <= 1.0:
            raise InputError(f"iou_gate must lie in (0, 1], got {self.iou_gate}")
        for name in ("point_gate", "blind_gate_factor", "ospa_c"):
            if getattr(self, name) <= 0:
                raise InputError(f"{name} must be positive, got {getattr(self, name)}")
        if self.ospa_p < 1:
            raise InputError(f"ospa_p must be >= 1, got {self.ospa_p}")
        if self.ospa_label_penalty < 0 or self.der_collar < 0:
            raise InputError("ospa_label_penalty and der_collar must be nonnegative")

    @classmethod
    def from_dict(cls, data: dict) -> "MetricConfig":
        return dataclass_from_dict(cls, data, "metrics")


@dataclass(eq=False)
class FrameEvents:
    """CLEAR-MOT bookkeeping of one frame."""

    t: int
    gt_ids: list
    matches: list           # (gt_id, est_id, position distance)
    fp: int
    fn: int
    ids: int


@dataclass(eq=False)
class MotReport:
    mota: float
    fp: int
    fn: int
    ids: int
    mt: float
    ml: float
    gt_total: int
    n_gt_tracks: int
    position_rmse: float
    events: list = field(repr=False, default_factory=list)


def box_iou(a, b) -> float:
    """IoU of two center/size boxes (cx, cy, w, h)."""
    ax0, ay0 = a[0] - a[2] / 2.0, a[1] - a[3] / 2.0
    ax1, ay1 = a[0] + a[2] / 2.0, a[1] + a[3] / 2.0
    bx0, by0 = b[0] - b[2] / 2.0, b[1] - b[3] / 2.0
    bx1, by1 = b[0] + b[2] / 2.0, b[1] + b[3] / 2.0
    iw = max(0.0, min(ax1, bx1) - max(ax0, bx0))
    ih = max(0.0, min(ay1, by1) - max(ay0, by0))
    inter = iw * ih
    union = a[2] * a[3] + b[2] * b[3] - inter
    if union <= 0.0:
        return 0.0
    return inter / union


def _pair_cost(gt_vec, est_vec, config: MetricConfig, mode: str, blind_strips):
    """Normalized gating cost in [0, 1), or _INVALID outside the gate."""
    use_point = mode == "point"
    gate = config.point_gate
    if mode == "iou" and blind_strips and any(lo <= gt_vec[0] < hi for lo, hi in blind_strips):
        use_point = True
        gate = config.point_gate * config.blind_gate_factor
    if use_point:
        d = float(np.hypot(gt_vec[0] - est_vec[0], gt_vec[1] - est_vec[1]))
        return d / gate if d <= gate else _INVALID
    if len(gt_vec) < 4 or len(est_vec) < 4:
        raise InputError("IoU matching needs 4-D boxes; got point entries")
    iou = box_iou(gt_vec, est_vec)
    return 1.0 - iou if iou >= config.iou_gate else _INVALID


def match_frame(
    gt_frame,
    est_frame,
    config: MetricConfig,
    prev_matching: dict | None = None,
    t: int = 0,
    mode: str = "iou",
    blind_strips=(),
):
    """One frame of CLEAR-MOT matching.

    Persistent pairs from prev_matching (the last known est partner per ground
    truth id) are kept while still inside the gate; the remainder is matched
    by optimal assignment. Returns (matching dict gt_id -> est_id, FrameEvents).
    """
    prev_matching = prev_matching or {}
    gt_ids = [g for g, _ in gt_frame]
    est_by_id = {e: vec for e, vec in est_frame}
    gt_by_id = {g: vec for g, vec in gt_frame}
    if len(est_by_id) != len(est_frame):
        raise InputError("duplicate estimate ids within a frame")
    if len(gt_by_id) != len(gt_frame):
        raise InputError("duplicate ground-truth ids within a frame")

    matching = {}
    used_est = set()
    for g, vec in gt_frame:
        partner = prev_matching.get(g)
        if partner is None or partner not in est_by_id or partner in used_est:
            continue
        cost = _pair_cost(vec, est_by_id[partner], config, mode, blind_strips)
        if cost < _INVALID:
            matching[g] = partner
            used_est.add(partner)

    free_gt = [g for g in gt_ids if g not in matching]
    free_est = [e for e in est_by_id if e not in used_est]
    if free_gt and free_est:
        cost = np.full((len(free_gt), len(free_est)), _INVALID)
        for i, g in enumerate(free_gt):
            for j, e in enumerate(free_est):
                cost[i, j] = _pair_cost(gt_by_id[g], est_by_id[e], config, mode, blind_strips)
        rows, cols = linear_sum_assignment(cost)
        for i, j in zip(rows, cols):
            if cost[i, j] < _INVALID:
                matching[free_gt[i]] = free_est[j]
                used_est.add(free_est[j])

    switches = 0
    matches = []
    for g, e in sorted(matching.items(), key=lambda kv: str(kv[0])):
        prev = prev_matching.get(g)
        if prev is not None and prev != e:
            switches += 1
        gv, ev = gt_by_id[g], est_by_id[e]
        matches.append((g, e, float(np.hypot(gv[0] - ev[0], gv[1] - ev[1]))))
    events = FrameEvents(
        t=t,
        gt_ids=gt_ids,
        matches=matches,
        fp=len(est_by_id) - len(used_est),
        fn=len(gt_ids) - len(matching),
        ids=switches,
    )
    return matching, events


def mota(events) -> MotReport:
    """Aggregate CLEAR-MOT events into MOTA, MT/ML and a position RMSE."""
    gt_total = sum(len(ev.gt_ids) for ev in events)
    if gt_total == 0:
        raise UndefinedScoreError("no ground-truth objects; MOTA is undefined")
    fp = sum(ev.fp for ev in events)
    fn = sum(ev.fn for ev in events)
    ids = sum(ev.ids for ev in events)
    present = {}
    covered = {}
    sq = []
    for ev in events:
        for g in ev.gt_ids:
            present[g] = present.get(g, 0) + 1
        for g, _e, dist in ev.matches:
            covered[g] = covered.get(g, 0) + 1
            sq.append(dist * dist)
    mt = ml = 0
    for g, n_present in present.items():
        coverage = covered.get(g, 0) / n_present
        if coverage > 0.8:
            mt += 1
        if coverage < 0.2:
            ml += 1
    n_tracks = len(present)
    return MotReport(
        mota=100.0 * (1.0 - (fp + fn + ids) / gt_total),
        fp=fp,
        fn=fn,
        ids=ids,
        mt=100.0 * mt / n_tracks,
        ml=100.0 * ml / n_tracks,
        gt_total=gt_total,
        n_gt_tracks=n_tracks,
        position_rmse=math.sqrt(np.mean(sq)) if sq else 0.0,
        events=list(events),
    )


def evaluate_mot(gt_frames, est_frames, config: MetricConfig, mode="iou", blind_strips=()):
    """Run CLEAR-MOT over aligned frame lists and aggregate."""
    if len(gt_frames) != len(est_frames):
        raise InputError(
            f"frame count mismatch: {len(gt_frames)} ground truth vs {len(est_frames)} estimates"
        )
    last_known = {}
    events = []
    for t, (gt_frame, est_frame) in enumerate(zip(gt_frames, est_frames)):
        matching, ev = match_frame(
            gt_frame, est_frame, config, last_known, t=t, mode=mode, blind_strips=blind_strips
        )
        last_known.update(matching)
        events.append(ev)
    return mota(events)


# ---------------------------------------------------------------------------
# OSPA-T
# ---------------------------------------------------------------------------

def global_track_alignment(gt_frames, est_frames, cutoff: float) -> dict:
    """One-time optimal correspondence from estimate ids to ground-truth ids.

    The pairwise cost accumulates the cutoff-saturated distance over frames
    where both tracks exist and the cutoff where exactly one does.
    """
    gt_ids = sorted({g for frame in gt_frames for g, _ in frame}, key=str)
    est_ids = sorted({e for frame in est_frames for e, _ in frame}, key=str)
    if not gt_ids or not est_ids:
        return {}
    cost = np.zeros((len(gt_ids), len(est_ids)))
    gi = {g: i for i, g in enumerate(gt_ids)}
    ei = {e: i for i, e in enumerate(est_ids)}
    for gt_frame, est_frame in zip(gt_frames, est_frames):
        g_here = {g: vec for g, vec in gt_frame}
        e_here = {e: vec for e, vec in est_frame}
        for g, i in gi.items():
            for e, j in ei.items():
                if g in g_here and e in e_here:
                    d = float(np.hypot(
                        g_here[g][0] - e_here[e][0], g_here[g][1] - e_here[e][1]
                    ))
                    cost[i, j] += min(cutoff, d)
                elif g in g_here or e in e_here:
                    cost[i, j] += cutoff
    rows, cols = linear_sum_assignment(cost)
    return {est_ids[j]: gt_ids[i] for i, j in zip(rows, cols)}


def ospa_t(gt_frames, est_frames, config: MetricConfig):
    """Labeled OSPA over a track-set pair: per-frame scores and their mean.

    Estimate labels are aligned to ground-truth labels once, globally; after
    that the per-frame base distance is min(c, ||x - y|| + label penalty) with
    the cardinality penalty c for unmatched points.
    """
    if len(gt_frames) != len(est_frames):
        raise InputError("OSPA-T needs aligned frame lists")
    c, p, pen = config.ospa_c, config.ospa_p, config.ospa_label_penalty
    relabel = global_track_alignment(gt_frames, est_frames, c)
    scores = np.zeros(len(gt_frames))
    for t, (gt_frame, est_frame) in enumerate(zip(gt_frames, est_frames)):
        x = [(g, np.asarray(vec, float)[:2]) for g, vec in gt_frame]
        y = [(relabel.get(e, ("unmatched", e)), np.asarray(vec, float)[:2]) for e, vec in est_frame]
        if not x and not y:
            scores[t] = 0.0
            continue
        if len(x) > len(y):
            x, y = y, x
        m, n = len(x), len(y)
        if m == 0:
            scores[t] = c
            continue
        dmat = np.empty((m, n))
        for i, (lx, px) in enumerate(x):
            for j, (ly, py) in enumerate(y):
                base = float(np.hypot(px[0] - py[0], px[1] - py[1]))
                if lx != ly:
                    base += pen
                dmat[i, j] = min(c, base) ** p
        rows, cols = linear_sum_assignment(dmat)
        total = dmat[rows, cols].sum() + (c**p) * (n - m)
        scores[t] = (total / n) ** (1.0 / p)
    return scores, float(scores.mean()) if len(scores) else 0.0


# ---------------------------------------------------------------------------
# Diarization error rate
# ---------------------------------------------------------------------------

def _collar_mask(gt_speech: dict, t_total: int, collar: int) -> np.ndarray:
    """True for frames scored: outside +-collar of any reference boundary."""
    scored = np.ones(t_total, dtype=bool)
    if collar == 0:
        return scored
    for activity in gt_speech.values():
        activity = np.asarray(activity, dtype=bool)
        padded = np.concatenate([[False], activity, [False]])
        boundaries = np.flatnonzero(padded[1:] != padded[:-1])
        for b in boundaries:
            scored[max(0, b - collar): min(t_total, b + collar)] = False
    return scored


def der(gt_speech: dict, est_speech: dict, collar: int = 6) -> float:
    """Frame-based diarization error rate in percent.

    Inputs map person keys to boolean speaking arrays over the same frame
    range; person correspondence must already be fixed by track matching.
    Frames within +-collar of a reference segment boundary are excluded.
    """
    if not gt_speech:
        raise UndefinedScoreError("no reference speakers; DER is undefined")
    t_total = len(next(iter(gt_speech.values())))
    for key, arr in list(gt_speech.items()) + list(est_speech.items()):
        if len(arr) != t_total:
            raise InputError(f"speaking array of {key!r} has mismatched length")
    scored = _collar_mask(gt_speech, t_total, collar)
    gt_mat = {k: np.asarray(v, dtype=bool) for k, v in gt_speech.items()}
    est_mat = {k: np.asarray(v, dtype=bool) for k, v in est_speech.items()}
    shared = set(gt_mat) & set(est_mat)
    errors = 0
    denom = 0
    for t in np.flatnonzero(scored):
        n_ref = sum(int(v[t]) for v in gt_mat.values())
        n_sys = sum(int(v[t]) for v in est_mat.values())
        n_correct = sum(int(gt_mat[k][t] and est_mat[k][t]) for k in shared)
        errors += max(0, n_ref - n_sys) + max(0, n_sys - n_ref) + (min(n_ref, n_sys) - n_correct)
        denom += n_ref
    if denom == 0:
        raise UndefinedScoreError("no scored reference speech; DER is undefined")
    return 100.0 * errors / denom


# ---------------------------------------------------------------------------
# Full evaluation pipeline
# ---------------------------------------------------------------------------

def evaluate_tracking(
    gt_states: np.ndarray,
    gt_speaking: np.ndarray,
    track_frames,
    config: MetricConfig,
    blind_strips=(),
) -> dict:
    """Score a tracker run against a scenario's ground truth.

    gt_states is (T, N, 6); track_frames is a list (length T) of per-frame
    track records, each a dict with id, mu and speaking fields. Returns a
    report dict with MOT scores, the OSPA-T series, and DER (None when the
    scenario contains no speech).
    """
    t_total = gt_states.shape[0]
    if len(track_frames) != t_total:
        raise InputError(
            f"track output covers {len(track_frames)} frames, ground truth {t_total}"
        )
    n_persons = gt_states.shape[1]
    gt_boxes = [
        [(f"g{i}", gt_states[t, i, :4]) for i in range(n_persons)] for t in range(t_total)
    ]
    # dormant tracks are still propagated and reported, but no longer count as
    # active estimates
    est_boxes = [
        [
            (rec["id"], np.asarray(rec["mu"], float)[:4])
            for rec in frame
            if not rec.get("dormant", False)
        ]
        for frame in track_frames
    ]
    report_mot = evaluate_mot(
        gt_boxes, est_boxes, config, mode="iou", blind_strips=tuple(blind_strips)
    )
    ospa_series, ospa_mean = ospa_t(gt_boxes, est_boxes, config)

    der_value = None
    if n_persons and gt_speaking.any():
        alignment = global_track_alignment(gt_boxes, est_boxes, config.ospa_c)
        gt_speech = {f"g{i}": gt_speaking[:, i] for i in range(n_persons)}
        est_speech = {}
        for key in gt_speech:
            est_speech[key] = np.zeros(t_total, dtype=bool)
        for t, frame in enumerate(track_frames):
            for rec in frame:
                key = alignment.get(rec["id"])
                if key is None:
                    key = f"e{rec['id']}"
                    est_speech.setdefault(key, np.zeros(t_total, dtype=bool))
                est_speech[key][t] = bool(rec.get("speaking", False))
        try:
            der_value = der(gt_speech, est_speech, collar=config.der_collar)
        except UndefinedScoreError:
            der_value = None  # the collar excluded all reference speech

    return {
        "params": dataclass_to_jsonable(config),
        "frames": t_total,
        "gt_total": report_mot.gt_total,
        "mota": report_mot.mota,
        "fp": report_mot.fp,
        "fn": report_mot.fn,
        "ids": report_mot.ids,
        "mt": report_mot.mt,
        "ml": report_mot.ml,
        "position_rmse": report_mot.position_rmse,
        "ospa_mean": ospa_mean,
        "der": der_value,
        "ospa_series": ospa_series.tolist(),
        "per_frame": [
            {"t": ev.t, "fp": ev.fp, "fn": ev.fn, "ids": ev.ids} for ev in report_mot.events
        ],
    }


def dataclass_to_jsonable(obj) -> dict:
    import dataclasses

    return dataclasses.asdict(obj)


def report_csv_rows(report: dict):
    """Flat (t, ospa, fp, fn, ids) rows for plotting."""
    series = report["ospa_series"]
    for row, ospa in zip(report["per_frame"], series):
        yield row["t"], ospa, row["fp"], row["fn"], row["ids"]
