"""Figure rendering for evaluation reports.

Every renderer writes a PNG next to the delimited report output. Rendering is
deterministic for fixed inputs so report bundles stay byte-reproducible.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

_DPI = 110


def save_ospa_series(series, path) -> None:
    series = np.asarray(series, dtype=float)
    fig, ax = plt.subplots(figsize=(7.0, 3.0))
    ax.plot(np.arange(series.shape[0]), series, lw=1.0, color="tab:blue")
    ax.set_xlabel("frame")
    ax.set_ylabel("OSPA-T")
    ax.set_title(f"OSPA-T per frame (mean {series.mean():.2f})" if series.size else "OSPA-T per frame")
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)


def save_trajectories(gt_states, track_frames, image_rect, blind_strips, path) -> None:
    """Ground-truth paths (solid) against estimated track paths (dashed)."""
    fig, ax = plt.subplots(figsize=(7.0, 4.6))
    width, height = image_rect
    for lo, hi in blind_strips:
        ax.axvspan(lo, hi, color="0.85", zorder=0)
    gt_states = np.asarray(gt_states, dtype=float)
    for i in range(gt_states.shape[1]):
        ax.plot(gt_states[:, i, 0], gt_states[:, i, 1], lw=1.4, label=f"gt {i}")
    paths = {}
    for frame in track_frames:
        for rec in frame:
            paths.setdefault(rec["id"], []).append((rec["mu"][0], rec["mu"][1]))
    for tid in sorted(paths):
        arr = np.asarray(paths[tid])
        ax.plot(arr[:, 0], arr[:, 1], "--", lw=1.0, label=f"track {tid}")
    ax.set_xlim(0, width)
    ax.set_ylim(height, 0)
    ax.set_xlabel("x (px)")
    ax.set_ylabel("y (px)")
    ax.set_title("trajectories")
    if gt_states.shape[1] + len(paths) <= 10:
        ax.legend(fontsize=7, ncol=2)
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)


def save_diarization(gt_speaking, track_frames, path) -> None:
    """Speaking timelines: ground truth persons above, tracker output below."""
    gt_speaking = np.asarray(gt_speaking, dtype=bool)
    t_total, n_persons = gt_speaking.shape if gt_speaking.size else (len(track_frames), 0)
    est = {}
    for t, frame in enumerate(track_frames):
        for rec in frame:
            est.setdefault(rec["id"], np.zeros(len(track_frames), dtype=bool))[t] = bool(
                rec.get("speaking", False)
            )
    rows = []
    labels = []
    for i in range(n_persons):
        rows.append(gt_speaking[:, i])
        labels.append(f"gt {i}")
    for tid in sorted(est):
        rows.append(est[tid])
        labels.append(f"track {tid}")
    fig, ax = plt.subplots(figsize=(7.0, 0.4 * max(len(rows), 1) + 1.2))
    for row_idx, row in enumerate(rows):
        active = np.flatnonzero(row)
        if active.size:
            ax.scatter(active, np.full(active.size, row_idx), marker="|", s=40,
                       color="tab:green" if labels[row_idx].startswith("gt") else "tab:red")
    ax.set_yticks(range(len(rows)))
    ax.set_yticklabels(labels, fontsize=7)
    ax.set_xlim(0, max(t_total, 1))
    ax.set_xlabel("frame")
    ax.set_title("speaking activity")
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)


def render_report_figures(report, gt_states, gt_speaking, track_frames, image_rect,
                          blind_strips, stem) -> list:
    """Render the standard report figures next to `stem`; returns the paths."""
    paths = []
    ospa_path = f"{stem}_ospa.png"
    save_ospa_series(report["ospa_series"], ospa_path)
    paths.append(ospa_path)
    traj_path = f"{stem}_trajectories.png"
    save_trajectories(gt_states, track_frames, image_rect, blind_strips, traj_path)
    paths.append(traj_path)
    if np.asarray(gt_speaking).size and np.asarray(gt_speaking).any():
        diar_path = f"{stem}_diarization.png"
        save_diarization(gt_speaking, track_frames, diar_path)
        paths.append(diar_path)
    return paths
