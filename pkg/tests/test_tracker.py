import math

import numpy as np
import pytest
import scipy.stats

from helpers import (
    kalman_update,
    make_audio,
    make_track,
    make_visual,
    random_spd,
    small_mapping,
)
from vavit.core import (
    BOX_PROJECTION,
    POSITION_PROJECTION,
    TRANSITION,
    GaussianBelief,
    InputError,
    bhattacharyya_likelihood,
)
from vavit.avmap import doa_point_model
from vavit.tracker import (
    AssignmentPosterior,
    AudioObservation,
    FrameObservations,
    Tracker,
    TrackerConfig,
    diarize,
    e_step_audio,
    e_step_state,
    e_step_visual,
    m_step,
    update_appearance,
)


def base_config(**kw):
    return TrackerConfig(**kw)


# ---------------------------------------------------------------------------
# E-Z visual
# ---------------------------------------------------------------------------

class TestEStepVisual:
    def test_no_tracks_all_clutter(self):
        rng = np.random.default_rng(0)
        visuals = [make_visual(rng) for _ in range(3)]
        alpha = e_step_visual([], visuals, base_config())
        assert alpha.shape == (3, 1)
        assert np.array_equal(alpha, np.ones((3, 1)))

    def test_empty_frame(self):
        alpha = e_step_visual([make_track(np.random.default_rng(1))], [], base_config())
        assert alpha.shape == (0, 2)

    def test_peaked_observation_beats_clutter(self):
        rng = np.random.default_rng(2)
        track = make_track(rng)
        track.belief = GaussianBelief(track.belief.mean, 1e-2 * np.eye(6))
        obs = make_visual(
            rng,
            pos=track.belief.mean[:2],
            size=track.belief.mean[2:4],
            phi_std=1.0,
            u=track.appearance,
        )
        alpha = e_step_visual([track], [obs], base_config())
        assert alpha[0, 1] > 0.999999

    def test_symmetric_tracks_split_equally(self):
        rng = np.random.default_rng(3)
        appearance = rng.dirichlet(np.ones(8))
        tracks = []
        for i, dx in enumerate((-50.0, 50.0)):
            t = make_track(rng, track_id=i + 1)
            mean = np.array([960.0 + dx, 600.0, 80.0, 120.0, 0.0, 0.0])
            t.belief = GaussianBelief(mean, 25.0 * np.eye(6))
            t.appearance = appearance
            tracks.append(t)
        obs = make_visual(rng, pos=[960.0, 600.0], size=[80.0, 120.0], u=appearance)
        alpha = e_step_visual(tracks, [obs], base_config())
        assert alpha[0, 1] == pytest.approx(alpha[0, 2], rel=1e-10)

    def test_matches_direct_formula(self):
        rng = np.random.default_rng(4)
        cfg = base_config()
        tracks = [make_track(rng, track_id=i + 1) for i in range(3)]
        visuals = [make_visual(rng) for _ in range(4)]
        alpha = e_step_visual(tracks, visuals, cfg)
        vol_v = cfg.resolved_vol_v()
        for m, obs in enumerate(visuals):
            taus = [1.0 / vol_v / cfg.vol_h]
            for t in tracks:
                mu, cov = t.belief.mean, t.belief.cov
                phi_inv = np.linalg.inv(obs.Phi)
                tau = (
                    scipy.stats.multivariate_normal.pdf(obs.v, BOX_PROJECTION @ mu, obs.Phi)
                    * math.exp(
                        -0.5
                        * np.trace(BOX_PROJECTION.T @ phi_inv @ BOX_PROJECTION @ cov)
                    )
                    * bhattacharyya_likelihood(obs.u, t.appearance, cfg.lambda_app)
                )
                taus.append(tau)
            eta = 1.0 / (len(tracks) + 1)
            oracle = np.array(taus) * eta
            oracle /= oracle.sum()
            assert alpha[m] == pytest.approx(oracle, rel=1e-9, abs=1e-300)

    def test_rows_normalized_property(self):
        rng = np.random.default_rng(5)
        for _ in range(50):
            tracks = [make_track(rng, track_id=i + 1) for i in range(rng.integers(0, 4))]
            visuals = [make_visual(rng) for _ in range(rng.integers(0, 5))]
            alpha = e_step_visual(tracks, visuals, base_config())
            if alpha.shape[0]:
                assert np.max(np.abs(alpha.sum(axis=1) - 1.0)) < 1e-8

    def test_pin_alpha(self):
        rng = np.random.default_rng(6)
        track = make_track(rng)
        obs = make_visual(rng)
        alpha = e_step_visual([track], [obs], base_config(pin_alpha=True))
        assert alpha[0, 0] == 0.0
        assert alpha[0, 1] == pytest.approx(1.0)
        with pytest.raises(InputError):
            e_step_visual([], [obs], base_config(pin_alpha=True))


# ---------------------------------------------------------------------------
# E-Z audio
# ---------------------------------------------------------------------------

class TestEStepAudio:
    def test_no_audio_empty(self):
        rng = np.random.default_rng(10)
        mapping = small_mapping()
        tracks = [make_track(rng)]
        beta = e_step_audio(tracks, [], mapping, [t.belief.mean for t in tracks], base_config())
        assert beta.shape == (0, 2, 2)

    def test_generated_feature_recovers_expert(self):
        # feature drawn noiselessly from expert r at the track position:
        # the argmax over regions must find r
        mapping = small_mapping(seed=3, k_subbands=2, j_freqs=2, r_experts=3)
        cfg = base_config(vol_g=mapping.vol_g)
        hits = 0
        total = 0
        rng = np.random.default_rng(11)
        for r_true in range(3):
            expert = mapping.subbands[0].experts[r_true]
            for _ in range(5):
                x = expert.region_mean + rng.normal(0, 30.0, 2)
                track = make_track(rng)
                track.belief = GaussianBelief(
                    np.concatenate([x, [80.0, 120.0, 0.0, 0.0]]), 4.0 * np.eye(6)
                )
                g = expert.predict(x)
                beta = e_step_audio(
                    [track],
                    [AudioObservation(k=0, g=g)],
                    mapping,
                    [track.belief.mean],
                    cfg,
                )
                total += 1
                hits += int(np.argmax(beta[0, 1, :]) == r_true)
        assert hits == total

    def test_far_feature_goes_to_clutter(self):
        mapping = small_mapping(seed=4, k_subbands=2, j_freqs=1, r_experts=2)
        cfg = base_config(vol_g=mapping.vol_g)
        rng = np.random.default_rng(12)
        track = make_track(rng)
        lo, hi = mapping.feature_range
        g = hi + 50.0 * (hi - lo)  # far outside every expert's reach
        from vavit.tracker import AudioObservation

        beta = e_step_audio(
            [track], [AudioObservation(k=0, g=g)], mapping, [track.belief.mean], cfg
        )
        assert beta[0, 0, :].sum() > 0.5

    def test_matches_direct_formula(self):
        rng = np.random.default_rng(13)
        mapping = small_mapping(seed=5, k_subbands=3, j_freqs=1, r_experts=2)
        cfg = base_config(vol_g=mapping.vol_g)
        tracks = [make_track(rng, track_id=i + 1) for i in range(2)]
        prev_means = [t.belief.mean + rng.normal(0, 1, 6) for t in tracks]
        audios = [make_audio(rng, mapping, k, rng.uniform(200, 1700, 2)) for k in range(3)]
        beta = e_step_audio(tracks, audios, mapping, prev_means, cfg)
        rho = 1.0 / (len(tracks) + 1)
        for j, obs in enumerate(audios):
            sub = mapping.subbands[obs.k]
            numer = np.zeros((len(tracks), sub.n_experts))
            for n, t in enumerate(tracks):
                mu, cov = t.belief.mean, t.belief.cov
                x_pred = POSITION_PROJECTION @ mu
                naive = prev_means[n][:2] + prev_means[n][4:6]
                region = np.array([
                    e.weight
                    * scipy.stats.multivariate_normal.pdf(naive, e.region_mean, e.region_cov)
                    for e in sub.experts
                ])
                region /= region.sum()
                for r, e in enumerate(sub.experts):
                    si = np.linalg.inv(e.residual_cov)
                    kappa = (
                        scipy.stats.multivariate_normal.pdf(
                            obs.g, e.gain @ x_pred + e.offset, e.residual_cov
                        )
                        * math.exp(
                            -0.5
                            * np.trace(
                                POSITION_PROJECTION.T
                                @ e.gain.T
                                @ si
                                @ e.gain
                                @ POSITION_PROJECTION
                                @ cov
                            )
                        )
                        * region[r]
                    )
                    numer[n, r] = kappa * rho
            clutter = rho / mapping.vol_g
            total = numer.sum() + clutter
            assert beta[j, 1:, :] == pytest.approx(numer / total, rel=1e-9, abs=1e-300)
            assert beta[j, 0, :].sum() == pytest.approx(clutter / total, rel=1e-9)
            # clutter slice independent of the region index by construction
            assert np.ptp(beta[j, 0, :]) == 0.0

    def test_subband_out_of_range(self):
        rng = np.random.default_rng(14)
        mapping = small_mapping(seed=6)
        from vavit.tracker import AudioObservation

        with pytest.raises(InputError):
            e_step_audio(
                [make_track(rng)],
                [AudioObservation(k=5, g=np.zeros(2))],
                mapping,
                [np.zeros(6)],
                base_config(vol_g=1.0),
            )


# ---------------------------------------------------------------------------
# E-S / M steps
# ---------------------------------------------------------------------------

class TestEStepState:
    def test_prediction_only_when_no_observations(self):
        rng = np.random.default_rng(20)
        track = make_track(rng)
        predicted = GaussianBelief(
            TRANSITION @ track.belief.mean,
            TRANSITION @ track.belief.cov @ TRANSITION.T + track.dynamics_cov,
        )
        alpha = np.zeros((0, 2))
        beta = np.zeros((0, 2, 1))
        e_step_state([track], alpha, beta, [], [], None, [predicted], base_config())
        assert track.belief.mean == pytest.approx(predicted.mean, rel=1e-12)
        assert track.belief.cov == pytest.approx(predicted.cov, rel=1e-10)

    def test_visual_update_matches_kalman(self):
        rng = np.random.default_rng(21)
        for _ in range(20):
            track = make_track(rng)
            prev_mean = track.belief.mean.copy()
            prev_cov = track.belief.cov.copy()
            lam = random_spd(rng, 6, scale=2.0)
            obs = make_visual(rng)
            predicted = GaussianBelief(
                TRANSITION @ prev_mean, TRANSITION @ prev_cov @ TRANSITION.T + lam
            )
            alpha = np.array([[0.0, 1.0]])
            beta = np.zeros((0, 2, 1))
            e_step_state([track], alpha, beta, [obs], [], None, [predicted], base_config())
            m_ref, p_ref = kalman_update(
                prev_mean, prev_cov, TRANSITION, lam, BOX_PROJECTION, obs.Phi, obs.v
            )
            assert np.linalg.norm(track.belief.mean - m_ref) / np.linalg.norm(m_ref) < 1e-8
            assert np.linalg.norm(track.belief.cov - p_ref) / np.linalg.norm(p_ref) < 1e-8

    def test_audio_doa_update_matches_position_kalman(self):
        rng = np.random.default_rng(22)
        mapping = doa_point_model(5.0, k_subbands=4)
        cfg = base_config(vol_g=mapping.vol_g)
        from vavit.tracker import AudioObservation

        for _ in range(10):
            track = make_track(rng)
            prev_mean = track.belief.mean.copy()
            prev_cov = track.belief.cov.copy()
            lam = random_spd(rng, 6, scale=2.0)
            doa = prev_mean[:2] + rng.normal(0, 5.0, 2)
            predicted = GaussianBelief(
                TRANSITION @ prev_mean, TRANSITION @ prev_cov @ TRANSITION.T + lam
            )
            alpha = np.zeros((0, 2))
            beta = np.zeros((1, 2, 1))
            beta[0, 1, 0] = 1.0
            e_step_state(
                [track],
                alpha,
                beta,
                [],
                [AudioObservation(k=0, g=doa)],
                mapping,
                [predicted],
                cfg,
            )
            m_ref, p_ref = kalman_update(
                prev_mean, prev_cov, TRANSITION, lam, POSITION_PROJECTION,
                25.0 * np.eye(2), doa,
            )
            assert np.linalg.norm(track.belief.mean - m_ref) / np.linalg.norm(m_ref) < 1e-8
            assert np.linalg.norm(track.belief.cov - p_ref) / np.linalg.norm(p_ref) < 1e-8


class TestMStep:
    def test_stationary_case_floors_to_eps(self):
        rng = np.random.default_rng(30)
        prev = GaussianBelief(rng.normal(size=6), random_spd(rng, 6))
        cur = GaussianBelief(TRANSITION @ prev.mean, TRANSITION @ prev.cov @ TRANSITION.T)
        lam = m_step([prev], [cur], eps=1e-6)[0]
        assert np.allclose(lam, 1e-6 * np.eye(6), atol=1e-12)

    def test_rank_one_innovation(self):
        rng = np.random.default_rng(31)
        prev = GaussianBelief(rng.normal(size=6), random_spd(rng, 6))
        e = rng.normal(size=6)
        cur = GaussianBelief(
            TRANSITION @ prev.mean + e, TRANSITION @ prev.cov @ TRANSITION.T
        )
        lam = m_step([prev], [cur], eps=1e-6)[0]
        w, v = np.linalg.eigh(np.outer(e, e))
        expected = (v * np.maximum(w, 1e-6)) @ v.T
        assert np.allclose(lam, expected, atol=1e-9)

    def test_stationarity_by_finite_differences(self):
        # the returned process covariance is a stationary point of the
        # per-person dynamics objective when the raw solution is SPD
        rng = np.random.default_rng(32)

        def objective(lam, prev_cov, cur_cov, e):
            pred = TRANSITION @ prev_cov @ TRANSITION.T + lam
            target = np.outer(e, e) + cur_cov
            sign, logdet = np.linalg.slogdet(pred)
            return logdet + np.trace(np.linalg.solve(pred, target))

        for _ in range(20):
            prev_cov = random_spd(rng, 6, scale=1.0)
            bump = random_spd(rng, 6, scale=1.0)
            e = rng.normal(size=6)
            cur_cov = TRANSITION @ prev_cov @ TRANSITION.T + bump
            prev = GaussianBelief(rng.normal(size=6), prev_cov)
            cur = GaussianBelief(TRANSITION @ prev.mean + e, cur_cov)
            lam = m_step([prev], [cur], eps=1e-8)[0]
            h = 1e-5
            grad = np.zeros((6, 6))
            for i in range(6):
                for j in range(i, 6):
                    d = np.zeros((6, 6))
                    d[i, j] = d[j, i] = h
                    grad[i, j] = (
                        objective(lam + d, prev_cov, cur_cov, e)
                        - objective(lam - d, prev_cov, cur_cov, e)
                    ) / (2 * h)
            assert np.max(np.abs(grad)) < 1e-6


class TestAppearanceAndDiarization:
    def test_zero_rate_keeps_prototype(self):
        rng = np.random.default_rng(40)
        h = rng.dirichlet(np.ones(8))
        u = rng.dirichlet(np.ones(8))
        out = update_appearance(h, [1.0], [u], rate=0.0)
        assert np.array_equal(out, h)

    def test_full_rate_single_observation(self):
        rng = np.random.default_rng(41)
        h = rng.dirichlet(np.ones(8))
        u = rng.dirichlet(np.ones(8))
        out = update_appearance(h, [1.0], [u], rate=1.0)
        assert out == pytest.approx(u, rel=1e-12)

    def test_mixed_case_matches_direct_average(self):
        rng = np.random.default_rng(42)
        h = rng.dirichlet(np.ones(6))
        us = [rng.dirichlet(np.ones(6)) for _ in range(3)]
        ws = [0.2, 0.5, 0.1]
        out = update_appearance(h, ws, us, rate=0.3)
        total = sum(ws)
        ubar = sum(w * u for w, u in zip(ws, us)) / total
        rho = 0.3 * min(1.0, total)
        expected = (1 - rho) * h + rho * ubar
        expected /= expected.sum()
        assert out == pytest.approx(expected, rel=1e-12)

    def test_no_observations_keep_prototype(self):
        h = np.full(4, 0.25)
        assert np.array_equal(update_appearance(h, [], [], rate=0.5), h)

    def test_diarize_all_mass_on_one_person(self):
        beta = np.zeros((4, 3, 2))
        beta[:, 1, 0] = 1.0
        chi = diarize(beta, 4, gamma=1.0)
        assert chi.tolist() == [True, False]

    def test_diarize_no_audio(self):
        chi = diarize(np.zeros((0, 3, 2)), 0, gamma=0.2)
        assert chi.tolist() == [False, False]

    def test_diarize_threshold_arithmetic(self):
        beta = np.zeros((5, 3, 1))
        beta[:, 1, 0] = 0.6
        beta[:, 2, 0] = 0.4
        chi = diarize(beta, 5, gamma=0.5)
        assert chi.tolist() == [True, False]

    def test_diarize_monotone_in_gamma(self):
        rng = np.random.default_rng(43)
        raw = rng.uniform(size=(6, 4, 2))
        raw /= raw.sum(axis=(1, 2), keepdims=True)
        last = None
        for gamma in np.linspace(0.05, 0.95, 10):
            chi = diarize(raw, 6, gamma=float(gamma))
            if last is not None:
                assert np.all(chi <= last)  # raising gamma never turns 0 into 1
            last = chi


# ---------------------------------------------------------------------------
# Tracker.step level behavior
# ---------------------------------------------------------------------------

class TestTrackerStep:
    def test_init_default_empty(self):
        tracker = Tracker(base_config())
        assert tracker.tracks == []

    def test_init_fixed_n_placeholders(self):
        cfg = base_config(fixed_n=2, init_cov_scale=1e6)
        tracker = Tracker(cfg)
        assert len(tracker.tracks) == 2
        for track in tracker.tracks:
            assert track.belief.mean[:2] == pytest.approx([960.0, 600.0])
            assert track.belief.mean[4:6] == pytest.approx([0.0, 0.0])
            assert np.trace(track.belief.cov) == pytest.approx(6e6)
            assert not track.confirmed

    def test_invalid_config_names_field(self):
        with pytest.raises(InputError, match="gamma"):
            base_config(gamma=1.5)
        with pytest.raises(InputError, match="n_iter"):
            base_config(n_iter=0)

    def test_empty_stream_pure_prediction(self):
        cfg = base_config(m_step_mode="off")
        tracker = Tracker(cfg)
        rng = np.random.default_rng(50)
        track = make_track(rng)
        track.belief = GaussianBelief(
            np.array([500.0, 400.0, 80.0, 120.0, 3.0, -2.0]), 10.0 * np.eye(6)
        )
        track.dynamics_cov = np.diag([1.0, 1.0, 0.5, 0.5, 0.2, 0.2])
        tracker.tracks.append(track)
        means = [track.belief.mean.copy()]
        traces = [np.trace(track.belief.cov)]
        for _ in range(10):
            out = tracker.step(FrameObservations())
            means.append(out.tracks[0].mean.copy())
            traces.append(np.trace(out.tracks[0].cov))
        for i in range(1, len(means)):
            assert means[i][:2] == pytest.approx(means[i - 1][:2] + means[i - 1][4:6], rel=1e-9)
            assert traces[i] > traces[i - 1]

    def test_kalman_reduction_invariant(self):
        # one track, one observation per frame, clutter disabled, single
        # iteration, frozen process covariance: exactly a Kalman filter
        rng = np.random.default_rng(51)
        lam = np.diag([2.0, 2.0, 1.0, 1.0, 0.5, 0.5])
        cfg = base_config(n_iter=1, m_step_mode="off", pin_alpha=True)
        tracker = Tracker(cfg)
        track = make_track(rng)
        start_mean = np.array([800.0, 600.0, 80.0, 120.0, 2.0, 1.0])
        start_cov = 25.0 * np.eye(6)
        track.belief = GaussianBelief(start_mean.copy(), start_cov.copy())
        track.dynamics_cov = lam.copy()
        tracker.tracks.append(track)

        m_ref, p_ref = start_mean.copy(), start_cov.copy()
        state = start_mean.copy()
        for _ in range(40):
            state = TRANSITION @ state
            obs = make_visual(rng, pos=state[:2] + rng.normal(0, 3, 2), size=state[2:4])
            out = tracker.step(FrameObservations(visuals=(obs,)))
            m_ref, p_ref = kalman_update(
                m_ref, p_ref, TRANSITION, lam, BOX_PROJECTION, obs.Phi, obs.v
            )
            assert np.linalg.norm(out.tracks[0].mean - m_ref) / np.linalg.norm(m_ref) < 1e-8
            assert np.linalg.norm(out.tracks[0].cov - p_ref) / np.linalg.norm(p_ref) < 1e-8

    def test_modality_dropout_exact(self):
        # clutter-only audio responsibilities leave the state update identical
        # to a visual-only run
        rng = np.random.default_rng(52)
        mapping = small_mapping(seed=7)
        cfg = base_config(vol_g=mapping.vol_g)

        def run(audio_obs):
            tracker = Tracker(cfg, mapping)
            track = make_track(rng)
            track.belief = GaussianBelief(
                np.array([500.0, 500.0, 80.0, 120.0, 0.0, 0.0]), 25.0 * np.eye(6)
            )
            track.dynamics_cov = np.diag([4.0, 4.0, 1.0, 1.0, 1.0, 1.0])
            track.appearance = np.full(8, 0.125)
            tracker.tracks.append(track)
            obs = make_visual(rng=np.random.default_rng(99), pos=[505.0, 498.0], size=[82.0, 118.0], u=np.full(8, 0.125))
            out = tracker.step(FrameObservations(visuals=(obs,), audios=audio_obs))
            return out

        lo, hi = mapping.feature_range
        far = hi + 200.0 * (hi - lo)
        from vavit.tracker import AudioObservation

        with_clutter_audio = run((AudioObservation(k=0, g=far),))
        without_audio = run(())
        beta = with_clutter_audio.assignments.beta
        assert beta[0, 1:, :].sum() < 1e-12
        assert with_clutter_audio.tracks[0].mean == pytest.approx(
            without_audio.tracks[0].mean, abs=1e-9
        )
        assert with_clutter_audio.tracks[0].cov == pytest.approx(
            without_audio.tracks[0].cov, abs=1e-9
        )

    def test_normalization_and_spd_over_random_frames(self):
        rng = np.random.default_rng(53)
        mapping = small_mapping(seed=8)
        cfg = base_config(vol_g=mapping.vol_g)
        tracker = Tracker(cfg, mapping)
        for i in range(3):
            tracker.tracks.append(make_track(rng, track_id=i + 1, cov_scale=10.0))
        for _ in range(200):
            visuals = tuple(make_visual(rng) for _ in range(rng.integers(0, 4)))
            ks = rng.permutation(mapping.n_subbands)[: rng.integers(0, 3)]
            audios = tuple(
                make_audio(rng, mapping, int(k), rng.uniform(100, 1800, 2)) for k in ks
            )
            out = tracker.step(FrameObservations(visuals=visuals, audios=audios))
            alpha, beta = out.assignments.alpha, out.assignments.beta
            if alpha.shape[0]:
                assert np.max(np.abs(alpha.sum(axis=1) - 1.0)) < 1e-8
            if beta.shape[0]:
                assert np.max(np.abs(beta.sum(axis=(1, 2)) - 1.0)) < 1e-8
            for track in tracker.tracks:
                assert np.all(np.isfinite(track.belief.mean))
                assert np.linalg.eigvalsh(track.belief.cov)[0] > 0
                assert np.linalg.eigvalsh(track.dynamics_cov)[0] > 0

    def test_permutation_equivariance_bit_exact(self):
        def run(order):
            rng = np.random.default_rng(54)
            mapping = small_mapping(seed=9)
            cfg = base_config(vol_g=mapping.vol_g)
            tracker = Tracker(cfg, mapping)
            base = np.random.default_rng(7)
            tracks = [make_track(base, track_id=i + 1, cov_scale=8.0) for i in range(3)]
            for i in order:
                tracker.tracks.append(tracks[i])
            outputs = []
            for _ in range(15):
                visuals = tuple(make_visual(rng) for _ in range(2))
                audios = tuple(
                    make_audio(rng, mapping, k, rng.uniform(100, 1800, 2)) for k in range(2)
                )
                outputs.append(tracker.step(FrameObservations(visuals=visuals, audios=audios)))
            return outputs

        fwd = run([0, 1, 2])
        perm = run([2, 0, 1])
        for out_a, out_b in zip(fwd, perm):
            by_id_a = {t.id: t for t in out_a.tracks}
            by_id_b = {t.id: t for t in out_b.tracks}
            assert set(by_id_a) == set(by_id_b)
            for tid in by_id_a:
                assert np.array_equal(by_id_a[tid].mean, by_id_b[tid].mean)
                assert np.array_equal(by_id_a[tid].cov, by_id_b[tid].cov)
                assert by_id_a[tid].speaking == by_id_b[tid].speaking

    def test_dormant_flagging(self):
        cfg = base_config(dormant_frames=5, m_step_mode="off")
        tracker = Tracker(cfg)
        rng = np.random.default_rng(55)
        track = make_track(rng)
        tracker.tracks.append(track)
        flags = []
        for _ in range(7):
            out = tracker.step(FrameObservations())
            flags.append(out.tracks[0].dormant)
        assert flags == [False] * 4 + [True] * 3

    def test_audio_without_mapping_rejected(self):
        tracker = Tracker(base_config())
        from vavit.tracker import AudioObservation

        with pytest.raises(InputError):
            tracker.step(FrameObservations(audios=(AudioObservation(k=0, g=np.zeros(2)),)))

    def test_duplicate_subbands_rejected(self):
        from vavit.tracker import AudioObservation

        with pytest.raises(InputError):
            FrameObservations(
                audios=(
                    AudioObservation(k=1, g=np.zeros(2)),
                    AudioObservation(k=1, g=np.zeros(2)),
                )
            )


class TestAssignmentPosteriorType:
    def test_rejects_bad_rows(self):
        alpha = np.array([[0.5, 0.4]])
        beta = np.zeros((0, 2, 1))
        with pytest.raises(Exception):
            AssignmentPosterior(alpha, beta)
