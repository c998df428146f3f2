import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from relspeaker.backend import CosineBackend
from relspeaker.evaluation import (IdentificationReport, Trial, compute_eer,
                                   compute_min_dcf, error_rate_curve,
                                   evaluate_identification, load_trials,
                                   make_trial_list, save_scores, save_trials,
                                   score_trials)


def brute_force_rates(scores, labels, threshold):
    """Quadratic-time miss/false-alarm rates at one threshold (accept if >= t)."""
    targets = [s for s, l in zip(scores, labels) if l == 1]
    nontargets = [s for s, l in zip(scores, labels) if l == 0]
    p_miss = sum(1 for s in targets if s < threshold) / len(targets)
    p_fa = sum(1 for s in nontargets if s >= threshold) / len(nontargets)
    return p_miss, p_fa


def brute_force_eer(scores, labels):
    """Sweep every candidate threshold by direct counting, interpolate the crossing."""
    thresholds = sorted(set(scores)) + [max(scores) + 1.0]
    points = [brute_force_rates(scores, labels, t) for t in thresholds]
    prev = None
    for i, (pm, pf) in enumerate(points):
        if pm - pf == 0:
            return pm
        if pm - pf > 0:
            pm0, pf0 = points[i - 1]
            d0, d1 = pm0 - pf0, pm - pf
            w = -d0 / (d1 - d0)
            return 0.5 * (((1 - w) * pm0 + w * pm) + ((1 - w) * pf0 + w * pf))
        prev = (pm, pf)
    raise AssertionError("no crossing found")


def brute_force_min_dcf(scores, labels, p_target=0.01, c_fa=1.0, c_miss=1.0):
    thresholds = sorted(set(scores)) + [max(scores) + 1.0]
    best = np.inf
    for t in thresholds:
        pm, pf = brute_force_rates(scores, labels, t)
        best = min(best, c_miss * pm * p_target + c_fa * pf * (1 - p_target))
    return best / min(c_miss * p_target, c_fa * (1 - p_target))


class TestEER:
    def test_perfect_separation(self):
        eer, _ = compute_eer([0.9, 0.8, 0.2, 0.1], [1, 1, 0, 0])
        assert eer == 0.0

    def test_worked_example_exact(self):
        scores = [0.9, 0.8, 0.4, 0.6, 0.2, 0.1]
        labels = [1, 1, 1, 0, 0, 0]
        eer, thr = compute_eer(scores, labels)
        assert eer == pytest.approx(1.0 / 3.0, abs=1e-12)
        pm, pf = brute_force_rates(scores, labels, thr)
        assert pm == pytest.approx(pf)

    def test_flipped_labels_degenerate(self):
        eer, _ = compute_eer([0.9, 0.8, 0.2, 0.1], [0, 0, 1, 1])
        assert 0.0 <= eer <= 1.0
        assert eer == 1.0

    def test_single_class_rejected(self):
        with pytest.raises(ValueError, match="target"):
            compute_eer([0.5, 0.6], [1, 1])

    @given(st.integers(0, 10_000))
    @settings(max_examples=100, deadline=None)
    def test_matches_brute_force(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(2, 200))
        scores = np.round(rng.uniform(0, 1, n), 3)
        labels = rng.integers(0, 2, n)
        labels[0], labels[1] = 1, 0
        eer, _ = compute_eer(scores, labels)
        assert eer == pytest.approx(brute_force_eer(list(scores), list(labels)), abs=1e-9)

    def test_monotone_transform_invariance(self):
        rng = np.random.default_rng(5)
        scores = rng.uniform(0, 1, 60)
        labels = rng.integers(0, 2, 60)
        labels[:2] = [0, 1]
        e1, _ = compute_eer(scores, labels)
        e2, _ = compute_eer(np.exp(3 * scores), labels)
        assert e1 == pytest.approx(e2, abs=1e-12)


class TestMinDCF:
    def test_perfect_separation_zero(self):
        dcf, _, _ = compute_min_dcf([0.9, 0.8, 0.2, 0.1], [1, 1, 0, 0])
        assert dcf == 0.0

    def test_degenerate_identical_scores(self):
        dcf, _, _ = compute_min_dcf([0.5] * 6, [1, 1, 1, 0, 0, 0])
        assert dcf == pytest.approx(1.0)

    def test_never_exceeds_one(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            n = int(rng.integers(2, 100))
            scores = rng.uniform(0, 1, n)
            labels = rng.integers(0, 2, n)
            labels[:2] = [0, 1]
            dcf, _, _ = compute_min_dcf(scores, labels)
            assert dcf <= 1.0 + 1e-9

    @given(st.integers(0, 10_000))
    @settings(max_examples=100, deadline=None)
    def test_matches_brute_force(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(2, 200))
        scores = rng.uniform(0, 1, n)
        labels = rng.integers(0, 2, n)
        labels[0], labels[1] = 1, 0
        dcf, _, _ = compute_min_dcf(scores, labels)
        assert dcf == pytest.approx(
            brute_force_min_dcf(list(scores), list(labels)), abs=1e-9)

    def test_monotone_transform_invariance(self):
        rng = np.random.default_rng(9)
        scores = rng.uniform(0, 1, 80)
        labels = rng.integers(0, 2, 80)
        labels[:2] = [0, 1]
        d1, _, _ = compute_min_dcf(scores, labels)
        d2, _, _ = compute_min_dcf(2 * scores + 5, labels)
        assert d1 == pytest.approx(d2, abs=1e-12)


class CountingEmbedder:
    def __init__(self, dim=8, seed=0):
        self.rng = np.random.default_rng(seed)
        self.calls = 0
        self.known: dict[str, torch.Tensor] = {}

    def __call__(self, clip_id):
        self.calls += 1
        if clip_id.startswith("missing"):
            raise KeyError(clip_id)
        if clip_id not in self.known:
            self.known[clip_id] = torch.tensor(self.rng.standard_normal(8),
                                               dtype=torch.float32)
        return self.known[clip_id]


class TestScoreTrials:
    def trials(self):
        return [Trial("a", "b", 1), Trial("a", "c", 0), Trial("b", "c", 0),
                Trial("a", "b", 1)]

    def test_each_clip_encoded_once(self):
        emb = CountingEmbedder()
        score_trials(self.trials(), emb, CosineBackend())
        assert emb.calls == 3  # unique clips a, b, c

    def test_duplicate_trials_identical_scores(self):
        scores = score_trials(self.trials(), CountingEmbedder(), CosineBackend())
        assert scores[0] == scores[3]

    def test_missing_ids_reported_in_batch(self):
        trials = [Trial("a", "missing1", 1), Trial("missing2", "b", 0)]
        with pytest.raises(KeyError, match="missing1, missing2"):
            score_trials(trials, CountingEmbedder(), CosineBackend())

    def test_matches_uncached_recompute(self):
        emb = CountingEmbedder(seed=3)
        trials = self.trials()
        scores = score_trials(trials, emb, CosineBackend())
        for t, s in zip(trials, scores):
            a, b = emb(t.enroll_id), emb(t.test_id)
            direct = float(torch.dot(a, b) / (a.norm() * b.norm()))
            assert s == pytest.approx(direct, abs=1e-6)


class TestIdentification:
    def clips(self, n_speakers=8, n_clips=8):
        return {s: ["s%d_c%d" % (s, c) for c in range(n_clips)]
                for s in range(n_speakers)}

    def speaker_embedder(self, noise=0.0, seed=0):
        rng = np.random.default_rng(seed)
        bases = {}

        def embed(clip_id):
            s = clip_id.split("_")[0]
            if s not in bases:
                v = rng.standard_normal(16)
                bases[s] = v / np.linalg.norm(v)
            e = bases[s] + noise * rng.standard_normal(16)
            return torch.tensor(e, dtype=torch.float32)

        return embed

    def test_one_way_is_always_correct(self):
        report = evaluate_identification(self.clips(), self.speaker_embedder(0.5),
                                         CosineBackend(), n_way=1, q=2,
                                         n_episodes=20, rng=np.random.default_rng(0))
        assert report.mean_accuracy == 1.0

    def test_perfectly_separated_embeddings(self):
        report = evaluate_identification(self.clips(), self.speaker_embedder(0.0),
                                         CosineBackend(), n_way=5, q=3,
                                         n_episodes=50, rng=np.random.default_rng(1))
        assert report.mean_accuracy == 1.0
        assert report.ci95_halfwidth == 0.0

    def test_ci_definition(self):
        report = evaluate_identification(self.clips(), self.speaker_embedder(1.5, seed=2),
                                         CosineBackend(), n_way=4, q=3,
                                         n_episodes=40, rng=np.random.default_rng(2))
        assert 0.0 <= report.mean_accuracy <= 1.0
        assert report.ci95_halfwidth >= 0.0

    def test_scaling_invariance_of_argmax(self):
        clips = self.clips(5, 6)
        emb = self.speaker_embedder(0.8, seed=4)
        cache = {c: emb(c) for cs in clips.values() for c in cs}

        class Scaled(CosineBackend):
            def identification_scores(self, q, e):
                return 7.0 * super().identification_scores(q, e)

        r1 = evaluate_identification(clips, cache.__getitem__, CosineBackend(),
                                     n_way=3, q=2, n_episodes=30,
                                     rng=np.random.default_rng(3))
        r2 = evaluate_identification(clips, cache.__getitem__, Scaled(),
                                     n_way=3, q=2, n_episodes=30,
                                     rng=np.random.default_rng(3))
        assert r1.mean_accuracy == r2.mean_accuracy


class TestTrialIO:
    def test_round_trip(self, tmp_path):
        trials = [Trial("a", "b", 1), Trial("c", "d", 0)]
        path = tmp_path / "trials.txt"
        save_trials(trials, path)
        assert load_trials(path) == trials

    def test_bad_line_rejected(self, tmp_path):
        path = tmp_path / "bad.txt"
        path.write_text("2 a b\n")
        with pytest.raises(ValueError, match="expected"):
            load_trials(path)

    def test_score_file_format(self, tmp_path):
        path = tmp_path / "scores.txt"
        save_scores([Trial("a", "b", 1)], [0.25], path)
        assert path.read_text() == "a b 0.25\n"

    def test_make_trial_list_balanced(self):
        clips = {s: ["s%d_%d" % (s, i) for i in range(4)] for s in range(5)}
        trials = make_trial_list(clips, 30, 40, np.random.default_rng(0))
        assert sum(t.label for t in trials) == 30
        assert len(trials) == 70
        for t in trials:
            same = t.enroll_id.split("_")[0] == t.test_id.split("_")[0]
            assert same == bool(t.label)
