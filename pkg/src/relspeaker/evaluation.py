"""Verification metrics (EER, normalized minDCF), trial scoring, and the
unseen-speaker N-way identification protocol.

Threshold convention: a trial is accepted when score >= threshold, so
P_miss(t) is the fraction of targets below t and P_fa(t) the fraction of
nontargets at or above t.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch

from .episodic import sample_episode

TARGET = 1
NONTARGET = 0


@dataclass(frozen=True)
class Trial:
    enroll_id: str
    test_id: str
    label: int  # 1 target, 0 nontarget


@dataclass
class VerificationReport:
    eer: float
    eer_threshold: float
    min_dcf: float
    min_dcf_raw: float
    min_dcf_threshold: float
    p_target: float = 0.01
    c_fa: float = 1.0
    c_miss: float = 1.0
    n_trials: int = 0

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class IdentificationReport:
    n_way: int
    n_episodes: int
    mean_accuracy: float
    ci95_halfwidth: float
    n_ties: int = 0

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def _check_scores(scores, labels):
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ValueError("scores and labels must be 1-D and the same length")
    if not (labels == TARGET).any() or not (labels == NONTARGET).any():
        raise ValueError("need at least one target and one nontarget trial")
    return scores, labels


def error_rate_curve(scores, labels):
    """Operating points over the threshold sweep.

    Returns (thresholds, p_miss, p_fa) for thresholds at every distinct
    score plus one above the maximum (the reject-all point). Thresholds
    ascend, so p_miss ascends and p_fa descends.
    """
    scores, labels = _check_scores(scores, labels)
    targets = np.sort(scores[labels == TARGET])
    nontargets = np.sort(scores[labels == NONTARGET])
    thresholds = np.unique(scores)
    thresholds = np.append(thresholds, thresholds[-1] + 1.0)
    # accept when score >= t
    p_miss = np.searchsorted(targets, thresholds, side="left") / targets.size
    p_fa = 1.0 - np.searchsorted(nontargets, thresholds, side="left") / nontargets.size
    return thresholds, p_miss, p_fa


def compute_eer(scores, labels) -> tuple[float, float]:
    """Equal error rate and the threshold at the miss/false-alarm crossing.

    Linearly interpolates between adjacent operating points when no swept
    threshold hits the crossing exactly.
    """
    thresholds, p_miss, p_fa = error_rate_curve(scores, labels)
    diff = p_miss - p_fa  # ascends from -1-ish to +1-ish
    idx = int(np.searchsorted(diff >= 0, True))
    if diff[idx] == 0:
        return float(p_miss[idx]), float(thresholds[idx])
    # interpolate between the last point with miss < fa and the first with miss >= fa
    lo, hi = idx - 1, idx
    d_lo, d_hi = diff[lo], diff[hi]
    w = -d_lo / (d_hi - d_lo)
    eer = (1 - w) * p_miss[lo] + w * p_miss[hi]
    fa = (1 - w) * p_fa[lo] + w * p_fa[hi]
    eer = 0.5 * (eer + fa)
    thr = (1 - w) * thresholds[lo] + w * thresholds[hi]
    return float(eer), float(thr)


def compute_min_dcf(scores, labels, p_target: float = 0.01,
                    c_fa: float = 1.0, c_miss: float = 1.0) -> tuple[float, float, float]:
    """Minimum detection cost over the threshold sweep.

    Returns (normalized minDCF, raw minDCF, threshold). The normalized
    value divides by the best trivial system, min(c_miss*p_target,
    c_fa*(1-p_target)), so degenerate scores give exactly 1.0.
    """
    thresholds, p_miss, p_fa = error_rate_curve(scores, labels)
    dcf = c_miss * p_miss * p_target + c_fa * p_fa * (1.0 - p_target)
    idx = int(np.argmin(dcf))
    floor = min(c_miss * p_target, c_fa * (1.0 - p_target))
    return float(dcf[idx] / floor), float(dcf[idx]), float(thresholds[idx])


def load_trials(path) -> list[Trial]:
    """Read `label enroll_id test_id` lines (label in {0, 1})."""
    trials = []
    with open(path) as fh:
        for line_no, line in enumerate(fh, 1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 3 or parts[0] not in ("0", "1"):
                raise ValueError("%s:%d: expected 'label enroll test', got %r"
                                 % (path, line_no, line.rstrip()))
            trials.append(Trial(enroll_id=parts[1], test_id=parts[2], label=int(parts[0])))
    return trials


def save_trials(trials, path):
    with open(path, "w") as fh:
        for t in trials:
            fh.write("%d %s %s\n" % (t.label, t.enroll_id, t.test_id))


def save_scores(trials, scores, path):
    """Plain-text score file: one `enroll_id test_id score` line per trial."""
    with open(path, "w") as fh:
        for t, s in zip(trials, scores):
            fh.write("%s %s %.10g\n" % (t.enroll_id, t.test_id, s))


def score_trials(trials, embed_fn, backend) -> np.ndarray:
    """Score every trial, encoding each unique clip exactly once.

    embed_fn(clip_id) -> 1-D embedding tensor. Unresolvable ids are
    reported as a batch.
    """
    unique_ids = sorted({t.enroll_id for t in trials} | {t.test_id for t in trials})
    cache: dict[str, torch.Tensor] = {}
    missing = []
    for cid in unique_ids:
        try:
            cache[cid] = embed_fn(cid)
        except KeyError:
            missing.append(cid)
    if missing:
        raise KeyError("trial list references unknown clips: %s" % ", ".join(missing))
    e1 = torch.stack([cache[t.enroll_id] for t in trials])
    e2 = torch.stack([cache[t.test_id] for t in trials])
    return backend.pair_scores(e1, e2).detach().cpu().numpy()


def evaluate_verification(trials, embed_fn, backend, p_target: float = 0.01,
                          c_fa: float = 1.0, c_miss: float = 1.0) -> VerificationReport:
    scores = score_trials(trials, embed_fn, backend)
    labels = np.array([t.label for t in trials])
    eer, eer_thr = compute_eer(scores, labels)
    dcf, dcf_raw, dcf_thr = compute_min_dcf(scores, labels, p_target, c_fa, c_miss)
    return VerificationReport(eer=eer, eer_threshold=eer_thr, min_dcf=dcf,
                              min_dcf_raw=dcf_raw, min_dcf_threshold=dcf_thr,
                              p_target=p_target, c_fa=c_fa, c_miss=c_miss,
                              n_trials=len(trials))


def evaluate_identification(clips_by_speaker: dict[int, list[str]], embed_fn, backend,
                            n_way: int, k: int = 1, q: int = 5,
                            n_episodes: int = 1000,
                            rng: np.random.Generator | None = None) -> IdentificationReport:
    """N-way identification over randomly drawn test episodes.

    Each episode enrolls n_way speakers with the mean of their k support
    embeddings and assigns every query to the argmax-scoring enrollment.
    Argmax ties break to the lowest class index and are counted.
    """
    if rng is None:
        rng = np.random.default_rng(0)
    accuracies = []
    n_ties = 0
    cache: dict[str, torch.Tensor] = {}

    def emb(cid):
        if cid not in cache:
            cache[cid] = embed_fn(cid)
        return cache[cid]

    for _ in range(n_episodes):
        ep = sample_episode(clips_by_speaker, n_way, k, q, rng)
        enrollments = torch.stack([
            torch.stack([emb(c) for c in clips[:k]]).mean(dim=0)
            for clips in ep.clip_ids])
        queries = torch.stack([emb(c) for clips in ep.clip_ids for c in clips[k:]])
        labels = np.repeat(np.arange(n_way), q)
        scores = backend.identification_scores(queries, enrollments).cpu().numpy()
        pred = scores.argmax(axis=1)
        ties = (scores == scores.max(axis=1, keepdims=True)).sum(axis=1) > 1
        n_ties += int(ties.sum())
        accuracies.append(float((pred == labels).mean()))

    acc = np.asarray(accuracies)
    stderr = acc.std(ddof=1) / np.sqrt(len(acc)) if len(acc) > 1 else 0.0
    return IdentificationReport(n_way=n_way, n_episodes=n_episodes,
                                mean_accuracy=float(acc.mean()),
                                ci95_halfwidth=float(1.96 * stderr),
                                n_ties=n_ties)


def make_trial_list(clips_by_speaker: dict[int, list[str]], n_target: int,
                    n_nontarget: int, rng: np.random.Generator) -> list[Trial]:
    """Random same/different-speaker clip pairs for validation or smoke tests."""
    speakers = sorted(s for s, c in clips_by_speaker.items() if len(c) >= 2)
    if len(speakers) < 2:
        raise ValueError("need at least two speakers with two clips each")
    trials = []
    for _ in range(n_target):
        s = speakers[rng.integers(len(speakers))]
        i, j = rng.choice(len(clips_by_speaker[s]), size=2, replace=False)
        trials.append(Trial(clips_by_speaker[s][i], clips_by_speaker[s][j], TARGET))
    for _ in range(n_nontarget):
        a, b = rng.choice(len(speakers), size=2, replace=False)
        ca = clips_by_speaker[speakers[a]]
        cb = clips_by_speaker[speakers[b]]
        trials.append(Trial(ca[rng.integers(len(ca))], cb[rng.integers(len(cb))], NONTARGET))
    return trials
