"""Episode losses, the two-stage training procedure (local MSE, then
global-prototype fine-tuning), and the cyclic aggregated-backprop regime.

The improved regime computes embeddings once per episode, sums the local
loss over all T cyclic support-query combinations, and backpropagates the
aggregate in a single optimizer step.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn

from . import checkpoint as ckpt
from .backend import (GlobalPrototypeBank, RelationBackend, RelationNet,
                      relation_global, relation_scores)
from .config import RunConfig
from .data import DatasetManifest, load_clip
from .encoder import SpeakerEncoder
from .episodic import Episode, make_combinations, sample_episode
from .evaluation import compute_eer, make_trial_list, score_trials
from .features import compute_log_mel, mean_normalize, spec_augment


@dataclass
class LossBreakdown:
    local: float
    glob: float
    total: float


def local_loss(scores: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    """Squared-error regression of relation scores to one-hot local labels.

    scores: [n_queries, n_way]; labels: [n_queries] in {0..n_way-1}.
    Summed over all entries (not averaged).
    """
    n_way = scores.shape[1]
    if labels.min() < 0 or labels.max() >= n_way:
        raise ValueError("local labels must lie in {0..%d}" % (n_way - 1))
    onehot = torch.zeros_like(scores)
    onehot[torch.arange(scores.shape[0]), labels] = 1.0
    return ((scores - onehot) ** 2).sum()


def global_loss(query_scores: torch.Tensor, query_labels: torch.Tensor,
                support_scores: torch.Tensor, support_labels: torch.Tensor) -> torch.Tensor:
    """Squared error against one-hot global labels, support and query blocks.

    Both blocks are required: the global objective always sums over the
    support samples as well as the queries.
    """
    if query_scores.numel() == 0 or support_scores.numel() == 0:
        raise ValueError("global loss requires non-empty query and support blocks")
    return local_loss(query_scores, query_labels) + local_loss(support_scores, support_labels)


def total_loss(local: torch.Tensor, glob: torch.Tensor, lam: float) -> torch.Tensor:
    return local + lam * glob


class SpeakerRelationModel(nn.Module):
    """Encoder + relation net, plus the prototype bank once stage 2 starts."""

    def __init__(self, config: RunConfig):
        super().__init__()
        self.run_config = config
        self.encoder = SpeakerEncoder(config.encoder)
        self.relation = RelationNet(config.relation)
        self.bank: GlobalPrototypeBank | None = None

    def attach_bank(self, bank: GlobalPrototypeBank):
        self.bank = bank
        self.add_module("bank", bank)


class FeatureStore:
    """Caches mean-normalized log-mel features per clip."""

    def __init__(self, manifest: DatasetManifest, feat_cfg, base_dir=None):
        self.manifest = manifest
        self.cfg = feat_cfg
        self.base_dir = base_dir
        self._cache: dict[str, np.ndarray] = {}

    def features(self, clip_id: str) -> np.ndarray:
        if clip_id not in self._cache:
            clip = load_clip(self.manifest, clip_id, self.base_dir)
            feats = mean_normalize(compute_log_mel(
                clip, self.cfg.n_mels, self.cfg.window_ms, self.cfg.hop_ms))
            self._cache[clip_id] = feats.values.astype(np.float32)
        return self._cache[clip_id]

    def augmented(self, clip_id: str, rng: np.random.Generator) -> np.ndarray:
        from .features import LogMelFeatures
        feats = LogMelFeatures(values=self.features(clip_id).astype(np.float64),
                               n_mels=self.cfg.n_mels,
                               frame_length_ms=self.cfg.window_ms,
                               frame_shift_ms=self.cfg.hop_ms)
        return spec_augment(feats, self.cfg.specaugment, rng).values.astype(np.float32)


def episode_feature_batch(store: FeatureStore, episode: Episode,
                          augment_rng: np.random.Generator | None) -> torch.Tensor:
    """Stack episode features as [n_way * (k+q), n_mels, T min over batch]."""
    mats = []
    for clips in episode.clip_ids:
        for cid in clips:
            mats.append(store.augmented(cid, augment_rng) if augment_rng is not None
                        else store.features(cid))
    t_min = min(m.shape[1] for m in mats)
    return torch.from_numpy(np.stack([m[:, :t_min] for m in mats]))


def embed_clips(encoder: SpeakerEncoder, store: FeatureStore, clip_ids,
                batch_size: int = 64) -> dict[str, torch.Tensor]:
    """Eval-mode embeddings for a list of clips, batched by equal length."""
    encoder.eval()
    out: dict[str, torch.Tensor] = {}
    by_len: dict[int, list[str]] = {}
    for cid in clip_ids:
        by_len.setdefault(store.features(cid).shape[1], []).append(cid)
    with torch.no_grad():
        for ids in by_len.values():
            for i in range(0, len(ids), batch_size):
                chunk = ids[i:i + batch_size]
                batch = torch.from_numpy(np.stack([store.features(c) for c in chunk]))
                embs = encoder(batch)
                for cid, e in zip(chunk, embs):
                    out[cid] = e
    return out


def init_global_prototypes(encoder: SpeakerEncoder, store: FeatureStore,
                           manifest: DatasetManifest) -> GlobalPrototypeBank:
    """Rows are per-speaker mean embeddings over all training clips."""
    clips_by_speaker = manifest.clips_by_speaker("train")
    index = manifest.speaker_index()
    rows = [None] * len(index)
    all_ids = [cid for clips in clips_by_speaker.values() for cid in clips]
    embs = embed_clips(encoder, store, all_ids)
    for speaker, clips in clips_by_speaker.items():
        if not clips:
            raise ValueError("speaker %d has no training clips" % speaker)
        proto = torch.stack([embs[c] for c in clips]).mean(dim=0)
        if proto.norm() == 0:
            import warnings
            warnings.warn("speaker %d has a zero mean embedding" % speaker)
        rows[index[speaker] - 1] = proto
    return GlobalPrototypeBank(torch.stack(rows))


def train_step(model: SpeakerRelationModel, optimizer: torch.optim.Optimizer,
               feats: torch.Tensor, episode: Episode, regime: str, lam: float,
               global_labels: torch.Tensor | None = None,
               grad_clip_norm: float | None = 5.0) -> LossBreakdown:
    """One aggregated backprop and exactly one optimizer step for the episode."""
    model.train()
    n, t = episode.n_way, episode.clips_per_class
    emb = model.encoder(feats).view(n, t, -1)

    combos = make_combinations(t, episode.k)
    if regime == "vanilla":
        combos = combos[:1]
    local = feats.new_zeros(())
    for combo in combos:
        sigma = emb[:, list(combo.support)].mean(dim=1)
        queries = emb[:, list(combo.query)].reshape(n * len(combo.query), -1)
        labels = torch.arange(n).repeat_interleave(len(combo.query))
        scores = relation_scores(model.relation, queries, sigma)
        local = local + local_loss(scores, labels)

    lam_eff = lam if model.bank is not None else 0.0
    if lam_eff > 0.0:
        # role-independent: every sample is support or query exactly once,
        # so the l=1 split covers the whole episode
        all_scores = relation_global(model.relation, emb.reshape(n * t, -1), model.bank)
        all_scores = all_scores.view(n, t, -1)
        k = episode.k
        glob = global_loss(
            all_scores[:, k:].reshape(n * (t - k), -1),
            global_labels.view(n, t)[:, k:].reshape(-1),
            all_scores[:, :k].reshape(n * k, -1),
            global_labels.view(n, t)[:, :k].reshape(-1))
        total = total_loss(local, glob, lam_eff)
    else:
        glob = torch.zeros(())
        total = local

    if not torch.isfinite(total):
        raise RuntimeError(
            "non-finite loss (local=%r, global=%r) on episode with speakers %s"
            % (float(local.detach()), float(glob.detach()), episode.speaker_ids))

    optimizer.zero_grad()
    total.backward()
    if grad_clip_norm is not None:
        torch.nn.utils.clip_grad_norm_(
            (p for g in optimizer.param_groups for p in g["params"]), grad_clip_norm)
    optimizer.step()
    return LossBreakdown(local=float(local.detach()), glob=float(glob.detach()),
                         total=float(total.detach()))


def learning_rate(cfg, epoch: int) -> float:
    return cfg.lr_initial * cfg.lr_decay_per_epoch ** epoch


def run_training(config: RunConfig, manifest: DatasetManifest, run_dir,
                 base_dir=None) -> Path:
    """Stage 1 (local loss) then stage 2 (added global supervision).

    Writes metrics.log (one JSON record per epoch), a config echo, and
    checkpoints under run_dir. Returns the final checkpoint directory.
    """
    from .config import save_config

    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    save_config(config, run_dir / "config.json")

    tcfg = config.train
    torch.manual_seed(tcfg.seed)
    episode_rng = np.random.default_rng(tcfg.seed)
    augment_rng = np.random.default_rng(tcfg.seed + 1)

    store = FeatureStore(manifest, config.features, base_dir)
    model = SpeakerRelationModel(config)
    optimizer = torch.optim.Adam(model.parameters(), lr=tcfg.lr_initial,
                                 betas=tuple(tcfg.adam_betas),
                                 weight_decay=tcfg.weight_decay)

    train_clips = manifest.clips_by_speaker("train")
    speaker_index = manifest.speaker_index()
    val_clips = manifest.clips_by_speaker("val") or manifest.clips_by_speaker("test")
    val_trials = None
    if val_clips and len(val_clips) >= 2:
        val_trials = make_trial_list(val_clips, tcfg.val_targets, tcfg.val_nontargets,
                                     np.random.default_rng(tcfg.seed + 9999))

    backend = RelationBackend(model.relation)
    metrics_path = run_dir / "metrics.log"
    metrics_path.write_text("")
    n_updates = 0
    total_epochs = tcfg.epochs_local + tcfg.epochs_finetune

    for epoch in range(total_epochs):
        stage = "local" if epoch < tcfg.epochs_local else "global_finetune"
        if epoch == tcfg.epochs_local and tcfg.epochs_finetune > 0:
            bank = init_global_prototypes(model.encoder, store, manifest)
            model.attach_bank(bank)
            optimizer.add_param_group({"params": list(bank.parameters())})
            ckpt.save_checkpoint(run_dir / "checkpoints" / "stage_local", model,
                                 config, n_updates)
        lam = tcfg.lam if stage == "global_finetune" else 0.0
        lr = learning_rate(tcfg, epoch)
        for group in optimizer.param_groups:
            group["lr"] = lr

        t0 = time.perf_counter()
        sums = {"local": 0.0, "glob": 0.0, "total": 0.0}
        for _ in range(tcfg.episodes_per_epoch):
            episode = sample_episode(train_clips, tcfg.n_way, tcfg.k_shot,
                                     tcfg.n_query, episode_rng)
            feats = episode_feature_batch(store, episode, augment_rng)
            glabels = torch.tensor(
                [speaker_index[s] - 1 for s in episode.speaker_ids]
            ).repeat_interleave(episode.clips_per_class)
            breakdown = train_step(model, optimizer, feats, episode, tcfg.regime,
                                   lam, glabels, tcfg.grad_clip_norm)
            n_updates += 1
            sums["local"] += breakdown.local
            sums["glob"] += breakdown.glob
            sums["total"] += breakdown.total
        wall_ms = 1000.0 * (time.perf_counter() - t0)

        val_eer = None
        if val_trials is not None:
            val_ids = sorted({t.enroll_id for t in val_trials}
                             | {t.test_id for t in val_trials})
            embs = embed_clips(model.encoder, store, val_ids)
            scores = score_trials(val_trials, embs.__getitem__, backend)
            val_eer, _ = compute_eer(scores, [t.label for t in val_trials])

        record = {
            "epoch": epoch, "stage": stage, "lr": lr, "lam": lam,
            "local": sums["local"], "global": sums["glob"], "total": sums["total"],
            "val_eer": val_eer, "wall_ms": wall_ms, "n_updates": n_updates,
        }
        with open(metrics_path, "a") as fh:
            fh.write(json.dumps(record) + "\n")

    final_dir = run_dir / "checkpoints" / "final"
    ckpt.save_checkpoint(final_dir, model, config, n_updates,
                         {"val_eer": val_eer} if val_trials is not None else {})
    return final_dir


def model_from_checkpoint(ckpt_dir) -> tuple[SpeakerRelationModel, RunConfig]:
    config, arrays, _ = ckpt.load_checkpoint(ckpt_dir)
    model = SpeakerRelationModel(config)
    bank_key = "bank.prototypes"
    if bank_key in arrays:
        model.attach_bank(GlobalPrototypeBank(torch.as_tensor(arrays[bank_key])))
    ckpt.restore_state(model, arrays)
    model.eval()
    return model, config
