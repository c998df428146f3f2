"""Episode sampling and the cyclic support-query combination generator.

Each episode draws N speakers with k support + q query clips each. The
cyclic regime rotates the support window through all T = k + q clip
positions, producing T support/query role assignments per episode that
all reuse the same embeddings.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class SupportQueryCombination:
    index: int  # 0-based combination index l
    support: tuple[int, ...]  # clip positions within each class, 0-based
    query: tuple[int, ...]


@dataclass
class Episode:
    speaker_ids: list[int]  # global speaker indices, one per class
    clip_ids: list[list[str]]  # n_way x (k + q), sampler draw order
    k: int
    q: int

    @property
    def n_way(self) -> int:
        return len(self.speaker_ids)

    @property
    def clips_per_class(self) -> int:
        return self.k + self.q

    def __post_init__(self):
        t = self.k + self.q
        if any(len(c) != t for c in self.clip_ids):
            raise ValueError("every class must contribute exactly k + q = %d clips" % t)
        if len(set(self.speaker_ids)) != len(self.speaker_ids):
            raise ValueError("episode speakers must be distinct")


def cyclic_index(z: int, total: int) -> int:
    """Position (0-based) selected by the cyclic index for 1-based step z."""
    if z < 1 or total < 1:
        raise ValueError("need z >= 1 and total >= 1")
    return (z - 1) % total


def make_combinations(total: int, k: int) -> list[SupportQueryCombination]:
    """All `total` cyclic support-query role assignments.

    Combination l takes the k positions starting at l (cyclically) as
    support and the remaining total - k positions as query; combination 0
    is the identity assignment (first k clips are support).
    """
    if not 1 <= k < total:
        raise ValueError("need 1 <= k < total samples per class, got k=%d, total=%d"
                         % (k, total))
    combos = []
    for l in range(total):
        support = tuple(cyclic_index(l + z, total) for z in range(1, k + 1))
        query = tuple(cyclic_index(l + z, total) for z in range(k + 1, total + 1))
        combos.append(SupportQueryCombination(index=l, support=support, query=query))
    return combos


def sample_episode(clips_by_speaker: dict[int, list[str]], n_way: int, k: int, q: int,
                   rng: np.random.Generator) -> Episode:
    """Draw N speakers and k + q clips each, both without replacement."""
    t = k + q
    eligible = sorted(s for s, clips in clips_by_speaker.items() if len(clips) >= t)
    if len(eligible) < n_way:
        raise ValueError(
            "need %d speakers with >= %d clips each, only %d available"
            % (n_way, t, len(eligible)))
    speakers = [eligible[i] for i in rng.choice(len(eligible), size=n_way, replace=False)]
    clip_ids = []
    for s in speakers:
        clips = clips_by_speaker[s]
        picks = rng.choice(len(clips), size=t, replace=False)
        clip_ids.append([clips[i] for i in picks])
    return Episode(speaker_ids=speakers, clip_ids=clip_ids, k=k, q=q)
