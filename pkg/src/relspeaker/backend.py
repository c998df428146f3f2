"""Similarity backends: improved/vanilla relation networks, the global
prototype bank, and the cosine/prototypical baseline.

The improved relation input is [query || reference || query * reference];
the vanilla input drops the element-wise product block.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn

IMPROVED = "improved"
VANILLA = "vanilla"


@dataclass
class RelationNetConfig:
    embedding_dim: int = 64
    mode: str = IMPROVED
    hidden_dims: tuple[int, ...] = (256, 64)
    dropout_rate: float = 0.2
    negative_slope: float = 0.01

    def __post_init__(self):
        if self.mode not in (IMPROVED, VANILLA):
            raise ValueError("mode must be %r or %r, got %r" % (IMPROVED, VANILLA, self.mode))
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must be in [0, 1)")

    @property
    def input_dim(self) -> int:
        return (3 if self.mode == IMPROVED else 2) * self.embedding_dim


def build_relation_input(query: torch.Tensor, reference: torch.Tensor,
                         mode: str = IMPROVED) -> torch.Tensor:
    """Concatenate the pair (plus their product in improved mode) channel-wise."""
    if query.shape[-1] != reference.shape[-1]:
        raise ValueError("embedding dimension mismatch: %d vs %d"
                         % (query.shape[-1], reference.shape[-1]))
    if mode == IMPROVED:
        return torch.cat([query, reference, query * reference], dim=-1)
    return torch.cat([query, reference], dim=-1)


class RelationNet(nn.Module):
    """Fully connected scorer: leaky ReLU, dropout between layers, sigmoid out."""

    def __init__(self, config: RelationNetConfig):
        super().__init__()
        self.config = config
        layers: list[nn.Module] = []
        dim = config.input_dim
        for hidden in config.hidden_dims:
            layers.append(nn.Linear(dim, hidden))
            layers.append(nn.LeakyReLU(config.negative_slope))
            layers.append(nn.Dropout(config.dropout_rate))
            dim = hidden
        layers.append(nn.Linear(dim, 1))
        self.net = nn.Sequential(*layers)

    def forward(self, pair_input: torch.Tensor) -> torch.Tensor:
        """Scores in [0, 1]; input shape [..., input_dim] -> output [...]."""
        return torch.sigmoid(self.net(pair_input)).squeeze(-1)

    def score(self, query: torch.Tensor, reference: torch.Tensor) -> torch.Tensor:
        return self(build_relation_input(query, reference, self.config.mode))


def aggregate_support(support_embeddings) -> torch.Tensor:
    """Mean of the support embeddings (the per-class representation sigma)."""
    if torch.is_tensor(support_embeddings):
        stack = support_embeddings
    else:
        if len(support_embeddings) == 0:
            raise ValueError("cannot aggregate an empty support set")
        stack = torch.stack([torch.as_tensor(e, dtype=torch.float64)
                             if not torch.is_tensor(e) else e
                             for e in support_embeddings])
    if stack.numel() == 0:
        raise ValueError("cannot aggregate an empty support set")
    return stack.mean(dim=0)


def relation_scores(net: RelationNet, queries: torch.Tensor,
                    references: torch.Tensor) -> torch.Tensor:
    """All-pairs scores, shape [n_queries, n_references]."""
    nq, nr = queries.shape[0], references.shape[0]
    q = queries.unsqueeze(1).expand(nq, nr, -1)
    r = references.unsqueeze(0).expand(nq, nr, -1)
    return net(build_relation_input(q, r, net.config.mode))


class GlobalPrototypeBank(nn.Module):
    """Learnable prototypes, one row per training speaker."""

    def __init__(self, prototypes: torch.Tensor):
        super().__init__()
        if prototypes.ndim != 2 or prototypes.shape[0] == 0:
            raise ValueError("prototype bank must be a non-empty N' x M matrix")
        self.prototypes = nn.Parameter(prototypes.clone())

    @property
    def num_speakers(self) -> int:
        return self.prototypes.shape[0]


def relation_global(net: RelationNet, queries: torch.Tensor,
                    bank: GlobalPrototypeBank) -> torch.Tensor:
    """Score queries against every speaker prototype, shape [n_queries, N']."""
    return relation_scores(net, queries, bank.prototypes)


def prototypical_posterior(query: torch.Tensor,
                           prototypes: torch.Tensor) -> torch.Tensor:
    """Softmax over cosine similarities to the class prototypes."""
    if prototypes.ndim != 2 or prototypes.shape[0] == 0:
        raise ValueError("need at least one prototype")
    qn = query.norm()
    pn = prototypes.norm(dim=1)
    if qn == 0 or (pn == 0).any():
        raise ValueError("cosine similarity undefined for a zero-norm embedding")
    sims = (prototypes @ query) / (pn * qn)
    return torch.softmax(sims, dim=0)


def cosine_similarity(e1: torch.Tensor, e2: torch.Tensor) -> torch.Tensor:
    n1, n2 = e1.norm(dim=-1), e2.norm(dim=-1)
    if (n1 == 0).any() or (n2 == 0).any():
        raise ValueError("cosine similarity undefined for a zero-norm embedding")
    return (e1 * e2).sum(dim=-1) / (n1 * n2)


class RelationBackend:
    """Eval-mode relation scoring, symmetrized for verification trials."""

    def __init__(self, net: RelationNet):
        self.net = net

    def identification_scores(self, queries: torch.Tensor,
                              enrollments: torch.Tensor) -> torch.Tensor:
        with torch.no_grad():
            self.net.eval()
            return relation_scores(self.net, queries, enrollments)

    def pair_scores(self, e1: torch.Tensor, e2: torch.Tensor) -> torch.Tensor:
        with torch.no_grad():
            self.net.eval()
            return 0.5 * (self.net.score(e1, e2) + self.net.score(e2, e1))


class CosineBackend:
    """Plain cosine scoring; symmetric by construction."""

    def identification_scores(self, queries: torch.Tensor,
                              enrollments: torch.Tensor) -> torch.Tensor:
        q = queries.unsqueeze(1).expand(queries.shape[0], enrollments.shape[0], -1)
        e = enrollments.unsqueeze(0).expand_as(q)
        return cosine_similarity(q, e)

    def pair_scores(self, e1: torch.Tensor, e2: torch.Tensor) -> torch.Tensor:
        return cosine_similarity(e1, e2)


def verification_score(e1: torch.Tensor, e2: torch.Tensor, backend) -> float:
    """Symmetric trial score for a single pair of embeddings."""
    if e1.shape != e2.shape:
        raise ValueError("embedding shape mismatch: %s vs %s" % (e1.shape, e2.shape))
    return float(backend.pair_scores(e1.unsqueeze(0), e2.unsqueeze(0))[0])
