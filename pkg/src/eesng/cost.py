"""Parameter and FLOP accounting for elastic encoder architectures.

Conventions (fixed, since the counts feed a hard constraint):

* attention width of layer l is ``A = h_l * head_dim`` with
  ``head_dim = E / max(head_options)``;
* Q, K, V are ``E x A`` with an ``A`` bias each, the output projection is
  ``A x E`` with an ``E`` bias;
* the FFN is ``E x k_l`` (+ ``k_l`` bias) and ``k_l x E`` (+ ``E`` bias);
* two layer norms per layer, each with a gain and a bias of width ``E``;
* classifier ``E x C + C``; token embedding ``V x E`` (optional).

FLOPs are ``2 x`` multiply-accumulates of the matrix products only; softmax,
GELU, layer norm, bias adds and the mean-pool are not counted.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict

from .space import ArchitectureSpec, SearchSpace


@dataclass(frozen=True)
class NetConfig:
    """Shape parameters the cost model needs (a subset of the supernet config)."""

    embed_dim: int = 32
    max_heads: int = 4
    vocab_size: int = 16
    num_classes: int = 2
    seq_len: int = 16

    @property
    def head_dim(self) -> int:
        return self.embed_dim // self.max_heads

    @classmethod
    def for_space(cls, space: SearchSpace, **kw) -> "NetConfig":
        return cls(max_heads=max(space.head_options), **kw)


BERT_NET = NetConfig(embed_dim=768, max_heads=12, vocab_size=30522, num_classes=2, seq_len=128)


@dataclass(frozen=True)
class CostBreakdown:
    embedding: int
    attention: tuple[int, ...]
    ffn: tuple[int, ...]
    layer_norm: tuple[int, ...]
    classifier: int
    flops: int
    seq_len: int

    @property
    def total_without_embedding(self) -> int:
        return sum(self.attention) + sum(self.ffn) + sum(self.layer_norm) + self.classifier

    @property
    def total(self) -> int:
        return self.total_without_embedding + self.embedding

    def to_dict(self) -> dict:
        d = asdict(self)
        d["attention"] = list(self.attention)
        d["ffn"] = list(self.ffn)
        d["layer_norm"] = list(self.layer_norm)
        d["total"] = self.total
        d["total_without_embedding"] = self.total_without_embedding
        return d


def _check(arch: ArchitectureSpec, net: NetConfig):
    if arch.depth < 1:
        raise ValueError("depth must be at least 1")
    for h, k in zip(arch.heads[:arch.depth], arch.intermediates[:arch.depth]):
        if h < 1 or k < 1:
            raise ValueError(f"head count and intermediate size must be positive: {arch}")
        if h > net.max_heads:
            raise ValueError(f"{h} heads exceeds max_heads={net.max_heads}")


def breakdown(arch: ArchitectureSpec, net: NetConfig, seq_len: int | None = None) -> CostBreakdown:
    _check(arch, net)
    E, hd, C = net.embed_dim, net.head_dim, net.num_classes
    S = net.seq_len if seq_len is None else seq_len
    attn, ffn, ln = [], [], []
    fl = 0
    for h, k in zip(arch.heads[:arch.depth], arch.intermediates[:arch.depth]):
        A = h * hd
        attn.append(3 * (E * A + A) + (A * E + E))
        ffn.append(E * k + k + k * E + E)
        ln.append(2 * 2 * E)
        fl += 2 * S * E * (3 * A)        # Q, K, V projections
        fl += 2 * S * S * A * 2          # scores and weighted sum of values
        fl += 2 * S * A * E              # output projection
        fl += 2 * S * E * k * 2          # the two FFN matrices
    fl += 2 * E * C                      # classifier on the pooled vector
    return CostBreakdown(embedding=net.vocab_size * E, attention=tuple(attn), ffn=tuple(ffn),
                         layer_norm=tuple(ln), classifier=E * C + C, flops=fl, seq_len=S)


def param_count(arch: ArchitectureSpec, net: NetConfig, include_embedding: bool = False) -> int:
    b = breakdown(arch, net)
    return b.total if include_embedding else b.total_without_embedding


def flops(arch: ArchitectureSpec, net: NetConfig, seq_len: int | None = None) -> int:
    return breakdown(arch, net, seq_len).flops


def cost(arch: ArchitectureSpec, net: NetConfig, metric: str = "params") -> int:
    if metric == "params":
        return param_count(arch, net)
    if metric == "flops":
        return flops(arch, net)
    raise ValueError(f"unknown cost metric {metric!r}")


def supernet_cost(space: SearchSpace, net: NetConfig, metric: str = "params") -> int:
    return cost(space.full().largest(), net, metric)


def min_cost(space: SearchSpace, net: NetConfig, metric: str = "params") -> int:
    return cost(space.full().smallest(), net, metric)
