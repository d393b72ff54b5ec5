"""Elastic weight-shared transformer encoder in numpy with manual backprop.

All tensors are allocated at the maximal dimensions. A sub-network takes the
leading slices: the first ``h * head_dim`` columns of Q/K/V (rows of the
output projection), the first ``k`` hidden units of the FFN pair, and the
first ``depth`` layers. Layer norms act on the full residual width and are
shared unsliced.

Encoder layers are post-norm (BERT style)::

    y = LN1(x + MHA(x));  x' = LN2(y + FFN(y))

followed by mean pooling over the sequence and a linear classifier.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np
from scipy.special import erf

from .cost import NetConfig
from .space import ArchitectureSpec, SearchSpace

LN_EPS = 1e-5
_SQRT2 = np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)

LAYER_TENSORS = ("wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo",
                 "ln1_g", "ln1_b", "w1", "b1", "w2", "b2", "ln2_g", "ln2_b")


@dataclass(frozen=True)
class SupernetConfig:
    vocab_size: int = 16
    embed_dim: int = 32
    max_depth: int = 4
    head_options: tuple[int, ...] = (4, 2, 1)
    intermediate_options: tuple[int, ...] = (64, 32, 16)
    seq_len: int = 16
    num_classes: int = 2
    dtype: str = "float64"

    def __post_init__(self):
        object.__setattr__(self, "head_options", tuple(self.head_options))
        object.__setattr__(self, "intermediate_options", tuple(self.intermediate_options))
        if self.embed_dim % self.max_heads:
            raise ValueError(f"embed_dim={self.embed_dim} not divisible by "
                             f"max heads {self.max_heads}")

    @property
    def max_heads(self) -> int:
        return max(self.head_options)

    @property
    def max_intermediate(self) -> int:
        return max(self.intermediate_options)

    @property
    def head_dim(self) -> int:
        return self.embed_dim // self.max_heads

    @classmethod
    def for_space(cls, space: SearchSpace, **kw) -> "SupernetConfig":
        return cls(max_depth=space.max_depth, head_options=space.head_options,
                   intermediate_options=space.intermediate_options, **kw)

    def net_config(self) -> NetConfig:
        return NetConfig(embed_dim=self.embed_dim, max_heads=self.max_heads,
                         vocab_size=self.vocab_size, num_classes=self.num_classes,
                         seq_len=self.seq_len)

    def to_dict(self) -> dict:
        return {"vocab_size": self.vocab_size, "embed_dim": self.embed_dim,
                "max_depth": self.max_depth, "head_options": list(self.head_options),
                "intermediate_options": list(self.intermediate_options),
                "seq_len": self.seq_len, "num_classes": self.num_classes, "dtype": self.dtype}

    @classmethod
    def from_dict(cls, d: dict) -> "SupernetConfig":
        return cls(**d)


def tensor_shapes(cfg: SupernetConfig) -> dict[str, tuple[int, ...]]:
    E, K = cfg.embed_dim, cfg.max_intermediate
    shapes = {"embed": (cfg.vocab_size, E)}
    for l in range(cfg.max_depth):
        layer = {"wq": (E, E), "bq": (E,), "wk": (E, E), "bk": (E,), "wv": (E, E), "bv": (E,),
                 "wo": (E, E), "bo": (E,), "ln1_g": (E,), "ln1_b": (E,),
                 "w1": (E, K), "b1": (K,), "w2": (K, E), "b2": (E,),
                 "ln2_g": (E,), "ln2_b": (E,)}
        for name in LAYER_TENSORS:
            shapes[f"layer{l}.{name}"] = layer[name]
    shapes["cls_w"] = (E, cfg.num_classes)
    shapes["cls_b"] = (cfg.num_classes,)
    return shapes


@dataclass
class SupernetWeights:
    config: SupernetConfig
    tensors: dict[str, np.ndarray] = field(default_factory=dict)

    def __getitem__(self, name):
        return self.tensors[name]

    def copy(self) -> "SupernetWeights":
        return SupernetWeights(self.config, {k: v.copy() for k, v in self.tensors.items()})

    def checksum(self) -> str:
        h = hashlib.sha256()
        for name in sorted(self.tensors):
            h.update(name.encode())
            h.update(np.ascontiguousarray(self.tensors[name]).tobytes())
        return h.hexdigest()


def init_weights(cfg: SupernetConfig, rng: np.random.Generator) -> SupernetWeights:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for matrices; zero biases,
    unit LN gains; embeddings use fan_in = embed_dim."""
    dtype = np.dtype(cfg.dtype)
    tensors = {}
    for name, shape in tensor_shapes(cfg).items():
        base = name.split(".")[-1]
        if base.endswith("_g"):
            t = np.ones(shape)
        elif len(shape) == 1:
            t = np.zeros(shape)
        else:
            fan_in = cfg.embed_dim if name == "embed" else shape[0]
            bound = 1.0 / np.sqrt(fan_in)
            t = rng.uniform(-bound, bound, size=shape)
        tensors[name] = t.astype(dtype)
    return SupernetWeights(cfg, tensors)


# -- sub-network extraction --------------------------------------------------------

@dataclass
class SubnetWeights:
    """Views into the supernet tensors for one architecture (no copies)."""

    arch: ArchitectureSpec
    config: SupernetConfig
    embed: np.ndarray
    layers: list[dict[str, np.ndarray]]
    cls_w: np.ndarray
    cls_b: np.ndarray


def _layer_slices(cfg: SupernetConfig, h: int, k: int) -> dict[str, tuple]:
    A = h * cfg.head_dim
    full = slice(None)
    return {"wq": (full, slice(0, A)), "bq": (slice(0, A),),
            "wk": (full, slice(0, A)), "bk": (slice(0, A),),
            "wv": (full, slice(0, A)), "bv": (slice(0, A),),
            "wo": (slice(0, A), full), "bo": (full,),
            "ln1_g": (full,), "ln1_b": (full,),
            "w1": (full, slice(0, k)), "b1": (slice(0, k),),
            "w2": (slice(0, k), full), "b2": (full,),
            "ln2_g": (full,), "ln2_b": (full,)}


def _check_arch(cfg: SupernetConfig, arch: ArchitectureSpec):
    if not 1 <= arch.depth <= cfg.max_depth:
        raise ValueError(f"depth {arch.depth} outside 1..{cfg.max_depth}")
    for h, k in zip(arch.heads[:arch.depth], arch.intermediates[:arch.depth]):
        if h not in cfg.head_options or k not in cfg.intermediate_options:
            raise ValueError(f"architecture {arch} not in supernet options")


def extract_subnet(W: SupernetWeights, arch: ArchitectureSpec) -> SubnetWeights:
    cfg = W.config
    _check_arch(cfg, arch)
    layers = []
    for l in range(arch.depth):
        sl = _layer_slices(cfg, arch.heads[l], arch.intermediates[l])
        layers.append({n: W.tensors[f"layer{l}.{n}"][sl[n]] for n in LAYER_TENSORS})
    return SubnetWeights(arch, cfg, W["embed"], layers, W["cls_w"], W["cls_b"])


def active_masks(W: SupernetWeights, arch: ArchitectureSpec) -> dict[str, np.ndarray]:
    """Boolean mask per tensor marking the entries ``arch`` uses."""
    cfg = W.config
    masks = {name: np.zeros(t.shape, dtype=bool) for name, t in W.tensors.items()}
    masks["embed"][:] = True
    masks["cls_w"][:] = True
    masks["cls_b"][:] = True
    for l in range(arch.depth):
        sl = _layer_slices(cfg, arch.heads[l], arch.intermediates[l])
        for n in LAYER_TENSORS:
            masks[f"layer{l}.{n}"][sl[n]] = True
    return masks


# -- numerics ------------------------------------------------------------------------

def gelu(x):
    return 0.5 * x * (1.0 + erf(x / _SQRT2))


def gelu_grad(x):
    cdf = 0.5 * (1.0 + erf(x / _SQRT2))
    return cdf + x * _INV_SQRT_2PI * np.exp(-0.5 * x * x)


def _layer_norm(x, g, b):
    mu = x.mean(-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + LN_EPS)
    xhat = xc * inv
    return xhat * g + b, (xhat, inv)


def _layer_norm_back(dy, g, cache):
    xhat, inv = cache
    dg = (dy * xhat).reshape(-1, dy.shape[-1]).sum(0)
    db = dy.reshape(-1, dy.shape[-1]).sum(0)
    dxhat = dy * g
    dx = inv * (dxhat - dxhat.mean(-1, keepdims=True)
                - xhat * (dxhat * xhat).mean(-1, keepdims=True))
    return dx, dg, db


def _softmax(z, axis=-1):
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def _cross_entropy(logits, labels):
    p = _softmax(logits)
    n = len(labels)
    loss = -np.mean(np.log(p[np.arange(n), labels]))
    return loss, p


def _split_heads(t, h, hd):
    B, S, _ = t.shape
    return t.reshape(B, S, h, hd).transpose(0, 2, 1, 3)


def _merge_heads(t):
    B, h, S, hd = t.shape
    return t.transpose(0, 2, 1, 3).reshape(B, S, h * hd)


def _layer_forward(x, p, h, hd, head_mask=None, ffn_mask=None):
    q = x @ p["wq"] + p["bq"]
    k = x @ p["wk"] + p["bk"]
    v = x @ p["wv"] + p["bv"]
    qh, kh, vh = (_split_heads(t, h, hd) for t in (q, k, v))
    scale = 1.0 / np.sqrt(hd)
    att = _softmax(qh @ kh.transpose(0, 1, 3, 2) * scale)
    ctx = _merge_heads(att @ vh)
    if head_mask is not None:
        ctx = ctx * head_mask
    r1 = x + ctx @ p["wo"] + p["bo"]
    y1, ln1 = _layer_norm(r1, p["ln1_g"], p["ln1_b"])
    pre = y1 @ p["w1"] + p["b1"]
    f = gelu(pre)
    if ffn_mask is not None:
        f = f * ffn_mask
    r2 = y1 + f @ p["w2"] + p["b2"]
    out, ln2 = _layer_norm(r2, p["ln2_g"], p["ln2_b"])
    cache = (x, qh, kh, vh, att, ctx, y1, ln1, pre, f, ln2, h, hd, scale)
    return out, cache


def _layer_backward(dout, p, cache):
    x, qh, kh, vh, att, ctx, y1, ln1, pre, f, ln2, h, hd, scale = cache
    g = {}
    dr2, g["ln2_g"], g["ln2_b"] = _layer_norm_back(dout, p["ln2_g"], ln2)
    g["w2"] = np.einsum("bsk,bse->ke", f, dr2)
    g["b2"] = dr2.sum((0, 1))
    df = dr2 @ p["w2"].T
    dpre = df * gelu_grad(pre)
    g["w1"] = np.einsum("bse,bsk->ek", y1, dpre)
    g["b1"] = dpre.sum((0, 1))
    dy1 = dr2 + dpre @ p["w1"].T
    dr1, g["ln1_g"], g["ln1_b"] = _layer_norm_back(dy1, p["ln1_g"], ln1)
    g["wo"] = np.einsum("bsa,bse->ae", ctx, dr1)
    g["bo"] = dr1.sum((0, 1))
    dctx = _split_heads(dr1 @ p["wo"].T, h, hd)
    datt = dctx @ vh.transpose(0, 1, 3, 2)
    dvh = att.transpose(0, 1, 3, 2) @ dctx
    dscores = att * (datt - (datt * att).sum(-1, keepdims=True)) * scale
    dqh = dscores @ kh
    dkh = dscores.transpose(0, 1, 3, 2) @ qh
    dx = dr1.copy()
    for name, dt in (("q", dqh), ("k", dkh), ("v", dvh)):
        d = _merge_heads(dt)
        g[f"w{name}"] = np.einsum("bse,bsa->ea", x, d)
        g[f"b{name}"] = d.sum((0, 1))
        dx += d @ p[f"w{name}"].T
    return dx, g


def _run(sub: SubnetWeights, tokens: np.ndarray, labels: np.ndarray):
    cfg = sub.config
    x = sub.embed[tokens]
    caches = []
    for l, p in enumerate(sub.layers):
        x, c = _layer_forward(x, p, sub.arch.heads[l], cfg.head_dim)
        caches.append(c)
    pooled = x.mean(1)
    logits = pooled @ sub.cls_w + sub.cls_b
    loss, probs = _cross_entropy(logits, labels)
    return loss, logits, (tokens, labels, caches, pooled, probs)


def _check_batch(cfg: SupernetConfig, tokens, labels):
    tokens = np.asarray(tokens)
    labels = np.asarray(labels)
    if tokens.ndim != 2 or labels.shape != (tokens.shape[0],):
        raise ValueError(f"bad batch shapes tokens={tokens.shape} labels={labels.shape}")
    if tokens.min() < 0 or tokens.max() >= cfg.vocab_size:
        raise ValueError("token id out of range")
    return tokens, labels


def forward_subnet(sub: SubnetWeights, batch) -> tuple[float, np.ndarray]:
    tokens, labels = _check_batch(sub.config, *batch)
    loss, logits, _ = _run(sub, tokens, labels)
    return float(loss), logits


def forward(W: SupernetWeights, arch: ArchitectureSpec, batch) -> tuple[float, np.ndarray]:
    """Mean cross-entropy and logits of ``arch`` with inherited weights."""
    return forward_subnet(extract_subnet(W, arch), batch)


def forward_masked(W: SupernetWeights, arch: ArchitectureSpec, batch) -> tuple[float, np.ndarray]:
    """Reference route: full-size tensors with inactive heads/units/layers masked out."""
    cfg = W.config
    _check_arch(cfg, arch)
    tokens, labels = _check_batch(cfg, *batch)
    x = W["embed"][tokens]
    for l in range(cfg.max_depth):
        if l >= arch.depth:
            continue
        p = {n: W[f"layer{l}.{n}"] for n in LAYER_TENSORS}
        head_mask = (np.arange(cfg.embed_dim) < arch.heads[l] * cfg.head_dim).astype(x.dtype)
        ffn_mask = (np.arange(cfg.max_intermediate) < arch.intermediates[l]).astype(x.dtype)
        x, _ = _layer_forward(x, p, cfg.max_heads, cfg.head_dim, head_mask, ffn_mask)
    logits = x.mean(1) @ W["cls_w"] + W["cls_b"]
    loss, _ = _cross_entropy(logits, labels)
    return float(loss), logits


def loss_and_gradients(W: SupernetWeights, arch: ArchitectureSpec, batch):
    """Loss plus gradients shaped like the supernet tensors (zero outside ``arch``)."""
    sub = extract_subnet(W, arch)
    tokens, labels = _check_batch(W.config, *batch)
    loss, _, (tokens, labels, caches, pooled, probs) = _run(sub, tokens, labels)
    B, S = tokens.shape
    grads = {name: np.zeros_like(t) for name, t in W.tensors.items()}
    dlogits = probs.copy()
    dlogits[np.arange(B), labels] -= 1.0
    dlogits /= B
    grads["cls_w"] = pooled.T @ dlogits
    grads["cls_b"] = dlogits.sum(0)
    dpooled = dlogits @ sub.cls_w.T
    dx = np.broadcast_to(dpooled[:, None, :] / S, (B, S, dpooled.shape[1])).copy()
    sl_all = [_layer_slices(W.config, arch.heads[l], arch.intermediates[l]) for l in range(arch.depth)]
    for l in reversed(range(arch.depth)):
        dx, g = _layer_backward(dx, sub.layers[l], caches[l])
        for n in LAYER_TENSORS:
            grads[f"layer{l}.{n}"][sl_all[l][n]] = g[n]
    np.add.at(grads["embed"], tokens, dx)
    return float(loss), grads


def gradients(W: SupernetWeights, arch: ArchitectureSpec, batch) -> dict[str, np.ndarray]:
    return loss_and_gradients(W, arch, batch)[1]


def accuracy(W: SupernetWeights, arch: ArchitectureSpec, batches) -> float:
    sub = extract_subnet(W, arch)
    correct = total = 0
    for tokens, labels in batches:
        _, logits = forward_subnet(sub, (tokens, labels))
        correct += int((logits.argmax(1) == labels).sum())
        total += len(labels)
    return correct / total


# -- optimizer -------------------------------------------------------------------------

@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0

    @classmethod
    def zeros(cls, W: SupernetWeights) -> "AdamState":
        return cls({k: np.zeros_like(x) for k, x in W.tensors.items()},
                   {k: np.zeros_like(x) for k, x in W.tensors.items()})

    def copy(self) -> "AdamState":
        return AdamState({k: x.copy() for k, x in self.m.items()},
                         {k: x.copy() for k, x in self.v.items()}, self.t)


def linear_decay(base_lr: float, step: int, total_steps: int) -> float:
    if total_steps <= 0:
        return base_lr
    return base_lr * max(0.0, 1.0 - step / total_steps)


def apply_update(W: SupernetWeights, grads: dict[str, np.ndarray], lr: float, state: AdamState,
                 masks: dict[str, np.ndarray] | None = None,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> SupernetWeights:
    """One Adam step in place (no weight decay); returns ``W``.

    With ``masks`` only the masked entries and their moments are touched, so
    slices unused by the current step's architectures stay bit-identical.
    """
    state.t += 1
    c1 = 1.0 - beta1 ** state.t
    c2 = 1.0 - beta2 ** state.t
    for name, w in W.tensors.items():
        g = grads[name]
        m, v = state.m[name], state.v[name]
        if masks is None:
            m *= beta1
            m += (1 - beta1) * g
            v *= beta2
            v += (1 - beta2) * g * g
            w -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
        else:
            mk = masks[name]
            if not mk.any():
                continue
            m[mk] = beta1 * m[mk] + (1 - beta1) * g[mk]
            v[mk] = beta2 * v[mk] + (1 - beta2) * g[mk] ** 2
            w[mk] -= lr * (m[mk] / c1) / (np.sqrt(v[mk] / c2) + eps)
    return W
