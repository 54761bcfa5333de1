"""Layers and the Adam optimizer, built on the autodiff primitives.

All linear maps initialize from a zero-mean uniform with bound
1/sqrt(fan_in); layer-norm gains start at 1 and biases at 0. Every layer
exposes named_params() so checkpointing and optimizers can enumerate
leaves deterministically.
"""

from __future__ import annotations

from typing import Optional

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ValidationError


class Module:
    """Minimal container: child modules and direct parameters, in order."""

    def named_params(self) -> list[tuple[str, Tensor]]:
        out: list[tuple[str, Tensor]] = []
        for key, val in self.__dict__.items():
            if isinstance(val, Tensor) and val.requires_grad:
                out.append((key, val))
            elif isinstance(val, Module):
                out.extend((f"{key}.{n}", p) for n, p in val.named_params())
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        out.extend((f"{key}.{i}.{n}", p) for n, p in item.named_params())
                    elif isinstance(item, Tensor) and item.requires_grad:
                        out.append((f"{key}.{i}", item))
        return out

    def params(self) -> list[Tensor]:
        return [p for _, p in self.named_params()]


class Linear(Module):
    def __init__(self, rng: np.random.Generator, d_in: int, d_out: int,
                 bias: bool = True):
        bound = 1.0 / np.sqrt(d_in)
        self.w = Tensor(rng.uniform(-bound, bound, size=(d_in, d_out)),
                        requires_grad=True)
        self.b = Tensor(np.zeros(d_out), requires_grad=True) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        y = ad.matmul(x, self.w)
        return ad.add(y, self.b) if self.b is not None else y


class LayerNorm(Module):
    def __init__(self, d: int, eps: float = 1e-5):
        self.gain = Tensor(np.ones(d), requires_grad=True)
        self.bias = Tensor(np.zeros(d), requires_grad=True)
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return ad.layer_norm(x, self.gain, self.bias, self.eps)


class MultiHeadAttention(Module):
    """Heads realized by column slicing; no causal masking."""

    def __init__(self, rng: np.random.Generator, d: int, heads: int):
        if d % heads != 0:
            raise ValidationError(f"model dim {d} not divisible by {heads} heads")
        self.heads = heads
        self.d_head = d // heads
        self.wq = Linear(rng, d, d)
        # a key bias shifts every score in a row equally and softmax
        # cancels it exactly, so it would be a dead parameter
        self.wk = Linear(rng, d, d, bias=False)
        self.wv = Linear(rng, d, d)
        self.wo = Linear(rng, d, d)

    def __call__(self, q_in: Tensor, k_in: Tensor, v_in: Tensor,
                 mask: Optional[Tensor] = None) -> Tensor:
        q, k, v = self.wq(q_in), self.wk(k_in), self.wv(v_in)
        outs = []
        for h in range(self.heads):
            lo, hi = h * self.d_head, (h + 1) * self.d_head
            outs.append(ad.attention(ad.slice_cols(q, lo, hi),
                                     ad.slice_cols(k, lo, hi),
                                     ad.slice_cols(v, lo, hi), mask))
        return self.wo(ad.concat(outs, axis=1))


class FeedForward(Module):
    def __init__(self, rng: np.random.Generator, d: int, d_ff: int):
        self.lin1 = Linear(rng, d, d_ff)
        self.lin2 = Linear(rng, d_ff, d)

    def __call__(self, x: Tensor) -> Tensor:
        return self.lin2(ad.relu(self.lin1(x)))


class EncoderLayer(Module):
    """Post-norm transformer encoder block."""

    def __init__(self, rng, d: int, heads: int, d_ff: int):
        self.attn = MultiHeadAttention(rng, d, heads)
        self.ln1 = LayerNorm(d)
        self.ff = FeedForward(rng, d, d_ff)
        self.ln2 = LayerNorm(d)

    def __call__(self, x: Tensor, mask: Optional[Tensor] = None) -> Tensor:
        x = self.ln1(ad.add(x, self.attn(x, x, x, mask)))
        return self.ln2(ad.add(x, self.ff(x)))


class DecoderLayer(Module):
    """Self-attention, then cross-attention over a memory sequence.

    No causal mask: the decoders refine representations rather than
    generate. With cross_attention=False the cross sublayer (and its
    norm) is skipped entirely, leaving a plain self-attention block.
    """

    def __init__(self, rng, d: int, heads: int, d_ff: int):
        self.self_attn = MultiHeadAttention(rng, d, heads)
        self.ln1 = LayerNorm(d)
        self.cross_attn = MultiHeadAttention(rng, d, heads)
        self.ln2 = LayerNorm(d)
        self.ff = FeedForward(rng, d, d_ff)
        self.ln3 = LayerNorm(d)

    def __call__(self, x: Tensor, memory: Tensor,
                 cross_attention: bool = True) -> Tensor:
        x = self.ln1(ad.add(x, self.self_attn(x, x, x)))
        if cross_attention:
            x = self.ln2(ad.add(x, self.cross_attn(x, memory, memory)))
        return self.ln3(ad.add(x, self.ff(x)))


def sinusoidal_positions(length: int, d: int) -> np.ndarray:
    """Parameter-free position encoding matrix [length x d]."""
    pos = np.arange(length, dtype=np.float64)[:, None]
    i = np.arange(d, dtype=np.float64)[None, :]
    angle = pos / np.power(10000.0, 2.0 * np.floor(i / 2.0) / d)
    enc = np.where(i % 2 == 0, np.sin(angle), np.cos(angle))
    return enc


class Adam:
    """Adam over an explicit parameter list, reading .grad after backward."""

    def __init__(self, params: list[Tensor], lr: float = 1e-3,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        if lr <= 0:
            raise ValidationError(f"learning rate must be positive, got {lr}")
        self.params = list(params)
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self._m = {p.uid: np.zeros_like(p.data) for p in self.params}
        self._v = {p.uid: np.zeros_like(p.data) for p in self.params}

    def step(self) -> None:
        self.t += 1
        bc1 = 1.0 - self.b1 ** self.t
        bc2 = 1.0 - self.b2 ** self.t
        for p in self.params:
            g = p.grad
            if g is None:
                continue
            m = self._m[p.uid]
            v = self._v[p.uid]
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * (g * g)
            p.data -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None
