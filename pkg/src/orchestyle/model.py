"""Transformer VAE with one latent per bar and in-attention conditioning.

Encoder: each bar's tokens are encoded on their own (bidirectional
self-attention, masked mean pool) into a diagonal Gaussian posterior.
Decoder: causal transformer over the whole sequence; before every layer the
projection of ``[z_b ; rhythm_emb ; poly_emb]`` of the position's bar ``b``
is added to the hidden state.

Loss: mean token cross-entropy + beta * sum over bars and dims of
``max(KL_dim - free_bits, 0)`` against N(0, I), averaged over sequences.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .errors import InputError, NonFiniteLossError
from .tokens import BAR, EOS, TokenSequence, Vocabulary

CHECKPOINT_FORMAT = "orchestyle-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass
class ModelConfig:
    vocab_size: int
    embed_dim: int = 128
    enc_layers: int = 2
    dec_layers: int = 2
    heads: int = 4
    latent_dim: int = 32
    cond_dim: int = 32
    ffn_mult: int = 4
    beta: float = 1.0
    free_bits: float = 0.25
    context: int = 1024
    dropout: float = 0.0
    logvar_min: float = -8.0
    logvar_max: float = 8.0
    n_bar_classes: int = 8

    def __post_init__(self) -> None:
        for name in ("vocab_size", "embed_dim", "enc_layers", "dec_layers", "heads", "latent_dim", "cond_dim", "context"):
            if getattr(self, name) <= 0:
                raise InputError(f"ModelConfig.{name} must be positive")
        if self.embed_dim % self.heads:
            raise InputError("embed_dim must be divisible by heads")
        if self.beta < 0 or self.free_bits < 0:
            raise InputError("beta and free_bits must be non-negative")


def sinusoidal(positions: torch.Tensor, dim: int) -> torch.Tensor:
    half = dim // 2
    freq = torch.exp(-math.log(10000.0) * torch.arange(half, dtype=torch.float64) / half)
    angles = positions.to(torch.float64)[..., None] * freq
    out = torch.cat([angles.sin(), angles.cos()], dim=-1)
    if dim % 2:
        out = F.pad(out, (0, 1))
    return out


class SelfAttention(nn.Module):
    def __init__(self, dim: int, heads: int):
        super().__init__()
        self.heads = heads
        self.qkv = nn.Linear(dim, 3 * dim)
        self.out = nn.Linear(dim, dim)

    def forward(self, x, mask=None, cache=None):
        B, L, D = x.shape
        h = self.heads
        q, k, v = self.qkv(x).view(B, L, 3, h, D // h).permute(2, 0, 3, 1, 4)
        if cache is not None:
            if cache["k"] is not None:
                k = torch.cat([cache["k"], k], dim=2)
                v = torch.cat([cache["v"], v], dim=2)
            cache["k"], cache["v"] = k, v
        scores = q @ k.transpose(-1, -2) / math.sqrt(D // h)
        if mask is not None:
            scores = scores.masked_fill(~mask, float("-inf"))
        att = scores.softmax(-1)
        return self.out((att @ v).transpose(1, 2).reshape(B, L, D))


class Block(nn.Module):
    def __init__(self, dim: int, heads: int, ffn_mult: int, dropout: float):
        super().__init__()
        self.ln1 = nn.LayerNorm(dim)
        self.attn = SelfAttention(dim, heads)
        self.ln2 = nn.LayerNorm(dim)
        self.ffn = nn.Sequential(nn.Linear(dim, ffn_mult * dim), nn.GELU(), nn.Linear(ffn_mult * dim, dim))
        self.drop = nn.Dropout(dropout)

    def forward(self, x, mask=None, cache=None):
        x = x + self.drop(self.attn(self.ln1(x), mask, cache))
        return x + self.drop(self.ffn(self.ln2(x)))


@dataclass
class Batch:
    """Tensors for one training step; see :func:`collate`."""

    inputs: torch.Tensor  # (B, L) decoder input ids
    targets: torch.Tensor  # (B, L) next-token ids, pad where ignored
    input_bars: torch.Tensor  # (B, L) bar index of each input position
    bar_tokens: torch.Tensor  # (N, Lb) token ids of every bar in the batch
    bar_owner: torch.Tensor  # (N,) sequence index of each bar
    bar_slot: torch.Tensor  # (N,) bar number inside its sequence
    conditions: torch.Tensor  # (B, n_bars_max, 2) class ids, 0-based
    n_bars: torch.Tensor  # (B,)


def collate(seqs: Sequence[TokenSequence], vocab: Vocabulary, context: int | None = None) -> Batch:
    pad = vocab.pad_id
    inputs, targets, in_bars, conds = [], [], [], []
    bar_tokens, owner, slot = [], [], []
    for i, seq in enumerate(seqs):
        if seq.conditions is None:
            raise InputError("training sequences need bar conditions")
        ids = vocab.encode_ids(seq.tokens)
        if context is not None and len(ids) - 1 > context:
            raise InputError(f"sequence {i} has {len(ids) - 1} decoder positions, context is {context}")
        inputs.append(ids[:-1])
        targets.append(ids[1:])
        in_bars.append(list(seq.bar_index[:-1]))
        conds.append([(r - 1, p - 1) for r, p in seq.conditions])
        for b, (start, stop) in enumerate(seq.bar_spans()):
            if context is not None and stop - start > context:
                raise InputError(f"bar {b} of sequence {i} has {stop - start} tokens, context is {context}")
            bar_tokens.append(ids[start:stop])
            owner.append(i)
            slot.append(b)
    L = max(map(len, inputs))
    Lb = max(map(len, bar_tokens))
    nb = max(len(c) for c in conds)

    def padded(rows, width, value):
        return torch.tensor([r + [value] * (width - len(r)) for r in rows], dtype=torch.long)

    return Batch(
        padded(inputs, L, pad),
        padded(targets, L, pad),
        padded(in_bars, L, 0),
        padded(bar_tokens, Lb, pad),
        torch.tensor(owner),
        torch.tensor(slot),
        torch.tensor([c + [(0, 0)] * (nb - len(c)) for c in conds], dtype=torch.long).view(len(seqs), nb, 2),
        torch.tensor([len(c) for c in conds]),
    )


@dataclass
class LossTerms:
    total: torch.Tensor
    reconstruction: torch.Tensor
    kl: torch.Tensor
    kl_raw: torch.Tensor = field(repr=False, default=None)


def kl_per_dim(mu: torch.Tensor, logvar: torch.Tensor) -> torch.Tensor:
    """KL(N(mu, exp(logvar)) || N(0, 1)) for every coordinate."""
    return 0.5 * (mu.pow(2) + logvar.exp() - 1.0 - logvar)


def free_bits_kl(mu: torch.Tensor, logvar: torch.Tensor, free_bits: float, n_sequences: int) -> torch.Tensor:
    return torch.clamp(kl_per_dim(mu, logvar) - free_bits, min=0.0).sum() / n_sequences


class TextureVAE(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = c = config
        d = c.embed_dim
        self.tok_emb = nn.Embedding(c.vocab_size, d)
        self.encoder = nn.ModuleList(Block(d, c.heads, c.ffn_mult, c.dropout) for _ in range(c.enc_layers))
        self.enc_norm = nn.LayerNorm(d)
        self.to_posterior = nn.Linear(d, 2 * c.latent_dim)
        self.rhythm_emb = nn.Embedding(c.n_bar_classes, c.cond_dim)
        self.poly_emb = nn.Embedding(c.n_bar_classes, c.cond_dim)
        cond_width = c.latent_dim + 2 * c.cond_dim
        self.in_attention = nn.ModuleList(nn.Linear(cond_width, d) for _ in range(c.dec_layers))
        self.decoder = nn.ModuleList(Block(d, c.heads, c.ffn_mult, c.dropout) for _ in range(c.dec_layers))
        self.dec_norm = nn.LayerNorm(d)
        self.head = nn.Linear(d, c.vocab_size)

    def _embed(self, ids: torch.Tensor, offset: int = 0) -> torch.Tensor:
        pos = torch.arange(offset, offset + ids.shape[1])
        return self.tok_emb(ids) + sinusoidal(pos, self.config.embed_dim).to(self.tok_emb.weight.dtype)

    def encode_bar_ids(self, bar_tokens: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """(N, Lb) padded bar token ids -> posterior mean and log-variance, (N, latent)."""
        keep = bar_tokens != 0
        x = self._embed(bar_tokens)
        mask = keep[:, None, None, :]
        for block in self.encoder:
            x = block(x, mask)
        x = self.enc_norm(x)
        w = keep.to(x.dtype)[..., None]
        pooled = (x * w).sum(1) / w.sum(1).clamp(min=1.0)
        mu, logvar = self.to_posterior(pooled).chunk(2, dim=-1)
        return mu, logvar.clamp(self.config.logvar_min, self.config.logvar_max)

    def condition_vectors(self, latents: torch.Tensor, conditions: torch.Tensor) -> torch.Tensor:
        """(B, nb, latent) and (B, nb, 2) 0-based classes -> (B, nb, latent + 2 cond)."""
        return torch.cat([latents, self.rhythm_emb(conditions[..., 0]), self.poly_emb(conditions[..., 1])], dim=-1)

    def decode_logits(self, inputs, input_bars, cond_vectors, offset: int = 0, caches=None):
        """Logits for every position. ``caches`` (one dict per layer) enables incremental use."""
        x = self._embed(inputs, offset)
        per_pos = cond_vectors.gather(1, input_bars[..., None].expand(-1, -1, cond_vectors.shape[-1]))
        L = inputs.shape[1]
        if caches is None:
            mask = torch.ones(L, L, dtype=torch.bool).tril()[None, None]
        else:
            past = 0 if caches[0]["k"] is None else caches[0]["k"].shape[2]
            mask = torch.ones(L, past + L, dtype=torch.bool).tril(past)[None, None]
        for i, (proj, block) in enumerate(zip(self.in_attention, self.decoder)):
            x = x + proj(per_pos)
            x = block(x, mask, None if caches is None else caches[i])
        return self.head(self.dec_norm(x))

    def forward(self, batch: Batch, noise: torch.Tensor | None = None, sample: bool | None = None):
        """Returns (logits, mu, logvar). ``noise`` fixes the reparameterization draw."""
        mu, logvar = self.encode_bar_ids(batch.bar_tokens)
        sample = self.training if sample is None else sample
        if noise is not None:
            z = mu + (0.5 * logvar).exp() * noise
        elif sample:
            z = mu + (0.5 * logvar).exp() * torch.randn_like(mu)
        else:
            z = mu
        B, nb = batch.conditions.shape[:2]
        latents = z.new_zeros(B, nb, self.config.latent_dim)
        latents = latents.index_put((batch.bar_owner, batch.bar_slot), z)
        cond = self.condition_vectors(latents, batch.conditions)
        return self.decode_logits(batch.inputs, batch.input_bars, cond), mu, logvar


def loss(model: TextureVAE, batch: Batch, noise: torch.Tensor | None = None, beta: float | None = None) -> LossTerms:
    c = model.config
    beta = c.beta if beta is None else beta
    logits, mu, logvar = model(batch, noise)
    ce = F.cross_entropy(logits.transpose(1, 2), batch.targets, ignore_index=0, reduction="none")
    valid = batch.targets != 0
    recon = ce.sum() / valid.sum()
    kl = free_bits_kl(mu, logvar, c.free_bits, batch.inputs.shape[0])
    total = recon + beta * kl if beta else recon
    if not torch.isfinite(total):
        per_seq = ce.sum(1) / valid.sum(1).clamp(min=1)
        bad = [i for i in range(len(per_seq)) if not torch.isfinite(per_seq[i])]
        if not bad:
            bad_bars = (~torch.isfinite(mu).all(-1)) | (~torch.isfinite(logvar).all(-1))
            bad = sorted(set(batch.bar_owner[bad_bars].tolist())) or [-1]
        raise NonFiniteLossError(bad[0], f"(reconstruction={recon.item()}, kl={kl.item()})")
    return LossTerms(total, recon, kl, kl_per_dim(mu, logvar))


def bar_id_tensor(seq: TokenSequence, vocab: Vocabulary) -> torch.Tensor:
    spans = seq.bar_spans()
    ids = vocab.encode_ids(seq.tokens)
    rows = [ids[a:b] for a, b in spans]
    width = max(map(len, rows))
    return torch.tensor([r + [0] * (width - len(r)) for r in rows], dtype=torch.long)


@torch.no_grad()
def encode_bars(model: TextureVAE, seq: TokenSequence, vocab: Vocabulary) -> tuple[torch.Tensor, torch.Tensor]:
    """Posterior (mean, log-variance) of every bar, each bar encoded on its own."""
    for b, (start, stop) in enumerate(seq.bar_spans()):
        if stop - start > model.config.context:
            raise InputError(f"bar {b} has {stop - start} tokens, over the context of {model.config.context}")
    was = model.training
    model.eval()
    try:
        return model.encode_bar_ids(bar_id_tensor(seq, vocab))
    finally:
        model.train(was)


def _cond_tensor(model: TextureVAE, latents: torch.Tensor, conditions: Sequence[tuple[int, int]]) -> torch.Tensor:
    n = len(conditions)
    lat = torch.zeros(1, n, model.config.latent_dim, dtype=model.head.weight.dtype)
    k = min(n, latents.shape[0])
    lat[0, :k] = latents[:k].to(lat.dtype)
    cls = torch.tensor([[(r - 1, p - 1) for r, p in conditions]], dtype=torch.long)
    return model.condition_vectors(lat, cls)


@torch.no_grad()
def decode_step(
    model: TextureVAE,
    prefix: TokenSequence,
    latents: torch.Tensor,
    conditions: Sequence[tuple[int, int]],
    vocab: Vocabulary,
) -> np.ndarray:
    """Next-token distribution after ``prefix`` (full recomputation)."""
    was = model.training
    model.eval()
    try:
        ids = torch.tensor([vocab.encode_ids(prefix.tokens)])[:, -model.config.context:]
        offset = len(prefix.tokens) - ids.shape[1]
        bars = torch.tensor([prefix.bar_index])[:, offset:]
        cond = _cond_tensor(model, latents, conditions)
        logits = model.decode_logits(ids, bars.clamp(max=cond.shape[1] - 1), cond, offset=offset)[0, -1]
        return logits.double().softmax(-1).numpy()
    finally:
        model.train(was)


class Session:
    """Incremental decoding with a key/value cache capped at the context length."""

    def __init__(self, model: TextureVAE, latents: torch.Tensor, conditions: Sequence[tuple[int, int]]):
        self.model = model
        self.cond = _cond_tensor(model, latents, conditions)
        self.caches = [{"k": None, "v": None} for _ in model.decoder]
        self.position = 0

    @torch.no_grad()
    def push(self, token_id: int, bar: int) -> np.ndarray:
        m = self.model
        ids = torch.tensor([[token_id]])
        bars = torch.tensor([[min(bar, self.cond.shape[1] - 1)]])
        logits = m.decode_logits(ids, bars, self.cond, offset=self.position, caches=self.caches)[0, -1]
        self.position += 1
        limit = m.config.context - 1
        for cache in self.caches:
            if cache["k"].shape[2] > limit:
                cache["k"] = cache["k"][:, :, -limit:]
                cache["v"] = cache["v"][:, :, -limit:]
        return logits.double().softmax(-1).numpy()


class NeuralGenerator:
    """Adapter giving the decoder a uniform interface over a trained model."""

    def __init__(self, model: TextureVAE, vocab: Vocabulary):
        self.model = model.eval()
        self.vocab = vocab

    def latents_for(self, reference: TokenSequence) -> torch.Tensor:
        return encode_bars(self.model, reference, self.vocab)[0]

    def session(self, latents: torch.Tensor, conditions: Sequence[tuple[int, int]]) -> Session:
        return Session(self.model, latents, conditions)


class UniformGenerator:
    """Stub model: uniform next-token distribution, for grammar-only tests."""

    def __init__(self, vocab: Vocabulary):
        self.vocab = vocab

    def latents_for(self, reference: TokenSequence) -> torch.Tensor:
        return torch.zeros(reference.n_bars, 1)

    def session(self, latents, conditions):
        n = len(self.vocab)
        probs = np.full(n, 1.0 / n)

        class _S:
            def push(self, token_id: int, bar: int) -> np.ndarray:
                return probs

        return _S()


def save_checkpoint(path, model: TextureVAE, grammar: dict | None = None, extra: dict | None = None) -> None:
    params = {k: v.detach().clone() for k, v in model.state_dict().items()}
    torch.save(
        {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "config": asdict(model.config),
            "grammar": grammar,
            "shapes": {k: list(v.shape) for k, v in params.items()},
            "params": params,
            "extra": extra or {},
        },
        path,
    )


def load_checkpoint(path) -> tuple[TextureVAE, dict]:
    blob = torch.load(path, map_location="cpu", weights_only=True)
    if blob.get("format") != CHECKPOINT_FORMAT or blob.get("version") != CHECKPOINT_VERSION:
        raise InputError(f"{path}: not a version-{CHECKPOINT_VERSION} {CHECKPOINT_FORMAT}")
    for name, shape in blob["shapes"].items():
        if list(blob["params"][name].shape) != shape:
            raise InputError(f"{path}: parameter {name} has shape {list(blob['params'][name].shape)}, header says {shape}")
    model = TextureVAE(ModelConfig(**blob["config"]))
    dtype = next(iter(blob["params"].values())).dtype
    model.to(dtype)
    model.load_state_dict(blob["params"])
    model.eval()
    return model, blob
