"""Desk-scale experiments shared by the scripts and the acceptance suite.

``desk_training`` trains a small model on a synthetic corpus and compares
its bar-level controllability with an untrained model of the same shape.
``register_study`` measures where octave inference puts a melody for a
given target instrument.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from .attributes import BinTable, extract_profile, fit_bins
from .decoder import SamplingParams, build_request, transfer
from .instruments import InstrumentRegistry, default_registry
from .metrics import Correlation, spearman
from .model import ModelConfig, NeuralGenerator, TextureVAE, collate, loss
from .score import QuantizedScore
from .synth import SynthConfig, homophonic_corpus
from .tokens import GrammarConfig, TokenSequence, Vocabulary, decode, encode, split_long_notes
from .train import TrainConfig, crop_to_context, single_threaded, train

DESK_MODEL = dict(embed_dim=64, enc_layers=1, dec_layers=2, heads=4, latent_dim=16, cond_dim=16, ffn_mult=2,
                  context=512)


def tokenize_corpus(corpus: Sequence[QuantizedScore], bins: BinTable, grammar: GrammarConfig) -> list[TokenSequence]:
    out = []
    for score in corpus:
        score = split_long_notes(score, grammar.max_duration)
        out.append(encode(score, extract_profile(score, bins), grammar))
    return out


@torch.no_grad()
def reconstruction_loss(model: TextureVAE, seqs: Sequence[TokenSequence], vocab: Vocabulary) -> float:
    """Cross-entropy on ``seqs`` with latents at their posterior means."""
    was = model.training
    model.eval()
    try:
        ctx = model.config.context
        seqs = [s if len(s) - 1 <= ctx else crop_to_context(s, ctx) for s in seqs]
        batch = collate(seqs, vocab, ctx)
        noise = torch.zeros(batch.bar_tokens.shape[0], model.config.latent_dim, dtype=model.head.weight.dtype)
        return loss(model, batch, noise, beta=0.0).reconstruction.item()
    finally:
        model.train(was)


def rhythm_controllability(
    generator,
    vocab: Vocabulary,
    references: Sequence[QuantizedScore],
    bins: BinTable,
    seed: int = 0,
    registry: InstrumentRegistry | None = None,
) -> tuple[Correlation, list[tuple[int, int]]]:
    """Pooled Spearman between requested and realized rhythmicity classes.

    Every reference gets random per-bar classes (both attributes drawn
    uniformly from 1-8), keeps its own instrumentation, and no melody.
    """
    rng = np.random.default_rng(seed)
    pairs = []
    for i, ref in enumerate(references):
        controls = [(int(rng.integers(1, 9)), int(rng.integers(1, 9))) for _ in range(ref.n_bars)]
        request = build_request(ref, bins, bar_controls=controls, sampling=SamplingParams(seed=seed * 1000 + i),
                                registry=registry)
        trace = transfer(request, generator, vocab, registry, bins)
        pairs += [(want[0], got[0]) for want, got in zip(controls, trace.realized)]
    return spearman([a for a, _ in pairs], [b for _, b in pairs]), pairs


@dataclass
class DeskResult:
    initial_loss: float
    final_loss: float
    steps: int
    seconds: float
    trained: Correlation
    untrained: Correlation
    log: list[dict] = field(default_factory=list, repr=False)
    model: TextureVAE | None = field(default=None, repr=False)

    @property
    def halved(self) -> bool:
        return self.final_loss <= 0.5 * self.initial_loss


def desk_training(
    n_pieces: int = 200,
    n_held_out: int = 12,
    steps: int = 2000,
    batch_size: int = 8,
    lr: float = 1e-3,
    seed: int = 0,
    model: dict | None = None,
    synth: SynthConfig = SynthConfig(),
    checkpoint_path: str | None = None,
) -> DeskResult:
    """Train on ``n_pieces`` synthetic pieces; probe controllability on held-out ones.

    With ``checkpoint_path`` the model is saved there and the bin table next
    to it as ``bins.json``.
    """
    grammar = GrammarConfig.from_registry(grid=synth.grid)
    vocab = Vocabulary(grammar)
    pieces = homophonic_corpus(n_pieces + n_held_out, seed, synth)
    corpus, held_out = pieces[:n_pieces], pieces[n_pieces:]
    bins = fit_bins(corpus)
    seqs = tokenize_corpus(corpus, bins, grammar)
    config = ModelConfig(vocab_size=len(vocab), **(model or DESK_MODEL))
    probe = seqs[:16]
    with single_threaded():
        torch.manual_seed(seed)
        untrained = TextureVAE(config).eval()
        initial = reconstruction_loss(untrained, probe, vocab)
        start = time.perf_counter()
        tc = TrainConfig(steps=steps, batch_size=batch_size, lr=lr, seed=seed, warmup=50, log_every=10,
                         checkpoint_path=checkpoint_path)
        result = train(seqs, vocab, config, tc, grammar.to_json())
        seconds = time.perf_counter() - start
        if checkpoint_path:
            Path(checkpoint_path).with_name("bins.json").write_text(bins.dumps())
        final = reconstruction_loss(result.model, probe, vocab)
        trained_rho, _ = rhythm_controllability(NeuralGenerator(result.model, vocab), vocab, held_out, bins, seed)
        untrained_rho, _ = rhythm_controllability(NeuralGenerator(untrained, vocab), vocab, held_out, bins, seed)
    return DeskResult(initial, final, steps, seconds, trained_rho, untrained_rho, result.log, result.model)


@dataclass(frozen=True)
class RegisterRow:
    program: int
    name: str
    register: tuple[int, int]
    mean_pitches: tuple[float, ...]
    max_pitch: int

    @property
    def within(self) -> bool:
        lo, hi = self.register
        return all(lo <= m <= hi for m in self.mean_pitches)


def register_study(
    generator,
    vocab: Vocabulary,
    extracts: Sequence[QuantizedScore],
    programs: Sequence[int],
    bins: BinTable | None,
    strict: bool,
    seed: int = 0,
    registry: InstrumentRegistry | None = None,
) -> list[RegisterRow]:
    """Octave-inference transfer of each extract's melody to each program.

    Per (program, extract) the mean pitch of the generated melody track is
    recorded; the instrumentation is the melodic instrument alone.
    """
    registry = registry or default_registry()
    rows = []
    for program in programs:
        spec = registry.lookup(program)
        means, top = [], 0
        for i, ref in enumerate(extracts):
            request = build_request(
                ref, bins, bar_controls=[(4, 4)] * ref.n_bars if bins is None else "reference",
                instrumentation=[program], melody="reference", melody_instrument=program, octave_mode="infer",
                strict_register=strict, sampling=SamplingParams(seed=seed * 100 + i), registry=registry,
            )
            trace = transfer(request, generator, vocab, registry, bins)
            score, _ = decode(trace.tokens, vocab.config)
            pitches = [n.pitch for n in score.tracks[score.track_index(program)].notes]
            means.append(float(np.mean(pitches)))
            top = max(top, max(pitches))
        rows.append(RegisterRow(program, spec.name, (spec.register_low, spec.register_high), tuple(means), top))
    return rows
