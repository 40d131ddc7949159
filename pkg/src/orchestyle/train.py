"""Deterministic single-process training loop for :class:`TextureVAE`."""

from __future__ import annotations

import copy
import json
import logging
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from .errors import InputError, NonFiniteLossError, TrainingDivergedError
from .model import ModelConfig, TextureVAE, collate, loss, save_checkpoint
from .tokens import BOS, EOS, TokenSequence, Vocabulary

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    steps: int = 2000
    batch_size: int = 8
    lr: float = 1e-3
    weight_decay: float = 0.0
    grad_clip: float = 1.0
    warmup: int = 100
    seed: int = 0
    log_every: int = 1
    checkpoint_path: str | None = None
    log_path: str | None = None


@dataclass
class TrainResult:
    model: TextureVAE
    log: list[dict] = field(default_factory=list)


@contextmanager
def single_threaded():
    before = torch.get_num_threads()
    torch.set_num_threads(1)
    try:
        yield
    finally:
        torch.set_num_threads(before)


def crop_to_context(seq: TokenSequence, context: int, start_bar: int = 0) -> TokenSequence:
    """Whole bars from ``start_bar`` that fit in ``context`` decoder positions."""
    spans = seq.bar_spans()
    tokens = [BOS]
    conds = []
    for b in range(start_bar, len(spans)):
        a, z = spans[b]
        if len(tokens) + (z - a) + 1 > context + 1:
            break
        tokens += seq.tokens[a:z]
        conds.append(seq.conditions[b])
    else:
        tokens.append(EOS)
    if not conds:
        raise InputError(f"bar {start_bar} alone exceeds the context of {context}")
    return TokenSequence(tuple(tokens), tuple(conds))


def train(
    corpus: Sequence[TokenSequence],
    vocab: Vocabulary,
    config: ModelConfig,
    tc: TrainConfig,
    grammar: dict | None = None,
) -> TrainResult:
    """Teacher-forced training. Same seed and inputs give the same run."""
    if not corpus:
        raise InputError("empty training corpus")
    if config.vocab_size != len(vocab):
        raise InputError(f"config vocab_size {config.vocab_size} != vocabulary size {len(vocab)}")
    with single_threaded():
        torch.manual_seed(tc.seed)
        rng = np.random.default_rng(tc.seed)
        model = TextureVAE(config)
        opt = torch.optim.AdamW(model.parameters(), lr=tc.lr, weight_decay=tc.weight_decay)
        sched = torch.optim.lr_scheduler.LambdaLR(opt, lambda s: min(1.0, (s + 1) / max(1, tc.warmup)))
        history: list[dict] = []
        last_good = copy.deepcopy(model.state_dict())
        log_file = open(tc.log_path, "w") if tc.log_path else None
        try:
            for step in range(tc.steps):
                picks = rng.integers(0, len(corpus), size=tc.batch_size)
                seqs = []
                for i in picks:
                    seq = corpus[int(i)]
                    if len(seq) - 1 > config.context:
                        start = int(rng.integers(0, seq.n_bars))
                        seq = crop_to_context(seq, config.context, start)
                    seqs.append(seq)
                batch = collate(seqs, vocab, config.context)
                model.train()
                try:
                    terms = loss(model, batch)
                except NonFiniteLossError:
                    model.load_state_dict(last_good)
                    if tc.checkpoint_path:
                        save_checkpoint(tc.checkpoint_path, model, grammar)
                    raise TrainingDivergedError(step, last_good) from None
                opt.zero_grad()
                terms.total.backward()
                if tc.grad_clip:
                    torch.nn.utils.clip_grad_norm_(model.parameters(), tc.grad_clip)
                opt.step()
                sched.step()
                if step % 50 == 0:
                    last_good = copy.deepcopy(model.state_dict())
                if step % tc.log_every == 0 or step == tc.steps - 1:
                    row = {
                        "step": step,
                        "total": terms.total.item(),
                        "reconstruction": terms.reconstruction.item(),
                        "kl": terms.kl.item(),
                    }
                    history.append(row)
                    if log_file:
                        log_file.write(json.dumps(row) + "\n")
                    if step % 100 == 0:
                        log.info("step %d total %.4f recon %.4f kl %.4f", step, row["total"], row["reconstruction"], row["kl"])
        finally:
            if log_file:
                log_file.close()
        model.eval()
        if tc.checkpoint_path:
            Path(tc.checkpoint_path).parent.mkdir(parents=True, exist_ok=True)
            save_checkpoint(tc.checkpoint_path, model, grammar, {"train": tc.__dict__})
    return TrainResult(model, history)
