"""Fidelity and controllability table for a checkpoint, with and without
the melody constraint, over held-out synthetic pieces.

Each row pools its correlations over all pieces: requested classes are
drawn at random per bar so that the rank correlations are defined, track
targets are the reference's own levels, instrumentation is the
reference's.

    python3 scripts/transfer_table.py runs/desk/model.pt --pieces 12
"""

from __future__ import annotations

from pathlib import Path

import click
import numpy as np

from orchestyle.config import load_bins
from orchestyle.decoder import SamplingParams, build_request, transfer
from orchestyle.metrics import (
    TABLE_COLUMNS, chroma_per_bar, melodic_fidelity_per_bar, spearman, track_control_pairs,
)
from orchestyle.melody import extract_melody
from orchestyle.model import NeuralGenerator, load_checkpoint
from orchestyle.synth import homophonic_corpus
from orchestyle.tokens import GrammarConfig, Vocabulary, decode


def run_rows(generator, vocab, pieces, bins, with_melody: bool, seed: int) -> dict:
    rng = np.random.default_rng(seed)
    chroma, phi, rhythm, poly, avg, div = [], [], [], [], [], []
    for i, ref in enumerate(pieces):
        controls = [(int(rng.integers(1, 9)), int(rng.integers(1, 9))) for _ in range(ref.n_bars)]
        request = build_request(ref, bins, bar_controls=controls, track_controls="reference",
                                melody="reference" if with_melody else None,
                                sampling=SamplingParams(seed=seed * 1000 + i))
        trace = transfer(request, generator, vocab, bins=bins)
        gen, _ = decode(trace.tokens, vocab.config)
        chroma += chroma_per_bar(ref, gen)
        phi += melodic_fidelity_per_bar(extract_melody(ref), gen)
        rhythm += [(a[0], b[0]) for a, b in zip(controls, trace.realized)]
        poly += [(a[1], b[1]) for a, b in zip(controls, trace.realized)]
        a, d, _ = track_control_pairs(request.track_controls, gen)
        avg += a
        div += d
    rho = lambda pairs: spearman([x for x, _ in pairs], [y for _, y in pairs]).value  # noqa: E731
    return {
        "overall_fidelity": float(np.mean(chroma)),
        "melodic_fidelity": float(np.mean(phi)),
        "rhythmicity": rho(rhythm),
        "polyphonicity": rho(poly),
        "pitch_diversity": rho(div),
        "avg_pitch": rho(avg),
    }


@click.command()
@click.argument("checkpoint", type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("--pieces", type=int, default=12, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
def main(checkpoint: Path, pieces: int, seed: int) -> None:
    model, blob = load_checkpoint(checkpoint)
    vocab = Vocabulary(GrammarConfig.from_json(blob["grammar"]))
    bins = load_bins(checkpoint.with_name("bins.json"))
    generator = NeuralGenerator(model, vocab)
    refs = homophonic_corpus(pieces, seed + 2000)
    heads = ["Model"] + [h for _, h in TABLE_COLUMNS]
    rows = []
    for label, flag in (("with melody", True), ("without melody", False)):
        values = run_rows(generator, vocab, refs, bins, flag, seed)
        rows.append([label] + ["--" if values[k] is None else f"{values[k]:.3f}" for k, _ in TABLE_COLUMNS])
    widths = [max(len(r[i]) for r in [heads] + rows) for i in range(len(heads))]
    for r in [heads] + rows:
        click.echo(" | ".join(c.ljust(w) for c, w in zip(r, widths)))


if __name__ == "__main__":
    main()
