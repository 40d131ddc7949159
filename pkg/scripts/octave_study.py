"""Where does octave inference put a melody for each target instrument?

Transfers the skyline melody of synthetic extracts to flute, bassoon,
trumpet, violin and cello with generated Octave tokens and reports each
instrument's mean melody pitch against its register, with and without
the strict register mask. Uses a checkpoint when given (its sibling
``bins.json`` supplies the bin table), otherwise an untrained model.

    python3 scripts/octave_study.py --checkpoint runs/desk/model.pt
"""

from __future__ import annotations

from pathlib import Path

import click
import torch

from orchestyle.config import load_bins
from orchestyle.experiments import DESK_MODEL, register_study
from orchestyle.instruments import default_registry, midi_to_note
from orchestyle.model import ModelConfig, NeuralGenerator, TextureVAE, load_checkpoint
from orchestyle.synth import homophonic_corpus
from orchestyle.tokens import GrammarConfig, Vocabulary

PROGRAMS = (73, 70, 56, 40, 42)  # flute, bassoon, trumpet, violin, cello


@click.command()
@click.option("--checkpoint", type=click.Path(exists=True, dir_okay=False, path_type=Path), default=None)
@click.option("--extracts", type=int, default=5, show_default=True)
@click.option("--bars", type=int, default=4, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
def main(checkpoint: Path | None, extracts: int, bars: int, seed: int) -> None:
    registry = default_registry()
    if checkpoint:
        model, blob = load_checkpoint(checkpoint)
        vocab = Vocabulary(GrammarConfig.from_json(blob["grammar"]))
        sibling = checkpoint.with_name("bins.json")
        bins = load_bins(sibling) if sibling.is_file() else None
    else:
        vocab = Vocabulary(GrammarConfig.from_registry(registry))
        torch.manual_seed(seed)
        model = TextureVAE(ModelConfig(vocab_size=len(vocab), **DESK_MODEL)).eval()
        bins = None
    generator = NeuralGenerator(model, vocab)
    pieces = [s.slice_bars(0, bars) for s in homophonic_corpus(extracts, seed + 1000)]
    for strict in (False, True):
        click.echo(f"\nstrict register: {strict}")
        click.echo(f"{'instrument':<12} {'register':<10} {'mean pitch':<12} {'in register':<12} max")
        for row in register_study(generator, vocab, pieces, PROGRAMS, bins, strict, seed, registry):
            lo, hi = row.register
            mean = sum(row.mean_pitches) / len(row.mean_pitches)
            inside = sum(lo <= m <= hi for m in row.mean_pitches)
            click.echo(f"{row.name:<12} {midi_to_note(lo) + '-' + midi_to_note(hi):<10} "
                       f"{midi_to_note(round(mean)) + f' ({mean:.1f})':<12} {f'{inside}/{len(row.mean_pitches)}':<12} "
                       f"{row.max_pitch}")


if __name__ == "__main__":
    main()
