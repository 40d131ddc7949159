"""``orchestyle`` command line.

Exit codes: 0 success, 1 input error, 2 internal error.
"""

from __future__ import annotations

import json
import logging
import os
import sys
import tempfile
import traceback
from dataclasses import replace
from pathlib import Path

import click

from .attributes import attribute_table, extract_profile, fit_bins
from .config import ProjectConfig, load_bins
from .errors import EmptyScoreError, InputError, OrchestyleError
from .midi_io import parse_midi, write_midi
from .score import QuantizedScore
from .tokens import GrammarConfig, TokenSequence, Vocabulary, decode, dumps_tokens, encode, loads_tokens, split_long_notes

log = logging.getLogger("orchestyle")

EXIT_OK, EXIT_INPUT, EXIT_INTERNAL = 0, 1, 2


class Context:
    def __init__(self, config: ProjectConfig, seed: int | None, out_dir: Path | None):
        self.config = config
        self.seed = seed
        self.out_dir = out_dir

    def output_dir(self) -> Path:
        out = self.out_dir or self.config.output_dir or Path(".")
        out.mkdir(parents=True, exist_ok=True)
        return out


def write_atomic(path: Path, data: bytes | str) -> None:
    """Write via a temporary file in the same directory, then rename."""
    path.parent.mkdir(parents=True, exist_ok=True)
    raw = data.encode() if isinstance(data, str) else data
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(raw)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _read_score(ctx: Context, path: str | Path) -> QuantizedScore:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise InputError(f"{path}: {exc.strerror}") from None
    return parse_midi(data, ctx.config.grid, ctx.config.registry())


def _grammar(ctx: Context, score: QuantizedScore) -> GrammarConfig:
    return GrammarConfig.from_registry(ctx.config.registry(), score.grid)


def _bins(ctx: Context, path: str | None):
    if path:
        return load_bins(path)
    return ctx.config.bins()


def _midi_files(paths) -> list[Path]:
    out = []
    for p in map(Path, paths):
        if p.is_dir():
            out += sorted(q for q in p.iterdir() if q.suffix.lower() in (".mid", ".midi"))
        else:
            out.append(p)
    return out


class Group(click.Group):
    """Maps package errors onto the exit-code contract."""

    def invoke(self, ctx):
        try:
            return super().invoke(ctx)
        except InputError as exc:
            click.echo(f"error: {exc}", err=True)
            ctx.exit(EXIT_INPUT)
        except OrchestyleError as exc:
            click.echo(f"error: {exc}", err=True)
            ctx.exit(EXIT_INTERNAL)
        except (click.exceptions.Exit, click.ClickException, click.exceptions.Abort):
            raise
        except BrokenPipeError:
            # downstream reader (e.g. `head`) closed early; not a failure
            sys.stdout = open(os.devnull, "w")
            ctx.exit(0)
        except Exception:  # pragma: no cover - the contract for unexpected failures
            traceback.print_exc()
            ctx.exit(EXIT_INTERNAL)


@click.group(cls=Group)
@click.option("--config", "config_path", type=click.Path(dir_okay=False), help="Project config JSON.")
@click.option("--seed", type=int, default=None, help="Override every random seed.")
@click.option("--out-dir", type=click.Path(file_okay=False, path_type=Path), default=None)
@click.option("-v", "--verbose", is_flag=True)
@click.pass_context
def main(ctx, config_path, seed, out_dir, verbose):
    """Texture-controllable re-orchestration of symbolic music."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        config = ProjectConfig.load(config_path)
    except InputError as exc:
        click.echo(f"error: {exc}", err=True)
        ctx.exit(EXIT_INPUT)
    ctx.obj = Context(config, seed, out_dir)


@main.command("synth-corpus")
@click.option("-n", "count", type=int, default=200, show_default=True)
@click.option("--bars", type=int, default=8, show_default=True)
@click.pass_obj
def synth_corpus(ctx: Context, count: int, bars: int):
    """Write a synthetic homophonic MIDI corpus."""
    from .synth import SynthConfig, homophonic_corpus

    out = ctx.output_dir()
    scores = homophonic_corpus(count, ctx.seed or 0, SynthConfig(n_bars=bars, grid=ctx.config.grid))
    for i, score in enumerate(scores):
        write_atomic(out / f"piece_{i:04d}.mid", write_midi(score))
    click.echo(f"wrote {len(scores)} pieces to {out}")


@main.command()
@click.argument("files", nargs=-1, required=True, type=click.Path())
@click.option("--bins", "bins_path", type=click.Path(dir_okay=False), default=None)
@click.pass_obj
def tokenize(ctx: Context, files, bins_path):
    """MIDI files -> token dumps and profiles; failures are listed, not fatal."""
    bins = _bins(ctx, bins_path)
    out = ctx.output_dir()
    failures = []
    paths = _midi_files(files)
    for path in paths:
        try:
            score = _read_score(ctx, path)
            grammar = _grammar(ctx, score)
            score = split_long_notes(score, grammar.max_duration)
            profile = extract_profile(score, bins)
            seq = encode(score, profile, grammar)
        except InputError as exc:
            failures.append((path, exc))
            continue
        write_atomic(out / f"{path.stem}.tokens.txt", dumps_tokens(seq.tokens))
        doc = {"version": 1, "grammar": grammar.to_json(), "profile": profile.to_json()}
        write_atomic(out / f"{path.stem}.profile.json", json.dumps(doc, indent=1))
    for path, exc in failures:
        click.echo(f"{path}: {exc}", err=True)
    click.echo(f"tokenized {len(paths) - len(failures)} of {len(paths)} files")
    if failures:
        sys.exit(EXIT_INPUT)


@main.command()
@click.argument("tokens_file", type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("--profile", "profile_path", type=click.Path(exists=True, dir_okay=False, path_type=Path), default=None,
              help="Profile JSON written by tokenize (default: the sibling .profile.json).")
@click.option("-o", "--output", type=click.Path(dir_okay=False, path_type=Path), default=None)
@click.pass_obj
def detokenize(ctx: Context, tokens_file: Path, profile_path, output):
    """Token dump -> MIDI."""
    stem = tokens_file.name.removesuffix(".tokens.txt")
    profile_path = profile_path or tokens_file.with_name(f"{stem}.profile.json")
    if profile_path.is_file():
        grammar = GrammarConfig.from_json(json.loads(profile_path.read_text())["grammar"])
    else:
        grammar = GrammarConfig.from_registry(ctx.config.registry(), ctx.config.grid)
    seq = TokenSequence(tuple(loads_tokens(tokens_file.read_text())))
    score, _ = decode(seq, grammar)
    output = output or ctx.output_dir() / f"{stem}.mid"
    write_atomic(output, write_midi(score))
    click.echo(str(output))


@main.command()
@click.argument("midi_file", type=click.Path(dir_okay=False))
@click.option("--bins", "bins_path", type=click.Path(dir_okay=False), default=None)
@click.pass_obj
def analyze(ctx: Context, midi_file, bins_path):
    """Print the texture attributes of every bar and track as TSV."""
    score = _read_score(ctx, midi_file)
    rows = attribute_table(score, _bins(ctx, bins_path))
    if not rows:
        return
    heads = list(rows[0])
    click.echo("\t".join(heads))
    for row in rows:
        click.echo("\t".join("" if row[h] is None else str(row[h]) for h in heads))


@main.command("fit-bins")
@click.argument("files", nargs=-1, required=True, type=click.Path())
@click.option("-o", "--output", type=click.Path(dir_okay=False, path_type=Path), default=None)
@click.pass_obj
def fit_bins_cmd(ctx: Context, files, output):
    """Fit the rhythmicity/polyphonicity class edges on a corpus."""
    corpus = [_read_score(ctx, p) for p in _midi_files(files)]
    table = fit_bins(corpus)
    output = output or ctx.output_dir() / "bins.json"
    write_atomic(output, table.dumps())
    click.echo(f"{output}: {table.n_bars} bars, max class-share deviation {table.max_share_deviation}")


@main.command("extract-melody")
@click.argument("midi_file", type=click.Path(dir_okay=False))
@click.option("-o", "--output", type=click.Path(dir_okay=False, path_type=Path), default=None)
@click.pass_obj
def extract_melody_cmd(ctx: Context, midi_file, output):
    """Skyline melody of a MIDI file as JSON."""
    from .melody import extract_melody

    score = _read_score(ctx, midi_file)
    doc = json.dumps(extract_melody(score, _grammar(ctx, score)).to_json(), indent=1)
    if output:
        write_atomic(output, doc)
    else:
        click.echo(doc)


@main.command()
@click.argument("files", nargs=-1, required=True, type=click.Path())
@click.option("--bins", "bins_path", type=click.Path(dir_okay=False), default=None,
              help="Bin table; fitted on the training corpus when omitted.")
@click.option("--steps", type=int, default=2000, show_default=True)
@click.option("--batch-size", type=int, default=8, show_default=True)
@click.option("--lr", type=float, default=1e-3, show_default=True)
@click.option("-o", "--output", type=click.Path(dir_okay=False, path_type=Path), default=None)
@click.pass_obj
def train(ctx: Context, files, bins_path, steps, batch_size, lr, output):
    """Train the texture VAE; writes a checkpoint, bins.json and a JSON-lines log."""
    from .model import ModelConfig
    from .train import TrainConfig, single_threaded, train as run_training

    corpus = [_read_score(ctx, p) for p in _midi_files(files)]
    bins = _bins(ctx, bins_path) or fit_bins(corpus)
    grids = {s.grid for s in corpus}
    if len(grids) != 1:
        raise InputError(f"training corpus mixes grids {sorted(map(str, grids))}")
    grammar = GrammarConfig.from_registry(ctx.config.registry(), grids.pop())
    vocab = Vocabulary(grammar)
    seqs = []
    for s in corpus:
        s = split_long_notes(s, grammar.max_duration)
        seqs.append(encode(s, extract_profile(s, bins), grammar))
    out = ctx.output_dir()
    output = output or (ctx.config.checkpoint_dir or out) / "model.pt"
    output.parent.mkdir(parents=True, exist_ok=True)
    write_atomic(output.with_name("bins.json"), bins.dumps())
    model_config = ModelConfig(vocab_size=len(vocab), **ctx.config.model)
    tc = TrainConfig(steps=steps, batch_size=batch_size, lr=lr, seed=ctx.seed or 0,
                     checkpoint_path=str(output), log_path=str(output.with_suffix(".log.jsonl")), log_every=10)
    with single_threaded():
        result = run_training(seqs, vocab, model_config, tc, grammar.to_json())
    first, last = result.log[0], result.log[-1]
    click.echo(f"{output}: reconstruction {first['reconstruction']:.4f} -> {last['reconstruction']:.4f}")


def _load_generator(checkpoint: str):
    from .model import NeuralGenerator, load_checkpoint

    model, blob = load_checkpoint(checkpoint)
    if not blob.get("grammar"):
        raise InputError(f"{checkpoint}: checkpoint carries no grammar")
    grammar = GrammarConfig.from_json(blob["grammar"])
    vocab = Vocabulary(grammar)
    return NeuralGenerator(model, vocab), vocab


def _request(ctx: Context, request_path, reference, bins, grammar, octave_mode, strict_register):
    from .request_io import request_from_json

    try:
        doc = json.loads(Path(request_path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise InputError(f"{request_path}: {exc}") from None
    doc.setdefault("sampling", {})
    for key, value in (("temperature", ctx.config.sampling.temperature), ("top_p", ctx.config.sampling.top_p)):
        doc["sampling"].setdefault(key, value)
    if ctx.seed is not None:
        doc["sampling"]["seed"] = ctx.seed
    if octave_mode:
        doc["octave_mode"] = octave_mode
    if strict_register:
        doc["strict_register"] = True
    return request_from_json(doc, reference, bins, ctx.config.registry(), grammar)


@main.command()
@click.argument("reference_midi", type=click.Path(dir_okay=False))
@click.argument("request_json", type=click.Path(dir_okay=False))
@click.argument("checkpoint", type=click.Path(exists=True, dir_okay=False))
@click.option("--bins", "bins_path", type=click.Path(dir_okay=False), default=None,
              help="Bin table (default: config, then bins.json next to the checkpoint).")
@click.option("--octave-mode", type=click.Choice(["enforce", "infer"]), default=None)
@click.option("--strict-register", is_flag=True)
@click.pass_obj
def transfer(ctx: Context, reference_midi, request_json, checkpoint, bins_path, octave_mode, strict_register):
    """Re-orchestrate a reference; writes MIDI, trace, report and token dump."""
    from .decoder import transfer as run_transfer
    from .metrics import evaluate

    generator, vocab = _load_generator(checkpoint)
    bins = _bins(ctx, bins_path)
    if bins is None:
        sibling = Path(checkpoint).with_name("bins.json")
        if not sibling.is_file():
            raise InputError("no bin table: pass --bins or set it in the config")
        bins = load_bins(sibling)
    reference = _read_score(ctx, reference_midi)
    if reference.subbeats_per_bar != vocab.config.subbeats_per_bar:
        raise InputError(f"reference has {reference.subbeats_per_bar} sub-beats per bar, checkpoint grammar "
                         f"{vocab.config.subbeats_per_bar}")
    request = _request(ctx, request_json, reference, bins, vocab.config, octave_mode, strict_register)
    trace = run_transfer(request, generator, vocab, ctx.config.registry(), bins)
    report = evaluate(request, trace, bins, vocab.config)
    generated, _ = decode(trace.tokens, vocab.config)
    out = ctx.output_dir()
    stem = Path(reference_midi).stem
    write_atomic(out / f"{stem}.transfer.mid", write_midi(generated, allow_empty=True))
    write_atomic(out / f"{stem}.trace.json", trace.dumps())
    write_atomic(out / f"{stem}.report.json", report.dumps())
    write_atomic(out / f"{stem}.tokens.txt", dumps_tokens(trace.tokens.tokens))
    click.echo(report.table(stem))


@main.command()
@click.argument("reference_midi", type=click.Path(dir_okay=False))
@click.argument("generated_midi", type=click.Path(dir_okay=False))
@click.argument("request_json", type=click.Path(dir_okay=False))
@click.option("--bins", "bins_path", type=click.Path(dir_okay=False), default=None)
@click.option("-o", "--output", type=click.Path(dir_okay=False, path_type=Path), default=None)
@click.pass_obj
def evaluate(ctx: Context, reference_midi, generated_midi, request_json, bins_path, output):
    """Recompute the evaluation report from files alone."""
    from .metrics import evaluate_scores

    bins = _bins(ctx, bins_path)
    if bins is None:
        raise InputError("no bin table: pass --bins or set it in the config")
    reference = _read_score(ctx, reference_midi)
    try:
        generated = _read_score(ctx, generated_midi)
    except EmptyScoreError:
        generated = QuantizedScore((), 0, reference.grid)
    request = _request(ctx, request_json, reference, bins, _grammar(ctx, reference), None, False)
    if generated.n_bars != request.n_bars:
        # trailing silent bars are not stored in MIDI beyond the last bar line
        if generated.n_bars < request.n_bars and not generated.is_empty():
            generated = replace(generated, n_bars=request.n_bars)
        elif generated.is_empty():
            generated = QuantizedScore((), request.n_bars, reference.grid)
        else:
            raise InputError(f"generated piece has {generated.n_bars} bars, request has {request.n_bars}")
    report = evaluate_scores(reference.slice_bars(0, request.n_bars), generated, request.bar_controls, bins,
                             request.melody, request.track_controls)
    text = report.dumps()
    if output:
        write_atomic(output, text)
    else:
        click.echo(text)


if __name__ == "__main__":  # pragma: no cover
    main()
