"""Synthetic corpora.

``homophonic_piece`` writes a melody in a high woodwind/string/brass part
over one to three lower accompaniment parts whose density changes bar by
bar, so every texture attribute varies across the corpus. ``random_score``
is an unstructured generator for property tests: arbitrary programs,
chords, and notes crossing bar lines.

Velocities are always bin representatives (8, 24, ..., 120), which the
token round trip reproduces exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .instruments import InstrumentRegistry, default_registry
from .score import Grid, NoteEvent, QuantizedScore

MELODY_PROGRAMS = (73, 68, 40, 56, 71)
ACCOMPANIMENT_PROGRAMS = (42, 70, 41, 60, 48, 0, 32, 43, 57, 58)
REPRESENTATIVE_VELOCITIES = tuple((b - 1) * 16 + 8 for b in range(1, 9))

# scale degrees of the major and natural minor modes
_MODES = ((0, 2, 4, 5, 7, 9, 11), (0, 2, 3, 5, 7, 8, 10))
_DENSITIES = (1, 2, 3, 4, 6, 8, 10)


@dataclass(frozen=True)
class SynthConfig:
    n_bars: int = 8
    grid: Grid = Grid()
    melody_low: int = 67
    melody_high: int = 88
    accompaniment_low: int = 36
    accompaniment_high: int = 64
    max_accompaniment: int = 3


def _scale_pitches(tonic: int, mode: tuple[int, ...], low: int, high: int) -> list[int]:
    return [p for p in range(low, high + 1) if (p - tonic) % 12 in mode]


def _onsets(rng: np.random.Generator, n: int, per_bar: int) -> list[int]:
    """``n`` onset positions in a bar of ``per_bar`` sub-beats, evenly spread
    (when ``n`` divides the bar) about a third of the time, random otherwise."""
    n = max(1, min(n, per_bar))
    if per_bar % n == 0 and rng.random() < 0.35:
        step = per_bar // n
        return list(range(0, per_bar, step))
    return sorted(int(x) for x in rng.choice(per_bar, size=n, replace=False))


def homophonic_piece(rng: np.random.Generator, config: SynthConfig = SynthConfig()) -> QuantizedScore:
    spb = config.grid.subbeats_per_bar
    tonic = int(rng.integers(0, 12))
    mode = _MODES[int(rng.integers(0, 2))]
    melody_program = int(rng.choice(MELODY_PROGRAMS))
    n_acc = int(rng.integers(1, config.max_accompaniment + 1))
    acc_programs = [int(p) for p in rng.choice(ACCOMPANIMENT_PROGRAMS, size=n_acc, replace=False)]
    mel_scale = _scale_pitches(tonic, mode, config.melody_low, config.melody_high)
    acc_scale = _scale_pitches(tonic, mode, config.accompaniment_low, config.accompaniment_high)
    notes: list[tuple[int, NoteEvent]] = []
    idx = len(mel_scale) // 2
    for bar in range(config.n_bars):
        start = bar * spb
        # melody: a random walk on the scale
        mel_n = int(rng.integers(1, 10))
        onsets = _onsets(rng, mel_n, spb)
        vel = int(rng.choice(REPRESENTATIVE_VELOCITIES[4:7]))
        for i, o in enumerate(onsets):
            idx = int(np.clip(idx + rng.integers(-2, 3), 0, len(mel_scale) - 1))
            nxt = onsets[i + 1] if i + 1 < len(onsets) else spb
            notes.append((melody_program, NoteEvent(start + o, 0, mel_scale[idx], nxt - o, vel)))
        # accompaniment: chords on a per-bar density, voices vary per bar
        root = int(rng.integers(0, 7))
        for k, program in enumerate(acc_programs):
            if rng.random() < 0.15 and k > 0:
                continue
            density = int(rng.choice(_DENSITIES))
            voices = int(rng.integers(1, 4))
            hold = bool(rng.random() < 0.5)
            vel = int(rng.choice(REPRESENTATIVE_VELOCITIES[2:6]))
            onsets = _onsets(rng, density, spb)
            span = len(acc_scale) - 1
            lo_idx = int(span * k / max(1, n_acc)) // 2
            for i, o in enumerate(onsets):
                nxt = onsets[i + 1] if i + 1 < len(onsets) else spb
                dur = nxt - o if hold else max(1, (nxt - o) // 2)
                chord = sorted({min(span, lo_idx + ((root + 2 * v) % 7) + 7 * (v // 4)) for v in range(voices)})
                for c in chord:
                    notes.append((program, NoteEvent(start + o, 0, acc_scale[c], dur, vel)))
    return QuantizedScore.from_notes(notes, config.n_bars, config.grid)


def homophonic_corpus(n: int, seed: int = 0, config: SynthConfig = SynthConfig()) -> list[QuantizedScore]:
    rng = np.random.default_rng(seed)
    return [homophonic_piece(rng, config) for _ in range(n)]


def random_score(
    rng: np.random.Generator,
    n_bars: int | None = None,
    grid: Grid | None = None,
    registry: InstrumentRegistry | None = None,
    max_tracks: int = 4,
    max_notes: int = 40,
    max_duration: int = 32,
    pitch_range: tuple[int, int] = (0, 127),
) -> QuantizedScore:
    """Unstructured score with notes that may cross bar lines."""
    registry = registry or default_registry()
    grid = grid or Grid(int(rng.choice((2, 3, 4, 5, 6, 7))), 4)
    n_bars = n_bars or int(rng.integers(1, 5))
    total = n_bars * grid.subbeats_per_bar
    programs = [int(p) for p in rng.choice(registry.programs, size=int(rng.integers(1, max_tracks + 1)), replace=False)]
    busy: dict[tuple[int, int], list[tuple[int, int]]] = {}
    notes = []
    for _ in range(int(rng.integers(1, max_notes + 1))):
        program = programs[int(rng.integers(0, len(programs)))]
        onset = int(rng.integers(0, total))
        pitch = int(rng.integers(pitch_range[0], pitch_range[1] + 1))
        duration = int(rng.integers(1, min(max_duration, total - onset) + 1))
        # same-pitch notes in one part never overlap (MIDI could not keep them apart)
        spans = busy.setdefault((program, pitch), [])
        if any(onset < b and a < onset + duration for a, b in spans):
            continue
        spans.append((onset, onset + duration))
        velocity = int(rng.choice(REPRESENTATIVE_VELOCITIES))
        notes.append((program, NoteEvent(onset, 0, pitch, duration, velocity)))
    return QuantizedScore.from_notes(notes, n_bars, grid)
