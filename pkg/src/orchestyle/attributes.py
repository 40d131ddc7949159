"""Texture attributes and their class bins.

Bar-level: rhythmicity (onset sub-beats) and polyphonicity (mean sounding
notes per sub-beat), binned into 8 corpus-quantile classes. Track-level:
average pitch (13 classes of ten MIDI steps) and pitch diversity (0-12
distinct pitch classes).

Raw polyphonicity values are exact ``Fraction`` objects so that the bin
edges and the brute-force oracles compare without float drift.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Sequence

from .errors import CorpusTooSmallError, InputError
from .score import Grid, QuantizedScore

N_BAR_CLASSES = 8
AVG_PITCH_LEVELS = range(1, 14)
DIVERSITY_LEVELS = range(0, 13)


@dataclass(frozen=True)
class TextureProfile:
    """Per-bar (rhythmicity, polyphonicity) classes and per-(bar, program)
    (average-pitch, diversity) levels.

    ``bar_classes`` is ``None`` when no bin table was available. ``raw``
    carries the measurements behind the classes and is ignored by ``==``.
    """

    bar_classes: tuple[tuple[int, int], ...] | None
    track_classes: dict[tuple[int, int], tuple[int, int]]
    raw: dict | None = field(default=None, compare=False)

    def __post_init__(self) -> None:
        for r, p in self.bar_classes or ():
            if not (1 <= r <= N_BAR_CLASSES and 1 <= p <= N_BAR_CLASSES):
                raise InputError(f"bar classes ({r}, {p}) out of range 1-{N_BAR_CLASSES}")
        for key, (avg, div) in self.track_classes.items():
            if avg not in AVG_PITCH_LEVELS or div not in DIVERSITY_LEVELS:
                raise InputError(f"track levels {(avg, div)} for {key} out of range")

    def to_json(self) -> dict:
        return {
            "bar_classes": None if self.bar_classes is None else [list(c) for c in self.bar_classes],
            "track_classes": [
                {"bar": b, "program": p, "avg_pitch": a, "pitch_diversity": d}
                for (b, p), (a, d) in sorted(self.track_classes.items())
            ],
        }

    @classmethod
    def from_json(cls, doc: dict) -> TextureProfile:
        bars = doc.get("bar_classes")
        return cls(
            None if bars is None else tuple((int(r), int(p)) for r, p in bars),
            {(e["bar"], e["program"]): (e["avg_pitch"], e["pitch_diversity"]) for e in doc["track_classes"]},
        )


def rhythmicity(score: QuantizedScore, bar: int) -> int:
    """Number of sub-beats in ``bar`` holding at least one onset, any track."""
    return len({n.onset for n in score.notes_in_bar(bar)})


def polyphonicity(score: QuantizedScore, bar: int) -> Fraction:
    """Mean count of sounding (struck or held) notes per sub-beat of ``bar``.

    Notes held over from earlier bars count for the sub-beats they cover.
    """
    start, stop = score.bar_span(bar)
    covered = 0
    for track in score.tracks:
        for n in track.notes:
            if n.onset >= stop:
                break
            covered += max(0, min(n.end, stop) - max(n.onset, start))
    return Fraction(covered, stop - start)


def avg_pitch_level(raw: Fraction | float) -> int:
    """Round to the nearest ten (halves up), clamp to 10..130, divide by ten."""
    tens = math.floor(Fraction(raw) / 10 + Fraction(1, 2))
    return min(max(tens, 1), 13)


def avg_pitch(score: QuantizedScore, bar: int, track: int) -> tuple[Fraction, int]:
    notes = score.notes_in_bar(bar, track)
    if not notes:
        raise InputError(f"track {track} has no events in bar {bar}")
    raw = Fraction(sum(n.pitch for n in notes), len(notes))
    return raw, avg_pitch_level(raw)


def pitch_diversity(score: QuantizedScore, bar: int, track: int) -> int:
    notes = score.notes_in_bar(bar, track)
    if not notes:
        raise InputError(f"track {track} has no events in bar {bar}")
    return len({n.pitch % 12 for n in notes})


def classify(raw: Fraction | float, edges: Sequence[Fraction | float]) -> int:
    """1 + number of edges strictly below ``raw``; a value on edge k gets class k."""
    return 1 + sum(1 for e in edges if e < raw)


@dataclass(frozen=True)
class BinTable:
    rhythmicity_edges: tuple[Fraction, ...]
    polyphonicity_edges: tuple[Fraction, ...]
    fingerprint: str
    grid: Grid = field(default_factory=Grid)
    n_bars: int = 0
    max_share_deviation: float = 0.0

    def __post_init__(self) -> None:
        for name in ("rhythmicity_edges", "polyphonicity_edges"):
            edges = getattr(self, name)
            if len(edges) != N_BAR_CLASSES - 1:
                raise InputError(f"{name} needs {N_BAR_CLASSES - 1} edges, got {len(edges)}")
            if any(a > b for a, b in zip(edges, edges[1:])):
                raise InputError(f"{name} must be ascending")

    def bar_class(self, score: QuantizedScore, bar: int) -> tuple[int, int]:
        return (
            classify(rhythmicity(score, bar), self.rhythmicity_edges),
            classify(polyphonicity(score, bar), self.polyphonicity_edges),
        )

    def to_json(self) -> dict:
        return {
            "version": 1,
            "grid": {"beats_per_bar": self.grid.beats_per_bar, "subbeats_per_beat": self.grid.subbeats_per_beat},
            "rhythmicity_edges": [str(e) for e in self.rhythmicity_edges],
            "polyphonicity_edges": [str(e) for e in self.polyphonicity_edges],
            "corpus_fingerprint": self.fingerprint,
            "corpus_bars": self.n_bars,
            "max_share_deviation": self.max_share_deviation,
        }

    @classmethod
    def from_json(cls, doc: dict) -> BinTable:
        if doc.get("version") != 1:
            raise InputError(f"unsupported bin table version {doc.get('version')!r}")
        return cls(
            tuple(Fraction(e) for e in doc["rhythmicity_edges"]),
            tuple(Fraction(e) for e in doc["polyphonicity_edges"]),
            doc["corpus_fingerprint"],
            Grid(**doc["grid"]),
            doc.get("corpus_bars", 0),
            doc.get("max_share_deviation", 0.0),
        )

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2)


def corpus_fingerprint(corpus: Iterable[QuantizedScore]) -> str:
    h = hashlib.sha256()
    for score in corpus:
        g = score.grid
        h.update(f"S {g.beats_per_bar} {g.subbeats_per_beat} {score.n_bars}\n".encode())
        for program, n in score.iter_program_notes():
            h.update(f"{program} {n.onset} {n.pitch} {n.duration} {n.velocity}\n".encode())
    return h.hexdigest()


def nearest_rank_edges(values: Sequence, n_classes: int = N_BAR_CLASSES) -> tuple:
    """The k/n quantiles, k = 1..n-1, by the nearest-rank method."""
    ordered = sorted(values)
    n = len(ordered)
    return tuple(ordered[-(-k * n // n_classes) - 1] for k in range(1, n_classes))


def class_shares(values: Sequence, edges: Sequence) -> list[float]:
    counts = [0] * N_BAR_CLASSES
    for v in values:
        counts[classify(v, edges) - 1] += 1
    return [c / len(values) for c in counts]


def fit_bins(corpus: Sequence[QuantizedScore]) -> BinTable:
    """Quantile bin edges over every non-empty bar of ``corpus``."""
    corpus = list(corpus)
    grids = {s.grid for s in corpus}
    if len(grids) > 1:
        raise InputError(f"corpus mixes grids {sorted(map(str, grids))}")
    rhythm, poly = [], []
    for score in corpus:
        for bar in range(score.n_bars):
            if score.notes_in_bar(bar):
                rhythm.append(Fraction(rhythmicity(score, bar)))
                poly.append(polyphonicity(score, bar))
    if len(rhythm) < N_BAR_CLASSES:
        raise CorpusTooSmallError(f"need at least {N_BAR_CLASSES} bars with notes, got {len(rhythm)}")
    r_edges, p_edges = nearest_rank_edges(rhythm), nearest_rank_edges(poly)
    ideal = 1 / N_BAR_CLASSES
    deviation = max(
        abs(share - ideal) for values, edges in ((rhythm, r_edges), (poly, p_edges))
        for share in class_shares(values, edges)
    )
    return BinTable(r_edges, p_edges, corpus_fingerprint(corpus), grids.pop(), len(rhythm), round(deviation, 6))


def extract_profile(score: QuantizedScore, bins: BinTable | None = None) -> TextureProfile:
    """All four attributes for every bar; bar classes need ``bins``."""
    track_classes = {}
    raw_bars, raw_tracks = [], {}
    for bar in range(score.n_bars):
        raw_bars.append((rhythmicity(score, bar), polyphonicity(score, bar)))
        for t in score.active_tracks(bar):
            mean, level = avg_pitch(score, bar, t)
            diversity = pitch_diversity(score, bar, t)
            key = (bar, score.tracks[t].program)
            track_classes[key] = (level, diversity)
            raw_tracks[key] = (mean, diversity)
    bar_classes = None
    if bins is not None:
        bar_classes = tuple(
            (classify(r, bins.rhythmicity_edges), classify(p, bins.polyphonicity_edges)) for r, p in raw_bars
        )
    return TextureProfile(bar_classes, track_classes, {"bars": raw_bars, "tracks": raw_tracks})


def attribute_table(score: QuantizedScore, bins: BinTable | None = None) -> list[dict]:
    """One row per (bar, active track) for TSV display."""
    profile = extract_profile(score, bins)
    rows = []
    for bar in range(score.n_bars):
        r, p = profile.raw["bars"][bar]
        classes = profile.bar_classes[bar] if profile.bar_classes else (None, None)
        for t in score.active_tracks(bar) or [None]:
            program = None if t is None else score.tracks[t].program
            level = profile.track_classes.get((bar, program), (None, None))
            mean = profile.raw["tracks"].get((bar, program), (None, None))[0]
            rows.append({
                "bar": bar,
                "rhythmicity": r,
                "rhythmicity_class": classes[0],
                "polyphonicity": float(p),
                "polyphonicity_class": classes[1],
                "program": program,
                "avg_pitch": None if mean is None else float(mean),
                "avg_pitch_level": level[0],
                "pitch_diversity": level[1],
            })
    return rows
