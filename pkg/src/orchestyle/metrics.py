"""Fidelity and controllability metrics over reference/generation pairs.

Overall fidelity is the bar-averaged cosine of onset-count chroma vectors.
Melodic fidelity compares the reference melody with the closest generated
track per bar under a normalized edit distance. Controllability is the
Spearman correlation between requested and realized classes.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Hashable, Sequence

from .attributes import BinTable, avg_pitch, extract_profile, pitch_diversity
from .errors import InputError
from .melody import MelodyConstraint, extract_melody
from .score import QuantizedScore

# --- overall fidelity -----------------------------------------------------


def chroma_vector(score: QuantizedScore, bar: int) -> list[int]:
    """One count per note onset in the bar, all tracks, by pitch class."""
    v = [0] * 12
    for note in score.notes_in_bar(bar):
        v[note.pitch % 12] += 1
    return v


def cosine(a: Sequence[float], b: Sequence[float]) -> float:
    na = math.sqrt(sum(x * x for x in a))
    nb = math.sqrt(sum(x * x for x in b))
    if na == 0 and nb == 0:
        return 1.0
    if na == 0 or nb == 0:
        return 0.0
    if list(a) == list(b):
        return 1.0
    return sum(x * y for x, y in zip(a, b)) / (na * nb)


def chroma_per_bar(reference: QuantizedScore, generation: QuantizedScore) -> list[float]:
    if reference.n_bars != generation.n_bars:
        raise InputError(f"bar counts differ: reference {reference.n_bars}, generation {generation.n_bars}")
    return [cosine(chroma_vector(reference, b), chroma_vector(generation, b)) for b in range(reference.n_bars)]


def chroma_similarity(reference: QuantizedScore, generation: QuantizedScore) -> float:
    per_bar = chroma_per_bar(reference, generation)
    return sum(per_bar) / len(per_bar)


# --- melodic fidelity ----------------------------------------------------


def levenshtein(a: Sequence[Hashable], b: Sequence[Hashable]) -> int:
    """Unit-cost edit distance, two-row dynamic programme."""
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, x in enumerate(a, 1):
        cur = [i]
        for j, y in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (x != y)))
        prev = cur
    return prev[-1]


def normalized_distance(a: Sequence[Hashable], b: Sequence[Hashable]) -> float:
    longest = max(len(a), len(b))
    return 0.0 if longest == 0 else levenshtein(a, b) / longest


def melody_tokens(constraint: MelodyConstraint, bar: int) -> list[tuple]:
    """(kind, value) items for the melody bar: sub-beat, pitch class, octave, duration per note."""
    out: list[tuple] = []
    for e in sorted(constraint.bars[bar].events, key=lambda e: e.sort_key()):
        out += [("s", e.sub_beat), ("c", e.pitch_class), ("o", e.octave), ("d", e.duration)]
    return out


def track_tokens(score: QuantizedScore, bar: int, track: int) -> list[tuple]:
    """Same representation for one track's notes in one bar."""
    start, _ = score.bar_span(bar)
    out: list[tuple] = []
    for n in sorted(score.notes_in_bar(bar, track), key=lambda n: (n.onset, n.pitch)):
        out += [("s", n.onset - start), ("c", n.pitch % 12), ("o", n.pitch // 12 - 1), ("d", n.duration)]
    return out


def melodic_fidelity_per_bar(melody: MelodyConstraint, generation: QuantizedScore) -> list[float]:
    if generation.n_bars < len(melody):
        raise InputError(f"generation has {generation.n_bars} bars, melody has {len(melody)}")
    out = []
    for b in range(len(melody)):
        target = melody_tokens(melody, b)
        candidates = [track_tokens(generation, b, t) for t in range(len(generation.tracks))] or [[]]
        if not target:
            # an empty melody bar is matched by any silent track, or trivially when none play
            out.append(1.0)
            continue
        out.append(1.0 - min(normalized_distance(target, c) for c in candidates))
    return out


def melodic_fidelity(melody: MelodyConstraint, generation: QuantizedScore) -> float:
    per_bar = melodic_fidelity_per_bar(melody, generation)
    return sum(per_bar) / len(per_bar) if per_bar else 1.0


# --- controllability -------------------------------------------------------


@dataclass(frozen=True)
class Correlation:
    value: float | None
    n: int
    reason: str | None = None

    @property
    def defined(self) -> bool:
        return self.value is not None

    def to_json(self) -> dict:
        return {"value": self.value, "n": self.n, "reason": self.reason}


def average_ranks(values: Sequence) -> list[Fraction]:
    """1-based ranks, ties sharing the mean of their positions."""
    order = sorted(range(len(values)), key=lambda i: values[i])
    ranks = [Fraction(0)] * len(values)
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and values[order[j + 1]] == values[order[i]]:
            j += 1
        for k in range(i, j + 1):
            ranks[order[k]] = Fraction(i + j + 2, 2)
        i = j + 1
    return ranks


def spearman(requested: Sequence, realized: Sequence) -> Correlation:
    """Pearson correlation of average ranks; exact when both rank variances agree."""
    if len(requested) != len(realized):
        raise InputError(f"length mismatch: {len(requested)} vs {len(realized)}")
    n = len(requested)
    if n < 2:
        raise InputError(f"need at least 2 pairs, got {n}")
    if len(set(requested)) == 1:
        return Correlation(None, n, "requested values are constant")
    if len(set(realized)) == 1:
        return Correlation(None, n, "realized values are constant")
    rx, ry = average_ranks(requested), average_ranks(realized)
    mean = Fraction(n + 1, 2)
    num = sum((x - mean) * (y - mean) for x, y in zip(rx, ry))
    sx = sum((x - mean) ** 2 for x in rx)
    sy = sum((y - mean) ** 2 for y in ry)
    if sx == sy:
        rho = float(num / sx)
    else:
        rho = float(num) / math.sqrt(float(sx) * float(sy))
    return Correlation(max(-1.0, min(1.0, rho)), n)


def _safe_spearman(a: Sequence, b: Sequence) -> Correlation:
    if len(a) < 2:
        return Correlation(None, len(a), "fewer than 2 pairs")
    return spearman(a, b)


# --- report ----------------------------------------------------------------

TABLE_COLUMNS = (
    ("overall_fidelity", "Overall fidelity"),
    ("melodic_fidelity", "Melodic fidelity"),
    ("rhythmicity", "Rhythm."),
    ("polyphonicity", "Polyph."),
    ("pitch_diversity", "Pitch diversity"),
    ("avg_pitch", "Average pitch"),
)


@dataclass(frozen=True)
class EvalReport:
    overall_fidelity: float
    melodic_fidelity: float
    rhythmicity: Correlation
    polyphonicity: Correlation
    pitch_diversity: Correlation
    avg_pitch: Correlation
    chroma_per_bar: tuple[float, ...] = ()
    melody_per_bar: tuple[float, ...] = ()
    requested_bar_classes: tuple[tuple[int, int], ...] = ()
    realized_bar_classes: tuple[tuple[int, int], ...] = ()
    track_pairs_skipped: int = 0
    notes: tuple[str, ...] = field(default=())

    def to_json(self) -> dict:
        doc = {}
        for key, _ in TABLE_COLUMNS:
            value = getattr(self, key)
            doc[key] = value.to_json() if isinstance(value, Correlation) else value
        doc.update(
            version=1,
            chroma_per_bar=list(self.chroma_per_bar),
            melody_per_bar=list(self.melody_per_bar),
            requested_bar_classes=[list(c) for c in self.requested_bar_classes],
            realized_bar_classes=[list(c) for c in self.realized_bar_classes],
            track_pairs_skipped=self.track_pairs_skipped,
            notes=list(self.notes),
        )
        return doc

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=1, sort_keys=True)

    def table(self, label: str = "run") -> str:
        """Aligned text table, one row, in the usual column order."""
        cells = []
        for key, _ in TABLE_COLUMNS:
            value = getattr(self, key)
            if isinstance(value, Correlation):
                value = value.value
            cells.append("--" if value is None else f"{value:.3f}")
        heads = ["Model"] + [h for _, h in TABLE_COLUMNS]
        row = [label] + cells
        widths = [max(len(h), len(c)) for h, c in zip(heads, row)]
        fmt = lambda r: " | ".join(c.ljust(w) for c, w in zip(r, widths))  # noqa: E731
        return "\n".join([fmt(heads), "-+-".join("-" * w for w in widths), fmt(row)])


def track_control_pairs(
    targets: dict[tuple[int, int], tuple[int | None, int | None]],
    generation: QuantizedScore,
) -> tuple[list[tuple[int, int]], list[tuple[int, int]], int]:
    """(requested, realized) level pairs for average pitch and for diversity,
    pooled over all (bar, program) keys; keys whose track is silent in the
    generation are skipped and counted."""
    avg_pairs, div_pairs, skipped = [], [], 0
    for (bar, program), (avg, div) in sorted(targets.items()):
        if bar >= generation.n_bars or program not in generation.programs:
            skipped += 1
            continue
        t = generation.track_index(program)
        if t not in generation.active_tracks(bar):
            skipped += 1
            continue
        if avg is not None:
            avg_pairs.append((avg, avg_pitch(generation, bar, t)[1]))
        if div is not None:
            div_pairs.append((div, pitch_diversity(generation, bar, t)))
    return avg_pairs, div_pairs, skipped


def evaluate_scores(
    reference: QuantizedScore,
    generation: QuantizedScore,
    bar_controls: Sequence[tuple[int, int]],
    bins: BinTable,
    melody: MelodyConstraint | None = None,
    track_controls: dict | None = None,
) -> EvalReport:
    """Report for a reference/generation pair against requested classes.

    ``melody`` defaults to the reference skyline; ``track_controls`` to the
    reference's own track levels.
    """
    notes = []
    reference = reference.slice_bars(0, generation.n_bars) if reference.n_bars > generation.n_bars else reference
    chroma = chroma_per_bar(reference, generation)
    if melody is None:
        melody = extract_melody(reference)
    mel = melodic_fidelity_per_bar(melody.truncate(generation.n_bars), generation)
    requested = tuple(tuple(c) for c in bar_controls[: generation.n_bars])
    if len(requested) != generation.n_bars:
        raise InputError(f"{len(requested)} bar controls for {generation.n_bars} bars")
    realized = tuple(bins.bar_class(generation, b) for b in range(generation.n_bars))
    rhythm = _safe_spearman([r for r, _ in requested], [r for r, _ in realized])
    poly = _safe_spearman([p for _, p in requested], [p for _, p in realized])
    if not track_controls:
        track_controls = extract_profile(reference).track_classes
        notes.append("track targets taken from the reference")
    avg_pairs, div_pairs, skipped = track_control_pairs(track_controls, generation)
    avg = _safe_spearman([a for a, _ in avg_pairs], [b for _, b in avg_pairs])
    div = _safe_spearman([a for a, _ in div_pairs], [b for _, b in div_pairs])
    return EvalReport(
        overall_fidelity=sum(chroma) / len(chroma),
        melodic_fidelity=sum(mel) / len(mel) if mel else 1.0,
        rhythmicity=rhythm,
        polyphonicity=poly,
        pitch_diversity=div,
        avg_pitch=avg,
        chroma_per_bar=tuple(chroma),
        melody_per_bar=tuple(mel),
        requested_bar_classes=requested,
        realized_bar_classes=realized,
        track_pairs_skipped=skipped,
        notes=tuple(notes),
    )


def evaluate(request, trace, bins: BinTable, config=None) -> EvalReport:
    """Decode ``trace`` and score it against ``request``."""
    from .tokens import GrammarConfig, decode

    config = config or GrammarConfig.from_registry(grid=request.reference.grid)
    generation, _ = decode(trace.tokens, config)
    reference = request.reference.slice_bars(0, request.n_bars)
    return evaluate_scores(reference, generation, request.bar_controls, bins, request.melody, request.track_controls)
