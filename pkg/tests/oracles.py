"""Brute-force reference implementations, written independently of the package.

They enumerate sub-beats and notes directly from flat (program, onset,
pitch, duration) data and never call the functions they check.
"""

from __future__ import annotations

from fractions import Fraction
from functools import lru_cache


def flat_notes(score):
    return [(t.program, n.onset, n.pitch, n.duration) for t in score.tracks for n in t.notes]


def bar_rhythmicity(score, bar):
    spb = score.grid.beats_per_bar * score.grid.subbeats_per_beat
    hits = set()
    for _, onset, _, _ in flat_notes(score):
        for s in range(bar * spb, (bar + 1) * spb):
            if onset == s:
                hits.add(s)
    return len(hits)


def bar_polyphonicity(score, bar):
    spb = score.grid.beats_per_bar * score.grid.subbeats_per_beat
    sounding = 0
    for s in range(bar * spb, (bar + 1) * spb):
        for _, onset, _, duration in flat_notes(score):
            if onset <= s < onset + duration:
                sounding += 1
    return Fraction(sounding, spb)


def track_bar_pitches(score, bar, program):
    spb = score.grid.beats_per_bar * score.grid.subbeats_per_beat
    return [p for prog, onset, p, _ in flat_notes(score) if prog == program and bar * spb <= onset < (bar + 1) * spb]


def avg_pitch_class(pitches):
    mean = Fraction(sum(pitches), len(pitches))
    # nearest multiple of ten, halves up, clamped to 10..130
    tens = mean / 10
    whole = int(tens)
    if tens - whole >= Fraction(1, 2):
        whole += 1
    return mean, min(13, max(1, whole))


def diversity(pitches):
    return len({p % 12 for p in pitches})


def skyline_program(score, bar):
    """Program of the track with the highest mean pitch; ties to the lowest program
    (which is the lowest track index in canonical order)."""
    best = None
    for program in sorted({p for p, *_ in flat_notes(score)}):
        pitches = track_bar_pitches(score, bar, program)
        if not pitches:
            continue
        mean = Fraction(sum(pitches), len(pitches))
        if best is None or mean > best[0]:
            best = (mean, program)
    return None if best is None else best[1]


def naive_levenshtein(a, b):
    a, b = tuple(a), tuple(b)

    @lru_cache(maxsize=None)
    def d(i, j):
        if i == 0:
            return j
        if j == 0:
            return i
        return min(d(i - 1, j) + 1, d(i, j - 1) + 1, d(i - 1, j - 1) + (a[i - 1] != b[j - 1]))

    return d(len(a), len(b))


def naive_levenshtein_exponential(a, b):
    """Plain recursion without memoization, for very short inputs."""
    if not a:
        return len(b)
    if not b:
        return len(a)
    return min(
        naive_levenshtein_exponential(a[1:], b) + 1,
        naive_levenshtein_exponential(a, b[1:]) + 1,
        naive_levenshtein_exponential(a[1:], b[1:]) + (a[0] != b[0]),
    )
