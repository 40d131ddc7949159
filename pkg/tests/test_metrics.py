from __future__ import annotations

import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

import oracles
from conftest import scores
from orchestyle.errors import InputError
from orchestyle.melody import MelodyBar, MelodyConstraint, MelodyEvent, extract_melody
from orchestyle.metrics import (
    TABLE_COLUMNS, Correlation, average_ranks, chroma_per_bar, chroma_similarity, chroma_vector, cosine,
    evaluate_scores, levenshtein, melodic_fidelity, melodic_fidelity_per_bar, normalized_distance, spearman,
    track_control_pairs,
)
from orchestyle.score import NoteEvent, QuantizedScore


def bar_of(pitches, program=0, n_bars=1):
    return QuantizedScore.from_notes([(program, NoteEvent(i, 0, p, 1, 72)) for i, p in enumerate(pitches)], n_bars)


def test_chroma_examples():
    assert chroma_similarity(bar_of([60, 64, 67]), bar_of([60, 64])) == pytest.approx(2 / math.sqrt(6), abs=1e-12)
    assert chroma_similarity(bar_of([60, 72]), bar_of([62])) == 0.0
    assert chroma_vector(bar_of([60, 72, 64]), 0) == [2, 0, 0, 0, 1, 0, 0, 0, 0, 0, 0, 0]


def test_chroma_empty_bars():
    a = bar_of([60], n_bars=2)
    b = QuantizedScore.from_notes([(0, NoteEvent(0, 0, 60, 1, 72)), (0, NoteEvent(16, 0, 60, 1, 72))])
    assert chroma_per_bar(a, a) == [1.0, 1.0]
    assert chroma_per_bar(a, b) == [1.0, 0.0]


def test_chroma_bar_mismatch():
    with pytest.raises(InputError):
        chroma_similarity(bar_of([60]), bar_of([60], n_bars=2))


@given(scores())
def test_chroma_self_similarity_is_exact(score):
    assert chroma_similarity(score, score) == 1.0


@given(st.lists(st.integers(0, 5), min_size=12, max_size=12), st.lists(st.integers(0, 5), min_size=12, max_size=12))
def test_cosine_matches_numpy(a, b):
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na and nb:
        assert cosine(a, b) == pytest.approx(float(np.dot(a, b) / (na * nb)), abs=1e-12)
    assert 0.0 <= cosine(a, b) <= 1.0 + 1e-12


def test_levenshtein_examples():
    assert levenshtein("kitten", "sitting") == 3
    assert levenshtein([], [1, 2]) == 2
    assert normalized_distance([], []) == 0.0
    assert normalized_distance("abc", "abd") == pytest.approx(1 / 3)


@given(st.lists(st.integers(0, 3), max_size=8), st.lists(st.integers(0, 3), max_size=8))
def test_levenshtein_matches_exponential_recursion(a, b):
    assert levenshtein(a, b) == oracles.naive_levenshtein_exponential(a, b)


@given(st.lists(st.integers(0, 4), max_size=30), st.lists(st.integers(0, 4), max_size=30))
def test_levenshtein_matches_memoized_recursion(a, b):
    assert levenshtein(a, b) == oracles.naive_levenshtein(a, b) == levenshtein(b, a)


def _melody(events):
    return MelodyConstraint((MelodyBar(0, 0, tuple(MelodyEvent(*e) for e in events)),))


def test_phi_two_thirds():
    # three items against a sequence differing in one of them
    target = [("s", 0), ("c", 0), ("o", 5)]
    changed = [("s", 0), ("c", 2), ("o", 5)]
    assert oracles.naive_levenshtein(target, changed) == levenshtein(target, changed) == 1
    assert 1 - normalized_distance(target, changed) == pytest.approx(2 / 3)


def test_phi_verbatim_and_disjoint():
    melody = _melody([(0, 0, 5, 4, 5), (4, 4, 5, 4, 5)])
    verbatim = QuantizedScore.from_notes([(73, NoteEvent(0, 0, 72, 4, 30)), (73, NoteEvent(4, 0, 76, 4, 100))])
    assert melodic_fidelity(melody, verbatim) == 1.0  # velocity is not compared
    single = _melody([(0, 0, 5, 4, 5)])
    disjoint = QuantizedScore.from_notes([(0, NoteEvent(3, 0, 39, 2, 72))])
    assert melodic_fidelity(single, disjoint) == 0.0


def test_phi_one_differing_item():
    melody = _melody([(0, 0, 5, 4, 5), (4, 4, 5, 4, 5)])
    gen = QuantizedScore.from_notes([(73, NoteEvent(0, 0, 72, 4, 72)), (73, NoteEvent(4, 0, 76, 2, 72))])
    assert melodic_fidelity(melody, gen) == pytest.approx(1 - 1 / 8)


def test_phi_takes_best_track_and_empty_bar():
    melody = MelodyConstraint((MelodyBar(0, 0, (MelodyEvent(0, 0, 5, 4, 5),)), MelodyBar(None, None, ())))
    gen = QuantizedScore.from_notes([(0, NoteEvent(0, 0, 40, 4, 72)), (73, NoteEvent(0, 0, 72, 4, 72))], n_bars=2)
    assert melodic_fidelity_per_bar(melody, gen) == [1.0, 1.0]
    with pytest.raises(InputError):
        melodic_fidelity(melody, bar_of([60]))


@given(scores(max_bars=3, max_tracks=3))
def test_phi_in_range_and_one_on_source(score):
    melody = extract_melody(score)
    assert melodic_fidelity(melody, score) == 1.0
    other = QuantizedScore.from_notes([(0, NoteEvent(0, 0, 60, 1, 72))], n_bars=score.n_bars, grid=score.grid)
    assert 0.0 <= melodic_fidelity(melody, other) <= 1.0


def test_spearman_examples():
    assert spearman([1, 2, 3, 4], [1, 2, 3, 4]).value == 1.0
    assert spearman([1, 2, 3, 4], [4, 3, 2, 1]).value == -1.0
    assert spearman([1, 2, 3, 4], [1, 3, 2, 4]).value == pytest.approx(0.8, abs=1e-12)


def test_spearman_undefined_and_errors():
    c = spearman([2, 2, 2], [1, 2, 3])
    assert not c.defined and "requested" in c.reason
    assert "realized" in spearman([1, 2, 3], [5, 5, 5]).reason
    with pytest.raises(InputError):
        spearman([1, 2], [1])
    with pytest.raises(InputError):
        spearman([1], [1])


def test_average_ranks():
    assert average_ranks([10, 20, 20, 5]) == [2, 3.5, 3.5, 1]


@given(st.lists(st.integers(1, 8), min_size=2, max_size=40), st.data())
def test_spearman_matches_scipy(x, data):
    y = data.draw(st.lists(st.integers(1, 8), min_size=len(x), max_size=len(x)))
    c = spearman(x, y)
    if len(set(x)) > 1 and len(set(y)) > 1:
        assert c.value == pytest.approx(stats.spearmanr(x, y).statistic, abs=1e-9)
    else:
        assert not c.defined


@given(st.lists(st.integers(0, 1000), min_size=2, max_size=30, unique=True), st.data())
def test_spearman_antisymmetric(x, data):
    y = data.draw(st.lists(st.integers(0, 1000), min_size=len(x), max_size=len(x), unique=True))
    assert spearman(x, y).value == pytest.approx(-spearman(x, [-v for v in y]).value, abs=1e-12)
    assert spearman(x[::-1], y[::-1]).value == pytest.approx(spearman(x, y).value, abs=1e-12)


def test_track_pairs_skip_silent_tracks():
    gen = QuantizedScore.from_notes([(0, NoteEvent(0, 0, 60, 1, 72)), (40, NoteEvent(16, 0, 72, 1, 72))])
    targets = {(0, 0): (6, 1), (1, 0): (5, 2), (0, 40): (7, 1), (1, 40): (7, None), (0, 73): (8, 1)}
    avg, div, skipped = track_control_pairs(targets, gen)
    assert avg == [(6, 6), (7, 7)]
    assert div == [(1, 1)]
    assert skipped == 3


def test_report_self_evaluation(corpus, bins):
    ref = corpus[3]
    classes = [bins.bar_class(ref, b) for b in range(ref.n_bars)]
    report = evaluate_scores(ref, ref, classes, bins)
    assert report.overall_fidelity == 1.0 and report.melodic_fidelity == 1.0
    for c in (report.rhythmicity, report.polyphonicity, report.avg_pitch, report.pitch_diversity):
        assert c.value in (None, 1.0)
    assert "track targets taken from the reference" in report.notes
    doc = json.loads(report.dumps())
    assert doc["overall_fidelity"] == 1.0 and doc["version"] == 1
    lines = report.table("ref").splitlines()
    assert [c.strip() for c in lines[0].split("|")][1:] == [h for _, h in TABLE_COLUMNS]
    assert lines[2].startswith("ref")


def test_correlation_json():
    assert Correlation(None, 3, "x").to_json() == {"value": None, "n": 3, "reason": "x"}
