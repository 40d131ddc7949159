from __future__ import annotations

import pytest
from hypothesis import given
from hypothesis import strategies as st

from orchestyle.errors import InputError, NotInSubsetError
from orchestyle.instruments import (
    InstrumentRegistry, InstrumentSpec, default_registry, lookup, midi_to_note, note_to_midi, register_midpoint,
)

# (program, low, high, midpoint name) as printed in the register study table
STUDIED = {
    73: (59, 96, "F5"),
    70: (34, 71, "E3"),
    56: (54, 84, "A4"),
    40: (55, 107, "A5"),
    42: (36, 81, "Bb3"),
}


def test_default_registry_has_64_programs():
    assert len(default_registry()) == 64
    assert 9 * 16 not in default_registry()


@pytest.mark.parametrize("program", sorted(STUDIED))
def test_studied_registers(program):
    low, high, _ = STUDIED[program]
    spec = lookup(program)
    assert (spec.register_low, spec.register_high) == (low, high)


@pytest.mark.parametrize("program", sorted(STUDIED))
def test_midpoints_match_table(program):
    *_, name = STUDIED[program]
    assert midi_to_note(register_midpoint(lookup(program))) == name


def test_flute_and_cello_midpoints_numeric():
    assert register_midpoint(lookup(73)) == 77
    assert register_midpoint(lookup(42)) == 58


def test_unknown_program_lists_valid():
    with pytest.raises(NotInSubsetError) as info:
        lookup(255)
    assert info.value.valid == default_registry().programs
    assert "73" in str(info.value)


def test_degenerate_midpoint_is_low():
    assert register_midpoint(InstrumentSpec(0, "x", 60, 61)) == 60


@pytest.mark.parametrize("name,pitch", [("C4", 60), ("B3", 59), ("C7", 96), ("Bb1", 34), ("F#3", 54), ("A0", 21), ("C-1", 0)])
def test_note_names(name, pitch):
    assert note_to_midi(name) == pitch


@given(st.integers(0, 127))
def test_note_name_round_trip(pitch):
    assert note_to_midi(midi_to_note(pitch)) == pitch


def test_registry_parsing_rules():
    text = "# comment line\n\n40, Violin, G3, B7\n41, Viola, C3, E6\n"
    reg = InstrumentRegistry.from_text(text)
    assert reg.programs == (40, 41)
    assert reg.by_name("violin").register_high == 107
    with pytest.raises(InputError):
        InstrumentRegistry.from_text("40, Violin, G3, B7\n40, Again, C3, C4\n")
    with pytest.raises(InputError):
        InstrumentRegistry.from_text("40, Violin, G3\n")
    with pytest.raises(InputError):
        InstrumentRegistry.from_text("40, Violin, B7, G3\n")


def test_resolve_maps_into_family():
    reg = default_registry()
    assert reg.resolve(73) == 73
    fam = reg.resolve(44)  # tremolo strings, not in the subset
    assert fam in reg and fam // 8 == 44 // 8
    assert fam == min(p for p in reg.programs if p // 8 == 5)


def test_every_spec_is_well_formed():
    for spec in default_registry():
        assert 0 <= spec.register_low < spec.register_high <= 127
