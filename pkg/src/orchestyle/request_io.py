"""Transfer requests as JSON documents, validated against the shipped schema."""

from __future__ import annotations

import json
from dataclasses import replace
from functools import lru_cache
from importlib import resources

import jsonschema

from .attributes import BinTable
from .decoder import SamplingParams, TransferRequest, build_request
from .errors import RequestError
from .instruments import InstrumentRegistry, default_registry
from .melody import AUTOMATIC, MelodyConstraint
from .score import QuantizedScore
from .tokens import GrammarConfig

ENSEMBLES = {
    "flute-oboe": (68, 73),
    "woodwind-quintet": (60, 68, 70, 71, 73),
    "classical-orchestra": (40, 41, 42, 43, 47, 56, 60, 68, 70, 71, 73),
    "string-quartet": (40, 41, 42),
}


@lru_cache(maxsize=1)
def request_schema() -> dict:
    return json.loads(resources.files("orchestyle.schemas").joinpath("request.schema.json").read_text())


def schema_errors(doc: object) -> list[str]:
    """Every schema violation as ``/json/pointer: message``, in document order."""
    validator = jsonschema.Draft202012Validator(request_schema())
    out = []
    for err in sorted(validator.iter_errors(doc), key=lambda e: list(map(str, e.absolute_path))):
        pointer = "/" + "/".join(str(p) for p in err.absolute_path)
        out.append(f"{pointer}: {err.message}")
    return out


def _program(value, registry: InstrumentRegistry) -> int:
    if isinstance(value, str):
        return registry.by_name(value).program
    registry.lookup(value)
    return value


def request_from_json(
    doc: dict,
    reference: QuantizedScore,
    bins: BinTable | None,
    registry: InstrumentRegistry | None = None,
    config: GrammarConfig | None = None,
) -> TransferRequest:
    errors = schema_errors(doc)
    if errors:
        raise RequestError("request does not match the schema:\n  " + "\n  ".join(errors))
    registry = registry or default_registry()
    prog = lambda v: _program(v, registry)  # noqa: E731
    tracks = doc.get("track_controls")
    if isinstance(tracks, list):
        tracks = {(t["bar"], prog(t["program"])): (t.get("avg_pitch"), t.get("diversity")) for t in tracks}
    inst = doc.get("instrumentation", "reference")
    if isinstance(inst, str) and inst.startswith("ensemble:"):
        name = inst.split(":", 1)[1]
        if name not in ENSEMBLES:
            raise RequestError(f"/instrumentation: unknown ensemble {name!r}; known: {sorted(ENSEMBLES)}")
        inst = list(ENSEMBLES[name])
    elif isinstance(inst, list):
        inst = [prog(p) for p in inst] if all(not isinstance(p, list) for p in inst) else [[prog(p) for p in bar] for bar in inst]
    melody = doc.get("melody")
    if isinstance(melody, dict):
        melody = MelodyConstraint.from_json(melody)
    choice = doc.get("melody_instrument", AUTOMATIC)
    if isinstance(choice, list):
        choice = [None if c is None else prog(c) for c in choice]
    elif choice != AUTOMATIC:
        choice = prog(choice)
    request = build_request(
        reference,
        bins,
        bar_controls=doc.get("bar_controls", "reference"),
        shift=doc.get("shift", 2),
        track_controls=tracks,
        instrumentation=inst,
        melody=melody,
        melody_instrument=choice,
        octave_mode=doc.get("octave_mode", "enforce"),
        strict_register=doc.get("strict_register", False),
        sampling=SamplingParams(**doc.get("sampling", {})),
        length=doc.get("length"),
        registry=registry,
        config=config,
    )
    extra = {k: doc[k] for k in ("max_tracks_per_bar", "max_notes_per_bar") if k in doc}
    if extra:
        request = replace(request, **extra)
    return request
