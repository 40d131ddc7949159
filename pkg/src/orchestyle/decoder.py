"""Constrained autoregressive generation.

Per bar the ``Bar`` token and every requested control token are forced, the
bar-level classes go to the model through in-attention, and the remaining
tokens are sampled under the grammar mask. When a melody is given, each
melody sub-beat gets its ``Track`` + note tokens injected right after the
``SubBeat`` token; a sub-beat the model tries to skip is force-inserted.

Beyond the grammar, the sampler keeps three decoder-level rules so that
every trace stays completable and the injected melody stays exact:

* the melodic instrument plays only at melody sub-beats, and only the
  injected notes;
* a structural token is offered only if every described track can still
  find a place to play (melody groups open their sub-beat, so tracks with a
  lower program cannot join them);
* once ``max_notes_per_bar`` notes exist, no optional notes are offered.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .attributes import BinTable, TextureProfile, extract_profile
from .errors import DeadEndError, InfeasibleRegisterError, InputError, RequestError
from .instruments import InstrumentRegistry, InstrumentSpec, default_registry
from .melody import AUTOMATIC, OCTAVE_SLOT, MelodyConstraint, melody_token_run
from .score import QuantizedScore
from .tokens import (
    BAR, BOS, EOS, OCTAVES, GrammarConfig, GrammarState, Token, TokenSequence, Vocabulary, decode, encode, pitch_of,
    split_long_notes,
)

SAMPLED = "model-sampled"
MELODY = "injected-melody"
FORCED = "forced-control"

OCTAVE_MODES = ("enforce", "infer")


@dataclass(frozen=True)
class SamplingParams:
    temperature: float = 1.0
    top_p: float = 0.9
    seed: int = 0

    def __post_init__(self) -> None:
        if self.temperature < 0 or not 0 < self.top_p <= 1:
            raise InputError(f"bad sampling parameters {self}")


@dataclass(frozen=True)
class TransferRequest:
    """What to generate. ``instrumentation`` is one program tuple per bar, or
    ``None`` for automatic choice. ``track_controls`` maps (bar, program) to
    (average-pitch level, diversity level), either of which may be ``None``."""

    reference: QuantizedScore
    bar_controls: tuple[tuple[int, int], ...]
    track_controls: dict[tuple[int, int], tuple[int | None, int | None]] = field(default_factory=dict)
    instrumentation: tuple[tuple[int, ...], ...] | None = None
    melody: MelodyConstraint | None = None
    octave_mode: str = "enforce"
    strict_register: bool = False
    sampling: SamplingParams = field(default_factory=SamplingParams)
    length: int | None = None
    max_tracks_per_bar: int = 8
    max_notes_per_bar: int = 48

    @property
    def n_bars(self) -> int:
        return self.reference.n_bars if self.length is None else self.length

    def validate(self, registry: InstrumentRegistry | None = None) -> None:
        registry = registry or default_registry()
        n = self.n_bars
        if n < 1 or n > self.reference.n_bars:
            raise RequestError(f"length {n} must be between 1 and the reference's {self.reference.n_bars} bars")
        if len(self.bar_controls) < n:
            raise RequestError(f"{len(self.bar_controls)} bar controls for {n} bars")
        for r, p in self.bar_controls:
            if not (1 <= r <= 8 and 1 <= p <= 8):
                raise RequestError(f"bar control ({r}, {p}) outside 1-8")
        for (bar, program), (avg, div) in self.track_controls.items():
            registry.lookup(program)
            if avg is not None and not 1 <= avg <= 13:
                raise RequestError(f"average-pitch level {avg} for bar {bar} outside 1-13")
            if div is not None and not 0 <= div <= 12:
                raise RequestError(f"pitch-diversity level {div} for bar {bar} outside 0-12")
        if self.octave_mode not in OCTAVE_MODES:
            raise RequestError(f"octave_mode must be one of {OCTAVE_MODES}")
        if self.instrumentation is not None:
            if len(self.instrumentation) < n:
                raise RequestError(f"instrumentation covers {len(self.instrumentation)} of {n} bars")
            for programs in self.instrumentation:
                for p in programs:
                    registry.lookup(p)
        if self.melody is not None:
            if len(self.melody) > n:
                raise RequestError(f"melody has {len(self.melody)} bars, request has {n}")
            for b, entry in enumerate(self.melody.bars):
                if entry.target_instrument is not None:
                    registry.lookup(entry.target_instrument)
                if not entry.events:
                    continue
                if self.instrumentation is None:
                    continue
                programs = set(self.instrumentation[b])
                target = entry.target_instrument
                if target is not None and target not in programs:
                    raise RequestError(f"bar {b}: melody instrument {target} is not in the instrumentation {sorted(programs)}")
                if not programs:
                    raise RequestError(f"bar {b} carries melody but has no instruments")
                full = len(entry.positions) == self.reference.subbeats_per_bar
                if full and target is not None and any(p < target for p in programs):
                    raise RequestError(
                        f"bar {b}: the melody fills every sub-beat, so no track below program {target} can play"
                    )


def bar_control_preset(reference_classes: Sequence[tuple[int, int]], preset: str, shift: int = 2) -> tuple:
    """``reference``, ``orchestra+`` (denser) or ``orchestra-`` (sparser) bar classes."""
    if preset == "reference":
        delta = 0
    elif preset == "orchestra+":
        delta = shift
    elif preset == "orchestra-":
        delta = -shift
    else:
        raise InputError(f"unknown bar-control preset {preset!r}")
    clamp = lambda c: min(8, max(1, c + delta))  # noqa: E731
    return tuple((clamp(r), clamp(p)) for r, p in reference_classes)


@dataclass(frozen=True)
class GenerationTrace:
    tokens: TokenSequence
    sources: tuple[str, ...]
    realized: tuple[tuple[int, int], ...] | None = None
    melody_targets: tuple[int | None, ...] = ()

    def to_json(self) -> dict:
        return {
            "version": 1,
            "tokens": [str(t) for t in self.tokens.tokens],
            "sources": list(self.sources),
            "conditions": None if self.tokens.conditions is None else [list(c) for c in self.tokens.conditions],
            "realized_bar_classes": None if self.realized is None else [list(c) for c in self.realized],
            "melody_targets": list(self.melody_targets),
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=1, sort_keys=True)


def sample_token(
    probs: np.ndarray,
    mask: Sequence[int],
    params: SamplingParams,
    rng: np.random.Generator,
) -> int:
    """Draw one id from ``probs`` restricted to ``mask``.

    Renormalize over the mask, apply temperature, then keep the smallest
    high-probability set reaching ``top_p``. Temperature 0 means argmax
    (lowest id on ties).
    """
    if len(mask) == 0:
        raise DeadEndError([])
    ids = np.asarray(mask, dtype=np.int64)
    p = np.asarray(probs, dtype=np.float64)[ids]
    total = p.sum()
    if not total > 0 or not np.isfinite(total):
        raise DeadEndError([])
    p = p / total
    if len(ids) == 1:
        return int(ids[0])
    if params.temperature <= 1e-6:
        return int(ids[int(np.argmax(p))])
    if params.temperature != 1.0:
        logp = np.log(np.maximum(p, 1e-300)) / params.temperature
        logp -= logp.max()
        p = np.exp(logp)
        p /= p.sum()
    order = np.argsort(-p, kind="stable")
    cum = np.cumsum(p[order])
    keep = order[: int(np.searchsorted(cum, params.top_p - 1e-12)) + 1]
    q = p[keep] / p[keep].sum()
    u = rng.random()
    pick = int(np.searchsorted(np.cumsum(q), u, side="right"))
    return int(ids[keep[min(pick, len(keep) - 1)]])


def feasible_octaves(
    pitch_class: int,
    spec: InstrumentSpec | None = None,
    strict: bool = False,
    above: int = -1,
    ceiling: int = 127,
) -> list[int]:
    """Octaves putting ``pitch_class`` strictly above ``above`` and at most
    ``ceiling``; with ``strict``, also inside the instrument's register."""
    out = [o for o in OCTAVES if above < pitch_of(pitch_class, o) <= min(ceiling, 127)]
    if strict:
        if spec is None:
            raise InputError("strict register needs an instrument")
        out = [o for o in out if spec.contains(pitch_of(pitch_class, o))]
        if not out:
            raise InfeasibleRegisterError(pitch_class, spec.program, spec.register_low, spec.register_high)
    return out


def octave_ceiling(later: Sequence[int], spec: InstrumentSpec | None = None, strict: bool = False) -> int:
    """Highest pitch the current note may take so that the pitch classes in
    ``later`` still fit above it in ascending order."""
    top = spec.register_high if strict and spec is not None else 127
    for pc in reversed(later):
        top = top - ((top - pc) % 12)
        if top < 0 or (strict and spec is not None and top < spec.register_low):
            raise InfeasibleRegisterError(pc, spec.program if spec else -1,
                                          spec.register_low if spec else 0, spec.register_high if spec else 127)
        top -= 1
    return top


def infer_octave(
    probs: np.ndarray,
    state: GrammarState,
    vocab: Vocabulary,
    spec: InstrumentSpec | None,
    strict: bool,
    params: SamplingParams,
    rng: np.random.Generator,
    ceiling: int = 127,
) -> Token:
    """Sample the Octave of a melody note whose PitchClass was just emitted."""
    octaves = feasible_octaves(state.pitch_class, spec, strict, above=state.last_pitch, ceiling=ceiling)
    if not octaves:
        raise DeadEndError([])
    ids = [vocab[Token("Octave", (o,))] for o in octaves]
    return vocab.tokens[sample_token(probs, ids, params, rng)]


def completable(
    described: frozenset[int] | set[int],
    used: set[int],
    target: int | None,
    pending: Sequence[int],
    pos: int,
    cur: int,
    need_track: bool,
    n_pos: int,
    melody_bar: bool,
) -> bool:
    """Whether the rest of a bar can still be generated under the decoder rules.

    ``pending`` are the melody sub-beats not yet reached (all after ``pos``),
    ``cur`` the last track of the open sub-beat group (-1 if none) and
    ``need_track`` whether that group still needs its first track. In a
    melody bar the melodic instrument ``target`` plays only at melody
    sub-beats, opening them; ``None`` there means it is not chosen yet and
    will be picked among the unused described tracks.
    """
    if melody_bar and target is None:
        if not pending:
            return False
        return any(
            completable(described, used, t, pending, pos, cur, need_track, n_pos, True)
            for t in set(described) - used
        )
    others = set(described) - {target} if melody_bar else set(described)
    if need_track and not any(p > cur for p in others):
        return False
    later = set(pending)
    free_later = any(q not in later for q in range(pos + 1, n_pos))
    for u in others - used:
        if pos >= 0 and u > cur:
            continue
        if free_later:
            continue
        if melody_bar and later and u > target:
            continue
        return False
    return True


class _Run:
    """Mutable state of one generation."""

    def __init__(self, request, generator, vocab, registry, bins):
        self.request = request
        self.vocab = vocab
        self.config: GrammarConfig = vocab.config
        self.registry = registry
        self.bins = bins
        self.rng = np.random.default_rng(request.sampling.seed)
        self.state = GrammarState(self.config)
        self.tokens: list[Token] = []
        self.sources: list[str] = []
        self.bar = 0
        self.n_pos = self.config.subbeats_per_bar
        reference = split_long_notes(request.reference, self.config.max_duration)
        ref_seq = encode(reference, extract_profile(reference), self.config)
        self.session = generator.session(generator.latents_for(ref_seq), request.bar_controls[: request.n_bars])
        self.probs = None
        self.targets: list[int | None] = []

    # -- emission ----------------------------------------------------------
    def emit(self, token: Token, source: str) -> None:
        self.state.feed(token)
        self.tokens.append(token)
        self.sources.append(source)
        if token != EOS:
            self.probs = self.session.push(self.vocab[token], self.bar)

    def sample(self, candidates: Sequence[Token]) -> Token:
        if not candidates:
            raise DeadEndError(list(self.tokens))
        ids = [self.vocab[t] for t in candidates]
        try:
            return self.vocab.tokens[sample_token(self.probs, ids, self.request.sampling, self.rng)]
        except DeadEndError:
            raise DeadEndError(list(self.tokens)) from None

    def melody_entry(self):
        m = self.request.melody
        if m is None or self.bar >= len(m) or not m.bars[self.bar].events:
            return None
        return m.bars[self.bar]

    def ok(self, described, used, target, pending, pos, cur, need_track, melody_bar) -> bool:
        return completable(frozenset(described), set(used), target, pending, pos, cur, need_track, self.n_pos, melody_bar)

    def ok_melody_step(self, target, pending) -> bool:
        """Can the next melody sub-beat be opened (and injected) now?"""
        st = self.state
        choices = [target] if target is not None else sorted(set(st.described) - st.used)
        return any(
            self.ok(st.described, st.used | {t}, t, pending[1:], pending[0], t, False, True) for t in choices
        )

    # -- bar phases --------------------------------------------------------
    def run(self) -> GenerationTrace:
        self.emit(BOS, FORCED)
        for b in range(self.request.n_bars):
            self.bar = b
            self.emit(BAR, FORCED)
            entry = self.melody_entry()
            target = entry.target_instrument if entry else None
            if self.describe(entry, target):
                self.levels()
                target = self.notes(entry, target)
            self.targets.append(target if entry else None)
        self.emit(EOS, FORCED)
        seq = TokenSequence(tuple(self.tokens), tuple(self.request.bar_controls[: self.request.n_bars]))
        realized = None
        if self.bins is not None:
            score, _ = decode(seq, self.config)
            realized = tuple(self.bins.bar_class(score, b) for b in range(score.n_bars))
        return GenerationTrace(seq, tuple(self.sources), realized, tuple(self.targets))

    def describe(self, entry, target) -> bool:
        """Emit the DescriptionTrack block; False when the bar stays empty."""
        req = self.request
        if req.instrumentation is not None:
            for p in sorted(set(req.instrumentation[self.bar])):
                self.emit(Token("DescriptionTrack", (p,)), FORCED)
            described = set(req.instrumentation[self.bar])
            if entry is not None and not self.ok(described, set(), target, entry.positions, -1, -1, False, True):
                raise RequestError(f"bar {self.bar}: the melody leaves no sub-beat for some requested instrument")
            return bool(described)
        melody_bar = entry is not None
        pending = entry.positions if entry else []
        last_bar = self.bar == req.n_bars - 1
        while True:
            described = list(self.state.described)
            missing = target is not None and target not in described
            room = req.max_tracks_per_bar - len(described) - (1 if missing else 0)
            cands = []
            for t in self.state.legal():
                if t.kind == "DescriptionTrack":
                    p = t.args[0]
                    if missing and p > target:
                        continue
                    if room <= 0 and p != target:
                        continue
                    # later additions are optional, so checking the smallest completion suffices
                    trial = set(described) | {p} | ({target} if missing else set())
                    if self.ok(trial, set(), target, pending, -1, -1, False, melody_bar):
                        cands.append(t)
                elif t.kind == "PitchAvg":
                    if not missing and self.ok(described, set(), target, pending, -1, -1, False, melody_bar):
                        cands.append(t)
                elif t in (BAR, EOS):
                    if not melody_bar and (t == EOS) == last_bar:
                        cands.append(t)
            tok = self.sample(cands)
            if tok.kind != "DescriptionTrack":
                # only the decision to end the block is kept; later phases pick the token
                return tok.kind == "PitchAvg"
            self.emit(tok, SAMPLED)

    def levels(self) -> None:
        controls = self.request.track_controls
        for kind, index in (("PitchAvg", 0), ("PitchDiversity", 1)):
            for p in list(self.state.described):
                fixed = controls.get((self.bar, p), (None, None))[index]
                if fixed is not None:
                    self.emit(Token(kind, (p, fixed)), FORCED)
                else:
                    self.emit(self.sample([t for t in self.state.legal() if t.kind == kind]), SAMPLED)

    def notes(self, entry, target) -> int | None:
        melody_bar = entry is not None
        last_bar = self.bar == self.request.n_bars - 1
        pending = list(entry.positions) if entry else []
        cap = self.request.max_notes_per_bar
        while True:
            st = self.state
            D, U = st.described, st.used
            melody_ok = None
            cands: list[Token] = []
            for t in st.legal():
                k = t.kind
                if k == "PitchClass":
                    if st.after_note and (st.notes_in_bar >= cap or (melody_bar and st.track == target)):
                        continue
                    cands.append(t)
                elif k == "Track":
                    p = t.args[0]
                    if melody_bar and p == target:
                        continue
                    if self.ok(D, U | {p}, target, pending, st.subbeat, p, False, melody_bar):
                        cands.append(t)
                elif k == "SubBeat":
                    q = t.args[0]
                    if pending and q >= pending[0]:
                        melody_ok = self.ok_melody_step(target, pending) if melody_ok is None else melody_ok
                        if melody_ok:
                            cands.append(t)
                    elif self.ok(D, U, target, pending, q, -1, True, melody_bar):
                        cands.append(t)
                elif t in (BAR, EOS):
                    if (t == EOS) != last_bar:
                        continue
                    if pending:
                        melody_ok = self.ok_melody_step(target, pending) if melody_ok is None else melody_ok
                        if melody_ok:
                            cands.append(t)
                    else:
                        cands.append(t)
                else:
                    cands.append(t)
            tok = self.sample(cands)
            if tok in (BAR, EOS) and not pending:
                return target
            if pending and (tok in (BAR, EOS) or (tok.kind == "SubBeat" and tok.args[0] > pending[0])):
                # a skipped melody sub-beat is inserted instead
                tok, source = Token("SubBeat", (pending[0],)), FORCED
            else:
                source = SAMPLED
            self.emit(tok, source)
            if tok.kind == "SubBeat" and pending and tok.args[0] == pending[0]:
                target = self.inject(pending.pop(0), target, pending)

    def inject(self, sub_beat: int, target, pending_after) -> int:
        req = self.request
        st = self.state
        if target is None:
            cands = [
                Token("Track", (p,)) for p in st.described
                if p not in st.used and self.ok(st.described, st.used | {p}, p, pending_after, sub_beat, p, False, True)
            ]
            tok = self.sample(cands)
            self.emit(tok, SAMPLED)
            target = tok.args[0]
            run = melody_token_run(req.melody, self.bar, sub_beat, req.octave_mode, target)[1:]
        else:
            run = melody_token_run(req.melody, self.bar, sub_beat, req.octave_mode, target)
        spec = self.registry.lookup(target) if req.strict_register else None
        pcs = [t.args[0] for t in run if isinstance(t, Token) and t.kind == "PitchClass"]
        done = 0
        for tok in run:
            if isinstance(tok, Token) and tok.kind == "PitchClass":
                done += 1
            if tok is OCTAVE_SLOT:
                ceiling = octave_ceiling(pcs[done:], spec, req.strict_register)
                try:
                    octave = infer_octave(self.probs, self.state, self.vocab, spec, req.strict_register,
                                          req.sampling, self.rng, ceiling)
                except DeadEndError:
                    raise DeadEndError(list(self.tokens)) from None
                self.emit(octave, SAMPLED)
            else:
                self.emit(tok, MELODY)
        return target


def transfer(
    request: TransferRequest,
    generator,
    vocab: Vocabulary,
    registry: InstrumentRegistry | None = None,
    bins: BinTable | None = None,
) -> GenerationTrace:
    """Generate one piece. ``generator`` is a :class:`~orchestyle.model.NeuralGenerator`
    or any object with the same ``latents_for`` / ``session`` interface."""
    registry = registry or default_registry()
    request.validate(registry)
    model_cfg = getattr(getattr(generator, "model", None), "config", None)
    if model_cfg is not None and model_cfg.vocab_size != len(vocab):
        raise RequestError(f"checkpoint vocabulary ({model_cfg.vocab_size}) does not match the grammar ({len(vocab)})")
    return _Run(request, generator, vocab, registry, bins).run()


def oracle_transfer(request: TransferRequest, vocab: Vocabulary, bins: BinTable | None = None) -> GenerationTrace:
    """A generator that satisfies every control exactly by replaying the reference.

    Only valid when the request asks for the reference's own classes and
    instrumentation; anything else raises :class:`RequestError`.
    """
    config = vocab.config
    ref = request.reference.slice_bars(0, request.n_bars)
    profile = extract_profile(ref, bins)
    own = profile.bar_classes
    if own is not None and tuple(request.bar_controls[: request.n_bars]) != own:
        raise RequestError("oracle generator only reproduces the reference's own bar classes")
    for key, (avg, div) in request.track_controls.items():
        real = profile.track_classes.get(key)
        if real is None or (avg is not None and avg != real[0]) or (div is not None and div != real[1]):
            raise RequestError(f"oracle generator cannot satisfy track control {key}: {(avg, div)}")
    if request.instrumentation is not None:
        for b in range(ref.n_bars):
            active = {ref.tracks[t].program for t in ref.active_tracks(b)}
            if set(request.instrumentation[b]) != active:
                raise RequestError(f"oracle generator cannot re-instrument bar {b}")
    seq = encode(ref, TextureProfile(tuple(request.bar_controls[: request.n_bars]), profile.track_classes), config)
    control = {"Bar", "BOS", "EOS", "DescriptionTrack", "PitchAvg", "PitchDiversity"}
    sources = tuple(FORCED if t.kind in control else SAMPLED for t in seq.tokens)
    realized = None
    if bins is not None:
        realized = tuple(bins.bar_class(ref, b) for b in range(ref.n_bars))
    return GenerationTrace(seq, sources, realized, tuple(None for _ in range(ref.n_bars)))


def build_request(
    reference: QuantizedScore,
    bins: BinTable | None,
    *,
    bar_controls: str | Sequence[Sequence[int]] = "reference",
    shift: int = 2,
    track_controls: str | dict | None = None,
    instrumentation: str | Sequence[int] | Sequence[Sequence[int]] = "reference",
    melody: str | MelodyConstraint | None = None,
    melody_instrument: int | Sequence[int] | str | None = AUTOMATIC,
    octave_mode: str = "enforce",
    strict_register: bool = False,
    sampling: SamplingParams | None = None,
    length: int | None = None,
    registry: InstrumentRegistry | None = None,
    config: GrammarConfig | None = None,
) -> TransferRequest:
    """Fill a :class:`TransferRequest` from a reference and high-level choices.

    ``bar_controls`` is a preset name or explicit classes; ``track_controls``
    is ``None``, ``"reference"`` or a dict; ``instrumentation`` is
    ``"automatic"``, ``"reference"`` (each bar keeps its own ensemble), one
    program list for every bar, or one list per bar; ``melody`` is ``None``,
    ``"reference"`` (skyline of the reference) or a constraint.
    """
    from .melody import assign_instruments, extract_melody

    registry = registry or default_registry()
    n = reference.n_bars if length is None else length
    if isinstance(bar_controls, str):
        if bins is None:
            raise InputError("bar-control presets need a bin table")
        own = [bins.bar_class(reference, b) for b in range(reference.n_bars)]
        bar = bar_control_preset(own, bar_controls, shift)
    else:
        bar = tuple((int(r), int(p)) for r, p in bar_controls)
    profile = extract_profile(reference)
    if track_controls == "reference":
        tracks = {k: v for k, v in profile.track_classes.items() if k[0] < n}
    else:
        tracks = dict(track_controls or {})
    if instrumentation == "automatic":
        inst = None
    elif instrumentation == "reference":
        inst = tuple(
            tuple(reference.tracks[t].program for t in reference.active_tracks(b)) for b in range(n)
        )
    elif instrumentation and isinstance(instrumentation[0], int):
        inst = tuple(tuple(sorted(instrumentation)) for _ in range(n))
    else:
        inst = tuple(tuple(sorted(p)) for p in instrumentation)
    mel = None
    if melody is not None:
        mel = extract_melody(reference, config) if melody == "reference" else melody
        mel = mel.truncate(n)
        if melody == "reference" or melody_instrument != AUTOMATIC:
            mel = assign_instruments(mel, melody_instrument, registry)
        if instrumentation == "reference":
            # the reference ensemble gains the melodic instrument where needed
            inst = list(inst)
            for b, entry in enumerate(mel.bars):
                if entry.events and entry.target_instrument is not None:
                    inst[b] = tuple(sorted(set(inst[b]) | {entry.target_instrument}))
            inst = tuple(inst)
    return TransferRequest(
        reference, bar, tracks, inst, mel, octave_mode, strict_register, sampling or SamplingParams(), n,
    )
