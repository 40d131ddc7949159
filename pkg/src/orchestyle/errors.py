"""Exception hierarchy. ``InputError`` subclasses map to CLI exit code 1."""

from __future__ import annotations


class OrchestyleError(Exception):
    pass


class InputError(OrchestyleError):
    """Bad user input: files, requests, unknown instruments."""


class ScoreError(InputError):
    pass


class MidiFormatError(InputError):
    pass


class EmptyScoreError(InputError):
    pass


class TimeSignatureChangeError(InputError):
    def __init__(self, tick: int, numerator: int, denominator: int):
        super().__init__(f"time signature change to {numerator}/{denominator} at tick {tick} is not supported")
        self.tick = tick


class NotInSubsetError(InputError):
    def __init__(self, program: int, valid: tuple[int, ...]):
        super().__init__(f"program {program} is not in the instrument subset; valid programs: {list(valid)}")
        self.program = program
        self.valid = valid


class IncompleteProfileError(InputError):
    pass


class GrammarError(InputError):
    def __init__(self, position: int, token: object, expected: frozenset):
        shown = sorted(map(str, expected))
        if len(shown) > 12:
            shown = shown[:12] + [f"... ({len(expected)} total)"]
        super().__init__(f"grammar violation at position {position}: got {token}, expected one of {shown}")
        self.position = position
        self.token = token
        self.expected = expected


class CorpusTooSmallError(InputError):
    pass


class RequestError(InputError):
    """Schema-valid request that is inconsistent with the registry or reference."""


class InfeasibleRegisterError(OrchestyleError):
    def __init__(self, pitch_class: int, program: int, low: int, high: int):
        super().__init__(
            f"no octave puts pitch class {pitch_class} inside the register {low}-{high} of program {program}"
        )


class DeadEndError(OrchestyleError):
    def __init__(self, prefix: list):
        tail = " ".join(map(str, prefix[-32:]))
        super().__init__(f"model assigns zero probability to every legal token; prefix tail: {tail}")
        self.prefix = prefix


class NonFiniteLossError(OrchestyleError):
    def __init__(self, batch_index: int, detail: str = ""):
        super().__init__(f"non-finite loss at batch element {batch_index} {detail}".strip())
        self.batch_index = batch_index


class TrainingDivergedError(OrchestyleError):
    def __init__(self, step: int, last_good: dict | None):
        super().__init__(f"training diverged at step {step}")
        self.step = step
        self.last_good = last_good
