"""Event sequences and their JSON-lines file format.

One file holds one sequence, one JSON object per line::

    {"time": 3.25, "event": "watch(u4,p49)", "exogenous": false}

An optional final ``{"horizon": T}`` line sets the observation horizon;
otherwise it is the last event time.  A directory of ``*.jsonl`` files is a
dataset, read in file-name order.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

from .errors import NDTTError, ProgramError
from .program import CONTINUOUS, DISCRETE
from .syntax import Atom, parse_ground_atom


class DataFormatError(NDTTError):
    """An event file is malformed or out of order."""


class Token(NamedTuple):
    time: float
    event: Atom
    exogenous: bool = False


@dataclass
class EventSequence:
    tokens: list[Token] = field(default_factory=list)
    horizon: float | None = None
    mode: str = CONTINUOUS
    name: str = ""

    def __post_init__(self):
        if self.horizon is None:
            self.horizon = self.tokens[-1].time if self.tokens else 0.0
        self.validate()

    def validate(self):
        prev = None
        for i, tok in enumerate(self.tokens):
            if prev is not None and tok.time < prev:
                raise DataFormatError(f"{self.name or 'sequence'}: token {i} at time {tok.time} is out of order")
            prev = tok.time
            if tok.time < 0:
                raise DataFormatError(f"{self.name or 'sequence'}: negative time at token {i}")
        if self.tokens and self.tokens[-1].time > self.horizon:
            raise DataFormatError(f"{self.name or 'sequence'}: horizon {self.horizon} precedes the last event")
        if self.mode == CONTINUOUS:
            seen = set()
            for tok in self.modeled:
                if tok.time in seen:
                    raise DataFormatError(f"{self.name or 'sequence'}: two modeled events share time {tok.time}")
                seen.add(tok.time)
        elif self.mode == DISCRETE:
            steps = [tok.time for tok in self.modeled]
            if steps != list(range(1, len(steps) + 1)):
                raise DataFormatError(
                    f"{self.name or 'sequence'}: discrete sequences need exactly one modeled event at each step 1..T"
                )
        else:
            raise DataFormatError(f"unknown mode {self.mode!r}")

    @property
    def modeled(self) -> list[Token]:
        return [t for t in self.tokens if not t.exogenous]

    @property
    def num_events(self) -> int:
        return sum(1 for t in self.tokens if not t.exogenous)

    def groups(self) -> list[tuple[float, list[Token]]]:
        """Tokens grouped by identical time, in order."""
        out: list[tuple[float, list[Token]]] = []
        for tok in self.tokens:
            if out and out[-1][0] == tok.time:
                out[-1][1].append(tok)
            else:
                out.append((tok.time, [tok]))
        return out

    def to_lines(self) -> list[str]:
        lines = []
        for tok in self.tokens:
            t = int(tok.time) if self.mode == DISCRETE else tok.time
            lines.append(json.dumps({"time": t, "event": str(tok.event), "exogenous": tok.exogenous}))
        lines.append(json.dumps({"horizon": int(self.horizon) if self.mode == DISCRETE else self.horizon}))
        return lines


def parse_sequence(text: str, mode: str = CONTINUOUS, name: str = "") -> EventSequence:
    tokens, horizon = [], None
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DataFormatError(f"{name}:{lineno}: {exc}") from None
        if horizon is not None:
            raise DataFormatError(f"{name}:{lineno}: records after the horizon line")
        if set(rec) == {"horizon"}:
            horizon = float(rec["horizon"])
            continue
        try:
            t = float(rec["time"])
            atom = parse_ground_atom(str(rec["event"]))
        except KeyError as exc:
            raise DataFormatError(f"{name}:{lineno}: missing field {exc}") from None
        except ProgramError as exc:
            raise DataFormatError(f"{name}:{lineno}: bad event: {exc}") from None
        tokens.append(Token(t, atom, bool(rec.get("exogenous", False))))
    return EventSequence(tokens, horizon, mode, name)


def read_sequence(path, mode: str = CONTINUOUS) -> EventSequence:
    path = Path(path)
    return parse_sequence(path.read_text(encoding="utf-8"), mode, path.name)


def write_sequence(path, seq: EventSequence):
    Path(path).write_text("\n".join(seq.to_lines()) + "\n", encoding="utf-8")


def read_dataset(path, mode: str = CONTINUOUS) -> list[EventSequence]:
    path = Path(path)
    if path.is_dir():
        return [read_sequence(p, mode) for p in sorted(path.glob("*.jsonl"))]
    return [read_sequence(path, mode)]


def write_dataset(directory, seqs: list[EventSequence], prefix: str = "seq"):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    width = max(4, len(str(len(seqs))))
    for i, seq in enumerate(seqs):
        write_sequence(directory / f"{prefix}{i:0{width}d}.jsonl", seq)
