"""Shipped example programs and the superposition program generator."""

from __future__ import annotations

from pathlib import Path

from ..program import ValidatedProgram, compile_program

FIXTURE_DIR = Path(__file__).resolve().parent


def fixture_names() -> list[str]:
    return sorted(p.stem for p in FIXTURE_DIR.glob("*.ndtt"))


def fixture_path(name: str) -> Path:
    p = FIXTURE_DIR / f"{name}.ndtt"
    if not p.exists():
        raise FileNotFoundError(f"no fixture named {name!r}; known: {', '.join(fixture_names())}")
    return p


def fixture_text(name: str) -> str:
    return fixture_path(name).read_text(encoding="utf-8")


def load_fixture(name: str) -> ValidatedProgram:
    return compile_program(fixture_text(name))


def superposition_program(M: int, N: int, variant: str = "structured", dim: int = 8) -> str:
    """Program text for M independent processes with N event types each.

    variants:
      ``structured``        each e(M,N) sees only local(M); per-type embeddings
      ``structured_shared`` as above but without any per-type parameter names
      ``nhp``               one global world state; per-type embeddings and
                            per-type intensity parameters
    """
    lines = [f"% superposition of {M} processes x {N} types ({variant})"]
    lines += [f"is_process({m})." for m in range(1, M + 1)]
    lines += [f"is_type({n})." for n in range(1, N + 1)]
    lines += [f":- embed(is_event, {dim}).", ":- event(e, 0)."]
    emb = "" if variant == "structured_shared" else " :: emb(M,N)"
    lines.append(f"is_event(M,N) :- is_process(M), is_type(N){emb}.")
    if variant in ("structured", "structured_shared"):
        lines += [
            f":- embed(local, {dim}).",
            "e(M,N) :- local(M), is_type(N).",
            "local(M) <- init, is_process(M).",
            "local(M) <- e(M,N), is_event(M,N), local(M).",
        ]
    elif variant == "nhp":
        lines += [
            f":- embed(world, {dim}).",
            "e(M,N) :- world, is_process(M), is_type(N) :: prob(M,N).",
            "world <- init.",
            "world <- e(M,N), is_event(M,N), world.",
        ]
    else:
        raise ValueError(f"unknown superposition variant {variant!r}")
    return "\n".join(lines) + "\n"
