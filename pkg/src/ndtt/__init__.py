"""Datalog programs that define neural temporal point processes."""

from .program import CONTINUOUS, DISCRETE, compile_program, load_program

__all__ = ["CONTINUOUS", "DISCRETE", "compile_program", "load_program"]
