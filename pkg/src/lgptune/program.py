"""Register-machine programs.

A program is an ordered list of three-address instructions over a fixed
register file plus an optional affine head that regresses the final values
of the first r registers onto the target. Registers start at zero for every
instance, register 0 is the output register when no head is attached.

Programs are immutable values: operators and tuning construct new programs
instead of mutating in place.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from . import primitives as prim
from .errors import ParseError, StructuralError
from .primitives import BASIC_FUNCTIONS, FUNCTION_KINDS, TERMINAL_KINDS, clamp_finite

OUTPUT_REGISTER = 0


@dataclass(frozen=True)
class Reg:
    """Register operand."""

    index: int


@dataclass(frozen=True)
class Inp:
    """Raw input-feature operand."""

    index: int


@dataclass(frozen=True, eq=False)
class TunablePrimitiveState:
    """One coefficient-bearing primitive site.

    `kind` is a terminal kind (range statistics / range regressions), a
    tunable function kind, or "MVLR" for the program head. Terminals read
    the feature range [alpha..beta]; functions and the head ignore the
    range fields. `coeffs` always has the exact length the kind demands.
    """

    kind: str
    alpha: int = 0
    beta: int = 0
    coeffs: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.coeffs is None:
            raise StructuralError("a tunable state needs a coefficient vector")
        c = np.array(self.coeffs, dtype=float).ravel()
        object.__setattr__(self, "coeffs", c)
        if self.kind == "MVLR":
            if c.shape[0] < 2:
                raise StructuralError("head needs an intercept and >= 1 weight")
            return
        if self.kind in TERMINAL_KINDS:
            if self.alpha < 0 or self.beta < self.alpha:
                raise StructuralError(
                    f"bad feature range [{self.alpha}:{self.beta}] for '{self.kind}'"
                )
            if self.beta - self.alpha + 1 < prim.min_range_width(self.kind):
                raise StructuralError(
                    f"'{self.kind}' needs a range of width >= {prim.min_range_width(self.kind)}"
                )
        elif self.kind not in FUNCTION_KINDS:
            raise StructuralError(f"unknown tunable kind '{self.kind}'")
        expected = prim.coeff_length(self.kind, self.alpha, self.beta)
        if c.shape[0] != expected:
            raise StructuralError(
                f"'{self.kind}' expects {expected} coefficients, got {c.shape[0]}"
            )

    @property
    def is_terminal(self) -> bool:
        return self.kind in TERMINAL_KINDS

    @property
    def is_function(self) -> bool:
        return self.kind in FUNCTION_KINDS

    def with_coeffs(self, coeffs) -> "TunablePrimitiveState":
        return TunablePrimitiveState(self.kind, self.alpha, self.beta, coeffs)

    def __eq__(self, other):
        if not isinstance(other, TunablePrimitiveState):
            return NotImplemented
        return (
            self.kind == other.kind
            and self.alpha == other.alpha
            and self.beta == other.beta
            and np.array_equal(self.coeffs, other.coeffs)
        )

    def __repr__(self):
        rng = f"[{self.alpha}:{self.beta}]" if self.is_terminal else ""
        return f"{self.kind}{rng}<{self.coeffs.shape[0]} coeffs>"


Operand = Union[Reg, Inp, TunablePrimitiveState]
FuncId = Union[str, TunablePrimitiveState]


@dataclass(frozen=True, eq=False)
class Instruction:
    """dest <- func(op1, op2). Unary functions ignore op2 but keep it in the
    genome, so mutation can later re-expose it."""

    dest: int
    func: FuncId
    op1: Operand
    op2: Operand

    def __post_init__(self):
        if isinstance(self.func, str):
            if self.func not in BASIC_FUNCTIONS:
                raise StructuralError(f"unknown basic function '{self.func}'")
        elif isinstance(self.func, TunablePrimitiveState):
            if not self.func.is_function:
                raise StructuralError(
                    f"'{self.func.kind}' cannot be used in function position"
                )
        else:
            raise StructuralError("func must be a basic name or a tunable function")
        for op in (self.op1, self.op2):
            if isinstance(op, TunablePrimitiveState):
                if not op.is_terminal:
                    raise StructuralError(
                        f"'{op.kind}' cannot be used in operand position"
                    )
            elif not isinstance(op, (Reg, Inp)):
                raise StructuralError("operands must be Reg, Inp or a tunable terminal")

    @property
    def arity(self) -> int:
        if isinstance(self.func, TunablePrimitiveState):
            return 1
        return BASIC_FUNCTIONS[self.func].arity

    def read_operands(self) -> tuple:
        """Operands the instruction actually reads (op2 only when binary)."""
        return (self.op1,) if self.arity == 1 else (self.op1, self.op2)

    def registers_read(self) -> tuple:
        return tuple(op.index for op in self.read_operands() if isinstance(op, Reg))

    def __eq__(self, other):
        if not isinstance(other, Instruction):
            return NotImplemented
        return (
            self.dest == other.dest
            and self.func == other.func
            and self.op1 == other.op1
            and self.op2 == other.op2
        )


@dataclass(frozen=True, eq=False)
class Program:
    """Immutable instruction sequence plus the optional affine head.

    The head regresses the final values of registers 0..r-1; r is implied by
    its coefficient vector (length r + 1). When `mvlr` is None the program's
    prediction is the final value of register 0.
    """

    instructions: tuple
    register_count: int
    mvlr: Optional[TunablePrimitiveState] = None

    def __post_init__(self):
        object.__setattr__(self, "instructions", tuple(self.instructions))
        if len(self.instructions) < 1:
            raise StructuralError("a program holds at least one instruction")
        if self.register_count < 1:
            raise StructuralError("register_count must be >= 1")
        for i, ins in enumerate(self.instructions):
            if not isinstance(ins, Instruction):
                raise StructuralError(f"instruction {i} is not an Instruction")
            if not 0 <= ins.dest < self.register_count:
                raise StructuralError(
                    f"instruction {i} writes register {ins.dest}, "
                    f"file holds {self.register_count}"
                )
            for op in (ins.op1, ins.op2):
                if isinstance(op, Reg) and not 0 <= op.index < self.register_count:
                    raise StructuralError(
                        f"instruction {i} reads register {op.index}, "
                        f"file holds {self.register_count}"
                    )
        if self.mvlr is not None:
            if self.mvlr.kind != "MVLR":
                raise StructuralError("program head must have kind 'MVLR'")
            if self.mvlr_r > self.register_count:
                raise StructuralError(
                    f"head reads {self.mvlr_r} registers, file holds {self.register_count}"
                )

    @property
    def mvlr_r(self) -> int:
        return 0 if self.mvlr is None else self.mvlr.coeffs.shape[0] - 1

    def __len__(self):
        return len(self.instructions)

    def with_instructions(self, instructions) -> "Program":
        return Program(tuple(instructions), self.register_count, self.mvlr)

    def with_mvlr(self, mvlr) -> "Program":
        return Program(self.instructions, self.register_count, mvlr)

    def __eq__(self, other):
        if not isinstance(other, Program):
            return NotImplemented
        return (
            self.register_count == other.register_count
            and len(self.instructions) == len(other.instructions)
            and all(a == b for a, b in zip(self.instructions, other.instructions))
            and (
                self.mvlr == other.mvlr
                if (self.mvlr is None) == (other.mvlr is None)
                else False
            )
        )


# ---------------------------------------------------------------------------
# execution


@dataclass
class ExecutionTrace:
    """Per-site intermediate values recorded during one execution.

    terminal_inputs maps (instruction index, "op1"/"op2") to the feature
    slice each read tunable terminal saw (views into X). function_inputs
    maps instruction index to the input values of a tunable function site.
    register_finals holds the register file after the last instruction and
    before the head, which is exactly what head tuning consumes.
    """

    terminal_inputs: dict
    function_inputs: dict
    dest_values: list
    register_finals: Optional[np.ndarray] = None


def _validate_features(program: Program, d: int):
    for i, ins in enumerate(program.instructions):
        for op in (ins.op1, ins.op2):
            if isinstance(op, Inp) and not 0 <= op.index < d:
                raise StructuralError(
                    f"instruction {i} reads input x{op.index}, data has {d} features"
                )
            if isinstance(op, TunablePrimitiveState) and op.beta >= d:
                raise StructuralError(
                    f"instruction {i} terminal range [{op.alpha}:{op.beta}] "
                    f"exceeds {d} features"
                )


def head_predictions(program: Program, regs: np.ndarray) -> np.ndarray:
    """Apply the head (or the raw output register) to final register values."""
    if program.mvlr is None:
        return regs[OUTPUT_REGISTER].copy()
    r = program.mvlr_r
    return clamp_finite(prim.eval_mvlr(program.mvlr.coeffs, regs[:r].T))


def execute(program: Program, X, trace: bool = False, mask=None):
    """Run `program` on every row of X.

    Returns (predictions, ExecutionTrace or None). Registers start at zero;
    every instruction result is forced finite before it is stored. When
    `mask` is given, instructions whose mask entry is False are skipped
    (used to verify that non-effective code never changes predictions).
    """
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise StructuralError("X must be a 2-d array (instances x features)")
    n, d = X.shape
    _validate_features(program, d)
    regs = np.zeros((program.register_count, n))
    tr = ExecutionTrace({}, {}, []) if trace else None

    for i, ins in enumerate(program.instructions):
        if mask is not None and not mask[i]:
            if tr is not None:
                tr.dest_values.append(None)
            continue
        a = _operand_values(ins.op1, regs, X, tr, i, "op1")
        if isinstance(ins.func, str):
            spec = BASIC_FUNCTIONS[ins.func]
            if spec.arity == 2:
                b = _operand_values(ins.op2, regs, X, tr, i, "op2")
                value = spec.fn(a, b)
            else:
                value = spec.fn(a)
        else:
            if tr is not None:
                tr.function_inputs[i] = np.array(a, dtype=float, copy=True)
            value = prim.eval_tunable_function(ins.func, a)
        value = clamp_finite(np.asarray(value, dtype=float))
        regs[ins.dest] = value
        if tr is not None:
            tr.dest_values.append(value)

    if tr is not None:
        tr.register_finals = regs.copy()
    preds = clamp_finite(head_predictions(program, regs))
    return preds, tr


def _operand_values(op, regs, X, tr, i, slot):
    if isinstance(op, Reg):
        return regs[op.index]
    if isinstance(op, Inp):
        return X[:, op.index]
    if tr is not None:
        tr.terminal_inputs[(i, slot)] = X[:, op.alpha : op.beta + 1]
    return prim.terminal_values(op, X)


def predict(program: Program, X) -> np.ndarray:
    """Predictions only; convenience wrapper around `execute`."""
    return execute(program, X)[0]


# ---------------------------------------------------------------------------
# dead-code analysis


def effective_instructions(program: Program) -> np.ndarray:
    """Boolean mask of instructions whose result can reach the output.

    Backward register-liveness walk: the head needs registers 0..r-1 (just
    register 0 without a head); an instruction is effective when it writes a
    needed register, after which its own read registers become needed.
    """
    if program.mvlr is not None:
        needed = set(range(program.mvlr_r))
    else:
        needed = {OUTPUT_REGISTER}
    mask = np.zeros(len(program.instructions), dtype=bool)
    for i in range(len(program.instructions) - 1, -1, -1):
        ins = program.instructions[i]
        if ins.dest in needed:
            mask[i] = True
            needed.discard(ins.dest)
            needed.update(ins.registers_read())
    return mask


def effective_size(program: Program) -> int:
    return int(effective_instructions(program).sum())


# ---------------------------------------------------------------------------
# text serialization

_FLOAT = r"[-+0-9.eEninfa]+"
_STATE_RE = re.compile(r"^([A-Za-z0-9]+)(?:\[(\d+):(\d+)\])?\{(.*)\}$")
_INSTR_RE = re.compile(r"^R(\d+)\s*=\s*(.+)$")


def _format_coeffs(coeffs) -> str:
    return "{" + ",".join(repr(float(c)) for c in coeffs) + "}"


def _format_state(state: TunablePrimitiveState) -> str:
    if state.is_terminal:
        return f"{state.kind}[{state.alpha}:{state.beta}]{_format_coeffs(state.coeffs)}"
    return f"{state.kind}{_format_coeffs(state.coeffs)}"


def _format_operand(op: Operand) -> str:
    if isinstance(op, Reg):
        return f"R{op.index}"
    if isinstance(op, Inp):
        return f"x{op.index}"
    return _format_state(op)


def program_to_text(program: Program) -> str:
    """Line format: a register header, one instruction per line, head last.

    Coefficients are printed with full repr precision so that
    parse(print(p)) == p exactly.
    """
    lines = [f"registers {program.register_count}"]
    for ins in program.instructions:
        func = ins.func if isinstance(ins.func, str) else _format_state(ins.func)
        lines.append(
            f"R{ins.dest} = {func}({_format_operand(ins.op1)}, {_format_operand(ins.op2)})"
        )
    if program.mvlr is not None:
        lines.append(f"MVLR{_format_coeffs(program.mvlr.coeffs)}")
    return "\n".join(lines) + "\n"


def _parse_coeffs(body: str, lineno: int):
    if body.strip() == "":
        raise ParseError(f"line {lineno}: empty coefficient list")
    try:
        return [float(tok) for tok in body.split(",")]
    except ValueError as e:
        raise ParseError(f"line {lineno}: bad coefficient ({e})") from None


def _parse_state(token: str, lineno: int) -> TunablePrimitiveState:
    m = _STATE_RE.match(token)
    if not m:
        raise ParseError(f"line {lineno}: cannot parse tunable site '{token}'")
    kind, a, b, body = m.groups()
    coeffs = _parse_coeffs(body, lineno)
    try:
        return TunablePrimitiveState(kind, int(a or 0), int(b or 0), coeffs)
    except StructuralError as e:
        raise ParseError(f"line {lineno}: {e}") from None


def _parse_operand(token: str, lineno: int) -> Operand:
    token = token.strip()
    if re.fullmatch(r"R\d+", token):
        return Reg(int(token[1:]))
    if re.fullmatch(r"x\d+", token):
        return Inp(int(token[1:]))
    return _parse_state(token, lineno)


def _split_args(body: str, lineno: int):
    """Split on the top-level comma (coefficient braces contain commas)."""
    depth = 0
    for pos, ch in enumerate(body):
        if ch == "{":
            depth += 1
        elif ch == "}":
            depth -= 1
        elif ch == "," and depth == 0:
            return body[:pos], body[pos + 1 :]
    raise ParseError(f"line {lineno}: expected two operands in '{body}'")


def program_from_text(text: str) -> Program:
    """Parse the text produced by `program_to_text`."""
    lines = [ln for ln in (raw.strip() for raw in text.splitlines()) if ln]
    if not lines:
        raise ParseError("line 1: empty program text")
    head_m = re.fullmatch(r"registers\s+(\d+)", lines[0])
    if not head_m:
        raise ParseError("line 1: expected 'registers <count>' header")
    register_count = int(head_m.group(1))
    instructions = []
    mvlr = None
    for lineno, line in enumerate(lines[1:], start=2):
        if line.startswith("MVLR"):
            m = _STATE_RE.match(line)
            if not m or m.group(1) != "MVLR":
                raise ParseError(f"line {lineno}: cannot parse head '{line}'")
            mvlr = TunablePrimitiveState("MVLR", 0, 0, _parse_coeffs(m.group(4), lineno))
            continue
        if mvlr is not None:
            raise ParseError(f"line {lineno}: instructions after the head")
        m = _INSTR_RE.match(line)
        if not m:
            raise ParseError(f"line {lineno}: cannot parse instruction '{line}'")
        dest = int(m.group(1))
        rhs = m.group(2)
        paren = rhs.find("(")
        if paren < 0 or not rhs.endswith(")"):
            raise ParseError(f"line {lineno}: expected 'func(op1, op2)' in '{rhs}'")
        func_token = rhs[:paren].strip()
        arg1, arg2 = _split_args(rhs[paren + 1 : -1], lineno)
        if func_token in BASIC_FUNCTIONS:
            func: FuncId = func_token
        else:
            func = _parse_state(func_token, lineno)
            if not func.is_function:
                raise ParseError(
                    f"line {lineno}: '{func.kind}' cannot appear in function position"
                )
        try:
            instructions.append(
                Instruction(dest, func, _parse_operand(arg1, lineno), _parse_operand(arg2, lineno))
            )
        except StructuralError as e:
            raise ParseError(f"line {lineno}: {e}") from None
    try:
        return Program(tuple(instructions), register_count, mvlr)
    except StructuralError as e:
        raise ParseError(f"program is not well formed: {e}") from None
