"""Countdown: build an expression from given numbers (each at most once) that hits a target.

Parsing is a small recursive-descent parser over integers, the four
operators (``* /`` or ``× ÷``) and parentheses. Unary minus is not accepted.
Evaluation uses ``fractions.Fraction`` throughout, so ``7 / 2 * 2`` is
exactly 7 and no float comparison ever happens.
"""

from __future__ import annotations

import json
import random
import re
from collections import Counter
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

MAX_NUMBERS = 8
EXHAUSTIVE_LIMIT = 5

_OPS = {"+": "+", "-": "-", "*": "*", "/": "/", "×": "*", "÷": "/"}
_PREC = {"+": 1, "-": 1, "*": 2, "/": 2}


class ParseError(ValueError):
    pass


class SolverLimitError(ValueError):
    pass


@dataclass(frozen=True)
class Num:
    value: int


@dataclass(frozen=True)
class BinOp:
    op: str
    left: "Expr"
    right: "Expr"


Expr = Num | BinOp


def tokenize(text: str) -> list[str]:
    tokens, i = [], 0
    while i < len(text):
        ch = text[i]
        if ch.isspace():
            i += 1
        elif ch.isdigit() and ch.isascii():
            j = i
            while j < len(text) and text[j].isdigit() and text[j].isascii():
                j += 1
            tokens.append(text[i:j])
            i = j
        elif ch in "()":
            tokens.append(ch)
            i += 1
        elif _OPS.get(ch):
            tokens.append(_OPS[ch])
            i += 1
        else:
            raise ParseError(f"unexpected character {ch!r} at offset {i}")
    return tokens


class _Parser:
    def __init__(self, tokens):
        self.tokens = tokens
        self.pos = 0

    def peek(self):
        return self.tokens[self.pos] if self.pos < len(self.tokens) else None

    def take(self):
        tok = self.peek()
        if tok is None:
            raise ParseError("unexpected end of expression")
        self.pos += 1
        return tok

    def expr(self):
        node = self.term()
        while self.peek() in ("+", "-"):
            op = self.take()
            node = BinOp(op, node, self.term())
        return node

    def term(self):
        node = self.atom()
        while self.peek() in ("*", "/"):
            op = self.take()
            node = BinOp(op, node, self.atom())
        return node

    def atom(self):
        tok = self.take()
        if tok == "(":
            node = self.expr()
            if self.take() != ")":
                raise ParseError("expected ')'")
            return node
        if tok.isdigit():
            return Num(int(tok))
        raise ParseError(f"unexpected token {tok!r}")


def parse_expression(text: str) -> Expr:
    tokens = tokenize(text)
    if not tokens:
        raise ParseError("empty expression")
    p = _Parser(tokens)
    node = p.expr()
    if p.peek() is not None:
        raise ParseError(f"unexpected token {p.peek()!r} after expression")
    return node


def evaluate(node: Expr) -> Fraction:
    """Exact value; ZeroDivisionError on division by zero."""
    if isinstance(node, Num):
        return Fraction(node.value)
    a, b = evaluate(node.left), evaluate(node.right)
    if node.op == "+":
        return a + b
    if node.op == "-":
        return a - b
    if node.op == "*":
        return a * b
    if b == 0:
        raise ZeroDivisionError("division by zero")
    return a / b


def leaves(node: Expr) -> list[int]:
    if isinstance(node, Num):
        return [node.value]
    return leaves(node.left) + leaves(node.right)


def to_text(node: Expr) -> str:
    """Infix text with only the parentheses needed to reparse the same tree."""
    if isinstance(node, Num):
        return str(node.value)
    prec = _PREC[node.op]
    left, right = to_text(node.left), to_text(node.right)
    if isinstance(node.left, BinOp) and _PREC[node.left.op] < prec:
        left = f"({left})"
    if isinstance(node.right, BinOp) and _PREC[node.right.op] <= prec:
        right = f"({right})"
    return f"{left} {node.op} {right}"


@dataclass(frozen=True)
class CountdownInstance:
    numbers: tuple[int, ...]
    target: int

    def __post_init__(self):
        if not 1 <= len(self.numbers) <= MAX_NUMBERS:
            raise ValueError(f"need 1..{MAX_NUMBERS} numbers, got {len(self.numbers)}")
        if any(not isinstance(n, int) or n <= 0 for n in self.numbers):
            raise ValueError("numbers must be positive integers")
        if not isinstance(self.target, int) or self.target < 0:
            raise ValueError("target must be a non-negative integer")


def verify_countdown(expr: Expr | str, instance: CountdownInstance) -> tuple[bool, list[str]]:
    reasons = []
    if isinstance(expr, str):
        try:
            expr = parse_expression(expr)
        except ParseError as exc:
            return False, [f"parse error: {exc}"]
    used, have = Counter(leaves(expr)), Counter(instance.numbers)
    for n, k in sorted(used.items()):
        if k > have.get(n, 0):
            reasons.append(f"{n} used {k} time(s) but available {have.get(n, 0)}")
    try:
        value = evaluate(expr)
    except ZeroDivisionError:
        reasons.append("division by zero")
    else:
        if value != instance.target:
            reasons.append(f"evaluates to {value}, target {instance.target}")
    return not reasons, reasons


@dataclass
class TaggedResponse:
    raw_text: str
    think_span: str | None = None
    answer_span: str | None = None
    well_formed: bool = False

    @classmethod
    def parse(cls, text: str) -> "TaggedResponse":
        think = _first_span(text, "think")
        answer = _first_span(text, "answer")
        ok = think is not None and answer is not None and _balanced(text)
        return cls(text, think, answer, ok)


def _first_span(text: str, tag: str) -> str | None:
    m = re.search(rf"<{tag}>(.*?)</{tag}>", text, flags=re.DOTALL)
    return m.group(1) if m else None


def _balanced(text: str) -> bool:
    """Every think/answer tag is closed in order and nothing is left open."""
    stack = []
    for m in re.finditer(r"<(/?)(think|answer)>", text):
        closing, tag = m.group(1), m.group(2)
        if not closing:
            if stack:
                return False   # nesting one tag in another is not accepted
            stack.append(tag)
        elif not stack or stack.pop() != tag:
            return False
    return not stack


@dataclass
class CountdownReward:
    total: float
    format: float
    answer: float
    reasons: list[str] = field(default_factory=list)

    def __iter__(self):
        return iter((self.total, self.format, self.answer))


FORMAT_WEIGHT = 0.1
ANSWER_WEIGHT = 1.0


def countdown_reward(response: TaggedResponse | str, instance: CountdownInstance) -> CountdownReward:
    if isinstance(response, str):
        response = TaggedResponse.parse(response)
    if not response.well_formed:
        return CountdownReward(0.0, 0.0, 0.0, ["missing or unbalanced tags"])
    ok, reasons = verify_countdown(response.answer_span.strip(), instance)
    answer = 1.0 if ok else 0.0
    total = round(FORMAT_WEIGHT * 1.0 + ANSWER_WEIGHT * answer, 10)
    return CountdownReward(total, 1.0, answer, reasons)


_LEAF = 3     # precedence of a bare number


def _joined(a, b):
    """Texts, root precedences and values of a op b, as ``to_text`` would print them."""
    ta, pa, va = a
    tb, pb, vb = b
    for op in "+-*/":
        if op == "/" and vb == 0:
            continue
        prec = _PREC[op]
        left = f"({ta})" if pa < prec else ta
        right = f"({tb})" if pb <= prec else tb
        v = va + vb if op == "+" else va - vb if op == "-" else va * vb if op == "*" else va / vb
        yield f"{left} {op} {right}", prec, v


def all_expressions(numbers) -> dict[str, Fraction]:
    """Every expression over every non-empty sub-multiset of ``numbers``.

    Each number is used at most once; all orders, operators and
    parenthesisations are covered. Keys are canonical texts (``to_text``).
    """
    nums = list(numbers)
    if len(nums) > EXHAUSTIVE_LIMIT:
        raise SolverLimitError(f"exhaustive search is limited to {EXHAUSTIVE_LIMIT} numbers")
    n = len(nums)
    table: dict[int, dict[str, tuple]] = {}
    for mask in range(1, 1 << n):
        bits = [i for i in range(n) if mask >> i & 1]
        out: dict[str, tuple] = {}
        if len(bits) == 1:
            v = nums[bits[0]]
            out[str(v)] = (str(v), _LEAF, Fraction(v))
        else:
            sub = (mask - 1) & mask
            while sub:
                rest = mask ^ sub
                for a in table[sub].values():
                    for b in table[rest].values():
                        for entry in _joined(a, b):
                            out.setdefault(entry[0], entry)
                sub = (sub - 1) & mask
        table[mask] = out
    result = {}
    for entries in table.values():
        for text, (_, _, v) in entries.items():
            result.setdefault(text, v)
    return result


def reachable_values(numbers) -> set[Fraction]:
    """Distinct values reachable using each number at most once (value-level DP)."""
    nums = list(numbers)
    if len(nums) > EXHAUSTIVE_LIMIT + 1:
        raise SolverLimitError(f"value search is limited to {EXHAUSTIVE_LIMIT + 1} numbers")
    n = len(nums)
    vals: dict[int, set[Fraction]] = {}
    for mask in range(1, 1 << n):
        bits = [i for i in range(n) if mask >> i & 1]
        if len(bits) == 1:
            vals[mask] = {Fraction(nums[bits[0]])}
            continue
        acc = set()
        sub = (mask - 1) & mask
        while sub:
            rest = mask ^ sub
            for a in vals[sub]:
                for b in vals[rest]:
                    acc.update((a + b, a - b, a * b))
                    if b:
                        acc.add(a / b)
            sub = (sub - 1) & mask
        vals[mask] = acc
    out = set()
    for v in vals.values():
        out |= v
    return out


def enumerate_solutions(instance: CountdownInstance) -> list[str]:
    """All distinct expression texts that evaluate exactly to the target."""
    exprs = all_expressions(instance.numbers)
    return sorted(t for t, v in exprs.items() if v == instance.target)


def solve(instance: CountdownInstance) -> str | None:
    """One solution, or None; cheaper than full enumeration."""
    if Fraction(instance.target) not in reachable_values(instance.numbers):
        return None
    sols = enumerate_solutions(instance)
    return min(sols, key=lambda s: (len(s), s)) if sols else None


def generate_instances(count: int, size: int, seed: int, *, max_number: int = 100,
                       max_target: int = 1000, solvable_fraction: float = 0.5) -> list[dict]:
    """Random instances labelled with the exhaustive solver.

    About ``solvable_fraction`` of the targets are drawn from the values the
    numbers can reach; the rest are uniform in ``[0, max_target]``. Labels
    always come from the solver, never from how the target was drawn.
    """
    if not 1 <= size <= EXHAUSTIVE_LIMIT:
        raise SolverLimitError(f"size must be in 1..{EXHAUSTIVE_LIMIT} for labelled generation")
    rng = random.Random(seed)
    out = []
    for _ in range(count):
        numbers = tuple(rng.randint(1, max_number) for _ in range(size))
        reach = sorted(v for v in reachable_values(numbers)
                       if v.denominator == 1 and 0 <= v <= max_target)
        if reach and rng.random() < solvable_fraction:
            target = int(rng.choice(reach))
        else:
            target = rng.randint(0, max_target)
        inst = CountdownInstance(numbers, target)
        sol = solve(inst)
        out.append({"numbers": list(numbers), "target": target,
                    "solvable": sol is not None, "solution": sol})
    return out


def write_instances(path, records) -> None:
    Path(path).write_text("".join(json.dumps(r, sort_keys=True) + "\n" for r in records))


PROMPT_TEMPLATE = ("Numbers: {numbers}. Target: {target}. Combine the numbers with + - * / "
                   "and parentheses, each number at most once. Put reasoning inside "
                   "<think></think> and only the expression inside <answer></answer>.")


def render_prompt(instance: CountdownInstance) -> str:
    return PROMPT_TEMPLATE.format(numbers=list(instance.numbers), target=instance.target)


class CountdownTask:
    """Reward callable: mean total Countdown reward over an instance batch."""

    def __init__(self, instances, max_new: int = 64, batch_size: int | None = None):
        instances = list(instances)
        if batch_size is not None:
            instances = instances[:batch_size]
        if not instances:
            raise ValueError("countdown task needs at least one instance")
        self.instances = instances
        self.max_new = max_new

    def __call__(self, model) -> float:
        replies = model.respond([render_prompt(i) for i in self.instances], self.max_new)
        scores = [countdown_reward(y, i).total for y, i in zip(replies, self.instances)]
        return sum(scores) / len(scores)
