"""Line-delimited JSON datasets.

Prompt/solution files hold one ``{"prompt": str, "solution": str}`` object
per line; Countdown files hold ``{"numbers": [int], "target": int}`` plus the
optional labels ``solvable`` and ``solution``. Blank lines are skipped.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

from .countdown import CountdownInstance


class DatasetError(ValueError):
    pass


@dataclass(frozen=True)
class PromptSolutionPair:
    prompt: str
    solution: str


@dataclass(frozen=True)
class LabeledInstance:
    instance: CountdownInstance
    solvable: bool | None = None
    solution: str | None = None


BUILTIN = {
    "conciseness-train": "conciseness_train.jsonl",
    "conciseness-eval": "conciseness_eval.jsonl",
}


def _rows(path):
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise DatasetError(f"{path}: {exc.strerror}") from None
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DatasetError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from None
        if not isinstance(obj, dict):
            raise DatasetError(f"{path}:{lineno}: expected a JSON object")
        yield lineno, obj


def resolve(path_or_name) -> Path:
    if str(path_or_name) in BUILTIN:
        return Path(str(resources.files("seedes") / "data" / BUILTIN[str(path_or_name)]))
    return Path(path_or_name)


def load_pairs(path) -> list[PromptSolutionPair]:
    path = resolve(path)
    out = []
    for lineno, obj in _rows(path):
        prompt, solution = obj.get("prompt"), obj.get("solution")
        if not isinstance(prompt, str) or not isinstance(solution, str):
            raise DatasetError(f"{path}:{lineno}: 'prompt' and 'solution' must be strings")
        if not solution:
            raise DatasetError(f"{path}:{lineno}: empty solution")
        extra = set(obj) - {"prompt", "solution"}
        if extra:
            raise DatasetError(f"{path}:{lineno}: unknown field(s) {sorted(extra)}")
        out.append(PromptSolutionPair(prompt, solution))
    if not out:
        raise DatasetError(f"{path}: no records")
    return out


def load_countdown(path) -> list[LabeledInstance]:
    path = Path(path)
    out = []
    for lineno, obj in _rows(path):
        numbers, target = obj.get("numbers"), obj.get("target")
        if (not isinstance(numbers, list) or not all(type(n) is int for n in numbers)
                or type(target) is not int):
            raise DatasetError(f"{path}:{lineno}: 'numbers' must be a list of ints and "
                               "'target' an int")
        try:
            inst = CountdownInstance(tuple(numbers), target)
        except ValueError as exc:
            raise DatasetError(f"{path}:{lineno}: {exc}") from None
        solvable = obj.get("solvable")
        if solvable is not None and not isinstance(solvable, bool):
            raise DatasetError(f"{path}:{lineno}: 'solvable' must be a boolean")
        out.append(LabeledInstance(inst, solvable, obj.get("solution")))
    if not out:
        raise DatasetError(f"{path}: no records")
    return out


def load_dataset(path):
    """Dispatch on the first record's fields."""
    path = resolve(path)
    for _, obj in _rows(path):
        if "numbers" in obj:
            return load_countdown(path)
        return load_pairs(path)
    raise DatasetError(f"{path}: no records")
