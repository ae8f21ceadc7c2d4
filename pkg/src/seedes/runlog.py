"""Replayable run trajectories stored as line-delimited JSON.

Line 1 is a header, then one record per iteration, then (for completed runs)
a footer. Seeds are unsigned decimal strings so 64-bit values survive any
JSON parser; float32 quantities are written as their exact float64 value,
so parsing and casting back to float32 is lossless. See docs/FORMATS.md.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

FORMAT = "seedes-runlog"
VERSION = 1


class RunLogError(ValueError):
    pass


def _f32_json(x) -> float:
    # float32 -> float64 is exact, and json writes a round-trippable repr
    return float(np.float32(x))


@dataclass
class IterationRecord:
    iteration: int
    sigma: np.float32
    alpha: np.float32
    seeds: list[int]
    z_scores: np.ndarray
    rewards: np.ndarray

    def to_json(self) -> dict:
        return {
            "iteration": self.iteration,
            "sigma": _f32_json(self.sigma),
            "alpha": _f32_json(self.alpha),
            "seeds": [str(s) for s in self.seeds],
            "z": [_f32_json(z) for z in self.z_scores],
            "rewards": [_f32_json(r) for r in self.rewards],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "IterationRecord":
        seeds = [int(s) for s in obj["seeds"]]
        z = np.asarray(obj["z"], dtype=np.float64).astype(np.float32)
        rewards = np.asarray(obj["rewards"], dtype=np.float64).astype(np.float32)
        if len(z) != len(seeds) or len(rewards) != len(seeds):
            raise RunLogError(f"iteration {obj.get('iteration')}: seed/z/reward counts differ")
        return cls(int(obj["iteration"]), np.float32(obj["sigma"]), np.float32(obj["alpha"]),
                   seeds, z, rewards)


@dataclass
class RunLog:
    initial_digest: str
    meta: dict = field(default_factory=dict)
    records: list[IterationRecord] = field(default_factory=list)
    final_digest: str | None = None

    def header(self) -> dict:
        return {"format": FORMAT, "version": VERSION, "initial_digest": self.initial_digest,
                "meta": self.meta}

    def footer(self) -> dict:
        return {"final_digest": self.final_digest, "iterations": len(self.records)}

    def lines(self):
        yield json.dumps(self.header(), sort_keys=True)
        for rec in self.records:
            yield json.dumps(rec.to_json(), sort_keys=True)
        if self.final_digest is not None:
            yield json.dumps(self.footer(), sort_keys=True)

    def fingerprint(self) -> str:
        """Hash of the trajectory content (header meta excluded)."""
        h = hashlib.sha256(self.initial_digest.encode())
        for rec in self.records:
            h.update(json.dumps(rec.to_json(), sort_keys=True).encode())
        h.update(str(self.final_digest).encode())
        return h.hexdigest()

    def truncated(self, t: int) -> "RunLog":
        return RunLog(self.initial_digest, dict(self.meta), self.records[:t], None)

    def save(self, path) -> None:
        Path(path).write_text("\n".join(self.lines()) + "\n")

    @classmethod
    def load(cls, path) -> "RunLog":
        path = Path(path)
        try:
            lines = [ln for ln in path.read_text().splitlines() if ln.strip()]
        except OSError as exc:
            raise RunLogError(f"{path}: {exc.strerror}") from None
        if not lines:
            raise RunLogError(f"{path}: empty run log")
        try:
            head = json.loads(lines[0])
        except json.JSONDecodeError as exc:
            raise RunLogError(f"{path}:1: {exc.msg}") from None
        if head.get("format") != FORMAT or head.get("version") != VERSION:
            raise RunLogError(f"{path}: not a {FORMAT} v{VERSION} file")
        log = cls(head["initial_digest"], head.get("meta", {}))
        for lineno, line in enumerate(lines[1:], start=2):
            try:
                obj = json.loads(line)
                if "final_digest" in obj:
                    log.final_digest = obj["final_digest"]
                    break
                rec = IterationRecord.from_json(obj)
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise RunLogError(f"{path}:{lineno}: malformed record ({exc})") from None
            if rec.iteration != len(log.records) + 1:
                raise RunLogError(f"{path}:{lineno}: expected iteration {len(log.records) + 1}, "
                                  f"found {rec.iteration}")
            log.records.append(rec)
        return log


class RunLogWriter:
    """Appends records to disk as they are produced, flushing every line."""

    def __init__(self, log: RunLog, path):
        self.log = log
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._fh = open(self.path, "w")
        self._write(log.header())

    def _write(self, obj: dict) -> None:
        self._fh.write(json.dumps(obj, sort_keys=True) + "\n")
        self._fh.flush()

    def append(self, rec: IterationRecord) -> None:
        self.log.records.append(rec)
        self._write(rec.to_json())

    def finish(self, final_digest: str) -> None:
        self.log.final_digest = final_digest
        self._write(self.log.footer())
        self.close()

    def close(self) -> None:
        if not self._fh.closed:
            self._fh.close()
