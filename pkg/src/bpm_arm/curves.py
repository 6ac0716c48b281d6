"""Per-episode learning records and the metrics computed from them."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

CURVE_COLUMNS = ("episode", "return", "success", "steps", "beta_end", "accept_count")


class InvalidInput(ValueError):
    pass


@dataclass(frozen=True)
class EpisodeRecord:
    episode: int
    ret: float
    success: int
    steps: int
    beta_end: float = float("nan")
    accept_count: int = 0
    evaluation: bool = False


@dataclass
class LearningCurve:
    records: list[EpisodeRecord] = field(default_factory=list)

    def __len__(self):
        return len(self.records)

    def append(self, rec: EpisodeRecord) -> None:
        if self.records and rec.episode <= self.records[-1].episode:
            raise InvalidInput("episode index must increase")
        if rec.success not in (0, 1):
            raise InvalidInput("success must be 0 or 1")
        self.records.append(rec)

    @property
    def successes(self) -> np.ndarray:
        return np.array([r.success for r in self.records], dtype=float)

    @property
    def returns(self) -> np.ndarray:
        return np.array([r.ret for r in self.records], dtype=float)

    def rows(self) -> list[tuple]:
        return [
            (r.episode, repr(float(r.ret)), r.success, r.steps, repr(float(r.beta_end)), r.accept_count)
            for r in self.records
        ]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(CURVE_COLUMNS)
            w.writerows(self.rows())

    @classmethod
    def from_csv(cls, path, eval_every: int = 10) -> "LearningCurve":
        curve = cls()
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            if tuple(reader.fieldnames or ()) != CURVE_COLUMNS:
                raise InvalidInput(f"{path}: unexpected columns {reader.fieldnames}")
            for row in reader:
                ep = int(row["episode"])
                curve.append(EpisodeRecord(
                    ep, float(row["return"]), int(row["success"]), int(row["steps"]),
                    float(row["beta_end"]), int(row["accept_count"]),
                    evaluation=is_eval_episode(ep, eval_every),
                ))
        return curve


def is_eval_episode(episode: int, eval_every: int) -> bool:
    """Every ``eval_every``-th episode (1-based count) runs without exploration noise."""
    return eval_every > 0 and (episode + 1) % eval_every == 0


def final_success_rate(curve: LearningCurve, window: int = 100) -> float:
    """Success rate of the evaluation episodes among the last ``window`` episodes.

    Falls back to all episodes in the window if none of them is an evaluation
    episode.
    """
    if window < 1 or window > len(curve):
        raise InvalidInput(f"window {window} does not fit a curve of {len(curve)} episodes")
    tail = curve.records[-window:]
    evals = [r.success for r in tail if r.evaluation] or [r.success for r in tail]
    return float(np.mean(evals))


def episodes_to_threshold(curve: LearningCurve, threshold: float = 0.5, window: int = 20) -> int:
    """Episode count at which the trailing ``window``-episode success mean first
    reaches ``threshold``. Curves that never get there return ``len(curve) + 1``.
    """
    s = curve.successes
    if len(s) >= window:
        rolling = np.convolve(s, np.ones(window) / window, mode="valid")
        hits = np.flatnonzero(rolling >= threshold - 1e-12)
        if hits.size:
            return int(hits[0] + window)
    return len(s) + 1


def read_table(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def write_rows(path, columns, rows) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        w.writerows(rows)
