"""Batch schedules for injecting a few real images into a synthetic training set.

Three strategies:

* direct    - reals pooled with synthetics, shuffled, chunked.
* balanced  - B-1 synthetics per batch plus one real drawn round-robin from a
              shuffled cycle, so every batch sees a real image.
* finetune  - synthetic-only pretraining epochs, then real-only epochs.

Schedules are plain data; a trainer elsewhere consumes the JSON.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass
from typing import Sequence

from .rng import make_rng

REAL = "real"
SYNTHETIC = "synthetic"


class ScheduleError(ValueError):
    pass


@dataclass(frozen=True)
class Epoch:
    phase: str  # "mixed" | "pretrain" | "finetune"
    batches: tuple[tuple[tuple[str, str], ...], ...]

    def ids(self) -> list[str]:
        return [sid for batch in self.batches for sid, _ in batch]

    def real_usage(self) -> dict[str, int]:
        c = Counter(sid for batch in self.batches for sid, dom in batch if dom == REAL)
        return dict(sorted(c.items()))


@dataclass(frozen=True)
class BatchSchedule:
    strategy: str
    batch_size: int
    seed: int
    epochs: tuple[Epoch, ...]

    def to_dict(self) -> dict:
        return {
            "strategy": self.strategy,
            "batch_size": self.batch_size,
            "seed": self.seed,
            "epochs": [
                {
                    "phase": ep.phase,
                    "real_usage": ep.real_usage(),
                    "batches": [[[sid, dom] for sid, dom in b] for b in ep.batches],
                }
                for ep in self.epochs
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "BatchSchedule":
        epochs = tuple(
            Epoch(
                e["phase"],
                tuple(tuple((sid, dom) for sid, dom in b) for b in e["batches"]),
            )
            for e in d["epochs"]
        )
        return cls(d["strategy"], int(d["batch_size"]), int(d["seed"]), epochs)


def _check_disjoint(syn_ids, real_ids):
    overlap = set(syn_ids) & set(real_ids)
    if overlap:
        raise ScheduleError(f"ids are both synthetic and real: {sorted(overlap)[:5]}")


def _chunk(items: list, size: int) -> list[list]:
    return [items[i : i + size] for i in range(0, len(items), size)]


def _shuffled(rng, items: Sequence):
    items = list(items)
    return [items[i] for i in rng.permutation(len(items))]


def _direct_epoch(rng, pool: list[tuple[str, str]], batch_size: int, phase: str) -> Epoch:
    order = _shuffled(rng, pool)
    return Epoch(phase, tuple(tuple(b) for b in _chunk(order, batch_size)))


def schedule_direct(
    syn_ids: Sequence[str], real_ids: Sequence[str], batch_size: int, epochs: int, seed: int
) -> BatchSchedule:
    if batch_size < 1:
        raise ScheduleError("batch size must be >= 1")
    _check_disjoint(syn_ids, real_ids)
    pool = [(s, SYNTHETIC) for s in syn_ids] + [(r, REAL) for r in real_ids]
    if not pool:
        raise ScheduleError("empty sample pool")
    rng = make_rng(seed)
    eps = tuple(_direct_epoch(rng, pool, batch_size, "mixed") for _ in range(epochs))
    return BatchSchedule("direct", batch_size, seed, eps)


def schedule_balanced(
    syn_ids: Sequence[str], real_ids: Sequence[str], batch_size: int, epochs: int, seed: int
) -> BatchSchedule:
    if batch_size < 2:
        raise ScheduleError("balanced sampling needs batch size >= 2")
    if not real_ids:
        raise ScheduleError("balanced sampling needs at least one real id")
    if not syn_ids:
        raise ScheduleError("balanced sampling needs at least one synthetic id")
    _check_disjoint(syn_ids, real_ids)
    rng = make_rng(seed)
    eps = []
    for _ in range(epochs):
        groups = _chunk(_shuffled(rng, syn_ids), batch_size - 1)
        n = len(groups)
        cycle: list[str] = []
        # one fresh shuffled pass over the reals per lap keeps usage within 1
        while len(cycle) < n:
            cycle.extend(_shuffled(rng, real_ids))
        batches = tuple(
            tuple([(s, SYNTHETIC) for s in g] + [(cycle[i], REAL)])
            for i, g in enumerate(groups)
        )
        eps.append(Epoch("mixed", batches))
    return BatchSchedule("balanced", batch_size, seed, tuple(eps))


def schedule_finetune(
    syn_ids: Sequence[str],
    real_ids: Sequence[str],
    batch_size: int,
    pretrain_epochs: int,
    finetune_epochs: int,
    seed: int,
) -> BatchSchedule:
    if batch_size < 1:
        raise ScheduleError("batch size must be >= 1")
    if pretrain_epochs > 0 and not syn_ids:
        raise ScheduleError("pretraining requested with no synthetic ids")
    if finetune_epochs > 0 and not real_ids:
        raise ScheduleError("fine-tuning requested with no real ids")
    _check_disjoint(syn_ids, real_ids)
    rng = make_rng(seed)
    syn_pool = [(s, SYNTHETIC) for s in syn_ids]
    real_pool = [(r, REAL) for r in real_ids]
    eps = [_direct_epoch(rng, syn_pool, batch_size, "pretrain") for _ in range(pretrain_epochs)]
    eps += [_direct_epoch(rng, real_pool, batch_size, "finetune") for _ in range(finetune_epochs)]
    return BatchSchedule("finetune", batch_size, seed, tuple(eps))


def expected_balanced_batches(n_syn: int, batch_size: int) -> int:
    return math.ceil(n_syn / (batch_size - 1))
