"""Trial-aware train/test partitions for source and target domains.

Source trials are split 4:1 per class. Target training instances are drawn
per class, trial by trial, until each class quota is met; whatever is left
of a partially used trial is discarded so no trial straddles train and test.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

from .errors import DegenerateDataError, InvalidArgumentError

SOURCE, TARGET = "source", "target"
_M64 = (1 << 64) - 1
PLAN_FIELDS = ("source_train", "source_test", "target_train", "target_test")


def mix64(x: int) -> int:
    """SplitMix64 finalizer; a stable 64-bit mixing function."""
    z = (int(x) + 0x9E3779B97F4A7C15) & _M64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _M64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _M64
    return z ^ (z >> 31)


def derive_seed(base_seed: int, partition_index: int, n_t: int) -> int:
    """``base_seed XOR mix64(partition_index << 32 | n_t)`` as a 64-bit int."""
    key = ((int(partition_index) & 0xFFFFFFFF) << 32) | (int(n_t) & 0xFFFFFFFF)
    return (int(base_seed) & _M64) ^ mix64(key)


@dataclass(frozen=True, eq=False)
class TrialTable:
    trial_id: np.ndarray
    label: np.ndarray
    domain: np.ndarray

    def __post_init__(self):
        trial = np.asarray(self.trial_id, dtype=np.int64).ravel()
        label = np.asarray(self.label).astype(np.int64).ravel()
        domain = np.asarray(self.domain).astype(str).ravel()
        if not (len(trial) == len(label) == len(domain)):
            raise InvalidArgumentError("trial_id, label and domain must have equal length")
        if not np.all((label == 0) | (label == 1)):
            raise InvalidArgumentError("labels must be binary (0/1)")
        if not np.all((domain == SOURCE) | (domain == TARGET)):
            raise InvalidArgumentError("domain entries must be 'source' or 'target'")
        seen = {}
        for t, lab, dom in zip(trial.tolist(), label.tolist(), domain.tolist()):
            if seen.setdefault(t, (lab, dom)) != (lab, dom):
                raise InvalidArgumentError(f"trial {t} mixes labels or domains")
        for name, arr in (("trial_id", trial), ("label", label), ("domain", domain)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    def __len__(self):
        return len(self.trial_id)

    def indices(self, domain: str) -> np.ndarray:
        return np.flatnonzero(self.domain == domain)

    def prevalence(self, domain: str) -> float:
        idx = self.indices(domain)
        return float(self.label[idx].mean()) if len(idx) else float("nan")


@dataclass(frozen=True, eq=False)
class PartitionPlan:
    seed: int
    n_t: int
    source_train: np.ndarray
    source_test: np.ndarray
    target_train: np.ndarray
    target_test: np.ndarray

    def __eq__(self, other):
        if not isinstance(other, PartitionPlan):
            return NotImplemented
        return (
            self.seed == other.seed
            and self.n_t == other.n_t
            and all(np.array_equal(getattr(self, f), getattr(other, f)) for f in PLAN_FIELDS)
        )

    def to_text(self) -> str:
        lines = [f"seed: {self.seed}", f"n_t: {self.n_t}"]
        for f in PLAN_FIELDS:
            lines.append(f"{f}: " + " ".join(str(int(i)) for i in getattr(self, f)))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "PartitionPlan":
        fields = {}
        for line in text.strip().splitlines():
            key, _, rest = line.partition(":")
            fields[key.strip()] = rest.split()
        try:
            return cls(
                seed=int(fields["seed"][0]),
                n_t=int(fields["n_t"][0]),
                **{f: np.array([int(v) for v in fields[f]], dtype=np.int64) for f in PLAN_FIELDS},
            )
        except (KeyError, IndexError, ValueError) as exc:
            raise InvalidArgumentError(f"malformed plan text: {exc}") from exc


def _split_trials(trials, rng):
    """4:1 split of one class's trials: ``round(n / 5)`` go to test."""
    order = rng.permutation(trials)
    n_test = int(np.floor(len(order) / 5 + 0.5))
    return order[n_test:], order[:n_test]


def make_partition(table: TrialTable, n_t: int, seed: int) -> PartitionPlan:
    """Draw one leak-free partition.

    Raises
    ------
    InvalidArgumentError
        If ``n_t`` is negative or a class cannot supply its share of ``n_t``.
    DegenerateDataError
        If either domain lacks trials of one class.
    """
    n_t = int(n_t)
    if n_t < 0:
        raise InvalidArgumentError(f"n_t must be >= 0, got {n_t}")
    rng = np.random.default_rng(int(seed) & _M64)

    src = table.indices(SOURCE)
    tgt = table.indices(TARGET)
    if n_t > len(tgt):
        raise InvalidArgumentError(f"n_t = {n_t} exceeds the {len(tgt)} available target instances")

    src_train_trials, src_test_trials = [], []
    for c in (0, 1):
        trials = np.unique(table.trial_id[src][table.label[src] == c])
        if len(trials) == 0:
            raise DegenerateDataError(f"source domain has no trials of class {c}")
        tr, te = _split_trials(trials, rng)
        src_train_trials.append(tr)
        src_test_trials.append(te)
    src_train = src[np.isin(table.trial_id[src], np.concatenate(src_train_trials))]
    src_test = src[np.isin(table.trial_id[src], np.concatenate(src_test_trials))]

    quotas = [n_t // 2, n_t // 2]
    if n_t % 2:
        quotas[int(rng.integers(2))] += 1
    chosen, used_trials = [], []
    for c in (0, 1):
        cls_idx = tgt[table.label[tgt] == c]
        if len(cls_idx) == 0:
            raise DegenerateDataError(f"target domain has no trials of class {c}")
        if quotas[c] > len(cls_idx):
            raise InvalidArgumentError(
                f"class {c} has {len(cls_idx)} target instances, {quotas[c]} requested"
            )
        need = quotas[c]
        for trial in rng.permutation(np.unique(table.trial_id[cls_idx])):
            if need == 0:
                break
            members = rng.permutation(cls_idx[table.trial_id[cls_idx] == trial])
            take = members[:need]
            chosen.append(take)
            used_trials.append(trial)
            need -= len(take)
    tgt_train = np.sort(np.concatenate(chosen)) if chosen else np.empty(0, np.int64)
    tgt_test = tgt[~np.isin(table.trial_id[tgt], np.asarray(used_trials, dtype=np.int64))]

    return PartitionPlan(
        seed=int(seed),
        n_t=n_t,
        source_train=np.sort(src_train).astype(np.int64),
        source_test=np.sort(src_test).astype(np.int64),
        target_train=tgt_train.astype(np.int64),
        target_test=np.sort(tgt_test).astype(np.int64),
    )


@dataclass(frozen=True)
class PlanGrid:
    """``plans[i][j]`` is partition ``i`` at ``n_t_values[j]``."""

    base_seed: int
    n_t_values: tuple
    plans: tuple

    def __len__(self):
        return sum(len(row) for row in self.plans)

    def __iter__(self) -> Iterator[PartitionPlan]:
        for row in self.plans:
            yield from row

    @property
    def n_partitions(self) -> int:
        return len(self.plans)

    def for_n_t(self, n_t: int) -> list[PartitionPlan]:
        j = self.n_t_values.index(n_t)
        return [row[j] for row in self.plans]


def make_plan_grid(
    table: TrialTable,
    n_partitions: int = 100,
    n_t_values: Sequence[int] = tuple(range(10, 101, 10)),
    base_seed: int = 0,
) -> PlanGrid:
    if int(n_partitions) < 1:
        raise InvalidArgumentError(f"n_partitions must be >= 1, got {n_partitions}")
    n_t_values = tuple(int(v) for v in n_t_values)
    if not n_t_values:
        raise InvalidArgumentError("n_t_values is empty")
    plans = tuple(
        tuple(make_partition(table, n_t, derive_seed(base_seed, i, n_t)) for n_t in n_t_values)
        for i in range(int(n_partitions))
    )
    return PlanGrid(int(base_seed), n_t_values, plans)


def plan_violations(plan: PartitionPlan, table: TrialTable) -> list[str]:
    """Human-readable list of leak or bookkeeping violations (empty if clean)."""
    problems = []
    sets = {f: set(getattr(plan, f).tolist()) for f in PLAN_FIELDS}
    for a in range(4):
        for b in range(a + 1, 4):
            if sets[PLAN_FIELDS[a]] & sets[PLAN_FIELDS[b]]:
                problems.append(f"{PLAN_FIELDS[a]} and {PLAN_FIELDS[b]} share instances")
    for dom in ("source", "target"):
        tr = set(table.trial_id[list(sets[f"{dom}_train"])].tolist())
        te = set(table.trial_id[list(sets[f"{dom}_test"])].tolist())
        if tr & te:
            problems.append(f"{dom} trials {sorted(tr & te)[:5]} appear in train and test")
    if len(plan.target_train) != plan.n_t:
        problems.append(f"target_train has {len(plan.target_train)} rows, n_t = {plan.n_t}")
    return problems


def write_plans(path, plans: Sequence[PartitionPlan]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for k, plan in enumerate(plans):
            fh.write(f"# plan {k}\n")
            fh.write(plan.to_text())
            fh.write("\n")


def read_plans(path) -> list[PartitionPlan]:
    with open(path, encoding="utf-8") as fh:
        blocks = fh.read().split("\n\n")
    plans = []
    for block in blocks:
        body = "\n".join(l for l in block.splitlines() if l.strip() and not l.startswith("#"))
        if body:
            plans.append(PartitionPlan.from_text(body))
    return plans
