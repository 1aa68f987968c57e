"""Event-driven Monte-Carlo realization of the two-type BRW.

Each particle sojourn is one record [type, x, t1, t2] closed by a fate:
death, branching into (k, l) offspring at the same site, a jump to x + v,
type-1 -> type-2 conversion, or censoring at the horizon T.  A particle
waits an exponential time with total rate

    rho_i = kappa_i + mu_i + sum_{k+l>=2} beta_i(k, l) + r * [i = 1]

and the fate is drawn with the step probabilities mu_i/rho_i,
beta_i(k,l)/rho_i, kappa_i a_i(z)/rho_i and r/rho_1; the jump displacement
is drawn from the normalized kernel after the category (an equivalent
factorization of the per-z probabilities).  Particles never interact, so
lineages are processed depth-first off a stack: any processing order
yields the same law, and the stack keeps memory at O(live set).

Randomness comes from a counter-based Philox generator keyed by
(seed, replica_id), which makes replica streams provably non-overlapping
and every run bit-reproducible; only raw uniforms are consumed from the
generator so the draw sequence is independent of library version details.

A completed ``SimulationRun`` is immutable and safe to share across
threads; replicas are embarrassingly parallel.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterator

import numpy as np

from .branching import TwoTypeModel

__all__ = [
    "FATE_DIED",
    "FATE_BRANCHED",
    "FATE_JUMPED",
    "FATE_CONVERTED",
    "FATE_CENSORED",
    "FATE_NAMES",
    "ParticleRecord",
    "SimulationRun",
    "EnsembleResult",
    "SiteStat",
    "EventCapExceeded",
    "run",
    "snapshot",
    "ensemble",
    "map_replicas",
    "default_workers",
]

FATE_DIED, FATE_BRANCHED, FATE_JUMPED, FATE_CONVERTED, FATE_CENSORED = range(5)
FATE_NAMES = ("died", "branched", "jumped", "converted", "censored")

DEFAULT_EVENT_CAP = 10_000_000

_MASK64 = (1 << 64) - 1


class EventCapExceeded(RuntimeError):
    """A replica produced more records than the configured event cap.

    This is the loud-failure signal for supercritical blow-up at the chosen
    horizon; raise the cap deliberately rather than catching this broadly.
    """

    def __init__(self, cap: int, replica_id: int):
        self.cap = cap
        self.replica_id = replica_id
        super().__init__(
            f"replica {replica_id} exceeded the event cap of {cap} records; "
            "the population is likely blowing up at this horizon")


def replica_rng(seed: int, replica_id: int) -> np.random.Generator:
    """Philox generator keyed injectively by (seed, replica_id).

    Distinct keys select independent Philox permutations, so replica
    streams cannot overlap by construction.  The derivation is stable API:
    key = [seed mod 2^64, replica_id mod 2^64].
    """
    key = np.array([seed & _MASK64, replica_id & _MASK64], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


class _UniformBuffer:
    """Amortized scalar uniforms in [0, 1) from a numpy Generator."""

    def __init__(self, rng: np.random.Generator, size: int = 8192):
        self._rng = rng
        self._size = size
        self._buf = rng.random(size)
        self._idx = 0

    def next(self) -> float:
        i = self._idx
        if i == self._size:
            self._buf = self._rng.random(self._size)
            i = 0
        self._idx = i + 1
        return self._buf[i]


@dataclass(frozen=True)
class ParticleRecord:
    """One particle sojourn: [i, x, t1, t2] plus its closing fate."""

    ptype: int
    position: tuple[int, ...]
    t1: float
    t2: float
    fate: str
    offspring: tuple[int, int] | None = None      # for fate == "branched"
    displacement: tuple[int, ...] | None = None   # for fate == "jumped"
    parent: int = -1

    def fate_label(self) -> str:
        if self.fate == "branched":
            return f"branched({self.offspring[0]},{self.offspring[1]})"
        if self.fate == "jumped":
            return "jumped(" + ",".join(str(c) for c in self.displacement) + ")"
        return self.fate


@dataclass(frozen=True)
class SimulationRun:
    """Complete replay-deterministic history of one replica.

    Columnar storage; ``records()`` yields ``ParticleRecord`` views.  Every
    non-initial record's t1 equals its parent's t2, and censored records
    (t2 == T) count as alive on the closed interval [t1, T].
    """

    model: TwoTypeModel
    horizon: float
    seed: int
    replica_id: int
    initial: tuple[tuple[int, tuple[int, ...]], ...]
    types: np.ndarray = field(repr=False)        # (n,) int8, values 1 | 2
    positions: np.ndarray = field(repr=False)    # (n, d) int64
    t1: np.ndarray = field(repr=False)
    t2: np.ndarray = field(repr=False)
    fates: np.ndarray = field(repr=False)        # (n,) int8 fate codes
    aux_a: np.ndarray = field(repr=False)        # k for branches, jump index, else -1
    aux_b: np.ndarray = field(repr=False)        # l for branches, else -1
    parents: np.ndarray = field(repr=False)      # (n,) int64, -1 for initial records

    @property
    def n_records(self) -> int:
        return len(self.types)

    def alive_mask(self, t: float) -> np.ndarray:
        if t < 0 or t > self.horizon:
            raise ValueError(f"time {t} outside [0, {self.horizon}]")
        censored = self.fates == FATE_CENSORED
        return (self.t1 <= t) & ((t < self.t2) | (censored & (t <= self.t2)))

    def record(self, idx: int) -> ParticleRecord:
        fate = int(self.fates[idx])
        offspring = None
        displacement = None
        if fate == FATE_BRANCHED:
            offspring = (int(self.aux_a[idx]), int(self.aux_b[idx]))
        elif fate == FATE_JUMPED:
            kernel = self.model.kernel(int(self.types[idx]))
            displacement = tuple(int(c) for c in kernel.offsets[self.aux_a[idx]])
        return ParticleRecord(
            ptype=int(self.types[idx]),
            position=tuple(int(c) for c in self.positions[idx]),
            t1=float(self.t1[idx]), t2=float(self.t2[idx]),
            fate=FATE_NAMES[fate], offspring=offspring,
            displacement=displacement, parent=int(self.parents[idx]))

    def records(self) -> Iterator[ParticleRecord]:
        for idx in range(self.n_records):
            yield self.record(idx)

    def root_of(self) -> np.ndarray:
        """Initial-ancestor record index per record (parents precede children)."""
        roots = np.arange(self.n_records, dtype=np.int64)
        for idx in range(self.n_records):
            p = self.parents[idx]
            if p >= 0:
                roots[idx] = roots[p]
        return roots


class _CompiledType:
    """Per-type sampling tables for the event loop."""

    __slots__ = ("inv_rho", "rho", "bounds", "branch_offspring", "jump_cum",
                 "jump_offsets", "n_branch", "convert_slot")

    def __init__(self, model: TwoTypeModel, ptype: int):
        law = model.law
        kappa = model.kappa(ptype)
        kernel = model.kernel(ptype)
        mu = law.mu1 if ptype == 1 else law.mu2
        branches = law.beta1 if ptype == 1 else law.beta2
        conv = law.conversion_rate if ptype == 1 else 0.0
        rho = kappa + mu + sum(r for _, _, r in branches) + conv
        if rho <= 0:
            raise ValueError(f"type {ptype} has zero total rate; the model is inert")
        self.rho = rho
        self.inv_rho = 1.0 / rho
        bounds = []
        acc = mu / rho
        bounds.append(acc)                     # death
        self.branch_offspring = [(k, l) for k, l, _ in branches]
        for _, _, r in branches:
            acc += r / rho
            bounds.append(acc)
        self.n_branch = len(branches)
        acc += conv / rho
        bounds.append(acc)                     # conversion (zero-width for type 2)
        self.convert_slot = 1 + self.n_branch
        self.bounds = bounds                   # jump fills the remainder to 1
        self.jump_cum = kernel.cumulative_weights().tolist()
        self.jump_offsets = [tuple(int(c) for c in v) for v in kernel.offsets]


def run(model: TwoTypeModel, horizon: float, initial, seed: int,
        event_cap: int = DEFAULT_EVENT_CAP, replica_id: int = 0) -> SimulationRun:
    """Simulate one replica to the horizon; deterministic in all arguments.

    ``initial`` is a sequence of (type, position) pairs.  Raises
    ``EventCapExceeded`` once more than ``event_cap`` records are produced.
    """
    if horizon <= 0:
        raise ValueError(f"horizon must be positive, got {horizon}")
    init = [(int(p), _pos_tuple(x, model.dim)) for p, x in initial]
    if not init:
        raise ValueError("initial configuration must not be empty")
    comp = {1: _CompiledType(model, 1), 2: _CompiledType(model, 2)}
    buf = _UniformBuffer(replica_rng(seed, replica_id))
    nextu = buf.next
    log = math.log
    T = float(horizon)

    types: list[int] = []
    xs: list[tuple[int, ...]] = []
    t1s: list[float] = []
    t2s: list[float] = []
    fates: list[int] = []
    aux_a: list[int] = []
    aux_b: list[int] = []
    parents: list[int] = []

    stack = [(p, x, 0.0, -1) for p, x in reversed(init)]
    while stack:
        ptype, pos, t1, parent = stack.pop()
        rid = len(types)
        if rid >= event_cap:
            raise EventCapExceeded(event_cap, replica_id)
        ct = comp[ptype]
        dt = -log(1.0 - nextu()) * ct.inv_rho
        t2 = t1 + dt
        types.append(ptype)
        xs.append(pos)
        t1s.append(t1)
        parents.append(parent)
        if t2 >= T:
            t2s.append(T)
            fates.append(FATE_CENSORED)
            aux_a.append(-1)
            aux_b.append(-1)
            continue
        t2s.append(t2)
        u = nextu()
        bounds = ct.bounds
        slot = 0
        n_slots = len(bounds)
        while slot < n_slots and u >= bounds[slot]:
            slot += 1
        if slot == 0:
            fates.append(FATE_DIED)
            aux_a.append(-1)
            aux_b.append(-1)
        elif slot <= ct.n_branch:
            k, l = ct.branch_offspring[slot - 1]
            fates.append(FATE_BRANCHED)
            aux_a.append(k)
            aux_b.append(l)
            for _ in range(k):
                stack.append((1, pos, t2, rid))
            for _ in range(l):
                stack.append((2, pos, t2, rid))
        elif slot == ct.convert_slot:
            fates.append(FATE_CONVERTED)
            aux_a.append(-1)
            aux_b.append(-1)
            stack.append((2, pos, t2, rid))
        else:
            uz = nextu()
            jc = ct.jump_cum
            zi = 0
            nz = len(jc) - 1
            while zi < nz and uz >= jc[zi]:
                zi += 1
            off = ct.jump_offsets[zi]
            fates.append(FATE_JUMPED)
            aux_a.append(zi)
            aux_b.append(-1)
            stack.append((ptype, tuple(a + b for a, b in zip(pos, off)), t2, rid))

    return SimulationRun(
        model=model, horizon=T, seed=seed, replica_id=replica_id,
        initial=tuple(init),
        types=np.array(types, dtype=np.int8),
        positions=np.array(xs, dtype=np.int64).reshape(len(xs), model.dim),
        t1=np.array(t1s), t2=np.array(t2s),
        fates=np.array(fates, dtype=np.int8),
        aux_a=np.array(aux_a, dtype=np.int32),
        aux_b=np.array(aux_b, dtype=np.int32),
        parents=np.array(parents, dtype=np.int64))


def _pos_tuple(x, dim: int) -> tuple[int, ...]:
    xv = (x,) if isinstance(x, (int, np.integer)) else tuple(x)
    if len(xv) != dim:
        raise ValueError(f"initial position {x} does not have dimension {dim}")
    return tuple(int(c) for c in xv)


def snapshot(sim: SimulationRun, t: float) -> dict[tuple[int, tuple[int, ...]], int]:
    """Counts of particles alive at t: records with t1 <= t < t2, censored
    ones counting on the closed interval [t1, T]."""
    mask = sim.alive_mask(t)
    out: dict[tuple[int, tuple[int, ...]], int] = {}
    sel_types = sim.types[mask]
    sel_pos = sim.positions[mask]
    if len(sel_types) == 0:
        return out
    stacked = np.column_stack([sel_types.astype(np.int64), sel_pos])
    uniq, counts = np.unique(stacked, axis=0, return_counts=True)
    for row, cnt in zip(uniq, counts):
        out[(int(row[0]), tuple(int(c) for c in row[1:]))] = int(cnt)
    return out


@dataclass(frozen=True)
class SiteStat:
    mean: float
    variance: float
    se: float
    n: int


@dataclass
class EnsembleResult:
    n_replicas: int
    base_seed: int
    runs: list[SimulationRun] | None
    site_stats: dict[float, dict[tuple[int, tuple[int, ...]], SiteStat]]
    failures: list[tuple[int, str]]


def default_workers() -> int:
    try:
        return max(1, int(os.environ.get("BRW2_THREADS", "1")))
    except ValueError:
        return 1


def _replica_job(args):
    (model, horizon, initial, base_seed, replica_id, event_cap, reducer) = args
    try:
        sim = run(model, horizon, initial, base_seed, event_cap=event_cap,
                  replica_id=replica_id)
    except EventCapExceeded as exc:
        return replica_id, None, str(exc)
    return replica_id, reducer(sim), None


def map_replicas(model: TwoTypeModel, horizon: float, initial, n_replicas: int,
                 base_seed: int, reducer: Callable[[SimulationRun], object],
                 event_cap: int = DEFAULT_EVENT_CAP,
                 n_workers: int | None = None) -> tuple[list, list[tuple[int, str]]]:
    """Apply ``reducer`` to each replica; results kept in replica order.

    Replica k uses the stream keyed by (base_seed, k).  Failures are
    collected per replica without aborting the rest.  Parallel workers
    (capped by BRW2_THREADS) do not affect results, only wall time.
    """
    if n_replicas < 1:
        raise ValueError("n_replicas must be >= 1")
    workers = default_workers() if n_workers is None else max(1, n_workers)
    jobs = [(model, horizon, initial, base_seed, k, event_cap, reducer)
            for k in range(n_replicas)]
    results: list = [None] * n_replicas
    failures: list[tuple[int, str]] = []
    if workers == 1 or n_replicas == 1:
        done = map(_replica_job, jobs)
    else:
        pool = ProcessPoolExecutor(max_workers=workers)
        done = pool.map(_replica_job, jobs, chunksize=max(1, n_replicas // (8 * workers)))
    for rid, value, err in done:
        if err is not None:
            failures.append((rid, err))
        else:
            results[rid] = value
    if workers > 1 and n_replicas > 1:
        pool.shutdown()
    return results, failures


def ensemble(model: TwoTypeModel, horizon: float, initial, n_replicas: int,
             base_seed: int, snapshot_times=(), keep_runs: bool = True,
             event_cap: int = DEFAULT_EVENT_CAP,
             n_workers: int | None = None) -> EnsembleResult:
    """Independent replicas plus per-site mean/variance at requested times.

    Sites a replica never occupies contribute zero counts to the averages.
    With ``keep_runs=False`` histories are discarded after aggregation,
    which is the sane mode for large replica counts.
    """
    times = [float(t) for t in snapshot_times]

    def reduce_run(sim: SimulationRun):
        snaps = [snapshot(sim, t) for t in times]
        return (sim if keep_runs else None, snaps)

    pairs, failures = map_replicas(model, horizon, initial, n_replicas, base_seed,
                                   reduce_run, event_cap=event_cap,
                                   n_workers=n_workers)
    runs = [] if keep_runs else None
    sums: list[dict] = [{} for _ in times]
    sumsq: list[dict] = [{} for _ in times]
    n_ok = 0
    for pair in pairs:
        if pair is None:
            continue
        n_ok += 1
        sim, snaps = pair
        if keep_runs:
            runs.append(sim)
        for acc, acc2, snap in zip(sums, sumsq, snaps):
            for key, cnt in snap.items():
                acc[key] = acc.get(key, 0) + cnt
                acc2[key] = acc2.get(key, 0) + cnt * cnt
    site_stats: dict[float, dict] = {}
    for t, acc, acc2 in zip(times, sums, sumsq):
        stats = {}
        for key in sorted(acc) if n_ok else ():
            s, s2 = acc[key], acc2[key]
            mean = s / n_ok
            var = (s2 - s * s / n_ok) / (n_ok - 1) if n_ok > 1 else 0.0
            var = max(var, 0.0)
            stats[key] = SiteStat(mean=mean, variance=var,
                                  se=math.sqrt(var / n_ok), n=n_ok)
        site_stats[t] = stats
    return EnsembleResult(n_replicas=n_replicas, base_seed=base_seed, runs=runs,
                          site_stats=site_stats, failures=failures)
