"""Discrete-event model of the loosely coupled fragment workflow.

Tasks form a DAG shaped like one FMO run (SCC sweeps of monomer solves,
then dimer / far-pair tasks, then a reduction). ``simulate`` list-schedules
it on identical workers; ``DataStore`` gives the one-sided put/get/accumulate
semantics the tasks exchange data through.
"""

from __future__ import annotations

import csv
import heapq
import io
import math
import threading
from collections import Counter
from dataclasses import dataclass, field
from fractions import Fraction
from itertools import combinations

import numpy as np

from fragsolv.errors import CycleError, NotFoundError, ParameterError


@dataclass(frozen=True)
class Task:
    id: int
    kind: str  # Monomer, Dimer, EsFar, Reduce, RismSolve, Mediate
    deps: frozenset
    cost: float
    payload: int = 0  # values produced, for the transfer cost
    label: str = ""

    def __post_init__(self):
        if self.cost < 0:
            raise ParameterError(f"task {self.id} has negative cost")
        object.__setattr__(self, "deps", frozenset(self.deps))


@dataclass(frozen=True)
class CostModel:
    a: float = 1.0
    b: float = 0.0
    alpha: float = 0.0
    beta_byte: float = 0.0

    def __post_init__(self):
        if min(self.a, self.b, self.alpha, self.beta_byte) < 0:
            raise ParameterError("cost model parameters must be >= 0")

    def transfer(self, n_values):
        return self.alpha + self.beta_byte * n_values


class TaskGraph:
    def __init__(self, tasks=(), cost_model=None):
        self.tasks = {}
        self.cost_model = cost_model or CostModel()
        for t in tasks:
            self.add(t)

    def add(self, task):
        if task.id in self.tasks:
            raise ParameterError(f"duplicate task id {task.id}")
        self.tasks[task.id] = task
        return task

    def new(self, kind, deps, cost, payload=0, label=""):
        return self.add(Task(len(self.tasks), kind, frozenset(deps), cost, payload, label))

    def __len__(self):
        return len(self.tasks)

    def __iter__(self):
        return iter(self.tasks.values())

    def validate(self):
        for t in self:
            missing = [d for d in t.deps if d not in self.tasks]
            if missing:
                raise ParameterError(f"task {t.id} depends on unknown tasks {missing}")
        self.topological_order()

    def topological_order(self):
        indeg = {tid: len(t.deps) for tid, t in self.tasks.items()}
        children = {tid: [] for tid in self.tasks}
        for t in self:
            for d in t.deps:
                children[d].append(t.id)
        ready = sorted(tid for tid, k in indeg.items() if k == 0)
        order = []
        while ready:
            tid = ready.pop(0)
            order.append(tid)
            for c in sorted(children[tid]):
                indeg[c] -= 1
                if indeg[c] == 0:
                    ready.append(c)
            ready.sort()
        if len(order) != len(self.tasks):
            raise CycleError("task graph contains a cycle")
        return order

    def total_cost(self):
        return math.fsum(t.cost for t in self)

    def critical_path(self):
        finish = {}
        for tid in self.topological_order():
            t = self.tasks[tid]
            finish[tid] = Fraction(t.cost) + max((finish[d] for d in t.deps), default=Fraction(0))
        return float(max(finish.values(), default=Fraction(0)))

    def kinds(self):
        return Counter(t.kind for t in self)


def build_fmo_dag(scheme, scc_sweeps, cost, near_pairs=None):
    """Task graph of one FMO2 run.

    ``near_pairs`` is the set of (I, J) id pairs given a dimer solve; the
    rest get an electrostatic far-pair task. ``None`` treats every pair as near.
    """
    if scc_sweeps < 1:
        raise ParameterError("scc_sweeps must be >= 1")
    frags = sorted(scheme, key=lambda f: f.id)
    g = TaskGraph(cost_model=cost)
    prev = []
    for sweep in range(1, scc_sweeps + 1):
        current = []
        for f in frags:
            n = len(f)
            t = g.new("Monomer", prev, cost.a * n ** 3 + cost.b, n, f"monomer {f.id} sweep {sweep}")
            current.append(t.id)
        prev = current
    last = prev
    pair_tasks = []
    for fi, fj in combinations(frags, 2):
        pair = (fi.id, fj.id)
        n = len(fi) + len(fj)
        if near_pairs is None or pair in near_pairs:
            t = g.new("Dimer", last, cost.a * n ** 3 + cost.b, n, f"dimer {pair}")
        else:
            t = g.new("EsFar", last, cost.b, 1, f"es-far {pair}")
        pair_tasks.append(t.id)
    g.new("Reduce", pair_tasks or last, cost.b, 1, "reduce")
    return g


@dataclass(frozen=True)
class Assignment:
    task_id: int
    worker: int
    start: float
    end: float


@dataclass
class Trace:
    assignments: list
    makespan: float
    busy: list
    kinds: dict = field(default_factory=dict)

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["task_id", "kind", "worker", "start", "end"])
        for a in self.assignments:
            w.writerow([a.task_id, self.kinds.get(a.task_id, ""), a.worker, repr(a.start), repr(a.end)])
        return buf.getvalue()


def simulate(dag, workers, seed=0, jitter=0.0):
    """Event-driven list scheduling on ``workers`` identical workers.

    A free worker takes the ready task of largest cost (ties: smallest id).
    A dependency produced on another worker delays the consumer by the cost
    model's transfer time. ``jitter`` > 0 perturbs task durations by a
    seeded multiplicative factor in [1 - jitter, 1 + jitter].

    Event times are kept as exact rationals and rounded once on output, so
    the one-worker makespan equals the correctly rounded sum of costs.
    """
    if workers < 1:
        raise ParameterError("need at least one worker")
    dag.validate()
    cm = dag.cost_model
    rng = np.random.default_rng(seed)
    duration = {}
    for tid in sorted(dag.tasks):
        c = dag.tasks[tid].cost
        duration[tid] = Fraction(c * rng.uniform(1 - jitter, 1 + jitter) if jitter else c)
    transfer = {tid: Fraction(cm.transfer(t.payload)) for tid, t in dag.tasks.items()}
    children = {tid: [] for tid in dag.tasks}
    missing = {}
    for t in dag:
        missing[t.id] = len(t.deps)
        for d in t.deps:
            children[d].append(t.id)

    placed = {}  # task id -> (worker, start, end), exact
    free_at = [Fraction(0)] * workers
    # tasks whose dependencies have all finished, highest priority first
    available = sorted((t for t in dag if not t.deps), key=lambda t: (-t.cost, t.id))
    running = []  # heap of (end, task id)
    now = Fraction(0)

    arrivals = {}

    def ready_time(task, w):
        # asked only once every dependency is placed, so the summary is final
        if task.id not in arrivals:
            local = {}
            remote = {}  # best remote arrival per producing worker
            for d in task.deps:
                dw, _, dend = placed[d]
                local[dw] = max(local.get(dw, dend), dend)
                r = dend + transfer[d]
                remote[dw] = max(remote.get(dw, r), r)
            top = sorted(remote.items(), key=lambda kv: kv[1], reverse=True)[:2]
            arrivals[task.id] = (local, top)
        local, top = arrivals[task.id]
        t = local.get(w, Fraction(0))
        for dw, r in top:
            if dw != w:
                return max(t, r)
        return t

    while len(placed) < len(dag.tasks):
        progressed = True
        while progressed and available:
            progressed = False
            for w in range(workers):
                if free_at[w] > now:
                    continue
                for k, task in enumerate(available):
                    if ready_time(task, w) <= now:
                        end = now + duration[task.id]
                        placed[task.id] = (w, now, end)
                        heapq.heappush(running, (end, task.id))
                        free_at[w] = end
                        del available[k]
                        progressed = True
                        break
        upcoming = [t for t in free_at if t > now]
        if running:
            upcoming.append(running[0][0])
        for w in range(workers):
            if free_at[w] <= now:
                upcoming += [r for r in (ready_time(t, w) for t in available) if r > now]
        if not upcoming:
            if len(placed) < len(dag.tasks):
                raise CycleError("scheduler stalled; graph has unsatisfiable dependencies")
            break
        now = min(upcoming)
        newly = []
        while running and running[0][0] <= now:
            _, tid = heapq.heappop(running)
            for c in children[tid]:
                missing[c] -= 1
                if missing[c] == 0:
                    newly.append(dag.tasks[c])
        if newly:
            available = sorted(available + newly, key=lambda t: (-t.cost, t.id))

    busy = [Fraction(0)] * workers
    for tid, (w, _, _) in placed.items():
        busy[w] += duration[tid]
    assignments = sorted(
        (Assignment(tid, w, float(a), float(b)) for tid, (w, a, b) in placed.items()),
        key=lambda a: (a.start, a.worker, a.task_id),
    )
    makespan = float(max((b for _, _, b in placed.values()), default=Fraction(0)))
    return Trace(assignments, makespan, [float(b) for b in busy], {t.id: t.kind for t in dag})


def validate_trace(dag, trace):
    """Independent check of a trace; returns a list of violations (empty if valid)."""
    problems = []
    by_task = {a.task_id: a for a in trace.assignments}
    if set(by_task) != set(dag.tasks):
        problems.append("trace does not cover every task exactly once")
    if len(by_task) != len(trace.assignments):
        problems.append("a task was scheduled twice")
    per_worker = {}
    for a in trace.assignments:
        per_worker.setdefault(a.worker, []).append(a)
        if a.end < a.start:
            problems.append(f"task {a.task_id} ends before it starts")
    for w, items in per_worker.items():
        items.sort(key=lambda a: (a.start, a.end))
        for x, y in zip(items, items[1:]):
            if y.start < x.end:
                problems.append(f"tasks {x.task_id} and {y.task_id} overlap on worker {w}")
    for tid, t in dag.tasks.items():
        if tid not in by_task:
            continue
        for d in t.deps:
            if d in by_task and by_task[tid].start < by_task[d].end:
                problems.append(f"task {tid} starts before dependency {d} ends")
    if trace.assignments and trace.makespan != max(a.end for a in trace.assignments):
        problems.append("makespan is not the latest end time")
    return problems


@dataclass(frozen=True)
class SpeedupRow:
    workers: int
    makespan: float
    speedup: float
    efficiency: float


def speedup_curve(dag, worker_counts, seed=0):
    counts = list(worker_counts)
    if not counts:
        raise ParameterError("worker_counts must be non-empty")
    serial = simulate(dag, 1, seed).makespan
    rows = []
    for p in counts:
        m = simulate(dag, p, seed).makespan
        s = serial / m if m > 0 else float(p)
        rows.append(SpeedupRow(p, m, s, s / p))
    return rows


def speedup_csv(rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["workers", "makespan", "speedup", "efficiency"])
    for r in rows:
        w.writerow([r.workers, repr(r.makespan), repr(r.speedup), repr(r.efficiency)])
    return buf.getvalue()


class DataStore:
    """Shared key/value cells with one-sided put, get and atomic accumulate."""

    def __init__(self):
        self._cells = {}
        self._lock = threading.Lock()

    def put(self, key, value):
        with self._lock:
            self._cells[key] = value

    def get(self, key):
        with self._lock:
            try:
                return self._cells[key]
            except KeyError:
                raise NotFoundError(f"get of unwritten key {key!r}") from None

    def accumulate(self, key, delta):
        with self._lock:
            self._cells[key] = self._cells.get(key, 0) + delta

    def __contains__(self, key):
        with self._lock:
            return key in self._cells


def store_put(store, key, value):
    store.put(key, value)


def store_get(store, key):
    return store.get(key)


def store_accumulate(store, key, delta):
    store.accumulate(key, delta)
