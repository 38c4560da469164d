"""Ground truth on finite instances: explicit MDP expansion, value iteration, simulation."""

from __future__ import annotations

import csv
import math
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Mapping

import numpy as np

from .expr import PredicateMap, as_fraction
from .frontend import ASSIGN, DET, NONDET, PROB, Pcfg

UPPER, LOWER = "upper", "lower"
WILSON_Z = 1.959963984540054


class StateSpaceError(RuntimeError):
    pass


@dataclass
class OracleModel:
    """A finite MDP.  Each state owns a contiguous run of choices; each choice
    owns a contiguous run of transitions ``(dst, prob)``."""

    labels: list  # (location, valuation tuple) or (location, valuation tuple, "sink")
    variables: tuple
    target: np.ndarray  # bool per state
    sink: np.ndarray  # bool per state
    choice_start: np.ndarray  # per state, index of first choice (len n+1)
    trans_start: np.ndarray  # per choice, index of first transition (len nc+1)
    dst: np.ndarray
    prob: np.ndarray
    init: int = 0
    flags: set = field(default_factory=set)

    @property
    def n_states(self) -> int:
        return len(self.labels)

    @property
    def n_choices(self) -> int:
        return len(self.trans_start) - 1

    def choice_state(self) -> np.ndarray:
        counts = np.diff(self.choice_start)
        return np.repeat(np.arange(self.n_states), counts)

    def trans_choice(self) -> np.ndarray:
        return np.repeat(np.arange(self.n_choices), np.diff(self.trans_start))

    def index(self, loc, valuation: Mapping) -> int:
        key = (loc, tuple(as_fraction(valuation.get(v, 0)) for v in self.variables))
        return self._index()[key]

    def _index(self) -> dict:
        if not hasattr(self, "_idx"):
            self._idx = {lab[:2]: i for i, lab in enumerate(self.labels) if len(lab) == 2}
        return self._idx

    def label_str(self, i: int) -> str:
        lab = self.labels[i]
        vals = ",".join(f"{v}={x}" for v, x in zip(self.variables, lab[1]))
        return f"{lab[0]}[{vals}]" + ("!sink" if len(lab) > 2 else "")

    def successors(self, i: int) -> list:
        """List of choices, each a list of ``(dst, prob)``."""
        out = []
        for c in range(self.choice_start[i], self.choice_start[i + 1]):
            a, b = self.trans_start[c], self.trans_start[c + 1]
            out.append([(int(self.dst[t]), float(self.prob[t])) for t in range(a, b)])
        return out


def _geometric_support(p: Fraction, tail: float) -> list:
    q = 1 - p
    out, k, mass = [], 1, Fraction(0)
    while True:
        w = p * q ** (k - 1)
        out.append((Fraction(k), w))
        mass += w
        if float(1 - mass) < tail:
            break
        k += 1
    last, w = out[-1]
    out[-1] = (last, w + (1 - mass))
    return out


def expand(g: Pcfg, bounds: Mapping | None = None, grid: int = 10,
           ndet_values: Mapping | None = None, target: PredicateMap | None = None,
           cap: int = 10 ** 6, tail: float = 1e-12) -> OracleModel:
    """Enumerate the configurations reachable from the initial one.

    ``bounds`` maps variables to ``(lo, hi)`` (``None`` for an open end);
    configurations outside become absorbing non-target sinks.  Uniform samples
    are discretised to ``grid`` cell midpoints; ndet assignments range over
    ``ndet_values[loc]`` (default: the same midpoint grid on bounded intervals).
    Target configurations are absorbing.
    """
    bounds = {v: (None if lo is None else as_fraction(lo), None if hi is None else as_fraction(hi))
              for v, (lo, hi) in (bounds or {}).items()}
    tgt = target if target is not None else g.target
    variables = tuple(g.variables)
    flags = set()

    def outside(vals) -> bool:
        for v, x in zip(variables, vals):
            lo, hi = bounds.get(v, (None, None))
            if (lo is not None and x < lo) or (hi is not None and x > hi):
                return True
        return False

    def ndet_choices(loc, u) -> list:
        if ndet_values and loc in ndet_values:
            return [as_fraction(x) for x in ndet_values[loc]]
        from .certificates import _intervals_of
        out = []
        for lo, hi in _intervals_of(u.domain):
            if lo is None or hi is None:
                raise StateSpaceError(f"{loc}: unbounded ndet domain needs explicit ndet_values")
            if lo == hi:
                out.append(lo)
            else:
                out.extend(lo + (hi - lo) * (2 * i + 1) / (2 * grid) for i in range(grid))
                flags.add("discretized")
        return out

    init = (g.init_loc, tuple(as_fraction(g.init_val.get(v, 0)) for v in variables))
    index = {init: 0}
    labels = [init]
    queue = deque([init])
    rows = []  # per state: list of choices, each list of (key, prob)

    def key_of(loc, vals):
        k = (loc, vals)
        if outside(vals):
            k = (loc, vals, "sink")
        if k not in index:
            if len(labels) >= cap:
                raise StateSpaceError(f"state space exceeds cap {cap} ({len(labels)} states so far)")
            index[k] = len(labels)
            labels.append(k)
            queue.append(k)
        return index[k]

    targets, sinks = [], []
    while queue:
        k = queue.popleft()
        loc, vals = k[0], k[1]
        val = dict(zip(variables, vals))
        is_sink = len(k) > 2
        is_tgt = (not is_sink) and tgt.holds(loc, val)
        targets.append(is_tgt)
        sinks.append(is_sink)
        me = index[k]
        if is_sink or is_tgt:
            rows.append([[(me, Fraction(1))]])
            continue
        kind = g.kinds[loc]
        edges = g.edges[loc]
        if kind == NONDET:
            rows.append([[(key_of(e.target, vals), Fraction(1))] for e in edges])
        elif kind == PROB:
            rows.append([[(key_of(e.target, vals), e.prob) for e in edges if e.prob]])
        elif kind == DET:
            hit = [e for e in edges if e.guard is None or e.guard.holds(val)]
            if len(hit) != 1:
                raise ValueError(f"{loc}: {len(hit)} guards hold at {val}")
            rows.append([[(key_of(hit[0].target, vals), Fraction(1))]])
        else:
            u = g.updates[loc]
            nxt = edges[0].target
            j = variables.index(u.var)

            def put(x):
                return vals[:j] + (as_fraction(x),) + vals[j + 1:]

            if u.kind == "det":
                rows.append([[(key_of(nxt, put(u.expr.eval(val))), Fraction(1))]])
            elif u.kind == "ndet":
                rows.append([[(key_of(nxt, put(x)), Fraction(1))] for x in ndet_choices(loc, u)])
            else:
                d = u.dist
                if d.kind == "finite":
                    support = list(d.support)
                elif d.kind == "uniform":
                    flags.add("discretized")
                    w = (d.b - d.a) / grid
                    support = [(d.a + w * (2 * i + 1) / 2, Fraction(1, grid)) for i in range(grid)]
                else:
                    flags.add("truncated")
                    support = _geometric_support(d.p, tail)
                merged = {}
                for x, q in support:
                    s = key_of(nxt, put(x))
                    merged[s] = merged.get(s, 0) + q
                rows.append([list(merged.items())])
    choice_start, trans_start, dst, prob = [0], [0], [], []
    for choices in rows:
        for ch in choices:
            for s, q in ch:
                dst.append(s)
                prob.append(float(q))
            trans_start.append(len(dst))
        choice_start.append(len(trans_start) - 1)
    return OracleModel(labels, variables, np.array(targets, bool), np.array(sinks, bool),
                       np.array(choice_start), np.array(trans_start), np.array(dst, dtype=np.int64),
                       np.array(prob), 0, flags)


# ---------------------------------------------------------------------------
# value iteration

@dataclass
class ValueTable:
    values: np.ndarray
    iterations: int
    residual: float
    converged: bool = True
    error_bound: float | None = None  # true-error bound, for contracting operators

    def __getitem__(self, i):
        return float(self.values[i])


class _Op:
    def __init__(self, m: OracleModel):
        self.m = m
        self.tc = m.trans_choice()
        self.cs = m.choice_state()
        self.nc = m.n_choices
        self.starts = m.choice_start[:-1]

    def choice_values(self, v: np.ndarray) -> np.ndarray:
        contrib = self.m.prob * v[self.m.dst]
        return np.bincount(self.tc, weights=contrib, minlength=self.nc)

    def pre(self, v: np.ndarray, direction: str) -> np.ndarray:
        cv = self.choice_values(v)
        red = np.maximum if direction == UPPER else np.minimum
        return red.reduceat(cv, self.starts)


def _check_direction(direction):
    if direction not in (UPPER, LOWER):
        raise ValueError(f"direction must be {UPPER!r} or {LOWER!r}")


def value_iterate_reach(m: OracleModel, direction: str = UPPER, tol: float = 1e-9,
                        max_iter: int = 10 ** 6, trace: list | None = None) -> ValueTable:
    """Kleene iteration from 0 of ``v = 1 on C, pre v elsewhere``."""
    _check_direction(direction)
    return _iterate(m, lambda op, v: np.where(m.target, 1.0, op.pre(v, direction)), tol, max_iter, trace)


def value_iterate_gamma(m: OracleModel, gamma: float, direction: str = LOWER, tol: float = 1e-9,
                        max_iter: int = 10 ** 6, trace: list | None = None) -> ValueTable:
    """Iteration of ``v = 1 on C, gamma * pre v elsewhere``; contracting for gamma < 1."""
    _check_direction(direction)
    if not 0 < gamma < 1:
        raise ValueError("gamma must lie in (0,1)")
    vt = _iterate(m, lambda op, v: np.where(m.target, 1.0, gamma * op.pre(v, direction)), tol, max_iter, trace)
    vt.error_bound = vt.residual * gamma / (1 - gamma)
    return vt


def _iterate(m, step, tol, max_iter, trace) -> ValueTable:
    op = _Op(m)
    v = np.zeros(m.n_states)
    res = math.inf
    for it in range(1, max_iter + 1):
        nv = step(op, v)
        res = float(np.max(np.abs(nv - v))) if len(v) else 0.0
        v = nv
        if trace is not None:
            trace.append(v.copy())
        if res < tol:
            return ValueTable(v, it, res, True)
    return ValueTable(v, max_iter, res, False)


def _can_reach(m: OracleModel) -> np.ndarray:
    """States with a path of positive-probability transitions into C."""
    src = m.choice_state()[m.trans_choice()]
    preds = [[] for _ in range(m.n_states)]
    for a, b, p in zip(src.tolist(), m.dst.tolist(), m.prob.tolist()):
        if p > 0:
            preds[b].append(a)
    seen = m.target.copy()
    queue = deque(np.nonzero(seen)[0].tolist())
    while queue:
        for a in preds[queue.popleft()]:
            if not seen[a]:
                seen[a] = True
                queue.append(a)
    return seen


def _almost_sure(m: OracleModel, direction: str) -> np.ndarray:
    """States reaching C with probability 1 under every scheduler (upper) or under
    some scheduler (lower).  Graph-based, no numerics."""
    n = m.n_states
    succ = [m.successors(i) for i in range(n)]
    nondet = np.diff(m.choice_start) > 1
    tgt = m.target
    if direction == UPPER:
        # states where some scheduler avoids C surely
        z = ~tgt.copy()
        changed = True
        while changed:
            changed = False
            for i in range(n):
                if not z[i]:
                    continue
                ok = [all(z[d] for d, _ in ch) for ch in succ[i]]
                keep = any(ok) if nondet[i] else all(ok)
                if not keep:
                    z[i] = False
                    changed = True
        # states that can reach such a state with positive probability
        bad = z.copy()
        changed = True
        while changed:
            changed = False
            for i in range(n):
                if bad[i] or tgt[i]:
                    continue
                if any(bad[d] for ch in succ[i] for d, _ in ch):
                    bad[i] = True
                    changed = True
        return ~bad
    r = np.ones(n, bool)
    while True:
        y = tgt.copy()
        changed = True
        while changed:
            changed = False
            for i in range(n):
                if y[i] or not r[i]:
                    continue
                for ch in succ[i]:
                    if all(r[d] for d, _ in ch) and any(y[d] for d, _ in ch):
                        y[i] = True
                        changed = True
                        break
        if (y == r).all():
            return r
        r = y


def value_iterate_esteps(m: OracleModel, direction: str = UPPER, tol: float = 1e-9,
                         max_iter: int = 10 ** 6, ceiling: float = 1e9) -> ValueTable:
    """Expected steps to C: ``0 on C, 1 + pre v elsewhere``.  States that miss C
    with positive probability (under the relevant schedulers) are infinite."""
    _check_direction(direction)
    finite = _almost_sure(m, direction)
    inf = np.where(finite, 0.0, math.inf)

    def step(op, v):
        nv = np.where(m.target, 0.0, 1.0 + op.pre(v, direction))
        return np.where(finite, nv, inf)

    op = _Op(m)
    v = inf.copy()
    res = math.inf
    vt = None
    for it in range(1, max_iter + 1):
        nv = step(op, v)
        fin = np.isfinite(nv)
        res = float(np.max(np.abs(nv[fin] - v[fin]))) if fin.any() else 0.0
        v = nv
        if res < tol:
            vt = ValueTable(v, it, res, True)
            break
    if vt is None:
        vt = ValueTable(v, max_iter, res, False)
    vt.values = np.where(vt.values > ceiling, math.inf, vt.values)
    return vt


def residual(m: OracleModel, vt: ValueTable, kind: str = "reach", direction: str = UPPER,
             gamma: float | None = None) -> float:
    op = _Op(m)
    v = vt.values
    if kind == "reach":
        nv = np.where(m.target, 1.0, op.pre(v, direction))
    elif kind == "gamma":
        nv = np.where(m.target, 1.0, gamma * op.pre(v, direction))
    else:
        nv = np.where(m.target, 0.0, 1.0 + op.pre(v, direction))
    fin = np.isfinite(v) & np.isfinite(nv)
    return float(np.max(np.abs(nv[fin] - v[fin]))) if fin.any() else 0.0


# ---------------------------------------------------------------------------
# simulation

@dataclass(frozen=True)
class McResult:
    estimate: float
    lo: float
    hi: float
    trials: int
    hits: int
    seed: int


def wilson_interval(hits: int, n: int, z: float = WILSON_Z) -> tuple:
    if n == 0:
        return 0.0, 1.0
    p = hits / n
    den = 1 + z * z / n
    centre = (p + z * z / (2 * n)) / den
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / den
    lo = 0.0 if hits == 0 else max(0.0, centre - half)
    hi = 1.0 if hits == n else min(1.0, centre + half)
    return lo, hi


def greedy_choices(m: OracleModel, table: ValueTable, direction: str = UPPER) -> np.ndarray:
    """Per state, the global choice index that is best for ``table``."""
    op = _Op(m)
    cv = op.choice_values(np.nan_to_num(table.values, posinf=1e300))
    out = np.empty(m.n_states, dtype=np.int64)
    for i in range(m.n_states):
        a, b = m.choice_start[i], m.choice_start[i + 1]
        seg = cv[a:b]
        out[i] = a + int(np.argmax(seg) if direction == UPPER else np.argmin(seg))
    return out


def monte_carlo(m: OracleModel, scheduler="uniform", horizon: int = 1000, trials: int = 10000,
                seed: int = 0, start: int | None = None, jobs: int = 1,
                chunk: int = 100_000) -> McResult:
    """Fraction of runs hitting C within ``horizon`` steps.

    ``scheduler`` is ``"uniform"`` or an array from :func:`greedy_choices`.
    Trials are split into fixed chunks seeded by ``(seed, chunk index)``, so the
    result does not depend on ``jobs``.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    # transition keys: choice index + cumulative prob within the choice
    tc = m.trans_choice()
    cum = np.empty_like(m.prob)
    for c in range(m.n_choices):
        a, b = m.trans_start[c], m.trans_start[c + 1]
        cum[a:b] = np.cumsum(m.prob[a:b])
        cum[b - 1] = 1.0
    keys = tc + cum
    # runs that can no longer reach C are stopped early; this does not change hits
    absorbing = m.target | m.sink | ~_can_reach(m)
    n_choices = np.diff(m.choice_start)
    s0 = m.init if start is None else start

    def run(ci: int, n: int) -> int:
        rng = np.random.Generator(np.random.PCG64([seed, ci]))
        cur = np.full(n, s0, dtype=np.int64)
        alive = ~absorbing[cur]
        for _ in range(horizon):
            if not alive.any():
                break
            idx = np.nonzero(alive)[0]
            st = cur[idx]
            if isinstance(scheduler, str):
                if scheduler != "uniform":
                    raise ValueError(f"unknown scheduler {scheduler!r}")
                ch = m.choice_start[st] + (rng.random(len(st)) * n_choices[st]).astype(np.int64)
            else:
                ch = scheduler[st]
            q = ch + rng.random(len(st))
            t = np.searchsorted(keys, q, side="right")
            cur[idx] = m.dst[t]
            alive[idx] = ~absorbing[cur[idx]]
        return int(m.target[cur].sum())

    sizes = [min(chunk, trials - i) for i in range(0, trials, chunk)]
    if jobs > 1:
        with ThreadPoolExecutor(jobs) as ex:
            hits = sum(ex.map(run, range(len(sizes)), sizes))
    else:
        hits = sum(run(i, n) for i, n in enumerate(sizes))
    lo, hi = wilson_interval(hits, trials)
    return McResult(hits / trials, lo, hi, trials, hits, seed)


def dump_csv(m: OracleModel, vt: ValueTable, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["state", "value"])
        for i in range(m.n_states):
            w.writerow([m.label_str(i), repr(float(vt.values[i]))])
