"""Deterministic multi-agent simulator over a rectangular area partition.

Agents move between local areas, summarise what they observe on the area's
support set and, at prediction time, fuse everyone's summaries into a global
summary on the support of the queried area.

Two transit modes are provided:

``eager``
    every transit immediately transfers the agent's whole summary to the new
    area's support (one transfer per transit, loss accumulates per hop).
``lazy``
    no transfer happens on transit; a departing agent hands its summary to an
    agent remaining in the area or keeps a backup, and an agent entering an
    area retrieves every backup for it. Each summary is transferred at
    most once, at prediction time.
"""

from __future__ import annotations

import csv
import json
import struct
from dataclasses import asdict, dataclass
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np

from .kernel import Dataset, Hyperparams, as_locations
from .predictors import gpddf_predict_many, gpddfplus_predict_many
from .summaries import (LocalSummary, SupportSet, aggregate_global, assimilate,
                        build_local_summary, record_size, summary_from_bytes,
                        summary_to_bytes, zero_local)
from .transfer import transfer_local

__all__ = [
    "Area",
    "AreaPartition",
    "SimConfig",
    "Agent",
    "Event",
    "Fleet",
    "make_support_set",
    "make_tour",
    "step_movement",
    "memory_accounting",
    "save_checkpoint",
    "load_checkpoint",
    "POLICIES",
    "MODES",
    "PREDICTORS",
]

POLICIES = ("random_within", "lawnmower_across", "patrol_to_and_fro")
MODES = ("eager", "lazy")
PREDICTORS = ("gpddf", "gpddfplus", "local_gp", "full_pitcs", "local_pitcs")

CHECKPOINT_MAGIC = b"GPDDFCKP"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class Area:
    id: int
    lo: np.ndarray
    hi: np.ndarray

    @property
    def width(self):
        return self.hi - self.lo

    def contains(self, X):
        X = np.atleast_2d(X)
        return np.all((X >= self.lo) & (X <= self.hi), axis=1)


def _grid_shape(size: int, widths) -> Tuple[int, ...]:
    """Factor ``size`` into per-axis counts whose spacing best matches ``widths``.

    Among all ordered factorizations, minimise the spread of log(width/count);
    ties go to the factorization that puts more points on earlier axes.
    """
    d = len(widths)
    if d == 1:
        return (size,)
    best, best_key = None, None
    logw = np.log(np.asarray(widths, dtype=float))

    def factorizations(n, k):
        if k == 1:
            yield (n,)
            return
        for f in range(1, n + 1):
            if n % f == 0:
                for rest in factorizations(n // f, k - 1):
                    yield (f,) + rest

    for counts in factorizations(size, d):
        spacing = logw - np.log(counts)
        spread = float(np.round(np.ptp(spacing), 12))
        key = (spread, tuple(-c for c in counts))
        if best_key is None or key < best_key:
            best, best_key = counts, key
    return best


def make_support_set(area: Area, size: int, margin: float = 0.10,
                     h: Optional[Hyperparams] = None) -> SupportSet:
    """Uniform cell-centred grid over ``area`` expanded by ``margin`` of its width per side.

    With ``margin=0`` every point lies strictly inside the area; ``size=1``
    gives the centroid.
    """
    if size < 1:
        raise ValueError("support size must be positive")
    if not 0 <= margin < 0.5:
        raise ValueError("margin must lie in [0, 0.5)")
    lo = area.lo - margin * area.width
    hi = area.hi + margin * area.width
    counts = _grid_shape(size, hi - lo)
    axes = [lo[k] + (np.arange(c) + 0.5) * (hi[k] - lo[k]) / c for k, c in enumerate(counts)]
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.column_stack([m.reshape(-1, order="F") for m in mesh])
    return SupportSet(area.id, pts)


class AreaPartition:
    """Box domain ``[lo, hi]`` tiled by ``shape`` equal rectangular areas.

    Area ids run with the first axis fastest. Support sets are constructed
    on demand and cached, so every agent sees the same set for an area.
    """

    def __init__(self, lo, hi, shape, support_size=18, margin=0.10):
        self.lo = np.asarray(lo, dtype=float)
        self.hi = np.asarray(hi, dtype=float)
        self.shape = tuple(int(s) for s in shape)
        if len(self.shape) != self.lo.size or self.lo.size != self.hi.size:
            raise ValueError("partition shape and bounds disagree in dimension")
        if any(s < 1 for s in self.shape) or np.any(self.hi <= self.lo):
            raise ValueError("invalid partition")
        self.support_size = int(support_size)
        self.margin = float(margin)
        self._cell = (self.hi - self.lo) / np.asarray(self.shape)
        self.areas = []
        for k in range(self.K):
            idx = np.asarray(self.unravel(k))
            alo = self.lo + idx * self._cell
            self.areas.append(Area(k, alo, alo + self._cell))
        self._supports: Dict[int, SupportSet] = {}

    @property
    def K(self):
        return int(np.prod(self.shape))

    @property
    def dim(self):
        return self.lo.size

    def unravel(self, k):
        return np.unravel_index(k, self.shape, order="F")

    def area_of(self, X) -> np.ndarray:
        """Area id of each row of ``X``; points on the upper boundary go to the last area."""
        X = as_locations(X, self.dim)
        idx = np.floor((X - self.lo) / self._cell).astype(int)
        idx = np.clip(idx, 0, np.asarray(self.shape) - 1)
        return np.ravel_multi_index(tuple(idx.T), self.shape, order="F")

    def support(self, area_id: int) -> SupportSet:
        s = self._supports.get(area_id)
        if s is None:
            s = make_support_set(self.areas[area_id], self.support_size, self.margin)
            self._supports[area_id] = s
        return s

    def snake_order(self) -> List[int]:
        """Boustrophedon order of areas (rows along the first axis)."""
        if self.dim == 1:
            return list(range(self.K))
        nx = self.shape[0]
        rest = int(np.prod(self.shape[1:]))
        order = []
        for r in range(rest):
            row = [r * nx + c for c in range(nx)]
            order.extend(row if r % 2 == 0 else row[::-1])
        return order

    def to_dict(self) -> dict:
        return dict(lo=self.lo.tolist(), hi=self.hi.tolist(), shape=list(self.shape),
                    support_size=self.support_size, margin=self.margin)


@dataclass
class SimConfig:
    n_agents: int = 4
    areas_shape: Tuple[int, ...] = (2, 2)
    support_size: int = 18
    margin: float = 0.10
    policy: str = "random_within"
    steps: int = 25
    obs_per_step: int = 1
    seed: int = 0
    mode: str = "lazy"
    predictor: str = "gpddf"
    tours: int = 1
    start_areas: Optional[Tuple[int, ...]] = None

    def __post_init__(self):
        self.areas_shape = tuple(int(v) for v in self.areas_shape)
        if self.start_areas is not None:
            self.start_areas = tuple(int(v) for v in self.start_areas)
        for name in ("n_agents", "support_size", "steps", "tours"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.obs_per_step < 0:
            raise ValueError("obs_per_step must be non-negative")
        if any(v < 1 for v in self.areas_shape):
            raise ValueError("areas_shape entries must be positive")
        if not 0 <= self.margin < 0.5:
            raise ValueError("margin must lie in [0, 0.5)")
        if self.policy not in POLICIES:
            raise ValueError(f"unknown policy {self.policy!r}")
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.predictor not in PREDICTORS:
            raise ValueError(f"unknown predictor {self.predictor!r}")

    @property
    def K(self):
        return int(np.prod(self.areas_shape))


@dataclass
class Agent:
    id: int
    area: int
    summary: LocalSummary
    raw: Dataset
    tour: Optional[List[int]] = None
    position: Optional[np.ndarray] = None


@dataclass(frozen=True)
class Event:
    tick: int
    agent: int
    kind: str
    area: int
    bytes: int = 0
    transfers: int = 0


def make_tour(policy: str, partition: AreaPartition, start_area: int, tours: int = 1):
    """Sequence of area visits for a tour policy, starting at ``start_area``.

    ``lawnmower_across`` follows the snake order forward then back, and
    ``patrol_to_and_fro`` the area index order forward then back; either way
    each area is visited exactly twice per tour and the tour ends where it
    started. ``random_within`` stays in ``start_area``.
    """
    if policy == "random_within":
        return [start_area]
    if policy == "lawnmower_across":
        base = partition.snake_order()
    elif policy == "patrol_to_and_fro":
        base = list(range(partition.K))
    else:
        raise ValueError(f"unknown policy {policy!r}")
    cyc = base + base[::-1]
    k = cyc.index(start_area)
    one = cyc[k:] + cyc[:k]
    return one * tours


def step_movement(agent: Agent, policy: str, rng: np.random.Generator, tick: int, steps: int,
                  sample_position: Callable[[int, np.random.Generator], np.ndarray]):
    """Next ``(area, position)`` of ``agent`` at ``tick`` out of ``steps``.

    Tour policies spread the visits of ``agent.tour`` evenly over the run;
    within an area the agent jumps uniformly (via ``sample_position``).
    """
    if policy not in POLICIES:
        raise ValueError(f"unknown policy {policy!r}")
    if policy == "random_within" or not agent.tour:
        area = agent.area
    else:
        area = agent.tour[min(tick * len(agent.tour) // steps, len(agent.tour) - 1)]
    return area, sample_position(area, rng)


class Fleet:
    """Agents, their summaries, backups and an event log.

    ``sample_position(area, rng)`` draws a sensing location inside an area and
    ``observe(position, rng)`` returns a noisy measurement there.
    """

    def __init__(self, partition: AreaPartition, h: Hyperparams, config: SimConfig,
                 sample_position=None, observe=None):
        self.partition = partition
        self.h = h
        self.config = config
        self.mode = config.mode
        self.sample_position = sample_position
        self.observe = observe
        ss = np.random.SeedSequence(config.seed)
        self.rngs = [np.random.default_rng(s) for s in ss.spawn(config.n_agents)]
        starts = config.start_areas or tuple(i % partition.K for i in range(config.n_agents))
        if len(starts) != config.n_agents:
            raise ValueError("start_areas must list one area per agent")
        self.agents: List[Agent] = []
        for i, a in enumerate(starts):
            self.agents.append(Agent(i, a, zero_local(partition.support(a)),
                                     Dataset.empty(partition.dim),
                                     make_tour(config.policy, partition, a, config.tours)))
        self.backups: Dict[int, Dict[int, LocalSummary]] = {i: {} for i in range(config.n_agents)}
        self.events: List[Event] = []
        self.visited = set(starts)
        # (agent, area, location, value) of every observation, for baselines only
        self.history: List[Tuple[int, int, np.ndarray, float]] = []
        self.tick = 0
        self.transit_count = 0
        self.transit_transfers = 0
        self.predict_transfers = 0
        self.bytes_sent = 0
        self._departing = set()

    # -- bookkeeping ----------------------------------------------------

    def _log(self, agent, kind, area, nbytes=0, transfers=0):
        self.events.append(Event(self.tick, agent, kind, int(area), int(nbytes), int(transfers)))
        self.bytes_sent += nbytes

    def agents_in(self, area, exclude=(), staying_only=False):
        out = []
        for a in self.agents:
            if a.area != area or a.id in exclude:
                continue
            if staying_only and a.id in self._departing:
                continue
            out.append(a)
        return out

    def full_summary(self, agent: Agent) -> LocalSummary:
        """The agent's summary with its pending raw data folded in."""
        if len(agent.raw) == 0:
            return agent.summary
        s = self.partition.support(agent.area)
        return assimilate(agent.summary, build_local_summary(agent.raw, s, self.h))

    def backup_holders(self, area):
        return [i for i in sorted(self.backups) if area in self.backups[i]]

    # -- transits -------------------------------------------------------

    def transit(self, agent: Agent, new_area: int):
        if new_area == agent.area:
            raise ValueError("transit requires a different area")
        self.transit_count += 1
        if self.mode == "eager":
            self.transit_eager(agent, new_area)
        else:
            self.transit_lazy(agent, new_area)
        self.visited.add(new_area)

    def transit_eager(self, agent: Agent, new_area: int):
        """Summarise pending data and transfer the whole summary to the new support."""
        old_area = agent.area
        s_old = self.partition.support(old_area)
        s_new = self.partition.support(new_area)
        summ = self.full_summary(agent)
        agent.summary = transfer_local(summ, s_old, s_new, self.h)
        agent.raw = Dataset.empty(self.partition.dim)
        agent.area = new_area
        self.transit_transfers += 1
        self._log(agent.id, "transfer", new_area, 0, 1)

    def transit_lazy(self, agent: Agent, new_area: int):
        """Hand over or back up the old area's summary, then join/restore/start the new one."""
        old_area = agent.area
        summ = self.full_summary(agent)
        others = self.agents_in(old_area, exclude={agent.id}, staying_only=True)
        if others:
            recv = others[0]
            recv.summary = assimilate(recv.summary, summ)
            self._log(agent.id, "send", old_area, record_size(summ.size))
        else:
            prev = self.backups[agent.id].get(old_area)
            self.backups[agent.id][old_area] = summ if prev is None else assimilate(prev, summ)
            self._log(agent.id, "backup", old_area)
        agent.raw = Dataset.empty(self.partition.dim)
        agent.area = new_area
        s_new = self.partition.support(new_area)
        joined = bool(self.agents_in(new_area, exclude={agent.id}))
        if joined:
            self._log(agent.id, "join", new_area, 8 * s_new.points.size)
        # backups left by a simultaneous departure are pulled back in-area even on a join
        holders = self.backup_holders(new_area)
        total = zero_local(s_new)
        if holders:
            nbytes = 0
            for j in holders:
                b = self.backups[j].pop(new_area)
                total = assimilate(total, b)
                if j != agent.id:
                    nbytes += record_size(b.size)
            self._log(agent.id, "retrieve", new_area, nbytes)
        elif not joined:
            self._log(agent.id, "new", new_area)
        agent.summary = total

    # -- simulation -----------------------------------------------------

    def step(self, steps: int):
        """Advance one tick: move every agent (transits in id order), then sense."""
        cfg = self.config
        moves = []
        for a in self.agents:
            area, pos = step_movement(a, cfg.policy, self.rngs[a.id], self.tick, steps,
                                      self.sample_position)
            moves.append((a, area, pos))
        self._departing = {a.id for a, area, _ in moves if area != a.area}
        for a, area, pos in moves:
            if area != a.area:
                self.transit(a, area)
            self._departing.discard(a.id)
            a.position = pos
        self._departing = set()
        for a in self.agents:
            rng = self.rngs[a.id]
            locs, vals = [], []
            for k in range(cfg.obs_per_step):
                pos = a.position if k == 0 else self.sample_position(a.area, rng)
                locs.append(pos)
                vals.append(self.observe(pos, rng))
                self.history.append((a.id, a.area, np.asarray(pos, dtype=float), vals[-1]))
            if locs:
                a.raw = a.raw.concat(Dataset(np.asarray(locs), np.asarray(vals)))
        self.tick += 1

    def run(self):
        for _ in range(self.config.steps):
            self.step(self.config.steps)
        return self

    def observed(self, agent=None, area=None) -> Dataset:
        """All observations so far, optionally restricted to one agent and/or area."""
        rows = [(x, y) for i, a, x, y in self.history
                if (agent is None or i == agent) and (area is None or a == area)]
        if not rows:
            return Dataset.empty(self.partition.dim)
        return Dataset(np.vstack([r[0] for r in rows]), np.array([r[1] for r in rows]))

    # -- prediction -----------------------------------------------------

    def responsible_agent(self, area: int) -> Agent:
        """Agent in the area; else a backup holder; else nearest by area index."""
        if not self.agents:
            raise ValueError("empty fleet cannot predict")
        here = self.agents_in(area)
        if here:
            return here[0]
        holders = self.backup_holders(area)
        if holders:
            return self.agents[holders[0]]
        return min(self.agents, key=lambda a: (abs(a.area - area), a.id))

    def gather(self, area: int, responsible: Agent, own_split: bool):
        """Summaries (in the fleet's custody) expressed on ``area``'s support.

        Returns ``(pieces, own_local, own_data, transfers, nbytes)``. With
        ``own_split`` the responsible agent's raw data is summarised as its
        own block (needed by GP-DDF+).
        """
        h = self.h
        s = self.partition.support(area)
        pieces, transfers, nbytes = [], 0, 0
        own_local, own_data = zero_local(s), Dataset.empty(self.partition.dim)
        held = []
        for a in self.agents:
            if a is responsible and own_split and a.area == area:
                own_data = a.raw
                own_local = build_local_summary(a.raw, s, h)
                held.append((a.id, a.area, a.summary))
            else:
                held.append((a.id, a.area, self.full_summary(a)))
            for bar in sorted(self.backups[a.id]):
                held.append((a.id, bar, self.backups[a.id][bar]))
        for holder, sarea, summ in held:
            if holder != responsible.id:
                nbytes += record_size(summ.size)
            if summ.is_zero():
                continue
            if sarea != area:
                summ = transfer_local(summ, self.partition.support(sarea), s, h)
                transfers += 1
            pieces.append(summ)
        pieces.append(own_local)
        return pieces, own_local, own_data, transfers, nbytes

    def predict(self, X, predictor: Optional[str] = None):
        """Predict at the rows of ``X``; each query is served by its area's responsible agent.

        Returns ``(mean, variance, responsible_agent_ids)``.
        """
        predictor = predictor or self.config.predictor
        if predictor not in ("gpddf", "gpddfplus"):
            raise ValueError(f"fleet prediction supports gpddf/gpddfplus, not {predictor!r}")
        X = as_locations(X, self.partition.dim)
        mu = np.empty(X.shape[0])
        var = np.empty(X.shape[0])
        who = np.empty(X.shape[0], dtype=int)
        areas = self.partition.area_of(X)
        for area in np.unique(areas):
            area = int(area)
            sel = areas == area
            r = self.responsible_agent(area)
            plus = predictor == "gpddfplus"
            pieces, own_local, own_data, t, nb = self.gather(area, r, plus)
            s = self.partition.support(area)
            g = aggregate_global(pieces, s, self.h)
            if plus:
                m, v = gpddfplus_predict_many(g, own_local, own_data, X[sel], s, self.h)
            else:
                m, v = gpddf_predict_many(g, X[sel], s, self.h)
            mu[sel], var[sel], who[sel] = m, v, r.id
            self.predict_transfers += t
            self._log(r.id, "predict", area, nb, t)
        return mu, var, who

    # -- invariants -----------------------------------------------------

    def custody_violations(self):
        """Visited areas whose information is neither held in-area nor backed up, or both."""
        bad = []
        for area in sorted(self.visited):
            held = bool(self.agents_in(area))
            backed = bool(self.backup_holders(area))
            if held == backed:
                bad.append(area)
        return bad

    def event_rows(self):
        return [asdict(e) for e in self.events]

    def write_events(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["tick", "agent", "event", "area", "bytes", "transfers"])
            for e in self.events:
                w.writerow([e.tick, e.agent, e.kind, e.area, e.bytes, e.transfers])


def memory_accounting(fleet: Fleet) -> dict:
    """Stored scalars (vector + matrix entries) in live summaries and backups."""
    per_agent = {}
    for a in fleet.agents:
        n = a.summary.size * a.summary.size + a.summary.size
        n += sum(b.size * b.size + b.size for b in fleet.backups[a.id].values())
        per_agent[a.id] = n
    return dict(per_agent=per_agent, total=sum(per_agent.values()),
                max_per_agent=max(per_agent.values(), default=0),
                backups=sum(len(b) for b in fleet.backups.values()))


# -- checkpoints ----------------------------------------------------------

def _rng_state(rng):
    return rng.bit_generator.state


def save_checkpoint(fleet: Fleet, path):
    """Write the fleet as a versioned header, JSON metadata and summary records."""
    cfg = asdict(fleet.config)
    meta = dict(
        version=CHECKPOINT_VERSION,
        partition=fleet.partition.to_dict(),
        hyper=dict(signal_var=fleet.h.signal_var, noise_var=fleet.h.noise_var,
                   length_scales=list(fleet.h.length_scales), prior_mean=fleet.h.prior_mean),
        config=cfg,
        tick=fleet.tick,
        visited=sorted(fleet.visited),
        counters=dict(transit_count=fleet.transit_count,
                      transit_transfers=fleet.transit_transfers,
                      predict_transfers=fleet.predict_transfers,
                      bytes_sent=fleet.bytes_sent),
        agents=[dict(id=a.id, area=a.area, tour=a.tour,
                     position=None if a.position is None else np.asarray(a.position).tolist(),
                     raw_x=a.raw.locations.tolist(), raw_y=a.raw.values.tolist(),
                     rng=_rng_state(fleet.rngs[a.id])) for a in fleet.agents],
        backups=[[i, area] for i in sorted(fleet.backups) for area in sorted(fleet.backups[i])],
        events=[list(asdict(e).values()) for e in fleet.events],
        history=[[i, a, np.asarray(x).tolist(), float(y)] for i, a, x, y in fleet.history],
    )
    blob = json.dumps(meta, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<IQ", CHECKPOINT_VERSION, len(blob)))
        fh.write(blob)
        for a in fleet.agents:
            fh.write(summary_to_bytes(a.summary))
        for i, area in meta["backups"]:
            fh.write(summary_to_bytes(fleet.backups[i][area]))


def load_checkpoint(path, sample_position=None, observe=None) -> Fleet:
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[:8] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a fleet checkpoint")
    version, n = struct.unpack_from("<IQ", buf, 8)
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    meta = json.loads(buf[20:20 + n].decode())
    off = 20 + n
    p = meta["partition"]
    part = AreaPartition(p["lo"], p["hi"], p["shape"], p["support_size"], p["margin"])
    h = Hyperparams(**meta["hyper"])
    cfg = SimConfig(**meta["config"])
    fleet = Fleet(part, h, cfg, sample_position, observe)
    ids = list(range(part.K))
    for a, am in zip(fleet.agents, meta["agents"]):
        a.area = am["area"]
        a.tour = am["tour"]
        a.position = None if am["position"] is None else np.asarray(am["position"])
        a.raw = Dataset(np.asarray(am["raw_x"], dtype=float).reshape(-1, part.dim),
                        np.asarray(am["raw_y"], dtype=float))
        fleet.rngs[a.id].bit_generator.state = am["rng"]
        a.summary, off = summary_from_bytes(buf, ids, off)
    for i, area in meta["backups"]:
        fleet.backups[i][area], off = summary_from_bytes(buf, ids, off)
    fleet.tick = meta["tick"]
    fleet.visited = set(meta["visited"])
    for k, v in meta["counters"].items():
        setattr(fleet, k, v)
    fleet.events = [Event(*e) for e in meta["events"]]
    fleet.history = [(i, a, np.asarray(x, dtype=float), y) for i, a, x, y in meta["history"]]
    return fleet
