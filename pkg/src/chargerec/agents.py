"""Q-value policies and the per-step decision loop.

Every learned policy scores the candidate actions of one query at a time.
The shared-parameter models (``conv``, ``graph``, ``grouping``,
``multiagent``) see one row of features per station::

    [station (5 + k) | query (3) | distance (1) | global (9)]

``ffdqn`` instead sees every station at once and emits one value per
station.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import baselines
from .errors import ConfigError, ShapeError
from .geo import CandidateTable
from .mdp import GLOBAL_DIM, QUERY_DIM, EncodedState, encode_state, register_recommendation, station_dim
from .nn import MLPParams, backward, dueling_combine, forward, init_mlp, predict
from .scenario import Query, Scenario
from .sim import Recommendation, World

LEARNED_KINDS = ("ffdqn", "conv", "graph", "grouping", "multiagent")
BASELINE_KINDS = ("nearest", "open", "nearest_open")
POLICY_KINDS = LEARNED_KINDS + BASELINE_KINDS


def row_dim(k: int) -> int:
    return station_dim(k) + QUERY_DIM + 1 + GLOBAL_DIM


@dataclass
class AgentConfig:
    k: int = 8
    count_scale: float = 10.0
    max_km: float = 3.0
    distance_scale_km: float = 5.0
    alpha: float = 1.0
    beta: float = 1.0
    group_cap: int = 6
    hidden: int = 100
    depth: int = 3
    ffdqn_hidden: int = 250
    embed: int = 64
    value_hidden: int = 64
    dueling: bool = True
    precision: str = "float64"  # float32 roughly halves training time

    def validate(self) -> None:
        if self.precision not in ("float64", "float32"):
            raise ConfigError(f"precision must be float64 or float32, got {self.precision!r}")
        if self.k < 1:
            raise ConfigError("k must be >= 1")
        for name in ("count_scale", "max_km", "distance_scale_km", "beta"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if not self.alpha > 0:
            raise ConfigError("alpha must be positive")
        if self.group_cap < 1 or self.hidden < 1 or self.depth < 1 or self.embed < 1:
            raise ConfigError("network sizes and group_cap must be >= 1")


# -- decision context --------------------------------------------------------------


@dataclass
class DecisionContext:
    state: EncodedState
    world: World
    query: Query
    qidx: int
    distances: np.ndarray  # km to every station
    drive_steps: np.ndarray  # steps to every station
    candidates: np.ndarray  # station ids, nearest first
    distance_scale: float

    def rows(self, idx) -> np.ndarray:
        """Feature rows for the stations ``idx``."""
        idx = np.asarray(idx)
        n = idx.size
        st = self.state.station_features(idx)
        q = np.broadcast_to(self.state.query_features[self.qidx], (n, QUERY_DIM))
        d = (self.distances[idx] / self.distance_scale)[:, None]
        g = np.broadcast_to(self.state.global_features, (n, GLOBAL_DIM))
        return np.concatenate([st, q, d, g], axis=1)

    def value_input(self) -> np.ndarray:
        return np.concatenate([self.state.global_features, self.state.query_features[self.qidx]])


@dataclass
class Obs:
    """What a learned policy stores about one decision.

    ``cand`` indexes the candidate actions: rows of ``rows`` for the
    per-station models, output positions for ``ffdqn``.
    """

    cand: np.ndarray
    value_in: np.ndarray
    rows: Optional[np.ndarray] = None
    flat: Optional[np.ndarray] = None

    @property
    def n_actions(self) -> int:
        return int(self.cand.size)


@dataclass
class Choice:
    action: int
    station: int
    group: Optional[tuple] = None
    obs: Optional[Obs] = None


def epsilon_greedy(bids, epsilon: float, rng: Optional[np.random.Generator]) -> int:
    """Uniform random candidate with probability ``epsilon``, else the first maximal bid.

    Candidates arrive nearest first, so argmax ties resolve to the nearest
    station and then the lowest id.
    """
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError(f"epsilon must lie in [0, 1], got {epsilon}")
    bids = np.asarray(bids)
    if bids.size == 0:
        raise ValueError("no candidates to choose from")
    if epsilon > 0.0 and rng.random() < epsilon:
        return int(rng.integers(bids.size))
    return int(np.argmax(bids))


# -- station graph -----------------------------------------------------------------


@dataclass
class StationGraph:
    weights: np.ndarray  # (N, N), zero off the edge set
    edges: list
    canonical: np.ndarray  # stations ordered by cell, then id

    @property
    def n(self) -> int:
        return self.weights.shape[0]

    def neighbors(self, n: int) -> list:
        return [int(m) for m in np.flatnonzero(self.weights[n])]


def build_graph(stations: Sequence, distance_km: np.ndarray, max_km: float, alpha: float = 1.0, beta: float = 1.0) -> StationGraph:
    """Edges join stations closer than ``max_km``, weighted ``alpha * exp(-beta * d)``."""
    n = len(stations)
    w = np.zeros((n, n))
    edges = []
    for i in range(n):
        for j in range(i + 1, n):
            d = distance_km[i, j]
            if d < max_km:
                w[i, j] = w[j, i] = alpha * math.exp(-beta * d)
                edges.append((i, j))
    canonical = np.array(sorted(range(n), key=lambda i: (stations[i].cell.row, stations[i].cell.col, i)), dtype=np.int64)
    return StationGraph(w, edges, canonical)


def build_groups(distance_km: np.ndarray, max_km: float, cap: int = 6) -> list:
    """Single-linkage clusters on the ``max_km`` graph, never merging past ``cap`` stations."""
    n = distance_km.shape[0]
    parent = list(range(n))
    size = [1] * n

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    pairs = sorted((distance_km[i, j], i, j) for i in range(n) for j in range(i + 1, n) if distance_km[i, j] < max_km)
    for _, i, j in pairs:
        a, b = find(i), find(j)
        if a != b and size[a] + size[b] <= cap:
            if b < a:
                a, b = b, a
            parent[b] = a
            size[a] += size[b]
    clusters: dict = {}
    for i in range(n):
        clusters.setdefault(find(i), []).append(i)
    groups = sorted(tuple(sorted(c)) for c in clusters.values())
    if any(len(g) == 0 for g in groups):
        raise ConfigError("empty station group")
    return groups


# -- policies ----------------------------------------------------------------------


class Policy:
    kind = "base"
    learned = False

    def __init__(self, scenario: Scenario, cfg: AgentConfig):
        cfg.validate()
        self.scenario = scenario
        self.cfg = cfg
        self.table: CandidateTable = scenario.candidate_table(cfg.max_km)

    def candidates(self, query: Query) -> np.ndarray:
        return self.table.candidates(query.cell)

    def choose(self, ctx: DecisionContext, rng, epsilon: float = 0.0) -> Choice:
        raise NotImplementedError


class NearestPolicy(Policy):
    kind = "nearest"

    def choose(self, ctx, rng, epsilon=0.0):
        return Choice(0, baselines.nearest(ctx.distances))


class OpenPolicy(Policy):
    """Most open chargers anywhere in the city; its candidate set is every station."""

    kind = "open"

    def candidates(self, query):
        return np.argsort(self.table.distances(query.cell), kind="stable")

    def choose(self, ctx, rng, epsilon=0.0):
        station = baselines.most_open(ctx.distances, ctx.world.open_chargers())
        return Choice(int(np.flatnonzero(ctx.candidates == station)[0]), station)


class NearestOpenPolicy(Policy):
    kind = "nearest_open"

    def choose(self, ctx, rng, epsilon=0.0):
        committed = ctx.state.queued.sum(axis=1)
        station = baselines.nearest_open(ctx.distances, ctx.world.open_chargers(), committed, ctx.candidates)
        return Choice(int(np.flatnonzero(ctx.candidates == station)[0]), station)


class FixedPolicy(Policy):
    """Replays a given station for each query id; for enumeration and tests."""

    kind = "fixed"

    def __init__(self, scenario, cfg, plan: dict):
        super().__init__(scenario, cfg)
        self.plan = dict(plan)

    def candidates(self, query):
        return np.arange(self.scenario.n_stations)

    def choose(self, ctx, rng, epsilon=0.0):
        station = int(self.plan[ctx.query.id])
        return Choice(station, station)


@dataclass
class BatchOut:
    q: np.ndarray  # flat Q over every candidate of every obs
    offsets: np.ndarray  # start of each obs in q
    counts: np.ndarray
    cache: dict = field(default_factory=dict)


def _segment_sum(x: np.ndarray, offsets: np.ndarray) -> np.ndarray:
    return np.add.reduceat(x, offsets)


class QPolicy(Policy):
    """Base class for the learned policies; ``nets`` are online, ``target`` the frozen copy."""

    learned = True
    net_names: tuple = ()

    def __init__(self, scenario, cfg, rng: np.random.Generator, zero: bool = False):
        super().__init__(scenario, cfg)
        self.nets = {n: p.astype(cfg.precision) for n, p in self.init_nets(rng, zero).items()}
        self.target = {n: p.copy() for n, p in self.nets.items()}

    # subclasses define
    def init_nets(self, rng, zero) -> dict:
        raise NotImplementedError

    def observe(self, ctx: DecisionContext) -> Obs:
        raise NotImplementedError

    def bids(self, obs: Obs, nets: Optional[dict] = None) -> np.ndarray:
        raise NotImplementedError

    def batch_forward(self, obs_list, nets) -> BatchOut:
        raise NotImplementedError

    def batch_backward(self, out: BatchOut, dq: np.ndarray, nets) -> dict:
        raise NotImplementedError

    # shared machinery
    def choose(self, ctx, rng, epsilon=0.0):
        obs = self.observe(ctx)
        a = epsilon_greedy(self.bids(obs), epsilon, rng)
        station, group = self.action_target(ctx, a)
        return Choice(a, station, group, obs)

    def action_target(self, ctx, action: int):
        return int(ctx.candidates[action]), None

    def hyperparameters(self) -> dict:
        return {k: getattr(self.cfg, k) for k in vars(self.cfg)}

    def load_nets(self, nets: dict) -> None:
        if set(nets) != set(self.nets):
            raise ShapeError(f"{self.kind} expects networks {sorted(self.nets)}, checkpoint has {sorted(nets)}")
        for name, p in nets.items():
            if list(p.layer_dims) != list(self.nets[name].layer_dims):
                raise ShapeError(f"network {name!r}: checkpoint dims {p.layer_dims} != model dims {self.nets[name].layer_dims}")
        self.nets = {n: p.astype(self.cfg.precision) for n, p in nets.items()}
        self.target = {n: p.copy() for n, p in self.nets.items()}

    def _value(self, obs_list, nets):
        vin = np.stack([o.value_in for o in obs_list])
        return forward(nets["value"], vin)

    def _duel(self, a: np.ndarray, out: BatchOut, obs_list, nets) -> np.ndarray:
        if not self.cfg.dueling:
            return a
        v, vcache = self._value(obs_list, nets)
        out.cache["value"] = vcache
        mean = _segment_sum(a, out.offsets) / out.counts
        return a + np.repeat(v[:, 0] - mean, out.counts)

    def _unduel(self, dq: np.ndarray, out: BatchOut, nets, grads: dict) -> np.ndarray:
        """Split dL/dQ into dL/dA (returned) and the value-stream gradients."""
        if not self.cfg.dueling:
            return dq
        seg = _segment_sum(dq, out.offsets)
        grads["value"], _ = backward(nets["value"], out.cache["value"], seg[:, None])
        return dq - np.repeat(seg / out.counts, out.counts)

    def _bid_duel(self, a: np.ndarray, obs: Obs, nets) -> np.ndarray:
        if not self.cfg.dueling:
            return a
        v = predict(nets["value"], obs.value_in[None, :], rowwise=True)[0, 0]
        return dueling_combine(v, a)

    def _value_net(self, rng, zero):
        return init_mlp([GLOBAL_DIM + QUERY_DIM, self.cfg.value_hidden, 1], rng, zero=zero)


def _hidden(cfg: AgentConfig, width=None):
    return [width or cfg.hidden] * cfg.depth


def _offsets(obs_list):
    counts = np.array([o.n_actions for o in obs_list], dtype=np.int64)
    offsets = np.concatenate([[0], np.cumsum(counts)[:-1]]).astype(np.int64)
    return offsets, counts


class ConvPolicy(QPolicy):
    """One shared network scores each candidate station from its own row."""

    kind = "conv"

    def init_nets(self, rng, zero):
        nets = {"q": init_mlp([row_dim(self.cfg.k), *_hidden(self.cfg), 1], rng, zero=zero)}
        if self.cfg.dueling:
            nets["value"] = self._value_net(rng, zero)
        return nets

    def observe(self, ctx):
        return Obs(np.arange(ctx.candidates.size), ctx.value_input(), rows=ctx.rows(ctx.candidates))

    def station_q(self, rows: np.ndarray, nets=None) -> np.ndarray:
        """Raw per-station output, each row evaluated independently of the others."""
        nets = nets or self.nets
        return predict(nets["q"], rows, rowwise=True)[:, 0]

    def bids(self, obs, nets=None):
        nets = nets or self.nets
        return self._bid_duel(self.station_q(obs.rows, nets), obs, nets)

    def batch_forward(self, obs_list, nets):
        offsets, counts = _offsets(obs_list)
        rows = np.concatenate([o.rows for o in obs_list])
        a, cache = forward(nets["q"], rows)
        out = BatchOut(None, offsets, counts, {"q": cache})
        out.q = self._duel(a[:, 0], out, obs_list, nets)
        return out

    def batch_backward(self, out, dq, nets):
        grads = {}
        da = self._unduel(dq, out, nets, grads)
        grads["q"], _ = backward(nets["q"], out.cache["q"], da[:, None])
        return grads


class GroupingPolicy(ConvPolicy):
    """Conv model over station groups; the final station is picked on arrival."""

    kind = "grouping"

    def __init__(self, scenario, cfg, rng, zero=False, groups=None):
        world = scenario.make_world()
        self.groups = groups if groups is not None else build_groups(world.distance_km, cfg.max_km, cfg.group_cap)
        covered = sorted(s for g in self.groups for s in g)
        if covered != list(range(scenario.n_stations)):
            raise ConfigError("groups must partition the station set")
        if any(len(g) == 0 for g in self.groups):
            raise ConfigError("empty station group")
        self.group_of = np.empty(scenario.n_stations, dtype=np.int64)
        for gi, g in enumerate(self.groups):
            self.group_of[list(g)] = gi
        super().__init__(scenario, cfg, rng, zero)

    def candidate_groups(self, ctx) -> list:
        seen = []
        for s in ctx.candidates:
            g = int(self.group_of[s])
            if g not in seen:
                seen.append(g)
        return seen

    def _nearest_member(self, ctx, g) -> int:
        return min(self.groups[g], key=lambda s: (ctx.distances[s], s))

    def observe(self, ctx):
        groups = self.candidate_groups(ctx)
        feats = ctx.state.station_features()
        rows = []
        for g in groups:
            members = list(self.groups[g])
            near = self._nearest_member(ctx, g)
            row = ctx.rows([near])[0]
            row[: feats.shape[1]] = feats[members].mean(axis=0)
            rows.append(row)
        obs = Obs(np.arange(len(groups)), ctx.value_input(), rows=np.array(rows))
        obs.flat = np.array(groups)  # group ids in candidate order
        return obs

    def choose(self, ctx, rng, epsilon=0.0):
        obs = self.observe(ctx)
        a = epsilon_greedy(self.bids(obs), epsilon, rng)
        g = int(obs.flat[a])
        station = self._nearest_member(ctx, g)
        group = tuple(self.groups[g]) if len(self.groups[g]) > 1 else None
        return Choice(a, station, group, obs)


class MultiAgentPolicy(QPolicy):
    """Each station is an agent with shared accept/reject values; the largest margin wins."""

    kind = "multiagent"

    def init_nets(self, rng, zero):
        return {"q": init_mlp([row_dim(self.cfg.k), *_hidden(self.cfg), 2], rng, zero=zero)}

    def observe(self, ctx):
        all_ids = np.arange(ctx.world.n_stations)
        return Obs(ctx.candidates.copy(), ctx.value_input(), rows=ctx.rows(all_ids))

    def accept_reject(self, rows, nets=None) -> np.ndarray:
        """Columns: Q(reject), Q(accept)."""
        return predict((nets or self.nets)["q"], rows, rowwise=True)

    def bids(self, obs, nets=None):
        out = self.accept_reject(obs.rows[obs.cand], nets)
        return out[:, 1] - out[:, 0]

    def batch_forward(self, obs_list, nets):
        offsets, counts = _offsets(obs_list)
        n = obs_list[0].rows.shape[0]
        rows = np.concatenate([o.rows for o in obs_list])
        out2, cache = forward(nets["q"], rows)
        flat_idx = np.concatenate([b * n + o.cand for b, o in enumerate(obs_list)])
        sel = out2[flat_idx]
        return BatchOut(sel[:, 1] - sel[:, 0], offsets, counts, {"q": cache, "all": out2, "idx": flat_idx, "n": n})


class GraphPolicy(QPolicy):
    """Station embeddings from ``f`` are mixed over graph neighbors, then scored by ``g``."""

    kind = "graph"

    def __init__(self, scenario, cfg, rng, zero=False, graph=None):
        world = scenario.make_world()
        self.graph = graph or build_graph(scenario.stations, world.distance_km, cfg.max_km, cfg.alpha, cfg.beta)
        super().__init__(scenario, cfg, rng, zero)

    def init_nets(self, rng, zero):
        c = self.cfg
        nets = {
            "f": init_mlp([row_dim(c.k), *[c.hidden] * max(c.depth - 1, 1), c.embed], rng, zero=zero),
            "g": init_mlp([2 * c.embed, c.hidden, 1], rng, zero=zero),
        }
        if c.dueling:
            nets["value"] = self._value_net(rng, zero)
        return nets

    def observe(self, ctx):
        all_ids = np.arange(ctx.world.n_stations)
        return Obs(ctx.candidates.copy(), ctx.value_input(), rows=ctx.rows(all_ids))

    def station_q(self, rows: np.ndarray, cand: np.ndarray, nets=None) -> np.ndarray:
        """Raw per-candidate scores, computed in canonical station order.

        Relabeling stations leaves the canonical arrays untouched, so scores
        permute with the labels exactly.
        """
        nets = nets or self.nets
        perm = self.graph.canonical
        inv = np.empty_like(perm)
        inv[perm] = np.arange(perm.size)
        h = predict(nets["f"], rows[perm], rowwise=True)
        w = self.graph.weights[np.ix_(perm, perm)]
        agg = np.einsum("nm,mf->nf", w, h)
        x = np.concatenate([h, agg], axis=1)[inv[cand]]
        return predict(nets["g"], x, rowwise=True)[:, 0]

    def embeddings(self, rows, nets=None):
        """Return ``(h, x)``: per-station embeddings and the concatenated neighbor context."""
        nets = nets or self.nets
        h = predict(nets["f"], rows)
        return h, np.concatenate([h, self.graph.weights @ h], axis=1)

    def bids(self, obs, nets=None):
        nets = nets or self.nets
        return self._bid_duel(self.station_q(obs.rows, obs.cand, nets), obs, nets)

    def batch_forward(self, obs_list, nets):
        offsets, counts = _offsets(obs_list)
        n = self.graph.n
        b = len(obs_list)
        rows = np.concatenate([o.rows for o in obs_list])
        h, fcache = forward(nets["f"], rows)
        e = h.shape[1]
        agg = np.matmul(self.graph.weights.astype(h.dtype), h.reshape(b, n, e)).reshape(b * n, e)
        idx = np.concatenate([i * n + o.cand for i, o in enumerate(obs_list)])
        x = np.concatenate([h[idx], agg[idx]], axis=1)
        a, gcache = forward(nets["g"], x)
        out = BatchOut(None, offsets, counts, {"f": fcache, "g": gcache, "idx": idx, "b": b, "n": n, "e": e})
        out.q = self._duel(a[:, 0], out, obs_list, nets)
        return out

    def batch_backward(self, out, dq, nets):
        grads = {}
        da = self._unduel(dq, out, nets, grads)
        c = out.cache
        grads["g"], dx = backward(nets["g"], c["g"], da[:, None])
        b, n, e, idx = c["b"], c["n"], c["e"], c["idx"]
        dh = np.zeros((b * n, e), dtype=dx.dtype)
        dagg = np.zeros((b * n, e), dtype=dx.dtype)
        # each (sample, candidate) pair appears once, so plain assignment suffices
        dh[idx] = dx[:, :e]
        dagg[idx] = dx[:, e:]
        dh += np.matmul(self.graph.weights.T.astype(dx.dtype), dagg.reshape(b, n, e)).reshape(b * n, e)
        grads["f"], _ = backward(nets["f"], c["f"], dh)
        return grads


class FFDQNPolicy(QPolicy):
    """A single dense network over the whole concatenated state, one output per station."""

    kind = "ffdqn"

    def input_dim(self) -> int:
        n = self.scenario.n_stations
        return n * station_dim(self.cfg.k) + QUERY_DIM + n + GLOBAL_DIM

    def init_nets(self, rng, zero):
        c = self.cfg
        n = self.scenario.n_stations
        nets = {"q": init_mlp([self.input_dim(), *_hidden(c, c.ffdqn_hidden), n], rng, zero=zero)}
        if c.dueling:
            nets["value"] = self._value_net(rng, zero)
        return nets

    def flat_input(self, ctx) -> np.ndarray:
        return np.concatenate([
            ctx.state.station_features().ravel(),
            ctx.state.query_features[ctx.qidx],
            ctx.distances / ctx.distance_scale,
            ctx.state.global_features,
        ])

    def observe(self, ctx):
        if ctx.world.n_stations != self.scenario.n_stations:
            raise ShapeError(f"network sized for {self.scenario.n_stations} stations, world has {ctx.world.n_stations}")
        return Obs(ctx.candidates.copy(), ctx.value_input(), flat=self.flat_input(ctx))

    def all_q(self, flat, nets=None) -> np.ndarray:
        return predict((nets or self.nets)["q"], flat)

    def bids(self, obs, nets=None):
        nets = nets or self.nets
        return self._bid_duel(self.all_q(obs.flat, nets)[obs.cand], obs, nets)

    def batch_forward(self, obs_list, nets):
        offsets, counts = _offsets(obs_list)
        x = np.stack([o.flat for o in obs_list])
        y, cache = forward(nets["q"], x)
        n = y.shape[1]
        idx = np.concatenate([i * n + o.cand for i, o in enumerate(obs_list)])
        out = BatchOut(None, offsets, counts, {"q": cache, "idx": idx, "shape": y.shape})
        out.q = self._duel(y.ravel()[idx], out, obs_list, nets)
        return out

    def batch_backward(self, out, dq, nets):
        grads = {}
        da = self._unduel(dq, out, nets, grads)
        dy = np.zeros(out.cache["shape"]).ravel()
        np.add.at(dy, out.cache["idx"], da)
        grads["q"], _ = backward(nets["q"], out.cache["q"], dy.reshape(out.cache["shape"]))
        return grads


_POLICIES = {
    "ffdqn": FFDQNPolicy,
    "conv": ConvPolicy,
    "graph": GraphPolicy,
    "grouping": GroupingPolicy,
    "multiagent": MultiAgentPolicy,
    "nearest": NearestPolicy,
    "open": OpenPolicy,
    "nearest_open": NearestOpenPolicy,
}


def make_policy(kind: str, scenario: Scenario, cfg: Optional[AgentConfig] = None, rng=None, zero: bool = False) -> Policy:
    cfg = cfg or AgentConfig()
    try:
        cls = _POLICIES[kind]
    except KeyError:
        raise ConfigError(f"unknown policy kind {kind!r}; choose from {', '.join(POLICY_KINDS)}") from None
    if cls.learned:
        return cls(scenario, cfg, rng if rng is not None else np.random.default_rng(0), zero=zero)
    return cls(scenario, cfg)


# -- the per-step loop -------------------------------------------------------------


@dataclass
class Decision:
    query_id: int
    t: int
    action: int
    station: int
    obs: Optional[Obs]


def act(
    policy: Policy,
    world: World,
    queries: Sequence[Query],
    t: int,
    shuffle_rng: np.random.Generator,
    explore_rng: Optional[np.random.Generator] = None,
    epsilon: float = 0.0,
    decisions: Optional[list] = None,
) -> list:
    """Route this step's queries one at a time; later queries see earlier commitments."""
    if not queries:
        return []
    cfg = policy.cfg
    state = encode_state(world, queries, t, cfg.k, cfg.count_scale)
    table = policy.table
    recs = []
    for j in shuffle_rng.permutation(len(queries)):
        q = queries[j]
        ctx = DecisionContext(
            state, world, q, int(j),
            table.distances(q.cell), table.drive_steps[q.cell.row, q.cell.col],
            policy.candidates(q), cfg.distance_scale_km,
        )
        choice = policy.choose(ctx, explore_rng, epsilon)
        steps = int(ctx.drive_steps[choice.station])
        register_recommendation(state, choice.station, steps)
        recs.append(Recommendation(q.id, choice.station, steps, choice.group))
        if decisions is not None:
            decisions.append(Decision(q.id, t, choice.action, choice.station, choice.obs))
    return recs
