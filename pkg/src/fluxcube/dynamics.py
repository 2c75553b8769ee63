"""State-update dynamics: keyword reaction, inter-group diffusion, seasonality.

One step of the model maps the current L x K activity slice to the next:

    change[i, j]   = reaction(x, i)[j] + inflow[group(i), j]
    next[i, j]     = (1 + seasonal[t mod p, i, j]) * (change[i, j] + x[i, j])

The reaction term is a per-location Lotka-Volterra expression over keywords;
the inflow is produced at area-group level (groups of locations with similar
reaction behavior) from a time-varying nonnegative flow tensor D_t whose
diagonal is zero, and is shared by every member location of a group.

Everything here operates on plain float64 arrays with parameters already
materialized; the differentiable training graph mirrors this arithmetic.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


def rectify(x: np.ndarray) -> np.ndarray:
    """Smooth rectifier used to keep seasonal gains nonnegative."""
    return np.logaddexp(0.0, x)


@dataclass(frozen=True)
class GroupAssignment:
    """Map from location index to area-group index; no group may be empty."""

    group: np.ndarray
    d_l: int

    def __post_init__(self):
        g = np.asarray(self.group, dtype=np.int64)
        g.setflags(write=False)
        object.__setattr__(self, "group", g)
        if self.d_l < 1:
            raise ValueError("d_l must be >= 1")
        if g.ndim != 1 or g.size < 1:
            raise ValueError("group assignment must be a 1-D array with L >= 1")
        if g.min() < 0 or g.max() >= self.d_l:
            raise ValueError(f"group labels must lie in [0, {self.d_l})")
        used = np.unique(g)
        if used.size != self.d_l:
            missing = sorted(set(range(self.d_l)) - set(used.tolist()))
            raise ValueError(f"empty area groups: {missing}")

    @property
    def n_locations(self) -> int:
        return int(self.group.size)

    def pooling_matrix(self) -> np.ndarray:
        """(d_l, L) row-stochastic matrix averaging member locations."""
        l = self.n_locations
        m = np.zeros((self.d_l, l))
        for g in range(self.d_l):
            members = self.group == g
            m[g, members] = 1.0 / members.sum()
        return m

    def membership_matrix(self) -> np.ndarray:
        """(L, d_l) 0/1 matrix distributing a group value to its members."""
        p = np.zeros((self.n_locations, self.d_l))
        p[np.arange(self.n_locations), self.group] = 1.0
        return p

    @staticmethod
    def single_group(n_locations: int) -> "GroupAssignment":
        return GroupAssignment(np.zeros(n_locations, dtype=np.int64), 1)


@dataclass
class ReactionParams:
    """Per-location Lotka-Volterra parameters.

    Positivity of growth rates and carrying capacities is enforced by storing
    logs; the interaction matrix is stored raw with its diagonal pinned to
    exactly 1 (the self-interaction is not a free parameter).
    """

    theta_a: np.ndarray  # (L, K) log growth rates
    theta_b: np.ndarray  # (L, K) log carrying capacities
    couplings: np.ndarray  # (L, K, K) interaction strengths, diagonal ignored

    def __post_init__(self):
        self.theta_a = np.asarray(self.theta_a, dtype=np.float64)
        self.theta_b = np.asarray(self.theta_b, dtype=np.float64)
        self.couplings = np.asarray(self.couplings, dtype=np.float64)
        l, k = self.theta_a.shape
        if self.theta_b.shape != (l, k) or self.couplings.shape != (l, k, k):
            raise ValueError("inconsistent reaction parameter shapes")

    @property
    def n_locations(self) -> int:
        return self.theta_a.shape[0]

    @property
    def n_keywords(self) -> int:
        return self.theta_a.shape[1]

    @property
    def a(self) -> np.ndarray:
        return np.exp(self.theta_a)

    @property
    def b(self) -> np.ndarray:
        return np.exp(self.theta_b)

    @property
    def c(self) -> np.ndarray:
        """(L, K, K) interaction matrices with unit diagonals."""
        k = self.n_keywords
        off = ~np.eye(k, dtype=bool)
        return self.couplings * off + np.eye(k)

    @staticmethod
    def from_values(a, b, c) -> "ReactionParams":
        a = np.asarray(a, dtype=np.float64)
        if np.any(a <= 0) or np.any(np.asarray(b) <= 0):
            raise ValueError("growth rates and capacities must be positive")
        return ReactionParams(np.log(a), np.log(np.asarray(b, dtype=np.float64)),
                              np.asarray(c, dtype=np.float64))


def reaction(x_row: np.ndarray, params: ReactionParams, location: int) -> np.ndarray:
    """Growth-with-interaction change for one location's keyword vector."""
    a = params.a[location]
    b = params.b[location]
    c = params.c[location]
    return a * x_row * (1.0 - (c @ x_row) / b)


def reaction_all(x: np.ndarray, params: ReactionParams) -> np.ndarray:
    """Vectorized reaction term; x may be (L, K) or (T, L, K)."""
    cx = np.einsum("lkj,...lj->...lk", params.c, x)
    return params.a * x * (1.0 - cx / params.b)


def group_means(x: np.ndarray, groups: GroupAssignment) -> np.ndarray:
    """(d_l, K) per-group mean of an (L, K) slice."""
    return groups.pooling_matrix() @ x


def time_features(t: float, time_scale: int, period: int) -> np.ndarray:
    """RNN input at step t: normalized time plus a periodic phase encoding."""
    angle = 2.0 * np.pi * t / period
    return np.array([t / time_scale, np.sin(angle), np.cos(angle)])


def offdiagonal_mask(d_l: int, k: int) -> np.ndarray:
    mask = np.ones((d_l, d_l, k))
    idx = np.arange(d_l)
    mask[idx, idx, :] = 0.0
    return mask


@dataclass
class DiffusionNet:
    """Recurrent generator of the time-varying group-flow tensor D_t.

    The hidden state is advanced with the step's time features, then the
    output layer is rectified (exact ReLU, so unused flows can be exactly
    zero) and its diagonal masked: a group does not flow into itself.
    """

    w_hidden: np.ndarray  # (h, h)
    w_input: np.ndarray  # (h, u)
    b_hidden: np.ndarray  # (h,)
    w_out: np.ndarray  # (d_l*d_l*K, h)
    b_out: np.ndarray  # (d_l*d_l*K,)
    d_l: int
    n_keywords: int

    def __post_init__(self):
        for name in ("w_hidden", "w_input", "b_hidden", "w_out", "b_out"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        h = self.hidden_size
        out = self.d_l * self.d_l * self.n_keywords
        if self.w_hidden.shape != (h, h) or self.w_out.shape != (out, h) or self.b_out.shape != (out,):
            raise ValueError("inconsistent recurrent weight shapes")

    @property
    def hidden_size(self) -> int:
        return self.w_input.shape[0]

    def initial_hidden(self) -> np.ndarray:
        return np.zeros(self.hidden_size)

    def advance(self, hidden: np.ndarray, t: float, time_scale: int, period: int) -> np.ndarray:
        u = time_features(t, time_scale, period)
        return np.tanh(self.w_hidden @ hidden + self.w_input @ u + self.b_hidden)

    def emit(self, hidden: np.ndarray) -> np.ndarray:
        raw = self.w_out @ hidden + self.b_out
        d = np.maximum(raw, 0.0).reshape(self.d_l, self.d_l, self.n_keywords)
        return d * offdiagonal_mask(self.d_l, self.n_keywords)


@dataclass
class ConstantDiffusion:
    """Time-invariant flow tensor, stored raw and rectified on materialize."""

    raw: np.ndarray  # (d_l, d_l, K)

    def __post_init__(self):
        self.raw = np.asarray(self.raw, dtype=np.float64)
        if self.raw.ndim != 3 or self.raw.shape[0] != self.raw.shape[1]:
            raise ValueError("constant diffusion must be (d_l, d_l, K)")

    def materialize(self) -> np.ndarray:
        d_l, _, k = self.raw.shape
        return np.maximum(self.raw, 0.0) * offdiagonal_mask(d_l, k)


class DiffusionSchedule:
    """Explicit D_t values for generators and oracles; bypasses any network."""

    def __init__(self, pieces):
        """``pieces``: list of (start_step, (d_l, d_l, K) array), sorted by start."""
        self._starts = [int(s) for s, _ in pieces]
        self._tables = [np.asarray(d, dtype=np.float64) for _, d in pieces]
        if self._starts != sorted(self._starts) or not self._starts or self._starts[0] != 0:
            raise ValueError("schedule pieces must start at 0 and be sorted")
        for d in self._tables:
            if d.ndim != 3 or d.shape[0] != d.shape[1]:
                raise ValueError("each piece must be (d_l, d_l, K)")
            if np.any(d < 0):
                raise ValueError("flows must be nonnegative")
            if np.any(d[np.arange(d.shape[0]), np.arange(d.shape[0]), :] != 0):
                raise ValueError("flow diagonal must be zero")

    @staticmethod
    def constant(d: np.ndarray) -> "DiffusionSchedule":
        return DiffusionSchedule([(0, d)])

    @property
    def shape(self):
        return self._tables[0].shape

    def at(self, t: int) -> np.ndarray:
        i = 0
        for j, start in enumerate(self._starts):
            if t >= start:
                i = j
        return self._tables[i]

    def pieces(self):
        return list(zip(self._starts, (t.copy() for t in self._tables)))


@dataclass
class SeasonalityMatrix:
    """Nonnegative multiplicative seasonal gains, one per phase of the period.

    Stored unconstrained; ``values`` applies the smooth rectifier, so a raw
    value of about -3 means "practically no seasonal effect".
    """

    raw: np.ndarray  # (p, L, K)

    def __post_init__(self):
        self.raw = np.asarray(self.raw, dtype=np.float64)
        if self.raw.ndim != 3:
            raise ValueError("seasonality must be (p, L, K)")

    @property
    def period(self) -> int:
        return self.raw.shape[0]

    @property
    def values(self) -> np.ndarray:
        return rectify(self.raw)


@dataclass
class Dynamics:
    """A materialized parameter snapshot ready for stepping.

    ``diffusion`` is a DiffusionNet (time-varying), a DiffusionSchedule
    (explicit values), or None (term disabled). ``seasonal`` holds the
    already-rectified (p, L, K) gains or None.
    """

    reaction: ReactionParams
    groups: GroupAssignment
    diffusion: object | None
    seasonal: np.ndarray | None
    period: int
    time_scale: int
    _pool: np.ndarray = field(init=False, repr=False)
    _members: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.groups.n_locations != self.reaction.n_locations:
            raise ValueError("group assignment and reaction parameters disagree on L")
        if self.seasonal is not None:
            self.seasonal = np.asarray(self.seasonal, dtype=np.float64)
            if self.seasonal.shape[0] != self.period:
                raise ValueError("seasonal gain period mismatch")
        self._pool = self.groups.pooling_matrix()
        self._members = self.groups.membership_matrix()

    @property
    def shape(self) -> tuple:
        return self.reaction.theta_a.shape

    def flow_at(self, t: int, hidden: np.ndarray | None):
        """(D_t, advanced hidden) for step t; (None, hidden) when inert."""
        if self.diffusion is None or self.groups.d_l == 1:
            return None, hidden
        if isinstance(self.diffusion, DiffusionNet):
            hidden = self.diffusion.advance(hidden, t, self.time_scale, self.period)
            return self.diffusion.emit(hidden), hidden
        if isinstance(self.diffusion, ConstantDiffusion):
            return self.diffusion.materialize(), hidden
        return self.diffusion.at(t), hidden

    def initial_hidden(self) -> np.ndarray | None:
        if isinstance(self.diffusion, DiffusionNet) and self.groups.d_l > 1:
            return self.diffusion.initial_hidden()
        return None


def diffusion_step(net: DiffusionNet, t: int, y: np.ndarray, hidden: np.ndarray,
                   time_scale: int, period: int) -> tuple[np.ndarray, np.ndarray]:
    """Advance the flow network one step and apply it to group means ``y``.

    Returns the (d_l, K) inflow received by each group and the new hidden
    state. With a single group the diagonal mask leaves nothing, so the
    network is not evaluated at all.
    """
    if net.d_l == 1:
        return np.zeros_like(y), hidden
    hidden = net.advance(hidden, t, time_scale, period)
    d = net.emit(hidden)
    return apply_flow(d, y), hidden


def apply_flow(d: np.ndarray, y: np.ndarray) -> np.ndarray:
    """inflow[g, k] = sum over source groups g' of D[g, g', k] * y[g', k]."""
    return np.einsum("gsk,sk->gk", d, y)


def forward_step(x: np.ndarray, t: int, dyn: Dynamics,
                 hidden: np.ndarray | None = None,
                 flow_override: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray | None]:
    """One-step prediction of the next L x K slice.

    ``flow_override`` substitutes an explicit D_t (used by generators);
    otherwise the dynamics' own diffusion component supplies it.
    """
    change = reaction_all(x, dyn.reaction)
    if flow_override is not None:
        d_t = flow_override
    else:
        d_t, hidden = dyn.flow_at(t, hidden)
    if d_t is not None:
        y = dyn._pool @ x
        change = change + dyn._members @ apply_flow(d_t, y)
    nxt = change + x
    if dyn.seasonal is not None:
        nxt = (1.0 + dyn.seasonal[t % dyn.period]) * nxt
    return nxt, hidden


@dataclass
class RolloutResult:
    predictions: np.ndarray  # (n, L, K)
    hidden: np.ndarray | None
    flows: np.ndarray | None  # (n, d_l, d_l, K) when collected


def rollout(dyn: Dynamics, x_init: np.ndarray, steps: int, mode: str,
            observations: np.ndarray | None = None, t_start: int = 0,
            hidden: np.ndarray | None = None, collect_flows: bool = False,
            clamp: tuple = (0.0, 1.5)) -> RolloutResult:
    """Run ``steps`` one-step predictions from global time ``t_start``.

    ``mode='teacher'`` consumes the provided observations (one per step) and
    records raw predictions; ``mode='autoregressive'`` consumes its own
    previous prediction clamped to ``clamp``, which is also what is recorded.
    The recurrent hidden state starts at zeros unless one is carried in, and
    the time index starts at ``t_start`` so a forecast continues the phase
    and time normalization of the modeling window.
    """
    if mode not in ("teacher", "autoregressive"):
        raise ValueError(f"unknown rollout mode {mode!r}")
    if mode == "teacher":
        if observations is None or len(observations) < steps:
            raise ValueError("teacher-forced rollout needs one observation per step")
    if hidden is None:
        hidden = dyn.initial_hidden()

    l, k = dyn.shape
    preds = np.empty((steps, l, k))
    flows = np.empty((steps, dyn.groups.d_l, dyn.groups.d_l, k)) if collect_flows else None
    state = np.asarray(x_init, dtype=np.float64)
    for s in range(steps):
        t = t_start + s
        x_in = observations[s] if mode == "teacher" else state
        if collect_flows:
            d_t, hidden = dyn.flow_at(t, hidden)
            flows[s] = 0.0 if d_t is None else d_t
            nxt, _ = forward_step(x_in, t, dyn, hidden,
                                  flow_override=d_t if d_t is not None else np.zeros_like(flows[s]))
        else:
            nxt, hidden = forward_step(x_in, t, dyn, hidden)
        if not np.all(np.isfinite(nxt)):
            raise FloatingPointError(f"non-finite state at step {t}")
        if mode == "autoregressive":
            nxt = np.clip(nxt, *clamp)
            state = nxt
        preds[s] = nxt
    return RolloutResult(preds, hidden, flows)
