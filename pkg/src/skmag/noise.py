"""Wiener path sampling, Brownian-bridge refinement, and mollified smooth noise.

A BrownianPath is a two-dimensional Wiener path sampled on a uniform grid and
is the single source of randomness for every coupled experiment.  SmoothedNoise
is its mollification with a compactly supported bump kernel of width delta,
evaluable together with its first and second time derivatives.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy import integrate

from .errors import ConfigurationError

# stream tags for counter-based seed derivation
_PATH_STREAM = 0
_REFINE_STREAM = 1
_REPLICA_STREAM = 2
_AUX_STREAM = 3

_MASK64 = (1 << 64) - 1
_MASK32 = (1 << 32) - 1

# grid spacing must resolve the mollifier window: step <= delta * this fraction
DEFAULT_STEP_FRACTION = 1.0 / 256.0

_REL_TOL = 1e-9


def stream_rng(seed, *key):
    """Generator for an independent stream derived from (seed, key...).

    The derivation is counter based (numpy SeedSequence spawn keys), so streams
    for different keys are independent and insensitive to creation order.
    """
    spawn = tuple(int(k) & _MASK32 for k in key)
    return np.random.default_rng(np.random.SeedSequence(entropy=int(seed) & _MASK64, spawn_key=spawn))


def replica_seed(seed, replica):
    """64-bit seed for a numbered replica, derived from the root seed."""
    ss = np.random.SeedSequence(entropy=int(seed) & _MASK64, spawn_key=(_REPLICA_STREAM, int(replica) & _MASK32))
    return int(ss.generate_state(1, np.uint64)[0])


@dataclass(frozen=True)
class BrownianPath:
    """Two-dimensional Wiener path on a uniform grid.

    values[k] is the path at time k*step; values[0] = (0, 0).  Immutable after
    construction and safe to share between threads.
    """

    seed: int
    horizon: float
    step: float
    values: np.ndarray
    stream: tuple = (_PATH_STREAM,)

    @property
    def n_steps(self):
        return self.values.shape[0] - 1

    @property
    def times(self):
        return np.arange(self.values.shape[0]) * self.step


def _grid_count(horizon, step):
    n = horizon / step
    n_round = round(n)
    if n_round < 1 or abs(n - n_round) > _REL_TOL * max(1.0, n):
        raise ValueError(f"horizon/step = {n} is not an integer grid count")
    return int(n_round)


def sample_path(seed, horizon, step):
    """Sample a BrownianPath; deterministic in (seed, horizon, step)."""
    if horizon <= 0:
        raise ValueError(f"horizon must be positive, got {horizon}")
    if step <= 0:
        raise ValueError(f"step must be positive, got {step}")
    n = _grid_count(horizon, step)
    rng = stream_rng(seed, _PATH_STREAM)
    increments = rng.standard_normal((n, 2)) * np.sqrt(step)
    values = np.empty((n + 1, 2))
    values[0] = 0.0
    np.cumsum(increments, axis=0, out=values[1:])
    return BrownianPath(seed=int(seed), horizon=float(horizon), step=float(step), values=values)


def refine(path, factor):
    """Refine a path by an integer factor using Brownian-bridge sampling.

    Values at the original grid times are preserved exactly; the inserted
    points are drawn conditionally on the existing ones.  Deterministic in
    the path's provenance and the factor.
    """
    factor = int(factor)
    if factor < 2:
        raise ValueError(f"refinement factor must be >= 2, got {factor}")
    old = path.values
    n_old = old.shape[0] - 1
    new_step = path.step / factor
    rng = stream_rng(path.seed, *path.stream, _REFINE_STREAM, factor)
    values = np.empty((n_old * factor + 1, 2))
    values[::factor] = old
    # march left to right inside every coarse interval at once, conditioning
    # each new point on the previous point and the right endpoint
    current = old[:-1].copy()
    right = old[1:]
    for j in range(1, factor):
        remaining = (factor - j) * new_step
        total = remaining + new_step
        mean = current + (new_step / total) * (right - current)
        std = np.sqrt(new_step * remaining / total)
        current = mean + std * rng.standard_normal(current.shape)
        values[j::factor][: n_old] = current
    return BrownianPath(
        seed=path.seed,
        horizon=path.horizon,
        step=new_step,
        values=values,
        stream=path.stream + (_REFINE_STREAM, factor),
    )


def _interp(values, step, t):
    """Linear interpolation of grid values at times t; exact at grid nodes.

    values has shape (..., N+1, 2) and t is scalar or any array; the result
    broadcasts values' leading axes against t's shape.
    """
    t = np.asarray(t, dtype=float)
    pos = t / step
    k = np.floor(pos).astype(np.int64)
    k = np.clip(k, 0, values.shape[-2] - 2)
    gamma = pos - k
    lo = values[..., k, :]
    hi = values[..., k + 1, :]
    return lo + gamma[..., None] * (hi - lo)


def eval_path(path, t):
    """Evaluate the path at time(s) t in [0, horizon] by linear interpolation."""
    t_arr = np.asarray(t, dtype=float)
    slack = _REL_TOL * max(1.0, path.horizon)
    if np.any(t_arr < -slack) or np.any(t_arr > path.horizon + slack):
        raise ValueError(f"evaluation time outside [0, {path.horizon}]")
    return _interp(path.values, path.step, t_arr)


def sup_norm(path, T):
    """max_{0 <= t <= T+1} |w_t| over the grid values."""
    t_end = T + 1.0
    if t_end > path.horizon * (1 + _REL_TOL):
        raise ValueError(f"sup_norm needs horizon >= T+1 = {t_end}, path has {path.horizon}")
    k_end = int(np.floor(t_end / path.step + _REL_TOL))
    k_end = min(k_end, path.values.shape[0] - 1)
    chunk = path.values[: k_end + 1]
    return float(np.sqrt((chunk ** 2).sum(axis=1)).max())


# ---------------------------------------------------------------------------
# mollifier


def _bump_pieces(r):
    """exp(-1/(r(1-r))) and the log-derivative factors, masked to (0,1).

    Returns (e, gp, gpp) with e = exp(g), g = -1/(r(1-r)), gp = g', gpp = g''.
    Entries outside the support, or where the exponential underflows, are 0.
    """
    r = np.asarray(r, dtype=float)
    u = r * (1.0 - r)
    # exp(-1/u) underflows below u ~ 1/745; avoid 0 * inf in the factors
    ok = u > 1.4e-3
    u_safe = np.where(ok, u, 1.0)
    e = np.where(ok, np.exp(-1.0 / u_safe), 0.0)
    gp = np.where(ok, (1.0 - 2.0 * r) / u_safe ** 2, 0.0)
    gpp = np.where(ok, -2.0 / u_safe ** 2 - 2.0 * (1.0 - 2.0 * r) ** 2 / u_safe ** 3, 0.0)
    return e, gp, gpp


def _gauss_legendre_01(order):
    x, w = np.polynomial.legendre.leggauss(order)
    return 0.5 * (x + 1.0), 0.5 * w


def _normalization():
    # the integrand vanishes to all orders at the endpoints, so a fixed
    # high-order rule already reaches machine precision
    nodes, weights = _gauss_legendre_01(96)
    e, _, _ = _bump_pieces(nodes)
    return 1.0 / float(e @ weights)


_NORMALIZATION = _normalization()


@dataclass
class Mollifier:
    """Bump kernel N*exp(-1/(r(1-r))) on (0,1) with closed-form derivatives.

    Carries a Gauss-Legendre node/weight table on [0,1] of the given order,
    used for all window quadratures.
    """

    order: int = 64
    normalization: float = field(default=_NORMALIZATION, init=False)
    nodes: np.ndarray = field(init=False, repr=False)
    weights: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.nodes, self.weights = _gauss_legendre_01(int(self.order))

    def eval(self, order, r):
        """rho^(order)(r) for order in {0, 1, 2}; zero outside (0, 1)."""
        if order not in (0, 1, 2):
            raise ValueError(f"derivative order must be 0, 1 or 2, got {order}")
        e, gp, gpp = _bump_pieces(r)
        if order == 0:
            out = e
        elif order == 1:
            out = e * gp
        else:
            out = e * (gpp + gp * gp)
        return self.normalization * out

    def integral(self, order):
        """Quadrature of rho^(order) over [0,1] with the kernel's own table."""
        return float(self.eval(order, self.nodes) @ self.weights)

    def abs_integral(self, order):
        """Adaptive quadrature of |rho^(order)|; explicit constant for the
        derivative-growth bounds."""
        val, _ = integrate.quad(lambda r: abs(float(self.eval(order, np.array(r)))), 0.0, 1.0,
                                limit=400, points=[0.5])
        return val


def mollifier_eval(mollifier, order, r):
    """Closed-form value of rho^(order)(r)."""
    return mollifier.eval(order, r)


# ---------------------------------------------------------------------------
# smoothed noise


class SmoothedNoise:
    """Mollified Wiener process w^delta with derivatives of order 0..2.

    The n-th derivative is evaluated as the Gauss-Legendre quadrature of
    ((-1)^n / delta^n) * integral_0^1 w(t + delta r) rho^(n)(r) dr
    over the forward window [t, t + delta].  The path grid must satisfy
    step <= delta * step_fraction so the linear-interpolation error stays
    controlled.
    """

    def __init__(self, path, delta, mollifier=None, step_fraction=DEFAULT_STEP_FRACTION):
        if delta <= 0:
            raise ValueError(f"delta must be positive, got {delta}")
        mollifier = mollifier if mollifier is not None else Mollifier()
        if mollifier.order < 8:
            raise ConfigurationError(f"quadrature order must be >= 8, got {mollifier.order}")
        if path.step > delta * step_fraction * (1 + _REL_TOL):
            raise ConfigurationError(
                f"path step {path.step} too coarse for delta={delta}: "
                f"need step <= {delta * step_fraction}")
        if path.horizon < delta:
            raise ValueError(f"path horizon {path.horizon} shorter than delta={delta}")
        self.path = path
        self.delta = float(delta)
        self.mollifier = mollifier
        # premultiplied quadrature rows: weights * rho^(n)(nodes) * (-1/delta)^n
        self._rows = tuple(
            mollifier.weights * mollifier.eval(n, mollifier.nodes) * (-1.0 / self.delta) ** n
            for n in range(3))
        self._offsets = self.delta * mollifier.nodes

    def eval(self, order, t):
        """w^delta derivative of the given order at time(s) t."""
        if order not in (0, 1, 2):
            raise ValueError(f"derivative order must be 0, 1 or 2, got {order}")
        t_arr = np.atleast_1d(np.asarray(t, dtype=float))
        slack = _REL_TOL * max(1.0, self.path.horizon)
        if np.any(t_arr < -slack) or np.any(t_arr + self.delta > self.path.horizon + slack):
            raise ValueError(
                f"need 0 <= t and t + delta <= horizon = {self.path.horizon}")
        out = _window_quadrature(self.path.values[None], self.path.step,
                                 self._offsets, self._rows[order], t_arr)[0]
        if np.isscalar(t) or np.ndim(t) == 0:
            return out[0]
        return out


def smoothed_eval(noise, order, t):
    """Evaluate the mollified process or one of its derivatives."""
    return noise.eval(order, t)


def _window_quadrature(values, step, offsets, row, times):
    """Quadrature sum_j row[j] * w(t_i + offsets[j]) for a batch of paths.

    values: (B, N+1, 2); times: (m,).  Returns (B, m, 2).  The gather indices
    are shared across the batch, and the reduction runs row-wise, so each
    row's result is independent of the batch composition.
    """
    s = times[:, None] + offsets[None, :]
    pos = s / step
    k = np.floor(pos).astype(np.int64)
    k = np.clip(k, 0, values.shape[1] - 2)
    gamma = (pos - k)[None, :, :, None]
    w = (1.0 - gamma) * values[:, k] + gamma * values[:, k + 1]
    return (w * row[None, None, :, None]).sum(axis=2)


class PathBatch:
    """A stack of replica paths sharing one grid, for lock-step integration.

    Row b holds the same values as sample_path(replica_seed(seed, first + b),
    horizon, step), so batched results agree bit for bit with per-replica runs.
    """

    def __init__(self, values, step, horizon):
        self.values = values
        self.step = float(step)
        self.horizon = float(horizon)

    @property
    def size(self):
        return self.values.shape[0]

    @classmethod
    def from_replicas(cls, seed, first, count, horizon, step):
        n = _grid_count(horizon, step)
        values = np.empty((count, n + 1, 2))
        for b in range(count):
            values[b] = sample_path(replica_seed(seed, first + b), horizon, step).values
        return cls(values, step, horizon)

    def path(self, index):
        """Single-replica view as a BrownianPath (copy of one row)."""
        return BrownianPath(seed=0, horizon=self.horizon, step=self.step,
                            values=self.values[index].copy())

    def sup_norms(self, T):
        t_end = T + 1.0
        if t_end > self.horizon * (1 + _REL_TOL):
            raise ValueError(f"sup_norm needs horizon >= T+1 = {t_end}")
        k_end = min(int(np.floor(t_end / self.step + _REL_TOL)), self.values.shape[1] - 1)
        return np.sqrt((self.values[:, : k_end + 1] ** 2).sum(axis=2)).max(axis=1)


class SmoothedBatch:
    """Mollified evaluation over a PathBatch; mirrors SmoothedNoise."""

    def __init__(self, batch, delta, mollifier=None, step_fraction=DEFAULT_STEP_FRACTION):
        mollifier = mollifier if mollifier is not None else Mollifier()
        if batch.step > delta * step_fraction * (1 + _REL_TOL):
            raise ConfigurationError(
                f"path step {batch.step} too coarse for delta={delta}: "
                f"need step <= {delta * step_fraction}")
        self.batch = batch
        self.delta = float(delta)
        self.mollifier = mollifier
        self._rows = tuple(
            mollifier.weights * mollifier.eval(n, mollifier.nodes) * (-1.0 / self.delta) ** n
            for n in range(3))
        self._offsets = self.delta * mollifier.nodes

    def eval_many(self, order, times, time_chunk=2048):
        """(B, len(times), 2) array of derivative values, chunked over time."""
        times = np.asarray(times, dtype=float)
        if times[-1] + self.delta > self.batch.horizon * (1 + _REL_TOL):
            raise ValueError("noise horizon too short for requested times")
        B = self.batch.size
        out = np.empty((B, times.size, 2))
        row = self._rows[order]
        for s0 in range(0, times.size, time_chunk):
            sl = slice(s0, min(s0 + time_chunk, times.size))
            out[:, sl] = _window_quadrature(self.batch.values, self.batch.step,
                                            self._offsets, row, times[sl])
        return out
