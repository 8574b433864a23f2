"""Explicit Runge-Kutta integration with timed events and fixed-rate sampling."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from numba import njit


class IntegrationError(RuntimeError):
    def __init__(self, message: str, t: float):
        super().__init__(f"{message} (t = {t:.9g} s)")
        self.t = t


@dataclass(frozen=True)
class IntegratorConfig:
    method: str = "rk45"
    horizon: float = 1.0
    dt: float = 1e-4
    rtol: float = 1e-7
    atol: float = 1e-9
    dt_min: float = 1e-12
    dt_max: float = 1e-3
    sample_dt: Optional[float] = None

    def __post_init__(self):
        if self.method not in ("rk4", "rk45"):
            raise ValueError(f"unknown method {self.method!r}")
        if not (self.dt > 0 and self.dt_min > 0 and self.dt_max >= self.dt_min):
            raise ValueError("step bounds must be positive with dt_min <= dt_max")
        if not (self.rtol > 0 and self.atol > 0):
            raise ValueError("rtol and atol must be positive")
        if not self.horizon > 0:
            raise ValueError("horizon must be positive")
        if self.sample_dt is not None and not self.sample_dt > 0:
            raise ValueError("sample_dt must be positive")


@dataclass(frozen=True)
class Event:
    """``action(x)`` runs at ``time`` and returns the new state (or None to keep it).

    The action may also mutate whatever parameters the vector field reads;
    integration restarts from the event time either way.
    """

    time: float
    action: Callable[[np.ndarray], Optional[np.ndarray]]


@dataclass
class Trajectory:
    t: np.ndarray
    x: np.ndarray
    n_steps: int = 0
    n_rejected: int = 0
    n_fev: int = 0
    event_indices: list = field(default_factory=list)


# Dormand-Prince 5(4)
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    np.array([]),
    np.array([1 / 5]),
    np.array([3 / 40, 9 / 40]),
    np.array([44 / 45, -56 / 15, 32 / 9]),
    np.array([19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729]),
    np.array([9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656]),
    np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84]),
]
_B = _A[6]
_E = np.array([71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40])


def _stop_times(t0: float, cfg: IntegratorConfig, events: Sequence[Event]):
    t_end = t0 + cfg.horizon
    stops = {t_end}
    if cfg.sample_dt is not None:
        k = int(math.floor(cfg.horizon / cfg.sample_dt + 1e-9))
        stops.update(t0 + i * cfg.sample_dt for i in range(1, k + 1))
    stops.update(ev.time for ev in events if t0 < ev.time < t_end)
    return sorted(s for s in stops if t0 < s <= t_end)


def integrate(
    f: Callable[[float, np.ndarray], np.ndarray],
    x0,
    config: IntegratorConfig,
    events: Sequence[Event] = (),
    t0: float = 0.0,
) -> Trajectory:
    """Integrate ``x' = f(t, x)`` from ``t0`` over ``config.horizon``.

    Samples are recorded at ``t0`` and every ``sample_dt`` (or only at the
    end when sampling is off). Events fire exactly at their timestamps,
    after the pre-event sample is stored; the post-event state is stored as
    an additional sample with the same time stamp.
    """
    events = sorted(events, key=lambda ev: ev.time)
    times = [e.time for e in events]
    if any(b < a for a, b in zip(times, times[1:])):
        raise ValueError("events must be sorted by time")
    x = np.array(x0, dtype=float)
    if not np.all(np.isfinite(x)):
        raise IntegrationError("non-finite initial state", t0)
    stops = _stop_times(t0, config, events)
    sample_set = set(stops) if config.sample_dt is not None else {stops[-1]}
    pending = [ev for ev in events if t0 < ev.time <= t0 + config.horizon]
    for ev in [ev for ev in events if ev.time == t0]:
        x = _apply(ev, x)

    ts, xs, event_idx = [t0], [x.copy()], []
    stats = {"steps": 0, "rejected": 0, "fev": 0}
    t = t0
    h = min(config.dt_max, config.dt) if config.method == "rk45" else config.dt
    k1 = None
    compiled = getattr(f, "compiled", None)
    for stop in stops:
        if config.method == "rk4":
            x, t = _rk4_to(f, t, x, stop, config.dt, stats)
        elif compiled is not None:
            # parameters may have been changed by an event, fetch them per segment
            x, t, h, k1 = _rk45_compiled_to(*compiled(), t, x, stop, h, k1, config, stats)
        else:
            x, t, h, k1 = _rk45_to(f, t, x, stop, h, k1, config, stats)
        if stop in sample_set:
            ts.append(t)
            xs.append(x.copy())
        while pending and pending[0].time == stop:
            x = _apply(pending.pop(0), x)
            k1 = None
            event_idx.append(len(ts))
            ts.append(t)
            xs.append(x.copy())
    return Trajectory(
        t=np.array(ts),
        x=np.array(xs),
        n_steps=stats["steps"],
        n_rejected=stats["rejected"],
        n_fev=stats["fev"],
        event_indices=event_idx,
    )


def _apply(ev: Event, x: np.ndarray) -> np.ndarray:
    out = ev.action(x)
    return x if out is None else np.array(out, dtype=float)


def _rk4_to(f, t, x, stop, dt, stats):
    while t < stop:
        h = min(dt, stop - t)
        if stop - (t + h) < 1e-12 * max(1.0, abs(stop)):
            h = stop - t
        k1 = f(t, x)
        k2 = f(t + h / 2, x + h / 2 * k1)
        k3 = f(t + h / 2, x + h / 2 * k2)
        k4 = f(t + h, x + h * k3)
        x = x + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        t = stop if h == stop - t else t + h
        stats["steps"] += 1
        stats["fev"] += 4
        if not np.all(np.isfinite(x)):
            raise IntegrationError("NaN or Inf in state", t)
    return x, stop


def _rk45_to(f, t, x, stop, h, k1, cfg, stats):
    k = np.empty((7, x.size))
    if k1 is None:
        k1 = f(t, x)
        stats["fev"] += 1
    while t < stop:
        h = min(h, cfg.dt_max)
        remaining = stop - t
        clipped = h >= remaining
        step = remaining if clipped else h
        k[0] = k1
        for s in range(1, 7):
            k[s] = f(t + _C[s] * step, x + step * (_A[s] @ k[:s]))
        stats["fev"] += 6
        x_new = x + step * (_B @ k[:6])
        err_vec = step * (_E @ k)
        scale = cfg.atol + cfg.rtol * np.maximum(np.abs(x), np.abs(x_new))
        err = math.sqrt(np.mean((err_vec / scale) ** 2))
        if not math.isfinite(err):
            raise IntegrationError("NaN or Inf in state", t)
        if err <= 1.0:
            t = stop if clipped else t + step
            x = x_new
            k1 = k[6].copy()
            stats["steps"] += 1
            fac = 5.0 if err == 0.0 else min(5.0, max(0.2, 0.9 * err**-0.2))
            # a clipped step says nothing about the achievable step size
            if not clipped or fac < 1.0:
                h = step * fac if not clipped else min(h, step * fac)
        else:
            stats["rejected"] += 1
            h = step * max(0.2, 0.9 * err**-0.2)
            if h < cfg.dt_min:
                raise IntegrationError(
                    f"step size {h:.3g} s fell below dt_min = {cfg.dt_min:.3g} s; "
                    "the problem is stiff here, try a smaller dt_max",
                    t,
                )
    return x, t, h, k1


_STAGE_A = np.zeros((7, 7))
for _s in range(1, 7):
    _STAGE_A[_s, :_s] = _A[_s]


@njit(cache=True)
def _dp45_segment(rhs, params, t, x, stop, h, k1, rtol, atol, dt_min, dt_max, c, a, bw, ew):
    n = x.size
    k = np.empty((7, n))
    steps = 0
    rejected = 0
    fev = 0
    while t < stop:
        h = min(h, dt_max)
        remaining = stop - t
        clipped = h >= remaining
        step = remaining if clipped else h
        k[0] = k1
        for s in range(1, 7):
            xs = x.copy()
            for j in range(s):
                if a[s, j] != 0.0:
                    xs += (step * a[s, j]) * k[j]
            k[s] = rhs(params, xs)
        fev += 6
        x_new = x.copy()
        err_vec = np.zeros(n)
        for j in range(7):
            if j < 6 and bw[j] != 0.0:
                x_new += (step * bw[j]) * k[j]
            if ew[j] != 0.0:
                err_vec += (step * ew[j]) * k[j]
        acc = 0.0
        for i in range(n):
            sc = atol + rtol * max(abs(x[i]), abs(x_new[i]))
            acc += (err_vec[i] / sc) ** 2
        err = np.sqrt(acc / n)
        if not np.isfinite(err):
            return x, t, h, k1, steps, rejected, fev, 2
        if err <= 1.0:
            t = stop if clipped else t + step
            x = x_new
            k1 = k[6].copy()
            steps += 1
            fac = 5.0 if err == 0.0 else min(5.0, max(0.2, 0.9 * err ** -0.2))
            if not clipped:
                h = step * fac
            elif fac < 1.0:
                h = min(h, step * fac)
        else:
            rejected += 1
            h = step * max(0.2, 0.9 * err ** -0.2)
            if h < dt_min:
                return x, t, h, k1, steps, rejected, fev, 1
    return x, t, h, k1, steps, rejected, fev, 0


def _rk45_compiled_to(rhs, params, t, x, stop, h, k1, cfg, stats):
    """Same scheme as :func:`_rk45_to` with a numba-compiled ``rhs(params, x)``."""
    if k1 is None:
        k1 = rhs(params, x)
        stats["fev"] += 1
    x, t, h, k1, steps, rejected, fev, status = _dp45_segment(
        rhs, params, float(t), x, float(stop), float(h), k1,
        cfg.rtol, cfg.atol, cfg.dt_min, cfg.dt_max, _C, _STAGE_A, _B[:6].copy(), _E,
    )
    stats["steps"] += steps
    stats["rejected"] += rejected
    stats["fev"] += fev
    if status == 2:
        raise IntegrationError("NaN or Inf in state (or a constant-power load voltage collapsed)", t)
    if status == 1:
        raise IntegrationError(
            f"step size {h:.3g} s fell below dt_min = {cfg.dt_min:.3g} s; "
            "the problem is stiff here, try a smaller dt_max",
            t,
        )
    return x, t, h, k1
