"""Seeded parallel Monte Carlo over threshold-voltage variation.

Sampling uses counter-based Philox substreams: sample i always consumes
counter block i of the stream keyed by (seed, role), so any partition of the
index range over any number of threads reproduces identical draws. Failure
counts come with Wilson score intervals; raw samples can be exported as CSV
for the distribution estimators.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtri

from .errors import DegenerateStatisticsError, DomainError, ParseError
from .transients import default_write_t_max, delta_v_closed, delta_v_ode, write_time_closed, write_time_ode
from .yieldmodel import OffsetVoltageDist

_ROLE_ACCESS = 1
_ROLE_WRITE = 2
_MIN_UNIFORM = 2.0**-54  # ndtri(0) is -inf; the generator can emit exactly 0.0


@dataclass(frozen=True)
class VariationSpec:
    """Gaussian threshold variation plus sense-amp offset, with the RNG seed."""

    vth_n_mean: float
    vth_n_sigma: float
    vth_p_mean: float
    vth_p_sigma: float
    offset: OffsetVoltageDist
    seed: int

    def __post_init__(self):
        if not self.vth_n_sigma > 0.0:
            raise DomainError(f"vth_n_sigma must be > 0, got {self.vth_n_sigma}")
        if not self.vth_p_sigma > 0.0:
            raise DomainError(f"vth_p_sigma must be > 0, got {self.vth_p_sigma}")
        if int(self.seed) != self.seed or not 0 <= int(self.seed) < 2**64:
            raise DomainError(f"seed must be a 64-bit unsigned integer, got {self.seed}")

    def to_dict(self):
        return {
            "schema": 1,
            "vth_n_mean": self.vth_n_mean,
            "vth_n_sigma": self.vth_n_sigma,
            "vth_p_mean": self.vth_p_mean,
            "vth_p_sigma": self.vth_p_sigma,
            "offset": self.offset.to_dict(),
            "seed": int(self.seed),
        }

    @classmethod
    def from_dict(cls, obj):
        try:
            return cls(
                vth_n_mean=float(obj["vth_n_mean"]),
                vth_n_sigma=float(obj["vth_n_sigma"]),
                vth_p_mean=float(obj["vth_p_mean"]),
                vth_p_sigma=float(obj["vth_p_sigma"]),
                offset=OffsetVoltageDist.from_dict(obj["offset"]),
                seed=int(obj["seed"]),
            )
        except KeyError as missing:
            raise ParseError(f"variation JSON is missing key {missing}") from None


@dataclass(frozen=True)
class McResult:
    n: int
    failures: int
    pf: float
    ci95: tuple
    samples_path: str | None
    wall_time: float

    def __post_init__(self):
        if self.failures > self.n:
            raise DomainError("failures cannot exceed n")

    def to_dict(self, include_wall_time=True):
        out = {
            "schema": 1,
            "n": self.n,
            "failures": self.failures,
            "pf": self.pf,
            "ci95": [self.ci95[0], self.ci95[1]],
            "samples_path": self.samples_path,
        }
        if include_wall_time:
            out["wall_time"] = self.wall_time
        return out


def wilson_ci(failures, n, confidence=0.95):
    """Wilson score interval for a binomial proportion."""
    if n < 1:
        raise DomainError("n must be >= 1")
    if not 0 <= failures <= n:
        raise DomainError("failures must lie in [0, n]")
    if not 0.0 < confidence < 1.0:
        raise DomainError(f"confidence must be in (0, 1), got {confidence}")
    z = float(ndtri(0.5 + 0.5 * confidence))
    p = failures / n
    denom = 1.0 + z * z / n
    center = (p + z * z / (2.0 * n)) / denom
    half = z * math.sqrt(p * (1.0 - p) / n + z * z / (4.0 * n * n)) / denom
    lo = 0.0 if failures == 0 else max(center - half, 0.0)
    hi = 1.0 if failures == n else min(center + half, 1.0)
    return (lo, hi)


# -- deterministic substreams -----------------------------------------------------

def _block_uniforms(seed, role, start, count):
    """Doubles for sample indices [start, start+count): one Philox block each.

    A Philox-4x64 block yields four doubles; sample i owns block i, so draws
    are independent of how the index range is partitioned across threads.
    """
    bg = np.random.Philox(key=np.array([seed, role], dtype=np.uint64))
    bg.advance(start)
    u = np.random.Generator(bg).random((count, 4))
    return np.maximum(u, _MIN_UNIFORM)


def draw_access_samples(var, start, count):
    """(vth_n, v_os) arrays for the access stream, block-indexed."""
    u = _block_uniforms(var.seed, _ROLE_ACCESS, start, count)
    vth_n = var.vth_n_mean + var.vth_n_sigma * ndtri(u[:, 0])
    v_os = var.offset.mu_vos + var.offset.sigma_vos * ndtri(u[:, 1])
    return vth_n, v_os


def draw_write_samples(var, start, count):
    """(vth_n, vth_p) arrays for the write stream, block-indexed."""
    u = _block_uniforms(var.seed, _ROLE_WRITE, start, count)
    vth_n = var.vth_n_mean + var.vth_n_sigma * ndtri(u[:, 0])
    vth_p = var.vth_p_mean + var.vth_p_sigma * ndtri(u[:, 1])
    return vth_n, vth_p


def _chunks(n, threads):
    size = max(1, -(-n // max(1, threads)))
    return [(s, min(size, n - s)) for s in range(0, n, size)]


def _parallel_map(fn, n, threads):
    parts = _chunks(n, threads)
    if len(parts) == 1 or threads <= 1:
        return [fn(s, c) for s, c in parts]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda sc: fn(*sc), parts))


# -- sample evaluation ------------------------------------------------------------

def access_samples(cell, var, n, t_read, mode="closed", threads=1):
    """Draw n access samples and evaluate the chosen oracle.

    Returns (vth_n, v_os, delta_v) arrays in sample-index order.
    """
    _check_mode(mode)

    def work(start, count):
        vth_n, v_os = draw_access_samples(var, start, count)
        if mode == "closed":
            dv = delta_v_closed(cell, vth_n, t_read)
        else:
            dv = delta_v_ode(cell, vth_n, t_read)
        return vth_n, v_os, dv

    parts = _parallel_map(work, n, threads)
    return tuple(np.concatenate(cols) for cols in zip(*parts))


def write_samples(cell, var, n, mode="closed", t_max=None, threads=1):
    """Draw n write samples and evaluate the chosen oracle.

    Returns (vth_n, vth_p, t_write) arrays; censored ODE samples are inf.
    Closed mode ignores t_max (the closed form never censors).
    """
    _check_mode(mode)
    if mode == "ode" and t_max is None:
        t_max = default_write_t_max(cell)

    def work(start, count):
        vth_n, vth_p = draw_write_samples(var, start, count)
        if mode == "closed":
            t = write_time_closed(cell, vth_n)
        else:
            t = write_time_ode(cell, vth_n, vth_p, t_max)
        return vth_n, vth_p, np.asarray(t, dtype=float)

    parts = _parallel_map(work, n, threads)
    return tuple(np.concatenate(cols) for cols in zip(*parts))


def _check_mode(mode):
    if mode not in ("closed", "ode"):
        raise DomainError(f"oracle mode must be 'closed' or 'ode', got {mode!r}")


# -- top-level MC runs ------------------------------------------------------------

def run_access_mc(cell, var, n, t_read, mode="closed", threads=1, export_path=None):
    """Empirical access failure probability: fail iff v_os > 0 and dv < v_os."""
    if n < 1:
        raise DomainError("n must be >= 1")
    started = time.perf_counter()
    vth_n, v_os, dv = access_samples(cell, var, n, t_read, mode=mode, threads=threads)
    fail = (v_os > 0.0) & (dv < v_os)
    failures = int(np.sum(fail))
    wall = time.perf_counter() - started
    if export_path is not None:
        export_samples(export_path, vth_n=vth_n, v_os=v_os, metric=dv, fail=fail)
    return McResult(
        n=n,
        failures=failures,
        pf=failures / n,
        ci95=wilson_ci(failures, n, 0.95),
        samples_path=str(export_path) if export_path is not None else None,
        wall_time=wall,
    )


def run_write_mc(cell, var, n, t_write, mode="closed", threads=1, t_max=None,
                 export_path=None):
    """Empirical write failure probability: fail iff write time > t_write.

    Censored ODE samples count as failures; constraints beyond the censoring
    horizon are rejected.
    """
    if n < 1:
        raise DomainError("n must be >= 1")
    if not t_write > 0.0:
        raise DomainError(f"t_write must be > 0, got {t_write}")
    if mode == "ode":
        if t_max is None:
            t_max = default_write_t_max(cell)
        if t_write > t_max:
            raise DomainError(
                f"t_write {t_write!r} exceeds the censoring horizon t_max {t_max!r}"
            )
    started = time.perf_counter()
    vth_n, vth_p, t = write_samples(cell, var, n, mode=mode, t_max=t_max, threads=threads)
    fail = t > t_write
    failures = int(np.sum(fail))
    wall = time.perf_counter() - started
    if export_path is not None:
        export_samples(export_path, vth_n=vth_n, vth_p=vth_p, metric=t, fail=fail)
    return McResult(
        n=n,
        failures=failures,
        pf=failures / n,
        ci95=wilson_ci(failures, n, 0.95),
        samples_path=str(export_path) if export_path is not None else None,
        wall_time=wall,
    )


SAMPLES_CSV_HEADER = "i,vth_n,vth_p,v_os,metric,fail"


def export_samples(path, vth_n, metric, fail, vth_p=None, v_os=None):
    """One CSV row per sample; columns not drawn for this mode stay empty."""
    n = len(vth_n)

    def col(values, i):
        if values is None:
            return ""
        v = float(values[i])
        return "inf" if math.isinf(v) else repr(v)

    try:
        with open(path, "w") as fh:
            fh.write("# manifest: manifest.json\n")
            fh.write(SAMPLES_CSV_HEADER + "\n")
            for i in range(n):
                m = float(metric[i])
                fh.write(
                    f"{i},{repr(float(vth_n[i]))},{col(vth_p, i)},{col(v_os, i)},"
                    f"{'inf' if math.isinf(m) else repr(m)},{int(fail[i])}\n"
                )
    except OSError as exc:
        raise ParseError(f"cannot write samples CSV {path}: {exc}") from exc


# -- characterization -------------------------------------------------------------

def characterize_access(cell, var, t_grid, n=200, mode="closed", threads=1):
    """Per-grid-point moment estimation for the access distribution.

    Grid point j consumes its own block range [j*n, (j+1)*n), so the moment
    estimates carry independent noise per point and interpolation between
    points averages it down.
    """
    from .yieldmodel import AccessCharacterization, estimate_delta_params

    t_grid = sorted(float(t) for t in t_grid)
    if len(t_grid) < 1:
        raise DomainError("characterization grid needs at least 1 point")
    mus, sigmas = [], []
    for j, t in enumerate(t_grid):

        def work(start, count, t=t, base=j * n):
            vth_n, _ = draw_access_samples(var, base + start, count)
            if mode == "closed":
                dv = delta_v_closed(cell, vth_n, t)
            else:
                dv = delta_v_ode(cell, vth_n, t)
            return (dv,)

        _check_mode(mode)
        (dv,) = (np.concatenate(cols) for cols in zip(*_parallel_map(work, n, threads)))
        dist = estimate_delta_params(dv)
        mus.append(dist.mu_delta)
        sigmas.append(dist.sigma_delta)
    return AccessCharacterization(
        t_read=tuple(t_grid), mu_delta=tuple(mus), sigma_delta=tuple(sigmas)
    )


def characterize_write(cell, var, n=1600, mode="closed", t0=None, t_max=None, threads=1):
    """Moment estimation for the write-time distribution from n samples."""
    from .yieldmodel import DEFAULT_T0, estimate_write_params

    if t0 is None:
        t0 = DEFAULT_T0
    _, _, t = write_samples(cell, var, n, mode=mode, t_max=t_max, threads=threads)
    if np.any(np.isinf(t)):
        raise DegenerateStatisticsError(
            "censored samples in the characterization draw; raise t_max or weaken contention"
        )
    return estimate_write_params(t, t0=t0)
