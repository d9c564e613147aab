"""Gaussian-in-transform yield statistics.

The square root of the bitline differential and the square root of the log
write-time ratio are each modeled as plain Gaussians estimated from small
Monte Carlo sample sets. This module holds the estimators, the resulting
densities and failure probabilities (including the sense-amp offset
convolution), closed-form inversions for timing targets, and Q-Q
diagnostics. Both densities are single-branch forms: the mirrored branch of
the underlying chi-square is dropped, costing at most a Phi(-mu/sigma) mass
deficit, so constructors warn below a mu/sigma ratio of 4.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.integrate import quad
from scipy.interpolate import PchipInterpolator
from scipy.optimize import brentq
from scipy.special import ndtr, ndtri

from .errors import DegenerateStatisticsError, DomainError, ParseError

SINGLE_BRANCH_RATIO = 4.0
FOUR_SIGMA_PF = 3.17e-5
DEFAULT_T0 = 1e-12
_SQRT_2PI = math.sqrt(2.0 * math.pi)


def _check_moments(mu, sigma, what):
    if not sigma > 0.0:
        raise DomainError(f"{what} sigma must be > 0, got {sigma}")
    if not mu > 0.0:
        raise DomainError(f"{what} mu must be > 0, got {mu}")
    if mu / sigma < SINGLE_BRANCH_RATIO:
        warnings.warn(
            f"{what} mu/sigma = {mu / sigma:.2f} < {SINGLE_BRANCH_RATIO:g}: "
            "single-branch density loses more than Phi(-4) of its mass",
            stacklevel=3,
        )


@dataclass(frozen=True)
class DeltaVDistribution:
    """Moments of sqrt(delta_v); delta_v in volts, moments in V**0.5."""

    mu_delta: float
    sigma_delta: float

    def __post_init__(self):
        _check_moments(self.mu_delta, self.sigma_delta, "DeltaVDistribution")

    def to_dict(self):
        return {
            "schema": 1,
            "kind": "access_delta",
            "mu_delta": self.mu_delta,
            "sigma_delta": self.sigma_delta,
        }

    @classmethod
    def from_dict(cls, obj):
        return cls(mu_delta=float(obj["mu_delta"]), sigma_delta=float(obj["sigma_delta"]))


@dataclass(frozen=True)
class WriteTimeDistribution:
    """Moments of sqrt(ln(t/t0)); t0 is the reference time scale in seconds."""

    mu_w: float
    sigma_w: float
    t0: float = DEFAULT_T0

    def __post_init__(self):
        if not self.t0 > 0.0:
            raise DomainError(f"t0 must be > 0, got {self.t0}")
        _check_moments(self.mu_w, self.sigma_w, "WriteTimeDistribution")

    def to_dict(self):
        return {
            "schema": 1,
            "kind": "write_time",
            "mu_w": self.mu_w,
            "sigma_w": self.sigma_w,
            "t0": self.t0,
        }

    @classmethod
    def from_dict(cls, obj):
        return cls(
            mu_w=float(obj["mu_w"]),
            sigma_w=float(obj["sigma_w"]),
            t0=float(obj.get("t0", DEFAULT_T0)),
        )


@dataclass(frozen=True)
class OffsetVoltageDist:
    """Normal sense-amp offset voltage in volts."""

    mu_vos: float
    sigma_vos: float

    def __post_init__(self):
        if not self.sigma_vos > 0.0:
            raise DomainError(f"sigma_vos must be > 0, got {self.sigma_vos}")

    def to_dict(self):
        return {
            "schema": 1,
            "kind": "offset",
            "mu_vos": self.mu_vos,
            "sigma_vos": self.sigma_vos,
        }

    @classmethod
    def from_dict(cls, obj):
        return cls(mu_vos=float(obj["mu_vos"]), sigma_vos=float(obj["sigma_vos"]))


# -- estimation -----------------------------------------------------------------

def _clean_samples(samples, what, floor, floor_advice):
    arr = np.asarray(samples, dtype=float).ravel()
    if arr.size < 30:
        raise DegenerateStatisticsError(
            f"{what} estimation needs at least 30 samples, got {arr.size}"
        )
    bad = np.nonzero(~(arr > floor))[0]
    if bad.size:
        i = int(bad[0])
        raise DomainError(
            f"{what} sample {i} = {arr[i]!r} is not above {floor_advice}"
        )
    return arr


def estimate_delta_params(samples):
    """Sample moments of sqrt(delta_v). All samples must be positive volts."""
    arr = _clean_samples(samples, "delta_v", 0.0, "zero")
    root = np.sqrt(arr)
    mu = float(np.mean(root))
    sigma = float(np.std(root, ddof=1))
    # relative floor: identical inputs leave only mean-subtraction rounding
    if not sigma > mu * 1e-12:
        raise DegenerateStatisticsError("delta_v samples have zero variance")
    return DeltaVDistribution(mu_delta=mu, sigma_delta=sigma)


def estimate_write_params(samples, t0=DEFAULT_T0):
    """Sample moments of sqrt(ln(t/t0)). Samples at or below t0 are rejected."""
    if not t0 > 0.0:
        raise DomainError(f"t0 must be > 0, got {t0}")
    arr = np.asarray(samples, dtype=float).ravel()
    if arr.size < 30:
        raise DegenerateStatisticsError(
            f"write-time estimation needs at least 30 samples, got {arr.size}"
        )
    bad = np.nonzero(~(arr > t0))[0]
    if bad.size:
        i = int(bad[0])
        raise DomainError(
            f"write-time sample {i} = {arr[i]!r} is not above t0 = {t0!r}; "
            "choose a smaller reference t0"
        )
    root = np.sqrt(np.log(arr / t0))
    mu = float(np.mean(root))
    sigma = float(np.std(root, ddof=1))
    if not sigma > mu * 1e-12:
        raise DegenerateStatisticsError("write-time samples have zero variance")
    return WriteTimeDistribution(mu_w=mu, sigma_w=sigma, t0=t0)


# -- densities and failure probabilities -----------------------------------------

def pdf_delta(dist, dv):
    """Single-branch density of delta_v; zero at and below zero volts."""
    scalar = np.ndim(dv) == 0
    dv = np.atleast_1d(np.asarray(dv, dtype=float))
    out = np.zeros(dv.shape)
    pos = dv > 0.0
    r = np.sqrt(dv[pos])
    out[pos] = np.exp(-((r - dist.mu_delta) ** 2) / (2.0 * dist.sigma_delta**2)) / (
        2.0 * dist.sigma_delta * _SQRT_2PI * r
    )
    return float(out[0]) if scalar else out


def pdf_write(dist, t):
    """Single-branch density of the write time; zero at and below t0."""
    scalar = np.ndim(t) == 0
    t = np.atleast_1d(np.asarray(t, dtype=float))
    out = np.zeros(t.shape)
    pos = t > dist.t0
    ratio = t[pos] / dist.t0
    u = np.log(ratio)
    r = np.sqrt(u)
    out[pos] = np.exp(-((r - dist.mu_w) ** 2) / (2.0 * dist.sigma_w**2)) / (
        2.0 * dist.sigma_w * ratio * _SQRT_2PI * r
    ) / dist.t0
    return float(out[0]) if scalar else out


def access_fail_prob_fixed(dist, v_os):
    """P(delta_v < v_os) for a fixed offset; zero branch for v_os <= 0."""
    scalar = np.ndim(v_os) == 0
    v_os = np.atleast_1d(np.asarray(v_os, dtype=float))
    out = np.zeros(v_os.shape)
    pos = v_os > 0.0
    out[pos] = ndtr((np.sqrt(v_os[pos]) - dist.mu_delta) / dist.sigma_delta)
    return float(out[0]) if scalar else out


def access_fail_prob_ber(dist, offset):
    """Bit error rate: offset-weighted integral of the fixed-offset CDF.

    Gauss-Kronrod over [mu_vos - 8 sigma, mu_vos + 8 sigma] at 1e-10 relative
    tolerance; the kink of the zero branch at v = 0 is passed as a split
    point when it lies inside the window.
    """
    lo = offset.mu_vos - 8.0 * offset.sigma_vos
    hi = offset.mu_vos + 8.0 * offset.sigma_vos
    inv = 1.0 / (offset.sigma_vos * _SQRT_2PI)

    def integrand(v):
        w = inv * math.exp(-((v - offset.mu_vos) ** 2) / (2.0 * offset.sigma_vos**2))
        if v <= 0.0:
            return 0.0
        return w * float(ndtr((math.sqrt(v) - dist.mu_delta) / dist.sigma_delta))

    points = [0.0] if lo < 0.0 < hi else None
    result = quad(integrand, lo, hi, epsabs=0.0, epsrel=1e-10, limit=200,
                  points=points, full_output=1)
    if len(result) > 3:
        raise DomainError(
            f"offset quadrature did not converge: achieved abs error {result[1]:.3e} "
            f"({result[3].strip()})"
        )
    return float(result[0])


def write_fail_prob(dist, t_write):
    """P(write time > t_write); everything at or below t0 fails outright."""
    if not t_write > 0.0:
        raise DomainError(f"t_write must be > 0, got {t_write}")
    if t_write <= dist.t0:
        return 1.0
    u = math.sqrt(math.log(t_write / dist.t0))
    return float(ndtr((dist.mu_w - u) / dist.sigma_w))


def delta_quantile(dist, q):
    """Quantile of delta_v; the transform floor clamps at zero volts."""
    q = np.asarray(q, dtype=float)
    root = np.maximum(dist.mu_delta + dist.sigma_delta * ndtri(q), 0.0)
    out = root**2
    return float(out) if out.ndim == 0 else out


def write_quantile(dist, q):
    """Quantile of the write time in seconds."""
    q = np.asarray(q, dtype=float)
    root = np.maximum(dist.mu_w + dist.sigma_w * ndtri(q), 0.0)
    out = dist.t0 * np.exp(root**2)
    return float(out) if out.ndim == 0 else out


def relative_error(pf_ref, pf_hat):
    """|pf_ref - pf_hat| / pf_ref with the reference strictly positive."""
    if not pf_ref > 0.0:
        raise DomainError(f"reference probability must be > 0, got {pf_ref}")
    return abs(pf_ref - pf_hat) / pf_ref


# -- characterization table -------------------------------------------------------

@dataclass(frozen=True)
class AccessCharacterization:
    """Read-time grid with per-point sqrt(delta_v) moments.

    Monotone-cubic interpolation between grid points; queries outside the
    grid raise rather than extrapolate.
    """

    t_read: tuple
    mu_delta: tuple
    sigma_delta: tuple

    def __post_init__(self):
        t = np.asarray(self.t_read, dtype=float)
        mu = np.asarray(self.mu_delta, dtype=float)
        sg = np.asarray(self.sigma_delta, dtype=float)
        if t.size < 1:
            raise DomainError("characterization needs at least 1 grid point")
        if t.size != mu.size or t.size != sg.size:
            raise DomainError("characterization columns must have equal length")
        if np.any(np.diff(t) <= 0.0):
            raise DomainError("t_read grid must be strictly increasing")
        if np.any(~(sg > 0.0)) or np.any(~(mu > 0.0)):
            raise DomainError("characterization moments must be positive")
        object.__setattr__(self, "t_read", tuple(float(v) for v in t))
        object.__setattr__(self, "mu_delta", tuple(float(v) for v in mu))
        object.__setattr__(self, "sigma_delta", tuple(float(v) for v in sg))
        if t.size == 1:
            # Degenerate single-row table: the range check pins queries to the
            # one characterized time, so constant "interpolants" are exact.
            object.__setattr__(self, "_mu_interp", lambda _t, _v=float(mu[0]): _v)
            object.__setattr__(self, "_sigma_interp", lambda _t, _v=float(sg[0]): _v)
        else:
            object.__setattr__(self, "_mu_interp", PchipInterpolator(t, mu, extrapolate=False))
            object.__setattr__(self, "_sigma_interp", PchipInterpolator(t, sg, extrapolate=False))

    def _check_range(self, t):
        lo, hi = self.t_read[0], self.t_read[-1]
        if not lo <= t <= hi:
            raise DomainError(
                f"t_read {t!r} outside the characterized grid [{lo!r}, {hi!r}]"
            )

    def distribution_at(self, t):
        self._check_range(float(t))
        return DeltaVDistribution(
            mu_delta=float(self._mu_interp(t)), sigma_delta=float(self._sigma_interp(t))
        )

    def ber_at(self, t, offset):
        return access_fail_prob_ber(self.distribution_at(t), offset)

    def to_dict(self):
        return {
            "schema": 1,
            "kind": "access_characterization",
            "rows": [
                {"t_read": t, "mu_delta": m, "sigma_delta": s}
                for t, m, s in zip(self.t_read, self.mu_delta, self.sigma_delta)
            ],
        }

    @classmethod
    def from_dict(cls, obj):
        rows = obj["rows"]
        return cls(
            t_read=tuple(float(r["t_read"]) for r in rows),
            mu_delta=tuple(float(r["mu_delta"]) for r in rows),
            sigma_delta=tuple(float(r["sigma_delta"]) for r in rows),
        )


def invert_for_constraint(dist, target_pf, offset=None):
    """Timing constraint whose forward failure probability equals target_pf.

    Write distributions invert in closed form. Access inversion requires the
    characterization table plus an offset distribution and solves the BER
    curve by bracketed root finding on the characterized grid.
    """
    if not 0.0 < target_pf < 1.0:
        raise DomainError(f"target_pf must be in (0, 1), got {target_pf}")
    if isinstance(dist, WriteTimeDistribution):
        root = dist.mu_w + dist.sigma_w * ndtri(1.0 - target_pf)
        if root < 0.0:
            ceiling = float(ndtr(dist.mu_w / dist.sigma_w))
            raise DomainError(
                f"target_pf {target_pf} exceeds the single-branch ceiling {ceiling!r}"
            )
        return dist.t0 * math.exp(root**2)
    if isinstance(dist, AccessCharacterization):
        if offset is None:
            raise DomainError("access inversion requires an offset distribution")
        lo, hi = dist.t_read[0], dist.t_read[-1]
        pf_lo, pf_hi = dist.ber_at(lo, offset), dist.ber_at(hi, offset)
        # BER falls as the read window grows
        if not (min(pf_lo, pf_hi) <= target_pf <= max(pf_lo, pf_hi)):
            raise DomainError(
                f"target_pf {target_pf} outside the achievable range "
                f"[{min(pf_lo, pf_hi):.6e}, {max(pf_lo, pf_hi):.6e}] of the grid"
            )
        if lo == hi:
            return lo
        return float(
            brentq(lambda t: dist.ber_at(t, offset) - target_pf, lo, hi, xtol=1e-18, rtol=1e-12)
        )
    raise DomainError(f"cannot invert a {type(dist).__name__}")


def auto_read_grid(cell, offset, points=12, z_lo=1.6, z_hi=5.2):
    """Geometric t_read grid bracketing the useful BER range.

    Endpoints come from inverting the nominal closed-form discharge at
    offset quantiles mu + z*sigma: the low end sits where the BER is still
    large (around 1e-2) and the high end beyond the 4-sigma target, so
    constraint inversion stays inside the grid.
    """
    from .transients import delta_v_closed

    if points < 2:
        raise DomainError("grid needs at least 2 points")
    nominal = cell.nmos.vth_nominal

    def t_for(dv_target):
        lo, hi = 1e-15, 1e-15
        while delta_v_closed(cell, nominal, hi) < dv_target:
            hi *= 2.0
            if hi > 1.0:
                raise DomainError(f"cannot reach delta_v {dv_target!r} V on this cell")
        # xtol must undercut the picosecond root scale or it dominates rtol
        return brentq(
            lambda t: delta_v_closed(cell, nominal, t) - dv_target,
            lo, hi, xtol=1e-30, rtol=1e-15,
        )

    dv_lo = offset.mu_vos + z_lo * offset.sigma_vos
    dv_hi = offset.mu_vos + z_hi * offset.sigma_vos
    if not 0.0 < dv_lo < dv_hi < cell.vdd:
        raise DomainError(
            f"offset quantile window [{dv_lo!r}, {dv_hi!r}] V does not fit below vdd"
        )
    return np.geomspace(t_for(dv_lo), t_for(dv_hi), points)


# -- Q-Q diagnostics --------------------------------------------------------------

def qq_points(samples, dist, tail=None, tail_fraction=0.01):
    """Model quantiles at plotting positions vs empirical order statistics.

    Returns (points, correlation) where points is an (m, 2) array of
    (theoretical, empirical) pairs at positions (i - 0.5)/n and correlation
    is their Pearson coefficient.  With tail="low" or "high" only the
    extreme tail_fraction of the order statistics is kept; plotting
    positions stay relative to the full sample count so the pairing with
    model quantiles survives the restriction.
    """
    arr = np.sort(np.asarray(samples, dtype=float).ravel())
    n = arr.size
    if n < 100:
        raise DegenerateStatisticsError(f"qq_points needs at least 100 samples, got {n}")
    ranks = np.arange(1, n + 1)
    if tail is not None:
        if not 0.0 < tail_fraction <= 1.0:
            raise DomainError(f"tail_fraction must be in (0, 1], got {tail_fraction}")
        m = max(int(round(n * tail_fraction)), 2)
        if tail == "low":
            keep = slice(0, m)
        elif tail == "high":
            keep = slice(n - m, n)
        else:
            raise DomainError(f"tail must be 'low', 'high' or None, got {tail!r}")
        arr = arr[keep]
        ranks = ranks[keep]
    p = (ranks - 0.5) / n
    if isinstance(dist, DeltaVDistribution):
        theo = delta_quantile(dist, p)
    elif isinstance(dist, WriteTimeDistribution):
        theo = write_quantile(dist, p)
    else:
        raise DomainError(f"qq_points does not support {type(dist).__name__}")
    if np.std(arr) == 0.0 or np.std(theo) == 0.0:
        raise DegenerateStatisticsError("constant samples: correlation undefined")
    corr = float(np.corrcoef(theo, arr)[0, 1])
    return np.column_stack([theo, arr]), corr


def write_qq_csv(points, corr, path):
    with open(path, "w") as fh:
        fh.write("# manifest: manifest.json\n")
        fh.write(f"# pearson_r: {corr!r}\n")
        fh.write("theoretical,empirical\n")
        for theo, emp in points:
            fh.write(f"{float(theo)!r},{float(emp)!r}\n")


# -- JSON round trip ---------------------------------------------------------------

_KINDS = {
    "access_delta": DeltaVDistribution,
    "write_time": WriteTimeDistribution,
    "offset": OffsetVoltageDist,
    "access_characterization": AccessCharacterization,
}


def write_distribution_json(obj, path):
    with open(path, "w") as fh:
        json.dump(obj.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_distribution_json(path):
    try:
        with open(path) as fh:
            obj = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ParseError(f"cannot read distribution JSON {path}: {exc}") from exc
    kind = obj.get("kind")
    if kind not in _KINDS:
        raise ParseError(f"unknown distribution kind {kind!r} in {path}")
    return _KINDS[kind].from_dict(obj)
