"""Post-run diagnostics: innovation whiteness, NIS/NEES, errors against truth."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .error_model import k_left_error
from .logio import INNOVATION_COLUMNS, NavLog


def autocorrelation(x, max_lag: int) -> np.ndarray:
    """Normalized sample autocorrelation ``rho(0..max_lag)``; ``rho(0) == 1``.

    Uses the biased estimator (division by ``N`` at every lag), whose
    magnitude is bounded by 1.
    """
    x = np.asarray(x, dtype=float).ravel()
    n = x.size
    if n < 2:
        raise ValueError("need at least two samples")
    d = x - x.mean()
    c0 = float(d @ d)
    lags = min(int(max_lag), n - 1)
    out = np.empty(lags + 1)
    out[0] = 1.0
    if c0 == 0.0:
        out[1:] = 0.0
        return out
    for k in range(1, lags + 1):
        out[k] = float(d[:-k] @ d[k:]) / c0
    return out


def whiteness_fraction(rho, n: int) -> float:
    """Share of lags >= 1 with ``|rho| < 3 / sqrt(n)``."""
    rho = np.asarray(rho)[1:]
    if rho.size == 0:
        return 1.0
    return float(np.mean(np.abs(rho) < 3.0 / math.sqrt(n)))


def left_errors(states, truth_rows) -> np.ndarray:
    """``dx_L`` rows of truth ``[q, v, p, bw, bf]`` relative to estimates."""
    states = np.asarray(states, float)
    truth_rows = np.asarray(truth_rows, float)
    out = np.empty((states.shape[0], 15))
    for i, (x, y) in enumerate(zip(states, truth_rows)):
        out[i] = k_left_error(x[0:4], x[4:7], x[7:10], x[10:13], x[13:16],
                              y[0:4], y[4:7], y[7:10], y[10:13], y[13:16])
    return out


def nees(dx, P) -> np.ndarray:
    """``dx^T P^-1 dx`` per row; ``P`` is (N, 15, 15) or (N, 15) diagonals."""
    dx = np.asarray(dx, float)
    P = np.asarray(P, float)
    if P.ndim == 2:
        return np.sum(dx * dx / P, axis=1)
    return np.einsum("ni,ni->n", dx, np.linalg.solve(P, dx[..., None])[..., 0])


def match_rows(t_nav, t_truth, tol=1e-6):
    """Indices into truth for each nav time; raises if any time is missing."""
    idx = np.searchsorted(t_truth, t_nav)
    idx = np.clip(idx, 0, len(t_truth) - 1)
    prev = np.clip(idx - 1, 0, len(t_truth) - 1)
    pick = np.where(np.abs(t_truth[prev] - t_nav) < np.abs(t_truth[idx] - t_nav), prev, idx)
    if np.any(np.abs(t_truth[pick] - t_nav) > tol):
        raise ValueError("truth log does not cover the navigation time stamps")
    return pick


@dataclass
class AnalysisReport:
    """Diagnostics of one fused run, serializable with :meth:`to_dict`.

    ``autocorrelation`` maps each innovation channel to ``rho(0..max_lag)``.
    Truth-dependent sections are ``None`` without a truth log.
    """

    n_fixes: int
    max_lag: int
    autocorrelation: dict
    whiteness: dict
    nis_t: list
    nis: list
    nis_mean: float
    final_bias_w: list
    final_bias_w_sigma: list
    final_bias_f: list
    final_bias_f_sigma: list
    nees_t: list | None = None
    nees: list | None = None
    nees_mean: float | None = None
    errors: dict | None = field(default=None)

    def to_dict(self) -> dict:
        return asdict(self)


def _clean(x):
    return [None if not math.isfinite(v) else float(v) for v in np.asarray(x, float).ravel()]


def analyze(nav: NavLog, truth=None, max_lag: int = 50) -> AnalysisReport:
    """Build an :class:`AnalysisReport` from a nav log and optional truth rows.

    ``truth`` is the ``(N, 17)`` table ``[t, q, v, p, bw, bf]``. NEES here uses
    the covariance diagonal written to the log, so it ignores correlations.
    """
    rows = nav.fix_rows
    n = int(rows.size)
    ac, white = {}, {}
    for i, name in enumerate(INNOVATION_COLUMNS):
        if n >= 2:
            rho = autocorrelation(nav.dy[rows, i], max_lag)
            ac[name] = _clean(rho)
            white[name] = whiteness_fraction(rho, n)
        else:
            ac[name] = []
            white[name] = None
    nis = nav.nis[rows]
    last = nav.states[-1]
    sig = np.sqrt(np.maximum(nav.pdiag[-1], 0.0))
    rep = AnalysisReport(
        n_fixes=n, max_lag=int(max_lag), autocorrelation=ac, whiteness=white,
        nis_t=_clean(nav.t[rows]), nis=_clean(nis),
        nis_mean=float(np.mean(nis)) if n else None,
        final_bias_w=_clean(last[10:13]), final_bias_w_sigma=_clean(sig[9:12]),
        final_bias_f=_clean(last[13:16]), final_bias_f_sigma=_clean(sig[12:15]),
    )
    if truth is not None:
        truth = np.asarray(truth, float)
        pick = match_rows(nav.t, truth[:, 0])
        tr = truth[pick, 1:]
        dx = left_errors(nav.states, tr)
        e = nees(dx, nav.pdiag)
        dp = np.linalg.norm(nav.states[:, 7:10] - tr[:, 7:10], axis=1)
        dv = np.linalg.norm(nav.states[:, 4:7] - tr[:, 4:7], axis=1)
        att = np.linalg.norm(dx[:, 0:3], axis=1)
        rep.nees_t = _clean(nav.t)
        rep.nees = _clean(e)
        rep.nees_mean = float(np.mean(e))
        rep.errors = {
            "position_rmse": float(np.sqrt(np.mean(dp**2))),
            "position_max": float(dp.max()),
            "velocity_rmse": float(np.sqrt(np.mean(dv**2))),
            "attitude_rmse": float(np.sqrt(np.mean(att**2))),
            "final_position_error": float(dp[-1]),
            "final_bias_w_error": _clean(last[10:13] - tr[-1, 10:13]),
            "final_bias_f_error": _clean(last[13:16] - tr[-1, 13:16]),
        }
    return rep
