"""Monte Carlo eigenvalue statistics and exponent fits.

Covers probabilities of low ground energies in finite boxes, expected
eigenvalue counts in small windows, finite-volume integrated densities of
states, and the power-law fits used to read exponents off them.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .configurations import DistributionSpec, sample_config
from .finite_volume import assemble_finite_volume
from .grid import count_eigenvalues_below, count_eigenvalues_in_interval, lowest_eigenpairs
from .parallel import parallel_map
from .potentials import SingleSitePotential

Z95 = 1.959963984540054


def wilson_interval(k, n, z: float = Z95) -> tuple[np.ndarray, np.ndarray]:
    """Wilson score interval for k successes in n trials (vectorized)."""
    k = np.asarray(k, dtype=float)
    n = np.asarray(n, dtype=float)
    if np.any(n <= 0) or np.any(k < 0) or np.any(k > n):
        raise ValueError("need 0 <= k <= n and n > 0")
    p = k / n
    denom = 1 + z * z / n
    centre = (p + z * z / (2 * n)) / denom
    half = z * np.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / denom
    # the end points are exact at k = 0 and k = n; rounding would leave them a hair off
    lo = np.where(k == 0, 0.0, np.clip(centre - half, 0.0, 1.0))
    hi = np.where(k == n, 1.0, np.clip(centre + half, 0.0, 1.0))
    return lo, hi


def zero_count_upper_bound(n, level: float = 0.95) -> np.ndarray:
    """Exact one-sided upper bound on p after observing 0 successes in n trials."""
    return 1.0 - (1.0 - level) ** (1.0 / np.asarray(n, dtype=float))


@dataclass(frozen=True)
class LineFit:
    slope: float
    intercept: float
    slope_stderr: float
    residuals: tuple[float, ...]

    def slope_upper(self, z: float = Z95) -> float:
        return self.slope + z * self.slope_stderr

    def slope_lower(self, z: float = Z95) -> float:
        return self.slope - z * self.slope_stderr


def weighted_line_fit(x, y, variances=None) -> LineFit:
    """Least squares y ~ a + b x.

    With ``variances`` the weights are their inverses; the covariance is
    scaled up by chi^2/dof when the scatter exceeds what the variances
    predict.  Without, the error is the usual residual-based one.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size < 2:
        raise ValueError("need at least two points")
    X = np.column_stack([np.ones_like(x), x])
    if variances is None:
        coef, *_ = np.linalg.lstsq(X, y, rcond=None)
        res = y - X @ coef
        dof = x.size - 2
        s2 = float(res @ res) / dof if dof > 0 else 0.0
        cov = s2 * np.linalg.inv(X.T @ X)
    else:
        w = 1.0 / np.asarray(variances, dtype=float)
        XtW = X.T * w
        cov = np.linalg.inv(XtW @ X)
        coef = cov @ (XtW @ y)
        res = y - X @ coef
        cov = cov * _inflation(res, w, 2)
    return LineFit(float(coef[1]), float(coef[0]), float(np.sqrt(cov[1, 1])), tuple(float(r) for r in res))


def _inflation(res: np.ndarray, w: np.ndarray, params: int) -> float:
    dof = res.size - params
    if dof <= 0:
        return 1.0
    return max(1.0, float(np.sum(w * res * res)) / dof)


@dataclass(frozen=True)
class MultiFit:
    coefficients: tuple[float, ...]
    stderrs: tuple[float, ...]
    residuals: tuple[float, ...]


def weighted_multi_fit(X, y, variances) -> MultiFit:
    X = np.asarray(X, dtype=float)
    w = 1.0 / np.asarray(variances, dtype=float)
    XtW = X.T * w
    cov = np.linalg.inv(XtW @ X)
    coef = cov @ (XtW @ np.asarray(y, dtype=float))
    res = np.asarray(y) - X @ coef
    cov = cov * _inflation(res, w, X.shape[1])
    return MultiFit(tuple(map(float, coef)), tuple(map(float, np.sqrt(np.diag(cov)))), tuple(map(float, res)))


@dataclass(frozen=True, eq=False)
class CurveEstimate:
    """Estimates along an abscissa with 95% intervals and optional fit results.

    ``lower``/``upper`` bound the interval; ``half_widths`` is their half
    distance.  For zero-count probability cells the estimate is NaN and
    ``upper`` holds the one-sided bound.
    """

    abscissae: np.ndarray
    estimates: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    trials: np.ndarray
    counts: np.ndarray | None = None
    fit: dict = field(default_factory=dict)
    notes: tuple[str, ...] = ()

    @property
    def half_widths(self) -> np.ndarray:
        return 0.5 * (self.upper - self.lower)

    def rows(self) -> list[dict]:
        out = []
        for i, x in enumerate(self.abscissae):
            row = {"x": x, "estimate": self.estimates[i], "lower": self.lower[i], "upper": self.upper[i],
                   "trials": int(self.trials[i])}
            if self.counts is not None:
                row["count"] = self.counts[i]
            out.append(row)
        return out


def _mean_stderr(counts: np.ndarray) -> np.ndarray:
    """Standard error of per-column means of integer counts, floored at 1/trials.

    Identical counts in every trial give a zero sample variance; the floor
    (one count's worth of resolution) keeps intervals and fit weights finite.
    """
    trials = counts.shape[0]
    sd = counts.std(axis=0, ddof=1) if trials > 1 else np.zeros(counts.shape[1:])
    return np.maximum(sd / np.sqrt(trials), 1.0 / trials)


# ------------------------------------------------------------ Lifshitz curve

def _lowest_energy(args) -> float:
    q, dist, L, n, seed, trial, mode = args
    fld = sample_config(dist, L, seed, q.dim, q.d_max, trial)
    return lowest_eigenpairs(assemble_finite_volume(q, fld, n, mode), k=1).ground_energy


def box_ground_energies(
    q: SingleSitePotential, dist: DistributionSpec, L: int, n: int, trials: int, seed: int,
    mode: str = "cell", workers: int = 1,
) -> np.ndarray:
    jobs = [(q, dist, L, n, seed, t, mode) for t in range(trials)]
    return np.array(parallel_map(_lowest_energy, jobs, workers))


def monotone_within_intervals(lower: np.ndarray, upper: np.ndarray) -> bool:
    """No later interval lies entirely above an earlier one."""
    return all(lower[j] <= upper[i] for i in range(len(lower)) for j in range(i + 1, len(lower)))


def lifshitz_curve_from_energies(
    energies: dict[int, np.ndarray], E0: float, C1: float, d: int
) -> CurveEstimate:
    """Probability that the box ground energy lies below E0 + C1/L^2, per L.

    The slope of log P against L is fitted with Haldane-smoothed
    proportions (k + 1/2)/(n + 1) so that empty cells still contribute;
    the weights come from the delta-method variance of the log.
    """
    Ls = np.array(sorted(energies), dtype=float)
    ks = np.array([np.sum(energies[int(L)] < E0 + C1 / L**2) for L in Ls], dtype=float)
    ns = np.array([len(energies[int(L)]) for L in Ls], dtype=float)
    lo, hi = wilson_interval(ks, ns)
    est = np.where(ks > 0, ks / ns, np.nan)
    hi = np.where(ks > 0, hi, zero_count_upper_bound(ns))
    notes = []
    if d < 2:
        notes.append("d < 2: outside the regime where the probability bound is established")
    if np.any(ks == 0):
        notes.append("zero-count cells report the one-sided 95% upper bound")
    smoothed = (ks + 0.5) / (ns + 1.0)
    var = 1.0 / (ks + 0.5) - 1.0 / (ns + 1.0)
    fit = weighted_line_fit(Ls, np.log(smoothed), var)
    corrected = np.log(smoothed) + d * np.log(Ls)
    fit_info = {
        "slope": fit.slope,
        "slope_stderr": fit.slope_stderr,
        "slope_upper95": fit.slope_upper(),
        "slope_negative": bool(fit.slope_upper() < 0),
        "residuals": list(fit.residuals),
        "monotone": monotone_within_intervals(lo, hi),
        "volume_corrected_decreasing": bool(np.all(np.diff(corrected) <= 0)),
        "C1": C1,
        "E0": E0,
    }
    return CurveEstimate(Ls, est, lo, hi, ns, ks, fit_info, tuple(notes))


def lifshitz_probability_curve(
    q: SingleSitePotential,
    dist: DistributionSpec,
    L_list,
    C1: float,
    trials: int,
    n: int,
    E0: float,
    seed: int,
    mode: str = "cell",
    workers: int = 1,
) -> CurveEstimate:
    energies = {int(L): box_ground_energies(q, dist, int(L), n, trials, seed, mode, workers) for L in L_list}
    return lifshitz_curve_from_energies(energies, E0, C1, q.dim)


# --------------------------------------------------------------- Wegner table

def _window_counts(args) -> np.ndarray:
    q, dist, L, n, seed, trial, mode, E_center, eps = args
    fld = sample_config(dist, L, seed, q.dim, q.d_max, trial)
    op = assemble_finite_volume(q, fld, n, mode)
    return np.array([count_eigenvalues_in_interval(op, E_center - e, E_center + e) for e in eps])


def wegner_table_from_counts(counts: dict[int, np.ndarray], eps_list, d: int) -> CurveEstimate:
    """Regress log E[count] on log(2 eps) and log(2L + 1).

    ``counts[L]`` has shape (trials, len(eps_list)).  Cells whose mean count
    is zero are dropped from the regression.
    """
    eps = np.asarray(eps_list, dtype=float)
    Ls = sorted(counts)
    xs, ys, vs, rows_x, means, lows, highs, ntr = [], [], [], [], [], [], [], []
    notes = []
    for L in Ls:
        c = np.asarray(counts[L], dtype=float)
        m = c.mean(axis=0)
        se = _mean_stderr(c)
        for j, e in enumerate(eps):
            rows_x.append((L, e))
            means.append(m[j])
            lows.append(m[j] - Z95 * se[j])
            highs.append(m[j] + Z95 * se[j])
            ntr.append(c.shape[0])
            if m[j] <= 0:
                notes.append(f"L={L}, eps={e:g}: zero mean count, excluded from the regression")
                continue
            # delta-method variance of the log mean, floored for constant counts
            var = se[j] ** 2 / m[j] ** 2
            xs.append([1.0, np.log(2 * e), np.log(2 * L + 1)])
            ys.append(np.log(m[j]))
            vs.append(var)
    fit_info: dict = {}
    if len(ys) >= 3:
        mf = weighted_multi_fit(np.array(xs), np.array(ys), np.array(vs))
        fit_info = {
            "alpha": mf.coefficients[1],
            "alpha_stderr": mf.stderrs[1],
            "volume_exponent": mf.coefficients[2],
            "volume_exponent_stderr": mf.stderrs[2],
            "residuals": list(mf.residuals),
            "alpha_ok": bool(mf.coefficients[1] >= 0.8),
            "volume_ok": bool(abs(mf.coefficients[2] - d) <= 0.3),
        }
    else:
        notes.append("fewer than three nonzero cells: regression inconclusive")
    ab = np.array(rows_x, dtype=float)
    return CurveEstimate(ab, np.array(means), np.array(lows), np.array(highs), np.array(ntr), None,
                         fit_info, tuple(notes))


def wegner_count_table(
    q: SingleSitePotential,
    dist: DistributionSpec,
    E_center: float,
    eps_list,
    L_list,
    trials: int,
    n: int,
    seed: int,
    mode: str = "cell",
    workers: int = 1,
) -> CurveEstimate:
    counts = {}
    for L in L_list:
        jobs = [(q, dist, int(L), n, seed, t, mode, E_center, tuple(eps_list)) for t in range(trials)]
        counts[int(L)] = np.array(parallel_map(_window_counts, jobs, workers))
    return wegner_table_from_counts(counts, eps_list, q.dim)


# ------------------------------------------------------------------ IDS

def _ids_counts(args) -> np.ndarray:
    q, dist, L, n, seed, trial, mode, E_grid, closure = args
    fld = sample_config(dist, L, seed, q.dim, q.d_max, trial)
    op = assemble_finite_volume(q, fld, n, mode, closure=closure)
    return count_eigenvalues_below(op, np.asarray(E_grid))


def ids_curve(
    q: SingleSitePotential,
    dist: DistributionSpec,
    E_grid,
    L: int,
    trials: int,
    n: int,
    seed: int,
    closure: str = "neumann",
    mode: str = "cell",
    workers: int = 1,
) -> CurveEstimate:
    """Mean eigenvalue count at or below each energy per unit volume."""
    E_grid = np.asarray(E_grid, dtype=float)
    if np.any(np.diff(E_grid) <= 0):
        raise ValueError("E_grid must be strictly increasing")
    jobs = [(q, dist, L, n, seed, t, mode, E_grid, closure) for t in range(trials)]
    counts = np.array(parallel_map(_ids_counts, jobs, workers), dtype=float)
    vol = float((2 * L + 1) ** q.dim)
    mean = counts.mean(axis=0) / vol
    se = _mean_stderr(counts) / vol
    return CurveEstimate(E_grid, mean, mean - Z95 * se, mean + Z95 * se, np.full(len(E_grid), trials),
                         counts.sum(axis=0), {"closure": closure, "volume": vol})


# ------------------------------------------------------------ exponent fits

@dataclass(frozen=True)
class ExponentFit:
    exponent: float
    stderr: float
    window: tuple[float, float]
    points: int
    residuals: tuple[float, ...]
    conclusive: bool = True

    def to_dict(self) -> dict:
        return {"exponent": self.exponent, "stderr": self.stderr, "window": list(self.window),
                "points": self.points, "residuals": list(self.residuals), "conclusive": self.conclusive}


def select_window(x: np.ndarray, y: np.ndarray, min_points: int = 5, tol: float = 0.03) -> tuple[int, int]:
    """Knee detection: the longest run of consecutive points that a line fits.

    Windows are grown from each start; a window is accepted while the RMS
    residual stays below ``tol``.  Among the longest windows the lowest
    starting abscissa wins, since the asymptotics live at the low end.
    """
    m = len(x)
    if m < min_points:
        return 0, m
    best = (0, min(min_points, m))
    best_len = 0
    for i in range(m - min_points + 1):
        j = i + min_points
        if _rms(x[i:j], y[i:j]) > tol:
            continue
        while j < m and _rms(x[i : j + 1], y[i : j + 1]) <= tol:
            j += 1
        if j - i > best_len:
            best, best_len = (i, j), j - i
    return best


def _rms(x, y) -> float:
    coef = np.polyfit(x, y, 1)
    res = y - np.polyval(coef, x)
    return float(np.sqrt(np.mean(res * res)))


def _fit_loglog(x, y, min_points, tol) -> ExponentFit:
    order = np.argsort(x)
    x, y = x[order], y[order]
    if len(x) < 2:
        return ExponentFit(float("nan"), float("nan"), (float("nan"), float("nan")), int(len(x)), (), False)
    i, j = select_window(x, y, min_points, tol)
    fit = weighted_line_fit(x[i:j], y[i:j])
    return ExponentFit(fit.slope, fit.slope_stderr, (float(np.exp(x[i])), float(np.exp(x[j - 1]))),
                       j - i, fit.residuals, j - i >= min_points)


def lifshitz_exponent_fit(
    energies, ids, E0: float, min_points: int = 5, tol: float = 0.03
) -> ExponentFit:
    """Slope of log|log N(E)| against log(E - E0) over the detected window.

    Only points with E > E0 and 0 < N < 1 enter.  The window bounds are
    reported as E - E0 values.
    """
    E = np.asarray(energies, dtype=float)
    N = np.asarray(ids, dtype=float)
    keep = (E > E0) & (N > 0) & (N < 1)
    return _fit_loglog(np.log(E[keep] - E0), np.log(np.abs(np.log(N[keep]))), min_points, tol)


def vanhove_exponent_fit(
    energies, ids, E0: float = 0.0, min_points: int = 5, tol: float = 0.03, min_value: float = 0.0
) -> ExponentFit:
    """Slope of log N(E) against log(E - E0) over the detected window.

    ``min_value`` drops points whose IDS is too small to be resolved,
    typically a few eigenvalues per sample.
    """
    E = np.asarray(energies, dtype=float)
    N = np.asarray(ids, dtype=float)
    keep = (E > E0) & (N > max(min_value, 0.0))
    return _fit_loglog(np.log(E[keep] - E0), np.log(N[keep]), min_points, tol)

