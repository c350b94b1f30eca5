"""
Efficiency and equity measures, demand curves and multi-seed aggregation.
"""
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

SERVED = 'served'
CANCELLED = 'cancelled'
RESIDUAL = 'residual'

CURVE_COLUMNS = ['bin_start_min', 'customer_count', 'charging_count']

MINUTES_PER_DAY = 1440.0

METRIC_COLUMNS = ['fill_rate', 'unsatisfied_rate', 'avg_wait', 'gini', 'driver_gini']


@dataclass
class RunMetrics:
    fill_rate: float
    unsatisfied_rate: float
    avg_wait: float
    gini: float
    driver_gini: float = 0.0
    total_requests: int = 0
    served: int = 0
    cancelled: int = 0
    residual: int = 0
    charge_sessions: int = 0
    peak_lag_min: Optional[float] = None
    extra: Dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        extra = data.pop('extra')
        data.update(extra)
        return data


def gini(incomes: Sequence[float]) -> float:
    """Gini coefficient of non-negative incomes.

    Args:
        incomes: Per-taxi (or per-driver) incomes

    Returns:
        Value in [0, 1]; 0 when every income is zero

    Raises:
        ValueError: on an empty list or a negative income
    """
    x = np.sort(np.asarray(incomes, dtype=float))
    if x.size == 0:
        raise ValueError("gini of an empty income list")
    if x[0] < 0:
        raise ValueError("incomes must be non-negative")
    total = x.sum()
    if total == 0:
        return 0.0
    n = x.size
    index = np.arange(1, n + 1)
    return float(2.0 * (index * x).sum() / (n * total) - (n + 1) / n)


def gini_bruteforce(incomes: Sequence[float]) -> float:
    """Mean absolute difference over all ordered pairs; O(n^2)."""
    x = np.asarray(incomes, dtype=float)
    if x.size == 0:
        raise ValueError("gini of an empty income list")
    mean = x.mean()
    if mean == 0:
        return 0.0
    return float(np.abs(x[:, None] - x[None, :]).sum() / (2 * x.size ** 2 * mean))


def lorenz(incomes: Sequence[float]) -> pd.DataFrame:
    """Lorenz curve points, starting at (0, 0)."""
    x = np.sort(np.asarray(incomes, dtype=float))
    total = x.sum()
    shares = np.cumsum(x) / total if total > 0 else np.linspace(0, 1, x.size + 1)[1:]
    return pd.DataFrame({
        'population_share': np.linspace(0.0, 1.0, x.size + 1),
        'income_share': np.insert(shares, 0, 0.0),
    })


def fill_and_wait(ledger: pd.DataFrame) -> Tuple[float, float]:
    """Fill rate and mean wait (minutes) of served trips.

    Args:
        ledger: One row per trip with ``status`` and ``wait_min`` columns

    Returns:
        ``(fill_rate, avg_wait)``; ``(1.0, 0.0)`` for an empty ledger
    """
    if len(ledger) == 0:
        return 1.0, 0.0
    served = ledger['status'] == SERVED
    fill_rate = float(served.sum()) / len(ledger)
    avg_wait = float(ledger.loc[served, 'wait_min'].mean()) if served.any() else 0.0
    return fill_rate, avg_wait


def demand_curves(request_minutes: Iterable[float], charge_minutes: Iterable[float],
                  bin_minutes: float = 15.0, horizon_min: Optional[float] = None) -> pd.DataFrame:
    """Customer and charging demand counted in aligned time bins.

    Args:
        request_minutes: Request times in minutes from the window start
        charge_minutes: Station arrival times in minutes from the window start
        bin_minutes: Bin width
        horizon_min: Minimum span the bins must cover

    Returns:
        DataFrame with ``bin_start_min``, ``customer_count`` and ``charging_count``
    """
    if bin_minutes <= 0:
        raise ValueError("bin_minutes must be positive")
    requests = np.floor(np.asarray(list(request_minutes), dtype=float) / bin_minutes).astype(int)
    charges = np.floor(np.asarray(list(charge_minutes), dtype=float) / bin_minutes).astype(int)
    n_bins = max(
        int(np.ceil(horizon_min / bin_minutes)) if horizon_min else 0,
        int(requests.max()) + 1 if requests.size else 0,
        int(charges.max()) + 1 if charges.size else 0,
    )
    return pd.DataFrame({
        'bin_start_min': np.arange(n_bins) * bin_minutes,
        'customer_count': np.bincount(requests, minlength=n_bins)[:n_bins],
        'charging_count': np.bincount(charges, minlength=n_bins)[:n_bins],
    })


def smooth(values: Sequence[float], window: int = 3, circular: bool = False) -> np.ndarray:
    """Centered moving average; edge bins average over the bins available.

    With ``circular`` the series wraps around, as for a time-of-day profile.
    """
    data = np.asarray(values, dtype=float)
    window = max(1, window)
    pad = min(window // 2, len(data)) if circular else 0
    if pad:
        data = np.concatenate([data[-pad:], data, data[:pad]])
    series = pd.Series(data)
    smoothed = series.rolling(window=window, center=True, min_periods=1).mean().to_numpy()
    return smoothed[pad:len(smoothed) - pad] if pad else smoothed


def fold_daily(curves: pd.DataFrame) -> pd.DataFrame:
    """Sum demand curves onto time of day (bin index modulo one day).

    Curves spanning at most one day are returned unchanged.
    """
    if len(curves) < 2:
        return curves
    bin_width = float(curves['bin_start_min'].iloc[1] - curves['bin_start_min'].iloc[0])
    per_day = max(1, int(round(MINUTES_PER_DAY / bin_width)))
    if len(curves) <= per_day:
        return curves
    slot = np.arange(len(curves)) % per_day
    folded = (curves[['customer_count', 'charging_count']]
              .groupby(slot).sum()
              .reindex(range(per_day), fill_value=0))
    folded.insert(0, 'bin_start_min', np.arange(per_day) * bin_width)
    return folded.reset_index(drop=True)


def peak_lag(curves: pd.DataFrame, window: int = 3) -> Optional[float]:
    """Minutes by which the daily charging peak trails the daily customer peak.

    Multi-day curves are folded onto time of day first, and the lag wraps to
    within half a day.

    Returns:
        Lag in minutes, or None when either curve is constant
    """
    if len(curves) < 2:
        return None
    if np.ptp(curves['customer_count'].to_numpy(dtype=float)) == 0 or \
            np.ptp(curves['charging_count'].to_numpy(dtype=float)) == 0:
        return None
    bin_width = float(curves['bin_start_min'].iloc[1] - curves['bin_start_min'].iloc[0])
    daily = fold_daily(curves)
    circular = len(daily) < len(curves)
    customer = smooth(daily['customer_count'].to_numpy(dtype=float), window, circular)
    charging = smooth(daily['charging_count'].to_numpy(dtype=float), window, circular)
    lag_bins = int(np.argmax(charging)) - int(np.argmax(customer))
    if circular:
        n = len(daily)
        lag_bins = (lag_bins + n // 2) % n - n // 2
    return lag_bins * bin_width


def _local_extrema(values: np.ndarray, half_width: int, maxima: bool) -> List[int]:
    series = pd.Series(values)
    span = 2 * half_width + 1
    rolled = series.rolling(span, center=True, min_periods=1)
    target = rolled.max() if maxima else rolled.min()
    mean = values.mean()
    found = []
    for i, v in enumerate(values):
        if v != target.iloc[i]:
            continue
        if (maxima and v <= mean) or (not maxima and v >= mean):
            continue
        # plateaus count once, at their first bin
        if found and found[-1] == i - 1 and values[i - 1] == v:
            continue
        found.append(i)
    return found


def peak_valley_alignment(curves: pd.DataFrame, tolerance_bins: int = 2, window: int = 3,
                          half_width: int = 4) -> List[Dict[str, Any]]:
    """Pair each customer-demand peak with the nearest charging-demand valley.

    Args:
        curves: Output of :func:`demand_curves`
        tolerance_bins: Largest peak-to-valley distance counted as aligned
        window: Smoothing window in bins
        half_width: Bins on each side a peak or valley must dominate

    Returns:
        One dict per customer peak with ``peak_bin``, ``valley_bin`` and ``aligned``
    """
    customer = smooth(curves['customer_count'].to_numpy(dtype=float), window)
    charging = smooth(curves['charging_count'].to_numpy(dtype=float), window)
    peaks = _local_extrema(customer, half_width, maxima=True)
    valleys = _local_extrema(charging, half_width, maxima=False)
    result = []
    for peak in peaks:
        valley = min(valleys, key=lambda v: (abs(v - peak), v)) if valleys else None
        result.append({
            'peak_bin': peak,
            'valley_bin': valley,
            'aligned': valley is not None and abs(valley - peak) <= tolerance_bins,
        })
    return result


def aggregate_seeds(rows: pd.DataFrame, group_by: Sequence[str],
                    metrics: Sequence[str] = METRIC_COLUMNS) -> pd.DataFrame:
    """Mean, sample standard deviation and standard error per group.

    Args:
        rows: One row per run
        group_by: Axis columns identifying a cell
        metrics: Metric columns to aggregate

    Returns:
        One row per cell with ``<metric>_mean``, ``<metric>_std``, ``<metric>_sem`` and ``n_seeds``
    """
    present = [m for m in metrics if m in rows.columns]
    grouped = rows.groupby(list(group_by), sort=True, dropna=False)
    out = grouped.size().rename('n_seeds').to_frame()
    for metric in present:
        values = grouped[metric]
        out[f'{metric}_mean'] = values.mean()
        out[f'{metric}_std'] = values.std(ddof=1).fillna(0.0)
        out[f'{metric}_sem'] = out[f'{metric}_std'] / np.sqrt(out['n_seeds'])
    return out.reset_index()


def compute_metrics(ledger: pd.DataFrame, incomes: Sequence[float], driver_incomes: Sequence[float],
                    curves: pd.DataFrame, charge_sessions: int, smoothing_window: int = 3) -> RunMetrics:
    """Summarize one run."""
    fill_rate, avg_wait = fill_and_wait(ledger)
    counts = ledger['status'].value_counts() if len(ledger) else pd.Series(dtype=int)
    return RunMetrics(
        fill_rate=fill_rate,
        unsatisfied_rate=1.0 - fill_rate,
        avg_wait=avg_wait,
        gini=gini(incomes) if len(incomes) else 0.0,
        driver_gini=gini(driver_incomes) if len(driver_incomes) else 0.0,
        total_requests=int(len(ledger)),
        served=int(counts.get(SERVED, 0)),
        cancelled=int(counts.get(CANCELLED, 0)),
        residual=int(counts.get(RESIDUAL, 0)),
        charge_sessions=int(charge_sessions),
        peak_lag_min=peak_lag(curves, smoothing_window),
    )
