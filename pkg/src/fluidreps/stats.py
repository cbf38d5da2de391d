"""One-sample, one-tailed t-tests over per-naming accuracy deltas."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Mapping, Sequence

_EPS = 1e-15
_TINY = 1e-300
_MAX_ITER = 500


class TooFewSamples(ValueError):
    pass


class ZeroVariance(ValueError):
    pass


class KeyMismatch(KeyError):
    pass


def _betacf(a: float, b: float, x: float) -> float:
    """Continued fraction for the incomplete beta function (modified Lentz)."""
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c, d = 1.0, 1.0 - qab * x / qap
    if abs(d) < _TINY:
        d = _TINY
    d = 1.0 / d
    h = d
    for m in range(1, _MAX_ITER + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = _TINY if abs(d) < _TINY else d
        c = 1.0 + aa / c
        c = _TINY if abs(c) < _TINY else c
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = _TINY if abs(d) < _TINY else d
        c = 1.0 + aa / c
        c = _TINY if abs(c) < _TINY else c
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            return h
    raise ArithmeticError(f"incomplete beta continued fraction did not converge (a={a}, b={b}, x={x})")


def betainc(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta I_x(a, b)."""
    if a <= 0 or b <= 0:
        raise ValueError("a and b must be positive")
    if not 0.0 <= x <= 1.0:
        raise ValueError("x must lie in [0, 1]")
    if x == 0.0 or x == 1.0:
        return x
    log_front = math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b) + a * math.log(x) + b * math.log1p(-x)
    front = math.exp(log_front)
    # the continued fraction converges fast for x < (a+1)/(a+b+2); use symmetry otherwise
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def t_cdf(df: float, t: float) -> float:
    """CDF of Student's t with ``df`` degrees of freedom."""
    if df <= 0:
        raise ValueError("df must be positive")
    if math.isinf(t):
        return 1.0 if t > 0 else 0.0
    if t == 0:
        return 0.5
    x = df / (df + t * t)
    tail = 0.5 * betainc(df / 2.0, 0.5, x)
    return 1.0 - tail if t > 0 else tail


def t_sf(df: float, t: float) -> float:
    """Upper tail 1 - CDF, computed without cancellation."""
    return t_cdf(df, -t)


@dataclass(frozen=True)
class DeltaSample:
    values: tuple[float, ...]
    labels: tuple = ()

    def __post_init__(self):
        vals = tuple(float(v) for v in self.values)
        if len(vals) < 2:
            raise TooFewSamples(f"need at least 2 deltas, got {len(vals)}")
        if not all(math.isfinite(v) for v in vals):
            raise ValueError("deltas must be finite")
        object.__setattr__(self, "values", vals)

    @property
    def n(self) -> int:
        return len(self.values)


@dataclass(frozen=True)
class TestResult:
    __test__ = False  # not a pytest class

    mean: float
    se: float
    t: float
    p: float
    df: int

    @property
    def stars(self) -> str:
        return significance(self.p)


def significance(p: float) -> str:
    if p < 0.001:
        return "***"
    if p < 0.01:
        return "**"
    if p < 0.05:
        return "*"
    return "ns"


def t_test_from_summary(mean: float, se: float, df: int) -> TestResult:
    """One-tailed test of ``mean > 0`` given the mean and its standard error."""
    if se <= 0:
        raise ZeroVariance("standard error must be positive")
    t = mean / se
    return TestResult(mean, se, t, t_sf(df, t), df)


def one_sample_t(sample: DeltaSample | Sequence[float]) -> TestResult:
    if not isinstance(sample, DeltaSample):
        sample = DeltaSample(tuple(sample))
    vals, n = sample.values, sample.n
    mean = math.fsum(vals) / n
    var = math.fsum((v - mean) ** 2 for v in vals) / (n - 1)
    if var == 0 or min(vals) == max(vals):
        raise ZeroVariance("all deltas are identical")
    return t_test_from_summary(mean, math.sqrt(var) / math.sqrt(n), n - 1)


def summarize(baseline: Mapping, steered: Mapping) -> DeltaSample:
    """Per-naming accuracy change, steered minus baseline, in sorted naming order."""
    if set(baseline) != set(steered):
        raise KeyMismatch(f"naming keys differ: {sorted(set(baseline) ^ set(steered), key=str)}")
    keys = sorted(baseline, key=lambda k: (str(type(k)), k))
    return DeltaSample(tuple(steered[k] - baseline[k] for k in keys), tuple(keys))


# ---- CSV --------------------------------------------------------------------

def read_accuracy_csv(text: str) -> dict[str, dict[str, float]]:
    """``condition,naming,accuracy`` rows -> {condition: {naming: accuracy}}."""
    out: dict[str, dict[str, float]] = {}
    for row in csv.DictReader(io.StringIO(text)):
        out.setdefault(row["condition"].strip(), {})[row["naming"].strip()] = float(row["accuracy"])
    return out


def condition_table(
    accuracies: Mapping[str, Mapping[str, float]], baseline: str = "baseline"
) -> list[tuple[str, TestResult | None, int]]:
    """Test every non-baseline condition against ``baseline``; None where the test is undefined."""
    if baseline not in accuracies:
        raise KeyError(f"no {baseline!r} condition")
    rows = []
    for cond, accs in accuracies.items():
        if cond == baseline:
            continue
        sample = summarize(accuracies[baseline], accs)
        try:
            res = one_sample_t(sample)
        except ZeroVariance:
            res = None
        rows.append((cond, res, sample.n))
    return rows


def table_csv(rows: Sequence[tuple[str, TestResult | None, int]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["condition", "mean_delta", "se", "t", "p", "sig", "n"])
    for cond, res, n in rows:
        if res is None:
            w.writerow([cond, "", "", "", "", "undefined", n])
        else:
            w.writerow([cond, f"{res.mean:.6f}", f"{res.se:.6f}", f"{res.t:.3f}", f"{res.p:.3f}", res.stars, n])
    return buf.getvalue()
