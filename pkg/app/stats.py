"""
Статистика для бенчмарков: описательные характеристики, t-тест Стьюдента
с объединённой дисперсией и d Коэна, однофакторный ANOVA с частным eta^2,
попарные сравнения с поправкой Бонферрони. p-значения через
регуляризованную неполную бета-функцию.
"""
import csv
import logging
import math
from itertools import combinations
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import betainc

import config
from app.exceptions import StatsError
from app.schemas import AnovaResult, PairwiseResult, SampleSet, Summary, TTestResult

logger = logging.getLogger(__name__)


def t_two_sided_p(t: float, df: float) -> float:
    """P(|T| >= |t|) для распределения Стьюдента с df степенями свободы."""
    if math.isinf(t):
        return 0.0
    if df <= 0:
        raise StatsError(f"некорректное число степеней свободы: {df}")
    return float(min(1.0, betainc(df / 2.0, 0.5, df / (df + t * t))))


def f_sf(f: float, d1: float, d2: float) -> float:
    """P(F >= f) для распределения Фишера с (d1, d2) степенями свободы."""
    if math.isinf(f):
        return 0.0
    if f <= 0:
        return 1.0
    return float(min(1.0, betainc(d2 / 2.0, d1 / 2.0, d2 / (d2 + d1 * f))))


def _values(s: SampleSet) -> np.ndarray:
    return np.asarray(s.values, dtype=float)


def describe(s: SampleSet) -> Summary:
    values = _values(s)
    if values.size < 2:
        raise StatsError(f"выборка {s.label}: нужно n >= 2")
    return Summary(label=s.label, n=int(values.size), mean=float(values.mean()), sd=float(values.std(ddof=1)))


def t_from_summary(m1: float, sd1: float, n1: int, m2: float, sd2: float, n2: int) -> TTestResult:
    if n1 < 2 or n2 < 2:
        raise StatsError("для t-теста нужно n >= 2 в каждой группе")
    if sd1 < 0 or sd2 < 0:
        raise StatsError("стандартное отклонение не может быть отрицательным")

    df = n1 + n2 - 2
    pooled = math.sqrt(((n1 - 1) * sd1 ** 2 + (n2 - 1) * sd2 ** 2) / df)
    diff = m1 - m2
    if pooled == 0:
        # нулевая дисперсия: равные средние дают t = 0, разные - бесконечность
        if diff == 0:
            return TTestResult(t=0.0, df=df, p=1.0, cohen_d=0.0)
        inf = math.copysign(math.inf, diff)
        return TTestResult(t=inf, df=df, p=0.0, cohen_d=inf)

    t = diff / (pooled * math.sqrt(1.0 / n1 + 1.0 / n2))
    return TTestResult(t=t, df=df, p=t_two_sided_p(t, df), cohen_d=diff / pooled)


def t_test(a: SampleSet, b: SampleSet) -> TTestResult:
    sa, sb = describe(a), describe(b)
    return t_from_summary(sa.mean, sa.sd, sa.n, sb.mean, sb.sd, sb.n)


def anova(groups: Sequence[SampleSet]) -> AnovaResult:
    if len(groups) < 2:
        raise StatsError("для ANOVA нужно минимум 2 группы")
    arrays = [_values(g) for g in groups]
    for g, values in zip(groups, arrays):
        if values.size < 2:
            raise StatsError(f"группа {g.label}: нужно n >= 2")

    k = len(arrays)
    total = sum(a.size for a in arrays)
    grand = np.concatenate(arrays).mean()
    ss_between = float(sum(a.size * (a.mean() - grand) ** 2 for a in arrays))
    ss_within = float(sum(((a - a.mean()) ** 2).sum() for a in arrays))
    df_between, df_within = k - 1, total - k

    if ss_between == 0 and ss_within == 0:
        raise StatsError("все значения одинаковы: F не определён (0/0)")
    if ss_within == 0:
        return AnovaResult(F=math.inf, df_between=df_between, df_within=df_within, p=0.0, eta_sq_partial=1.0)

    f = (ss_between / df_between) / (ss_within / df_within)
    return AnovaResult(
        F=f,
        df_between=df_between,
        df_within=df_within,
        p=f_sf(f, df_between, df_within),
        eta_sq_partial=ss_between / (ss_between + ss_within),
    )


def pairwise(groups: Sequence[SampleSet], alpha: float = config.ALPHA) -> List[PairwiseResult]:
    """Все пары групп, t-тест с поправкой Бонферрони: p_adj = min(1, p * m)."""
    if len(groups) < 2:
        raise StatsError("для попарных сравнений нужно минимум 2 группы")
    pairs = list(combinations(groups, 2))
    m = len(pairs)
    results = []
    for a, b in pairs:
        r = t_test(a, b)
        p_adjusted = min(1.0, r.p * m)
        results.append(PairwiseResult(
            pair=(a.label, b.label),
            mean_diff=float(_values(a).mean() - _values(b).mean()),
            t=r.t,
            df=r.df,
            p=r.p,
            p_adjusted=p_adjusted,
            significant=p_adjusted < alpha,
        ))
    return results


def read_samples(path, where: Optional[Dict[str, str]] = None) -> List[SampleSet]:
    """
    CSV с колонками label,value (и любыми другими). where фильтрует строки
    по равенству колонок. Порядок групп - порядок первого появления метки.
    """
    groups: Dict[str, List[float]] = {}
    try:
        with Path(path).open(newline="", encoding="utf-8") as f:
            reader = csv.DictReader(f)
            if reader.fieldnames is None or not {"label", "value"} <= set(reader.fieldnames):
                raise StatsError(f"{path}: нужны колонки label и value")
            for row in reader:
                if where and any(row.get(k) != v for k, v in where.items()):
                    continue
                try:
                    value = float(row["value"])
                except (TypeError, ValueError) as e:
                    raise StatsError(f"{path}:{reader.line_num}: некорректное значение {row['value']!r}") from e
                groups.setdefault(row["label"], []).append(value)
    except OSError as e:
        raise StatsError(f"не удалось прочитать {path}: {e}") from e

    samples = []
    for label, values in groups.items():
        if len(values) < 2 or not all(math.isfinite(v) for v in values):
            raise StatsError(f"группа {label}: нужно минимум 2 конечных значения")
        samples.append(SampleSet(label=label, values=values))
    logger.info(f"Прочитано {len(samples)} групп из {path}")
    return samples


def ratio_increase(base: Summary, other: Summary) -> float:
    """Относительный прирост среднего, в процентах."""
    if base.mean == 0:
        raise StatsError("среднее базовой группы равно 0")
    return (other.mean - base.mean) / base.mean * 100.0


def summaries(groups: Sequence[SampleSet]) -> List[Summary]:
    return [describe(g) for g in groups]


def split_pair(groups: Sequence[SampleSet]) -> Tuple[SampleSet, SampleSet]:
    if len(groups) != 2:
        raise StatsError(f"t-тест ожидает ровно 2 группы, получено {len(groups)}")
    return groups[0], groups[1]
