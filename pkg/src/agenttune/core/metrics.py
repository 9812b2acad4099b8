import numpy as np

from agenttune.errors import DegenerateBaseline
from agenttune.models.llm import TokenLedger
from agenttune.models.search import Direction, NodeStatus, SearchTree
from agenttune.models.session import IterationRow, MetricsQuadruple

PEAK_FRACTION = 0.95
ERROR_STATUSES = (NodeStatus.REJECTED, NodeStatus.FAILED)


def max_performance_gain(best: float, baseline: float, direction: Direction = "maximize") -> float:
    """Relative gain over the baseline; for minimized metrics the ratio is inverted."""
    if baseline <= 0:
        raise DegenerateBaseline(f"baseline must be positive, got {baseline}")
    if direction == "maximize":
        return (best - baseline) / baseline
    if best <= 0:
        raise DegenerateBaseline(f"minimized metric reached {best}, ratio undefined")
    return baseline / best - 1


def reaches_peak(value: float, final: float, direction: Direction = "maximize") -> bool:
    if direction == "maximize":
        return value >= PEAK_FRACTION * final
    return value <= final / PEAK_FRACTION


def cumulative_tokens(ledger: TokenLedger, iterations: list[int]) -> list[int]:
    """Tokens spent up to and including each iteration; iterations without calls inherit the running total."""
    if not ledger.per_iteration:
        return [0] * len(iterations)
    spent = np.array([i for i, _ in ledger.per_iteration])
    running = np.cumsum([t for _, t in ledger.per_iteration])
    positions = np.searchsorted(spent, iterations, side="right") - 1
    return [int(running[p]) if p >= 0 else 0 for p in positions]


def tokens_to_peak(best_series: list[tuple[int, float]], ledger: TokenLedger, direction: Direction = "maximize") -> int:
    if not best_series:
        return 0
    final = best_series[-1][1]
    iterations = [i for i, _ in best_series]
    totals = cumulative_tokens(ledger, iterations)
    for (_, value), tokens in zip(best_series, totals):
        if reaches_peak(value, final, direction):
            return tokens
    return totals[-1]


def token_efficiency(mpg: float, tc95: int) -> float:
    return mpg / (tc95 / 1000) if tc95 > 0 else 0.0


def token_weighted_error_rate(error_count: int, total_tokens: int) -> float:
    return error_count / (total_tokens / 1000) if total_tokens > 0 else 0.0


def compute_metrics(tree: SearchTree, ledger: TokenLedger, error_count: int, baseline: float,
                    direction: Direction = "maximize") -> MetricsQuadruple:
    if baseline <= 0:
        raise DegenerateBaseline(f"baseline must be positive, got {baseline}")
    if not tree.best_per_iteration:
        raise ValueError("no benchmarked node, nothing to score")
    best = tree.best_per_iteration[-1][1]
    mpg = max_performance_gain(best, baseline, direction)
    tc95 = tokens_to_peak(tree.best_per_iteration, ledger, direction)
    return MetricsQuadruple(
        mpg=mpg,
        tc95=tc95,
        te=token_efficiency(mpg, tc95),
        twer=token_weighted_error_rate(error_count, ledger.total),
    )


def iteration_rows(tree: SearchTree, ledger: TokenLedger) -> list[IterationRow]:
    iterations = [i for i, _ in tree.best_per_iteration]
    totals = cumulative_tokens(ledger, iterations)
    rows = []
    for (iteration, best), tokens in zip(tree.best_per_iteration, totals):
        errors = sum(1 for n in tree.nodes.values() if n.status in ERROR_STATUSES and n.iteration <= iteration)
        rows.append(IterationRow(iteration=iteration, best_so_far=best, cumulative_tokens=tokens, error_count=errors))
    return rows
