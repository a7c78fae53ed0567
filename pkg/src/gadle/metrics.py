"""Return-over-daily and purchase-count-over-daily.

The daily benchmark buys one unit per trading day, so its average price
is the plain mean of the window prices. The agent buys two units on each
flagged day.
"""

from __future__ import annotations

import numpy as np


def agent_average(raw_prices, actions) -> float:
    """Mean price paid on the agent's purchase days (nan when it never buys)."""
    p = np.asarray(raw_prices, dtype=float)
    g = np.asarray(actions, dtype=float)
    n = g.sum()
    if n == 0:
        return float("nan")
    return float(p @ g / n)


def rod(raw_prices, actions) -> float:
    """Percentage saving of the agent's average price over the daily average.

    A window without purchases has no average price; it is reported as 0.0
    and callers that care should check ``purchase_count`` themselves.
    """
    p = np.asarray(raw_prices, dtype=float)
    if np.sum(actions) == 0:
        return 0.0
    return float((1.0 - agent_average(p, actions) / p.mean()) * 100.0)


def pcod(actions) -> int:
    """Units bought by the agent minus one unit per day."""
    g = np.asarray(actions)
    return int(2 * g.sum() - g.size)
