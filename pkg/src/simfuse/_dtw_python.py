"""Pure-Python DTW accumulated-cost kernel, used when the compiled core is unavailable."""
import math

_INF = math.inf


def dtw_cost(t, s, band: int = -1) -> float:
    """Same contract as the compiled ``dtw_cost``: two-row DP, O(min(n, m)) memory."""
    t = [float(v) for v in t]
    s = [float(v) for v in s]
    if len(t) < len(s):
        t, s = s, t
    n, m = len(t), len(s)
    prev = [0.0] + [_INF] * m
    curr = [_INF] * (m + 1)
    for i in range(1, n + 1):
        if band < 0:
            lo, hi = 1, m
        else:
            lo, hi = max(1, i - band), min(m, i + band)
        curr[lo - 1] = _INF
        if hi < m:
            curr[hi + 1] = _INF
        ti = t[i - 1]
        left = curr[lo - 1]
        for j in range(lo, hi + 1):
            diag, up = prev[j - 1], prev[j]
            best = diag if diag < up else up
            if left < best:
                best = left
            d = ti - s[j - 1]
            left = d * d + best
            curr[j] = left
        prev, curr = curr, prev
    return prev[m]
