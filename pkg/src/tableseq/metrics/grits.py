"""Grid similarity scores over aligned row and column subsequences.

Both tables are expanded to slot matrices carrying per-variant values:
relative span geometry (top), cell content (con), or absolute cell boxes
(loc).  A monotone subset of rows and columns is chosen on each side to
maximize total slot similarity, factored as a row alignment followed by
a column alignment, and the score is

    2 * total_similarity / (|A| + |B|)

with |A| the slot count of grid A.
"""

from __future__ import annotations

from ..core import TableGrid, grid_to_cell_matrix


def _lcs_len(a: str, b: str) -> int:
    if len(a) < len(b):
        a, b = b, a
    prev = [0] * (len(b) + 1)
    for ca in a:
        cur = [0]
        for j, cb in enumerate(b, start=1):
            if ca == cb:
                cur.append(prev[j - 1] + 1)
            else:
                cur.append(max(prev[j], cur[j - 1]))
        prev = cur
    return prev[len(b)]


def content_similarity(a: str, b: str) -> float:
    """2 * LCS / (len + len); two empty strings count as identical."""
    if not a and not b:
        return 1.0
    return 2.0 * _lcs_len(a, b) / (len(a) + len(b))


def _rect_iou(a: tuple, b: tuple) -> float:
    iw = min(a[2], b[2]) - max(a[0], b[0])
    ih = min(a[3], b[3]) - max(a[1], b[1])
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    area_a = (a[2] - a[0]) * (a[3] - a[1])
    area_b = (b[2] - b[0]) * (b[3] - b[1])
    denom = area_a + area_b - inter
    return inter / denom if denom > 0 else 0.0


def _topology_similarity(a: tuple, b: tuple) -> float:
    return _rect_iou(a, b)


def _location_similarity(a, b) -> float:
    if a is None and b is None:
        return 1.0
    if a is None or b is None:
        return 0.0
    return _rect_iou(a, b)


def slot_values(grid: TableGrid, variant: str) -> list[list]:
    """Per-slot values for a variant: 'top', 'con', or 'loc'."""
    matrix = grid_to_cell_matrix(grid)
    out: list[list] = []
    for r in range(grid.n_rows):
        row_vals = []
        for c in range(grid.n_cols):
            anchor = matrix[r][c]
            cell = anchor.cell
            if variant == "top":
                # cell rectangle relative to this slot, so spans compare
                # without depending on absolute grid position
                left = anchor.col - c
                top = anchor.row - r
                row_vals.append(
                    (float(left), float(top),
                     float(left + cell.colspan), float(top + cell.rowspan))
                )
            elif variant == "con":
                row_vals.append("" if cell.is_empty else cell.content)
            elif variant == "loc":
                bbox = None if cell.is_empty else cell.bbox
                row_vals.append(None if bbox is None else bbox.as_tuple())
            else:
                raise ValueError(f"unknown variant {variant!r}")
        out.append(row_vals)
    return out


def similarity_fn(variant: str):
    return {
        "top": _topology_similarity,
        "con": content_similarity,
        "loc": _location_similarity,
    }[variant]


def align_1d(a: list, b: list, pair_score) -> tuple[float, list[tuple[int, int]]]:
    """Best monotone pairing of two sequences; returns score and index pairs.

    Classic alignment DP.  Traceback prefers pairing over skipping so the
    result is deterministic under ties.
    """
    n, m = len(a), len(b)
    dp = [[0.0] * (m + 1) for _ in range(n + 1)]
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            dp[i][j] = max(
                dp[i - 1][j - 1] + pair_score(a[i - 1], b[j - 1]),
                dp[i - 1][j],
                dp[i][j - 1],
            )
    pairs: list[tuple[int, int]] = []
    i, j = n, m
    while i > 0 and j > 0:
        here = dp[i][j]
        diag = dp[i - 1][j - 1] + pair_score(a[i - 1], b[j - 1])
        if here == diag:
            pairs.append((i - 1, j - 1))
            i -= 1
            j -= 1
        elif here == dp[i - 1][j]:
            i -= 1
        else:
            j -= 1
    pairs.reverse()
    return dp[n][m], pairs


def _aligned_total(A: list[list], B: list[list], row_pairs, col_pairs, sim) -> float:
    total = 0.0
    for ra, rb in row_pairs:
        for ca, cb in col_pairs:
            total += sim(A[ra][ca], B[rb][cb])
    return total


def factored_alignment(A: list[list], B: list[list], sim):
    """Rows first, then columns given the chosen rows.

    Stage one scores every row pair by its own best column alignment and
    picks a monotone set of row pairs; stage two aligns columns using the
    summed similarity over those row pairs.  Returns (total, row_pairs,
    col_pairs) with the total recomputed on the induced subgrids.
    """
    if not A or not B or not A[0] or not B[0]:
        return 0.0, [], []

    def row_reward(row_a, row_b):
        score, _ = align_1d(row_a, row_b, sim)
        return score

    _, row_pairs = align_1d(A, B, row_reward)
    if not row_pairs:
        return 0.0, [], []

    cols_a = list(range(len(A[0])))
    cols_b = list(range(len(B[0])))

    def col_reward(ca, cb):
        return sum(sim(A[ra][ca], B[rb][cb]) for ra, rb in row_pairs)

    _, col_pairs = align_1d(cols_a, cols_b, col_reward)
    total = _aligned_total(A, B, row_pairs, col_pairs, sim)
    return total, row_pairs, col_pairs


def _transpose(M: list[list]) -> list[list]:
    return [list(col) for col in zip(*M)]


def _coordinate_ascent(A, B, sim, row_pairs, col_pairs, max_iters: int = 4):
    """Re-align rows given columns and vice versa until no improvement."""
    if not row_pairs or not col_pairs:
        return _aligned_total(A, B, row_pairs, col_pairs, sim)
    total = _aligned_total(A, B, row_pairs, col_pairs, sim)
    for _ in range(max_iters):
        def row_reward(ra, rb):
            return sum(sim(A[ra][ca], B[rb][cb]) for ca, cb in col_pairs)

        _, row_pairs = align_1d(list(range(len(A))), list(range(len(B))),
                                row_reward)
        if not row_pairs:
            break

        def col_reward(ca, cb):
            return sum(sim(A[ra][ca], B[rb][cb]) for ra, rb in row_pairs)

        _, col_pairs = align_1d(list(range(len(A[0]))), list(range(len(B[0]))),
                                col_reward)
        new_total = _aligned_total(A, B, row_pairs, col_pairs, sim)
        if new_total <= total + 1e-12:
            total = max(total, new_total)
            break
        total = new_total
    return total


def heuristic_alignment_total(A: list[list], B: list[list], sim) -> float:
    """Factored alignment run in both orders, each refined by ascent."""
    if not A or not B or not A[0] or not B[0]:
        return 0.0
    _, rp, cp = factored_alignment(A, B, sim)
    best = _coordinate_ascent(A, B, sim, rp, cp)
    _, rp_t, cp_t = factored_alignment(_transpose(A), _transpose(B), sim)
    # pairs from the transposed run swap roles
    best = max(best, _coordinate_ascent(A, B, sim, cp_t, rp_t))
    return best


def exact_alignment_total(A: list[list], B: list[list], sim) -> float:
    """Exact best total: enumerate monotone row pairings, solve columns by DP.

    Every maximal monotone pairing of rows is visited (similarities are
    non-negative, so a pairing extendable by one more row pair can never
    beat its extension) and the column subsequence pair is optimized
    exactly for each.  Exponential in row count; callers gate on size.
    """
    if not A or not B or not A[0] or not B[0]:
        return 0.0
    n_a, n_b = len(A), len(B)
    c_a, c_b = len(A[0]), len(B[0])
    best = 0.0
    pairs: list[tuple[int, int]] = []

    def evaluate() -> float:
        dp = [[0.0] * (c_b + 1) for _ in range(c_a + 1)]
        for i in range(1, c_a + 1):
            for j in range(1, c_b + 1):
                reward = 0.0
                for ra, rb in pairs:
                    reward += sim(A[ra][i - 1], B[rb][j - 1])
                dp[i][j] = max(dp[i - 1][j - 1] + reward,
                               dp[i - 1][j], dp[i][j - 1])
        return dp[c_a][c_b]

    def rec(i: int, j: int) -> None:
        nonlocal best
        if i >= n_a or j >= n_b:
            # maximal pairing: no further row pair fits
            if pairs:
                best = max(best, evaluate())
            return
        for x in range(i, n_a):
            for y in range(j, n_b):
                pairs.append((x, y))
                rec(x + 1, y + 1)
                pairs.pop()

    rec(0, 0)
    return best


# beyond this many row pairings the exact path is too slow; fall back
EXACT_PAIRING_BUDGET = 20000


def best_alignment_total(A: list[list], B: list[list], sim) -> float:
    """Exact where tractable, factored heuristic otherwise."""
    if not A or not B or not A[0] or not B[0]:
        return 0.0
    from math import comb

    rows_cost = comb(len(A) + len(B), len(A))
    cols_cost = comb(len(A[0]) + len(B[0]), len(A[0]))
    if min(rows_cost, cols_cost) <= EXACT_PAIRING_BUDGET:
        if cols_cost < rows_cost:
            return exact_alignment_total(_transpose(A), _transpose(B), sim)
        return exact_alignment_total(A, B, sim)
    return heuristic_alignment_total(A, B, sim)


def _cached(sim):
    cache: dict[tuple, float] = {}

    def wrapped(a, b):
        key = (a, b)
        hit = cache.get(key)
        if hit is None:
            hit = cache[key] = sim(a, b)
        return hit

    return wrapped


def grits(pred: TableGrid, gt: TableGrid, variant: str) -> float:
    """Similarity in [0, 1] between two grids under one variant."""
    size_p = pred.n_rows * pred.n_cols
    size_g = gt.n_rows * gt.n_cols
    if size_p == 0 and size_g == 0:
        return 1.0
    if size_p == 0 or size_g == 0:
        return 0.0
    A = slot_values(pred, variant)
    B = slot_values(gt, variant)
    total = best_alignment_total(A, B, _cached(similarity_fn(variant)))
    return 2.0 * total / (size_p + size_g)


def grits_all(pred: TableGrid, gt: TableGrid,
              variants=("top", "con", "loc")) -> dict[str, float]:
    return {v: grits(pred, gt, v) for v in variants}
