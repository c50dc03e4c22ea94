"""Tree edit distance similarity between table structures.

A table is viewed as an ordered tree (table -> tr -> td).  The score is
1 - dist / max(|pred|, |gt|) where dist is the ordered tree edit distance
with unit insert and delete costs.  Relabeling two td nodes costs 1 when
their spans differ and otherwise the normalized character edit distance
of their contents; in structure-only mode content is ignored.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

from ..core import Cell, ParseResult, TableGrid


@dataclass
class TableTree:
    tag: str
    colspan: int = 1
    rowspan: int = 1
    content: str = ""
    children: list["TableTree"] = field(default_factory=list)

    def size(self) -> int:
        return 1 + sum(c.size() for c in self.children)


def tree_from_grid(grid: TableGrid, with_content: bool = True) -> TableTree:
    root = TableTree("table")
    for row in grid.rows:
        tr = TableTree("tr")
        for cell in row:
            tr.children.append(_td_node(cell, with_content))
        root.children.append(tr)
    return root


def tree_from_rows(parsed: ParseResult | tuple) -> TableTree:
    """Tree straight from parsed token rows, before any grid regularization.

    Holes are not filled and spans are not clipped, so the score reflects
    exactly what the sequence said.
    """
    rows = parsed.rows if isinstance(parsed, ParseResult) else parsed
    root = TableTree("table")
    for row in rows:
        tr = TableTree("tr")
        for cell in row:
            tr.children.append(_td_node(cell, with_content=True))
        root.children.append(tr)
    return root


def _td_node(cell: Cell, with_content: bool) -> TableTree:
    return TableTree(
        "td",
        colspan=cell.colspan,
        rowspan=cell.rowspan,
        content=cell.content if (with_content and not cell.is_empty) else "",
    )


_TAG_RE = re.compile(r"<(/?)(table|tr|td)((?:\s+\w+=\"\d+\")*)\s*>")
_ATTR_IN_TAG_RE = re.compile(r'(\w+)="(\d+)"')


def tree_from_html(html: str) -> TableTree:
    """Parse restricted table HTML (table, tr, td, span attributes, text)."""
    root = TableTree("table")
    stack: list[TableTree] = []
    pos = 0
    for m in _TAG_RE.finditer(html):
        if stack and stack[-1].tag == "td":
            stack[-1].content += _unescape(html[pos:m.start()])
        pos = m.end()
        closing, tag, attrs = m.group(1), m.group(2), m.group(3)
        if closing:
            while stack and stack[-1].tag != tag:
                stack.pop()
            if stack:
                stack.pop()
            continue
        if tag == "table":
            stack = []
            continue
        node = TableTree(tag)
        for am in _ATTR_IN_TAG_RE.finditer(attrs or ""):
            if am.group(1) == "colspan":
                node.colspan = int(am.group(2))
            elif am.group(1) == "rowspan":
                node.rowspan = int(am.group(2))
        parent = stack[-1] if stack else root
        if tag == "tr":
            root.children.append(node)
            stack = [node]
        else:
            parent.children.append(node)
            stack.append(node)
    return root


def _unescape(text: str) -> str:
    return (text.replace("&lt;", "<").replace("&gt;", ">")
            .replace("&amp;", "&"))


def char_edit_distance(a: str, b: str) -> int:
    """Levenshtein distance over characters."""
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, start=1):
        cur = [i]
        for j, cb in enumerate(b, start=1):
            cur.append(min(
                prev[j] + 1,
                cur[j - 1] + 1,
                prev[j - 1] + (ca != cb),
            ))
        prev = cur
    return prev[len(b)]


def normalized_edit_distance(a: str, b: str) -> float:
    longest = max(len(a), len(b))
    if longest == 0:
        return 0.0
    return char_edit_distance(a, b) / longest


def _update_cost(a: TableTree, b: TableTree, structure_only: bool) -> float:
    if a.tag != b.tag:
        return 1.0
    if a.tag == "td":
        if a.colspan != b.colspan or a.rowspan != b.rowspan:
            return 1.0
        if structure_only:
            return 0.0
        return normalized_edit_distance(a.content, b.content)
    return 0.0


class _Annotated:
    """Post-order node list with leftmost descendants and keyroots."""

    def __init__(self, root: TableTree) -> None:
        self.nodes: list[TableTree] = []
        self.lmds: list[int] = []
        self._walk(root)
        keyroots: dict[int, int] = {}
        for i, lmd in enumerate(self.lmds):
            keyroots[lmd] = i
        self.keyroots = sorted(keyroots.values())

    def _walk(self, node: TableTree) -> int:
        first_index = None
        for child in node.children:
            lmd = self._walk(child)
            if first_index is None:
                first_index = lmd
        self.nodes.append(node)
        index = len(self.nodes) - 1
        self.lmds.append(first_index if first_index is not None else index)
        return self.lmds[index]


def tree_edit_distance(t1: TableTree, t2: TableTree,
                       structure_only: bool = False) -> float:
    """Ordered tree edit distance with unit insert/delete and float relabel."""
    A, B = _Annotated(t1), _Annotated(t2)
    an, bn = len(A.nodes), len(B.nodes)
    treedists = [[0.0] * bn for _ in range(an)]

    def update(x: TableTree, y: TableTree) -> float:
        return _update_cost(x, y, structure_only)

    for i in A.keyroots:
        for j in B.keyroots:
            _treedist(A, B, i, j, treedists, update)
    return treedists[an - 1][bn - 1]


def _treedist(A: _Annotated, B: _Annotated, i: int, j: int,
              treedists, update) -> None:
    Al, Bl = A.lmds, B.lmds
    An, Bn = A.nodes, B.nodes
    m = i - Al[i] + 2
    n = j - Bl[j] + 2
    fd = [[0.0] * n for _ in range(m)]
    ioff = Al[i] - 1
    joff = Bl[j] - 1
    for x in range(1, m):
        fd[x][0] = fd[x - 1][0] + 1.0
    for y in range(1, n):
        fd[0][y] = fd[0][y - 1] + 1.0
    for x in range(1, m):
        for y in range(1, n):
            if Al[i] == Al[x + ioff] and Bl[j] == Bl[y + joff]:
                fd[x][y] = min(
                    fd[x - 1][y] + 1.0,
                    fd[x][y - 1] + 1.0,
                    fd[x - 1][y - 1] + update(An[x + ioff], Bn[y + joff]),
                )
                treedists[x + ioff][y + joff] = fd[x][y]
            else:
                p = Al[x + ioff] - 1 - ioff
                q = Bl[y + joff] - 1 - joff
                fd[x][y] = min(
                    fd[x - 1][y] + 1.0,
                    fd[x][y - 1] + 1.0,
                    fd[p][q] + treedists[x + ioff][y + joff],
                )


def teds(pred: TableTree, gt: TableTree, structure_only: bool = False) -> float:
    """Similarity in [0, 1]; 1 means identical trees."""
    n_pred, n_gt = pred.size(), gt.size()
    if n_pred == 0 and n_gt == 0:
        return 1.0
    dist = tree_edit_distance(pred, gt, structure_only=structure_only)
    return 1.0 - dist / max(n_pred, n_gt)


def teds_grids(pred: TableGrid, gt: TableGrid,
               structure_only: bool = False) -> float:
    return teds(tree_from_grid(pred), tree_from_grid(gt),
                structure_only=structure_only)
