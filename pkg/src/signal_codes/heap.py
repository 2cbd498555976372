"""Bounded double-ended priority queue (min-max heap).

Array layout: root at 0, children of i at 2i+1 and 2i+2.  Even levels are
min levels, odd levels are max levels, so the worst item is at the root and
the best is one of its two children.  Items are compared as plain tuples;
callers put the priority first and a unique tiebreaker second so the payload
is never compared.
"""

from __future__ import annotations


class HeapEmpty(IndexError):
    pass


def _is_min_level(i: int) -> bool:
    return not ((i + 1).bit_length() - 1) & 1


class MinMaxHeap:
    __slots__ = ("a", "capacity", "evictions")

    def __init__(self, capacity: int | None = None):
        if capacity is not None and capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.a: list = []
        self.capacity = capacity
        self.evictions = 0

    def __len__(self) -> int:
        return len(self.a)

    def __bool__(self) -> bool:
        return bool(self.a)

    def __iter__(self):
        return iter(self.a)

    # -- queries

    def peek_worst(self):
        if not self.a:
            raise HeapEmpty("peek on empty heap")
        return self.a[0]

    def _best_index(self) -> int:
        n = len(self.a)
        if n == 1:
            return 0
        if n == 2:
            return 1
        return 1 if self.a[1] >= self.a[2] else 2

    def peek_best(self):
        if not self.a:
            raise HeapEmpty("peek on empty heap")
        return self.a[self._best_index()]

    # -- updates

    def push(self, item):
        """Insert; at capacity the worst item is evicted and returned.

        When full and ``item`` is worse than everything held, the insert is
        a no-op and ``item`` itself is returned.
        """
        a = self.a
        if self.capacity is not None and len(a) >= self.capacity:
            if item < a[0]:
                self.evictions += 1
                return item
            out = self.pop_worst()
            self.evictions += 1
            self._insert(item)
            return out
        self._insert(item)
        return None

    def _insert(self, item) -> None:
        a = self.a
        a.append(item)
        i = len(a) - 1
        if i == 0:
            return
        p = (i - 1) >> 1
        if _is_min_level(i):
            if a[i] > a[p]:
                a[i], a[p] = a[p], a[i]
                self._up_max(p)
            else:
                self._up_min(i)
        else:
            if a[i] < a[p]:
                a[i], a[p] = a[p], a[i]
                self._up_min(p)
            else:
                self._up_max(i)

    def _up_min(self, i: int) -> None:
        a = self.a
        while i > 2:
            g = (((i - 1) >> 1) - 1) >> 1
            if a[i] < a[g]:
                a[i], a[g] = a[g], a[i]
                i = g
            else:
                break

    def _up_max(self, i: int) -> None:
        a = self.a
        while i > 2:
            g = (((i - 1) >> 1) - 1) >> 1
            if a[i] > a[g]:
                a[i], a[g] = a[g], a[i]
                i = g
            else:
                break

    def pop_worst(self):
        a = self.a
        if not a:
            raise HeapEmpty("extract from empty heap")
        return self._remove_at(0)

    def pop_best(self):
        if not self.a:
            raise HeapEmpty("extract from empty heap")
        return self._remove_at(self._best_index())

    def _remove_at(self, i: int):
        a = self.a
        last = a.pop()
        if i == len(a):
            return last
        out = a[i]
        a[i] = last
        if _is_min_level(i):
            self._down_min(i)
        else:
            self._down_max(i)
        return out

    def _extreme_desc(self, i: int, want_min: bool):
        """Index of the smallest/largest among children and grandchildren of i."""
        a = self.a
        n = len(a)
        c = 2 * i + 1
        best = -1
        for j in (c, c + 1, 2 * c + 1, 2 * c + 2, 2 * c + 3, 2 * c + 4):
            if j >= n:
                if j <= c + 1:
                    continue
                break
            if best < 0 or (a[j] < a[best] if want_min else a[j] > a[best]):
                best = j
        return best

    def _down_min(self, i: int) -> None:
        a = self.a
        while True:
            m = self._extreme_desc(i, True)
            if m < 0:
                return
            if m > 2 * i + 2:  # grandchild
                if a[m] < a[i]:
                    a[m], a[i] = a[i], a[m]
                    p = (m - 1) >> 1
                    if a[m] > a[p]:
                        a[m], a[p] = a[p], a[m]
                    i = m
                else:
                    return
            else:
                if a[m] < a[i]:
                    a[m], a[i] = a[i], a[m]
                return

    def _down_max(self, i: int) -> None:
        a = self.a
        while True:
            m = self._extreme_desc(i, False)
            if m < 0:
                return
            if m > 2 * i + 2:
                if a[m] > a[i]:
                    a[m], a[i] = a[i], a[m]
                    p = (m - 1) >> 1
                    if a[m] < a[p]:
                        a[m], a[p] = a[p], a[m]
                    i = m
                else:
                    return
            else:
                if a[m] > a[i]:
                    a[m], a[i] = a[i], a[m]
                return

    def check(self) -> None:
        """Full scan of the min-max order; raises AssertionError on violation."""
        a = self.a
        for i in range(1, len(a)):
            j = (i - 1) >> 1
            while True:
                if _is_min_level(j):
                    assert a[j] <= a[i], f"min-level {j} above {i}"
                else:
                    assert a[j] >= a[i], f"max-level {j} above {i}"
                if j == 0:
                    break
                j = (j - 1) >> 1
