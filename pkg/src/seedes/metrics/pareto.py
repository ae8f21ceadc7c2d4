"""Non-dominated (reward up, KL down) subsets of behaviour points."""

from __future__ import annotations

from itertools import groupby


def dominates(a, b) -> bool:
    """a has reward >= and KL <= b, with at least one strict."""
    return (a.reward >= b.reward and a.kl <= b.kl) and (a.reward > b.reward or a.kl < b.kl)


def pareto_front(points) -> list:
    """Points no other point dominates, sorted by KL ascending.

    One sweep after sorting by (KL asc, reward desc): a point survives when it
    ties the best reward of its KL group and beats every reward seen at a
    strictly smaller KL. Exact duplicates all survive.
    """
    pts = sorted(points, key=lambda p: (p.kl, -p.reward))
    front, best = [], float("-inf")
    for _, group in groupby(pts, key=lambda p: p.kl):
        group = list(group)
        top = group[0].reward
        if top > best:
            front.extend(p for p in group if p.reward == top)
            best = top
    return front


def pareto_front_bruteforce(points) -> list:
    pts = list(points)
    keep = [p for p in pts if not any(dominates(q, p) for q in pts)]
    return sorted(keep, key=lambda p: (p.kl, -p.reward))
