"""Parameter partition strategies: which entries evolve, which stay frozen.

Counting is per sub-network: a ratio of 1/3 selects a third of each
sub-network's parameters independently.  The ``fixed`` strategy draws once and
reuses the mask for the whole run; the ``random_*`` strategies redraw at every
time step (the mask is frozen only inside a step's stage evaluations).
``redraw_fixed`` redraws the identical mask every step, which makes the
fixed-mask scheme an explicit special case of the per-step scheme and is used
to test exactly that equivalence.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tnn import ParamLayout, ParamMask, TnnParams

__all__ = ["PartitionStrategy", "select_mask", "MaskProvider"]

KINDS = (
    "full",
    "fixed",
    "random_per_step",
    "random_with_first_layer",
    "random_without_first_layer",
    "random_without_bias",
    "redraw_fixed",
)


@dataclass(frozen=True)
class PartitionStrategy:
    kind: str = "full"
    ratio: float | None = None
    count: int | None = None
    seed: int | None = None  # one-shot draw seed for fixed/redraw_fixed

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown partition strategy {self.kind!r}")
        if self.kind == "full":
            return
        if (self.ratio is None) == (self.count is None):
            raise ValueError(f"{self.kind} needs exactly one of ratio or count")
        if self.ratio is not None and not 0.0 < self.ratio <= 1.0:
            raise ValueError(f"ratio must lie in (0, 1], got {self.ratio}")
        if self.count is not None and self.count < 1:
            raise ValueError("count must be >= 1")

    def per_subnet_count(self, layout: ParamLayout) -> int:
        if self.kind == "full":
            return layout.per_subnet
        if self.count is not None:
            if self.count > layout.per_subnet:
                raise ValueError(
                    f"requested {self.count} parameters per sub-network, "
                    f"only {layout.per_subnet} exist"
                )
            return self.count
        return max(1, round(self.ratio * layout.per_subnet))


def _draw_subnet(
    strategy: PartitionStrategy, layout: ParamLayout, rng: np.random.Generator
) -> np.ndarray:
    n = layout.per_subnet
    count = strategy.per_subnet_count(layout)
    flags = np.zeros(n, dtype=bool)
    cat = layout.category_flags()
    if strategy.kind in ("fixed", "random_per_step", "redraw_fixed"):
        flags[rng.choice(n, count, replace=False)] = True
        return flags
    if strategy.kind == "random_with_first_layer":
        first = np.flatnonzero(cat["first_layer"])
        if count < first.size:
            raise ValueError(
                f"count {count} cannot cover the {first.size} first-layer parameters"
            )
        flags[first] = True
        rest = np.flatnonzero(~cat["first_layer"])
        extra = count - first.size
        if extra:
            flags[rng.choice(rest, extra, replace=False)] = True
        return flags
    if strategy.kind == "random_without_first_layer":
        pool = np.flatnonzero(~cat["first_layer"])
        if count > pool.size:
            raise ValueError(f"count {count} exceeds the {pool.size} non-first-layer parameters")
        flags[rng.choice(pool, count, replace=False)] = True
        return flags
    if strategy.kind == "random_without_bias":
        pool = np.flatnonzero(~cat["bias"])
        if count > pool.size:
            raise ValueError(f"count {count} exceeds the {pool.size} non-bias parameters")
        flags[rng.choice(pool, count, replace=False)] = True
        return flags
    raise ValueError(strategy.kind)


def select_mask(
    strategy: PartitionStrategy, params: TnnParams, rng: np.random.Generator
) -> ParamMask:
    """One mask draw; per-sub-network counting, independent across dimensions."""
    layout = params.layout
    if strategy.kind == "full":
        return ParamMask(np.ones(layout.total, dtype=bool))
    if strategy.kind in ("fixed", "redraw_fixed") and strategy.seed is not None:
        rng = np.random.default_rng(strategy.seed)
    flags = np.concatenate(
        [_draw_subnet(strategy, layout, rng) for _ in range(params.arch.d)]
    )
    return ParamMask(flags)


class MaskProvider:
    """Deterministic per-step mask source.

    Per-step draws derive their generator from (seed, step index), so a run
    can be reproduced or resumed from any step without replaying the stream.
    """

    def __init__(self, strategy: PartitionStrategy, params: TnnParams, seed: int):
        self.strategy = strategy
        self.params = params
        self.seed = seed if strategy.seed is None else strategy.seed
        self._fixed: ParamMask | None = None
        if strategy.kind in ("full", "fixed"):
            self._fixed = select_mask(strategy, params, np.random.default_rng(self.seed))

    @property
    def redraws(self) -> bool:
        return self._fixed is None

    def mask_for_step(self, step: int) -> ParamMask:
        if self._fixed is not None:
            return self._fixed
        if self.strategy.kind == "redraw_fixed":
            rng = np.random.default_rng(self.seed)
        else:
            rng = np.random.default_rng((self.seed, step))
        return select_mask(self.strategy, self.params, rng)
