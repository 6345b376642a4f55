"""Gradual magnitude pruning on a cubic sparsity schedule.

Sparsity rises from ``s_i`` to ``s_f`` over ``n`` pruning events spaced
``delta_t`` epochs apart, following

    s_t = s_f + (s_i - s_f) * (1 - (t - t0) / (n * delta_t)) ** 3

and every event masks the smallest-magnitude weights of each prunable tensor
(layer-wise). Masks only ever grow.
"""
from dataclasses import asdict, dataclass, field
import logging

import numpy as np

from .training import apply_mask, train

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PruneSchedule:
    s_i: float = 0.0
    s_f: float = 0.65
    t0: int = 0
    delta_t: int = 1
    n: int = 10
    recovery_epochs: int = 5

    def __post_init__(self):
        if not 0.0 <= self.s_i <= self.s_f < 1.0:
            raise ValueError("schedule needs 0 <= s_i <= s_f < 1")
        if self.n < 1:
            raise ValueError("n (number of pruning events) must be >= 1")
        if self.delta_t < 1:
            raise ValueError("delta_t must be >= 1")
        if self.t0 < 0 or self.recovery_epochs < 0:
            raise ValueError("t0 and recovery_epochs must be non-negative")

    @property
    def end(self):
        return self.t0 + self.n * self.delta_t

    def event_steps(self):
        return [self.t0 + k * self.delta_t for k in range(1, self.n + 1)]

    def to_dict(self):
        return asdict(self)


def sparsity_at(s, t):
    if t <= s.t0:
        return s.s_i
    if t >= s.end:
        return s.s_f
    frac = (t - s.t0) / (s.n * s.delta_t)
    return s.s_f + (s.s_i - s.s_f) * (1.0 - frac) ** 3


def _n_pruned(size, target):
    return int(np.floor(target * size + 0.5))


def compute_mask(tensor, target_sparsity, prior=None):
    """Keep-mask for ``tensor`` with the ``round(target * size)`` smallest |w| removed.

    ``prior`` (a keep-mask) is always contained: weights it removed stay
    removed. Ties in magnitude go to the lower flat index.
    """
    if not 0.0 <= target_sparsity < 1.0:
        raise ValueError(f"target sparsity {target_sparsity} outside [0, 1)")
    w = np.abs(np.asarray(tensor, dtype=np.float64)).ravel()
    k = _n_pruned(w.size, target_sparsity)
    already = np.zeros(w.size, dtype=bool) if prior is None else ~np.asarray(prior, dtype=bool).ravel()
    if already.sum() > k:
        raise ValueError(
            f"target sparsity {target_sparsity} is below the prior mask's {already.sum() / w.size:.4f}"
        )
    # prior-pruned entries sort first, then by magnitude, then by index
    order = np.lexsort((np.arange(w.size), w, ~already))
    keep = np.ones(w.size, dtype=bool)
    keep[order[:k]] = False
    return keep.reshape(np.shape(tensor))


def mask_sparsity(mask):
    total = sum(m.size for m in mask.values())
    return sum(int((~m).sum()) for m in mask.values()) / total


def compute_masks(params, target, prior=None):
    out = {}
    for name, w in params.prunable().items():
        out[name] = compute_mask(w, target, None if prior is None else prior[name])
    return out


def empty_mask(params):
    return {name: np.ones(w.shape, dtype=bool) for name, w in params.prunable().items()}


@dataclass
class PruneHistory:
    events: list = field(default_factory=list)
    phases: list = field(default_factory=list)
    masks: list = field(default_factory=list)  # one snapshot per event, for containment checks

    def to_dict(self):
        return {"events": self.events, "phases": self.phases}


def prune_and_finetune(params, data, cfg, sched, val=None, keep_masks=False):
    """Prune ``params`` to ``sched.s_f`` with fine-tuning between events.

    Returns ``(params, mask, PruneHistory)``; masked weights are exactly zero.
    """
    hist = PruneHistory()
    mask = empty_mask(params)

    def finetune(p, epochs, label, seed_offset):
        if epochs <= 0:
            return p
        phase_cfg = cfg.replace(
            max_epochs=epochs,
            patience=min(cfg.patience, epochs - 1),
            seed=cfg.seed + seed_offset,
        )
        p, h = train(p, data, phase_cfg, mask=mask, val=val)
        hist.phases.append({"phase": label, **h.to_dict()})
        return p

    params = params.copy()
    params = finetune(params, sched.t0, "warmup", 0)
    for k, t in enumerate(sched.event_steps(), start=1):
        target = sparsity_at(sched, t)
        mask = compute_masks(params, target, mask)
        apply_mask(params, mask)
        hist.events.append({"event": k, "step": t, "target": target, "measured": mask_sparsity(mask)})
        if keep_masks:
            hist.masks.append({n: m.copy() for n, m in mask.items()})
        log.info("pruning event %d/%d: sparsity %.4f", k, sched.n, target)
        epochs = sched.delta_t if k < sched.n else sched.recovery_epochs
        params = finetune(params, epochs, "recovery" if k == sched.n else f"event-{k}", k)
    apply_mask(params, mask)
    return params, mask, hist


def tensor_sparsity(params):
    return {name: float(np.mean(w == 0)) for name, w in params.prunable().items()}
