"""Central finite differences against autograd, for the gradient tests."""

from __future__ import annotations

import numpy as np
import torch


def relative_gradient_error(fn, tensors, eps: float = 1e-6, max_entries: int = 40, seed: int = 0,
                            floor: float = 1e-6) -> float:
    """Worst per-tensor ``|g_fd - g_ad| / max(|g_fd|, floor * max(1, |f|))`` over a random subset of entries.

    The floor keeps gradients that vanish by construction (a bias in front of
    a batch-statistics normalisation) from turning round-off into a ratio.

    ``fn`` maps no arguments to a scalar tensor and must read ``tensors``
    (float64 leaves with ``requires_grad``) each time it is called.
    """
    for t in tensors:
        t.grad = None
    out = fn()
    f_scale = max(1.0, abs(out.item()))
    analytic = torch.autograd.grad(out, tensors, allow_unused=True)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for t, g in zip(tensors, analytic):
        g = torch.zeros_like(t) if g is None else g
        flat = t.data.view(-1)  # leaves are contiguous
        idx = rng.choice(flat.numel(), size=min(max_entries, flat.numel()), replace=False)
        num, ana = [], []
        for i in idx:
            old = flat[i].item()
            with torch.no_grad():
                flat[i] = old + eps
                up = fn().item()
                flat[i] = old - eps
                down = fn().item()
                flat[i] = old
            num.append((up - down) / (2 * eps))
            ana.append(g.reshape(-1)[i].item())
        num, ana = np.array(num), np.array(ana)
        err = np.linalg.norm(num - ana) / max(np.linalg.norm(num), floor * f_scale)
        worst = max(worst, float(err))
    return worst
