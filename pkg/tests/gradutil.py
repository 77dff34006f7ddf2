"""Central finite differences against autograd for sampled parameters."""

import numpy as np
import torch


def finite_diff_relerrs(loss_fn, module: torch.nn.Module, n: int = 20,
                        seed: int = 0, h: float = 1e-5) -> list[float]:
    """Relative error between autograd and central differences.

    ``loss_fn`` must rebuild the scalar loss from scratch on every call and
    be deterministic. The module (and everything inside loss_fn) should be
    float64 for the finite differences to resolve.
    """
    params = [p for p in module.parameters() if p.requires_grad]
    loss = loss_fn()
    grads = torch.autograd.grad(loss, params, allow_unused=True)

    sizes = [p.numel() for p in params]
    total = sum(sizes)
    rng = np.random.default_rng(seed)
    picks = rng.choice(total, size=min(n, total), replace=False)
    bounds = np.cumsum(sizes)

    errs = []
    for flat in sorted(int(i) for i in picks):
        pi = int(np.searchsorted(bounds, flat, side="right"))
        offset = flat - (0 if pi == 0 else int(bounds[pi - 1]))
        with torch.no_grad():
            view = params[pi].view(-1)
            orig = float(view[offset])
            step = h * max(1.0, abs(orig))
            view[offset] = orig + step
            plus = float(loss_fn())
            view[offset] = orig - step
            minus = float(loss_fn())
            view[offset] = orig
        fd = (plus - minus) / (2.0 * step)
        an = 0.0 if grads[pi] is None else float(grads[pi].view(-1)[offset])
        denom = max(abs(an), abs(fd))
        if denom < 1e-8:
            errs.append(0.0)  # both effectively zero
        else:
            errs.append(abs(an - fd) / denom)
    return errs
