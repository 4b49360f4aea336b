"""Central finite-difference check of every network parameter.

The loss is the windowed mean cross-entropy of ``truncated_bptt``. Errors are
``|analytic - numeric| / max(|analytic|, |numeric|, floor)``; the floor keeps
entries whose true gradient is near zero from reporting pure round-off.
"""

from dataclasses import dataclass

import numpy as np

from .numerics import SplitMix64, mix64
from .recurrent_nets import build_network
from .tasks import make_task
from .training import _pad_batch, truncated_bptt

MAX_PARAMS = 5000
TOLERANCE = 1e-5
EPS = 1e-5
FLOOR = 1e-4


class BudgetExceeded(ValueError):
    pass


@dataclass
class GroupResult:
    group: str
    count: int
    max_rel_error: float
    worst_index: tuple

    @property
    def passed(self):
        return self.max_rel_error <= TOLERANCE


def relative_error(analytic, numeric, floor=FLOOR):
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def check_gradients(network, frames, labels, train_config, eps=EPS, corrupt=None):
    """Per parameter group (e.g. ``layer1.W_i``), the worst relative error.

    ``corrupt`` names a group whose analytic gradient is deliberately
    perturbed; it exists so tests can confirm a bad backward is caught.
    """
    params = network.parameters()
    total = sum(p.size for p in params.values())
    if total > MAX_PARAMS:
        raise BudgetExceeded(f"gradcheck needs a network of at most {MAX_PARAMS} parameters, got {total}")
    grads = truncated_bptt(network, frames, labels, train_config).grads
    if corrupt is not None:
        matches = [k for k in grads if k.split("/")[0] == corrupt]
        if not matches:
            raise KeyError(f"no parameter group named {corrupt}")
        for key in matches:
            grads[key] = grads[key] * 1.01 + 1e-3

    def loss():
        return truncated_bptt(network, frames, labels, train_config).loss

    results = {}
    for key, p in params.items():
        group = key.split("/")[0]
        worst = results.get(group, GroupResult(group, 0, 0.0, ()))
        for idx in np.ndindex(p.shape):
            saved = p[idx]
            p[idx] = saved + eps
            up = loss()
            p[idx] = saved - eps
            down = loss()
            p[idx] = saved
            err = relative_error(grads[key][idx], (up - down) / (2 * eps))
            if err > worst.max_rel_error:
                worst = GroupResult(group, worst.count, err, (key,) + idx)
            worst.count += 1
        results[group] = worst
    return list(results.values())


def gradcheck_config(config, corrupt=None, eps=EPS):
    """Build the configured network with a fixed seed and check it on one task window.

    Parameters are drawn from U[-0.5, 0.5] rather than the training init so
    that no gradient is buried under the error floor.
    """
    rng = SplitMix64(config.train.seed)
    network = build_network(config.network, rng, config.train.cell_clip)
    init = SplitMix64(mix64(config.train.seed, 0x6C))
    for p in network.parameters().values():
        p[...] = init.uniform(p.shape, -0.5, 0.5)
    split = make_task(config.task)
    frames, labels = _pad_batch(split.train[:2])
    return check_gradients(network, frames, labels, config.train, eps=eps, corrupt=corrupt)
