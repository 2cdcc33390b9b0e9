"""Central finite-difference checks of reverse-mode gradients."""
from dataclasses import dataclass, field

import numpy as np

from . import ops
from .tensor import backward, no_grad

# gradients smaller than this are compared absolutely, not relatively
DEFAULT_FLOOR = 1e-6


def relative_error(analytic, numeric, floor=DEFAULT_FLOOR):
    """``|a - n| / max(|a|, |n|, floor)``; a sign flip gives 2."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / scale


@dataclass
class GradCheckReport:
    max_rel_error: float
    worst_param: str
    worst_index: tuple
    tol: float
    n_checked: int
    per_param: dict = field(default_factory=dict)

    @property
    def passed(self):
        return self.max_rel_error <= self.tol

    def summary(self):
        status = "PASS" if self.passed else "FAIL"
        return (f"{status}: max relative error {self.max_rel_error:.3e} at "
                f"{self.worst_param}{list(self.worst_index)} over {self.n_checked} entries (tol {self.tol:g})")


def _sample_indices(shape, samples, rng):
    size = int(np.prod(shape))
    if samples is None or samples >= size:
        flat = np.arange(size)
    else:
        flat = np.sort(rng.choice(size, size=samples, replace=False))
    return [np.unravel_index(i, shape) for i in flat]


def check_gradients(loss_fn, tensors, h=1e-5, tol=1e-6, samples=None, seed=0, floor=DEFAULT_FLOOR):
    """Compare gradients of ``loss_fn()`` w.r.t. ``tensors`` against central differences.

    ``loss_fn`` must rebuild the graph on each call and return a scalar
    tensor. Tensors with ``requires_grad`` unset are skipped, which is how
    frozen parameters stay out of the report. ``samples`` caps the entries
    checked per tensor.
    """
    tensors = [t for t in tensors if t.requires_grad]
    for t in tensors:
        t.grad = None
    loss = loss_fn()
    backward(loss)
    analytic = {id(t): (np.zeros_like(t.data) if t.grad is None else t.grad.copy()) for t in tensors}
    rng = np.random.default_rng(seed)
    worst = (0.0, None, ())
    per_param, n_checked = {}, 0
    with no_grad():
        for k, t in enumerate(tensors):
            name = t.name or f"tensor{k}"
            param_worst = 0.0
            for idx in _sample_indices(t.data.shape, samples, rng):
                orig = t.data[idx]
                t.data[idx] = orig + h
                up = float(loss_fn().data)
                t.data[idx] = orig - h
                down = float(loss_fn().data)
                t.data[idx] = orig
                numeric = (up - down) / (2.0 * h)
                err = float(relative_error(analytic[id(t)][idx], numeric, floor))
                n_checked += 1
                param_worst = max(param_worst, err)
                if err > worst[0] or worst[1] is None:
                    worst = (err, name, tuple(int(i) for i in idx))
            per_param[name] = param_worst
    return GradCheckReport(worst[0], worst[1], worst[2], tol, n_checked, per_param)


def grad_check(model, inputs, labels, h=1e-5, tol=1e-6, samples_per_param=None, seed=0,
               floor=DEFAULT_FLOOR):
    """Finite-difference check of a network's BCE-loss gradients.

    Only trainable parameters are examined.
    """
    labels = np.asarray(labels, dtype=np.float64)

    def loss_fn():
        return ops.bce_loss(model.forward(inputs), labels)

    return check_gradients(loss_fn, model.parameters(), h=h, tol=tol, samples=samples_per_param,
                           seed=seed, floor=floor)
