"""Central finite-difference gradient checking."""

from dataclasses import dataclass, field

import numpy as np

from .layers import Layer
from .network import Network, softmax_loss


def relative_error(analytic, numeric):
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-8)


@dataclass
class GradReport:
    errors: dict  # parameter name -> max relative error over checked entries
    tol: float
    checked: int = 0
    skipped: list = field(default_factory=list)  # (parameter name, flat index)

    @property
    def max_error(self):
        return max(self.errors.values(), default=0.0)

    @property
    def passed(self):
        return self.checked > 0 and self.max_error < self.tol

    def table(self):
        rows = [f"{name:<32s} {err:.3e}" for name, err in self.errors.items()]
        return "\n".join(rows)


def _same_patterns(a, b):
    for pa, pb in zip(a, b):
        if pa is None and pb is None:
            continue
        if isinstance(pa, list):
            if not _same_patterns(pa, pb):
                return False
        elif not np.array_equal(pa, pb):
            return False
    return True


def grad_check(target, x, h=1e-5, tol=1e-4, labels=None, n_samples=12, seed=0, include_input=True):
    """Compare analytic gradients with ``(f(t+h) - f(t-h)) / 2h``.

    ``target`` is a :class:`Network` or a single :class:`Layer`.  With
    ``labels`` the objective is the softmax loss of the output, otherwise a
    fixed random projection of the output.  Entries whose perturbation flips
    a ReLU mask or a pooling argmax are skipped and listed in the report.
    Runs in float64 regardless of the target's dtype.
    """
    net = Network([target]) if isinstance(target, Layer) else target
    net.astype(np.float64)
    rng = np.random.default_rng(seed)
    x = np.array(x, dtype=np.float64)

    out, cache = net.forward(x)
    if labels is None:
        proj = rng.standard_normal(out.shape)

        def objective(o):
            return float(np.sum(o * proj)), proj
    else:
        def objective(o):
            return softmax_loss(o, labels)

    _, dout = objective(out)
    grads, dx = net.backward(cache, dout)

    def evaluate():
        o, c = net.forward(x)
        return objective(o)[0], net.patterns(c)

    report = GradReport(errors={}, tol=tol)
    targets = []
    for i, key, arr in net.parameters():
        targets.append((f"{net.names[i]}.{key}", arr, grads[i][key]))
    if include_input:
        targets.append(("input", x, dx))

    for name, arr, grad in targets:
        flat, gflat = arr.reshape(-1), grad.reshape(-1)
        count = min(n_samples, flat.size)
        picks = rng.choice(flat.size, size=count, replace=False)
        worst = 0.0
        for idx in picks:
            orig = flat[idx]
            flat[idx] = orig + h
            fp, pp = evaluate()
            flat[idx] = orig - h
            fm, pm = evaluate()
            flat[idx] = orig
            if not _same_patterns(pp, pm):
                report.skipped.append((name, int(idx)))
                continue
            numeric = (fp - fm) / (2 * h)
            worst = max(worst, relative_error(float(gflat[idx]), numeric))
            report.checked += 1
        report.errors[name] = worst
    net.version += 1
    return report
