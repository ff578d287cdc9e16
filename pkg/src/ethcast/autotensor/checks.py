"""Finite-difference verification of analytic gradients."""

from dataclasses import dataclass, field

import numpy as np

from . import ops


@dataclass
class GradcheckReport:
    max_rel_error: float
    tolerance: float
    n_checked: int
    per_tensor: dict
    worst: list = field(default_factory=list)

    @property
    def passed(self):
        return self.max_rel_error < self.tolerance

    def format(self):
        lines = [
            f"gradcheck: {'PASS' if self.passed else 'FAIL'} "
            f"max relative error {self.max_rel_error:.3e} (tolerance {self.tolerance:.1e}, "
            f"{self.n_checked} coordinates)"
        ]
        for name, err in self.per_tensor.items():
            lines.append(f"  {name}: {err:.3e}")
        if not self.passed:
            lines.append("  worst coordinates:")
            for name, idx, a, n, rel in self.worst:
                lines.append(f"    {name}{list(idx)} analytic={a:.6e} numeric={n:.6e} rel={rel:.3e}")
        return "\n".join(lines)


def relative_error(a, n):
    return abs(a - n) / max(abs(a), abs(n), 1e-8)


def gradcheck(loss_and_grads, tensors, eps=1e-5, tolerance=1e-4, n_worst=5):
    """Compare analytic gradients with central differences.

    Parameters
    ----------
    loss_and_grads : callable
        ``loss_and_grads() -> (loss, {name: grad})`` evaluated at the current
        contents of ``tensors``.
    tensors : dict of name -> float64 ndarray
        Perturbed in place one coordinate at a time and restored afterwards.
    """
    for name, t in tensors.items():
        if t.dtype != np.float64:
            raise TypeError(f"gradcheck needs float64 tensors, {name} is {t.dtype}")
    _, analytic = loss_and_grads()
    analytic = {k: np.array(v, dtype=np.float64) for k, v in analytic.items()}

    per_tensor = {}
    records = []
    n_checked = 0
    for name, t in tensors.items():
        flat = t.reshape(-1)
        if not np.shares_memory(flat, t):
            raise ValueError(f"{name} must be contiguous for in-place perturbation")
        ga = analytic[name].reshape(-1)
        worst = 0.0
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            lp, _ = loss_and_grads()
            flat[i] = orig - eps
            lm, _ = loss_and_grads()
            flat[i] = orig
            num = (lp - lm) / (2 * eps)
            rel = relative_error(ga[i], num)
            worst = max(worst, rel)
            records.append((rel, name, np.unravel_index(i, t.shape), ga[i], num))
            n_checked += 1
        per_tensor[name] = worst
    records.sort(key=lambda r: -r[0])
    worst = [(name, idx, a, n, rel) for rel, name, idx, a, n in records[:n_worst]]
    max_rel = max(per_tensor.values()) if per_tensor else 0.0
    return GradcheckReport(max_rel, tolerance, n_checked, per_tensor, worst)


def _projected(forward, backward, tensors, rng):
    """Scalar loss <forward(), r> for a fixed random cotangent r."""
    r = None

    def fn():
        nonlocal r
        y = forward()
        if r is None:
            r = rng.standard_normal(y.shape)
        return float(np.sum(y * r)), backward(r)

    return fn


def check_conv3d(shape=(2, 3, 4, 5, 6), cout=4, kshape=(3, 3, 3), padding=None, seed=0,
                 eps=1e-5, tolerance=1e-4, kernels=None):
    rng = np.random.default_rng(seed)
    t = {
        "input": rng.standard_normal(shape),
        "weight": rng.standard_normal((cout, shape[1]) + tuple(kshape)),
        "bias": rng.standard_normal(cout),
    }

    def fwd():
        return ops.conv3d_forward(t["input"], t["weight"], t["bias"], padding, kernels)

    def bwd(g):
        gx, gw, gb = ops.conv3d_backward(g, t["input"], t["weight"], padding, kernels)
        return {"input": gx, "weight": gw, "bias": gb}

    return gradcheck(_projected(fwd, bwd, t, rng), t, eps, tolerance)


def check_relu(shape=(2, 3, 4, 4, 4), seed=0, eps=1e-5, tolerance=1e-4):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(shape)
    # keep inputs away from the kink so central differences are valid
    x[np.abs(x) < 1e-3] = 0.5
    t = {"input": x}
    fn = _projected(lambda: ops.relu_forward(t["input"]),
                    lambda g: {"input": ops.relu_backward(g, t["input"])}, t, rng)
    return gradcheck(fn, t, eps, tolerance)


def check_maxpool(shape=(2, 2, 3, 6, 4), seed=0, eps=1e-5, tolerance=1e-4):
    rng = np.random.default_rng(seed)
    t = {"input": rng.standard_normal(shape)}
    state = {}

    def fwd():
        y, state["idx"] = ops.maxpool2_spatial_forward(t["input"])
        return y

    def bwd(g):
        return {"input": ops.maxpool2_spatial_backward(g, state["idx"], t["input"].shape)}

    return gradcheck(_projected(fwd, bwd, t, rng), t, eps, tolerance)


def check_upsample(shape=(1, 2, 2, 3, 3), seed=0, eps=1e-5, tolerance=1e-4):
    rng = np.random.default_rng(seed)
    t = {"input": rng.standard_normal(shape)}
    fn = _projected(lambda: ops.upsample2_nearest(t["input"]),
                    lambda g: {"input": ops.upsample2_nearest_backward(g)}, t, rng)
    return gradcheck(fn, t, eps, tolerance)


def check_mse(shape=(2, 3, 4, 5), seed=0, eps=1e-5, tolerance=1e-4):
    rng = np.random.default_rng(seed)
    t = {"pred": rng.standard_normal(shape)}
    target = rng.standard_normal(shape)

    def fn():
        return (ops.mse_loss_forward(t["pred"], target),
                {"pred": ops.mse_loss_backward(t["pred"], target)})

    return gradcheck(fn, t, eps, tolerance)
