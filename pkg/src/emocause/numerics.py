"""Dense float64 primitives with hand-written backward passes.

Every forward function here has a matching ``*_backward`` that maps an
upstream gradient to gradients of its inputs. Matrices follow the
``out x in`` convention, so ``affine`` computes ``x @ W.T + b`` and accepts
either a single vector or a batch of row vectors.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Dict, Iterator, List, Optional, Tuple

import numpy as np

LOG_EPS = 1e-12


class ShapeError(ValueError):
    pass


class DeterminismError(RuntimeError):
    pass


def _as_f64(a) -> np.ndarray:
    return np.asarray(a, dtype=np.float64)


class ParameterStore:
    """Named parameter tensors, each paired with a gradient buffer of the same shape."""

    def __init__(self):
        self._params: Dict[str, np.ndarray] = {}
        self._grads: Dict[str, np.ndarray] = {}

    def add(self, name: str, value) -> np.ndarray:
        if name in self._params:
            raise KeyError(f"parameter {name!r} already registered")
        arr = np.array(value, dtype=np.float64, copy=True)
        self._params[name] = arr
        self._grads[name] = np.zeros_like(arr)
        return arr

    def __getitem__(self, name: str) -> np.ndarray:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self) -> Iterator[str]:
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> List[str]:
        return list(self._params)

    def grad(self, name: str) -> np.ndarray:
        return self._grads[name]

    def items(self):
        return self._params.items()

    def zero_grad(self) -> None:
        for g in self._grads.values():
            g.fill(0.0)

    def grad_norm(self) -> float:
        return float(np.sqrt(sum(float(np.vdot(g, g)) for g in self._grads.values())))

    def copy(self) -> "ParameterStore":
        out = ParameterStore()
        for name, value in self._params.items():
            out.add(name, value)
        return out

    def num_entries(self) -> int:
        return sum(p.size for p in self._params.values())

    def equals(self, other: "ParameterStore") -> bool:
        if self.names() != other.names():
            return False
        return all(np.array_equal(self[n], other[n]) for n in self)


# ----------------------------------------------------------------------
# affine
# ----------------------------------------------------------------------


def affine(x, W, b) -> np.ndarray:
    """Return ``W x + b`` for a vector ``x`` or row-wise for a batch."""
    x, W, b = _as_f64(x), _as_f64(W), _as_f64(b)
    if W.ndim != 2 or b.ndim != 1:
        raise ShapeError(f"W must be 2-D and b 1-D, got W{W.shape} and b{b.shape}")
    if x.shape[-1] != W.shape[1]:
        raise ShapeError(f"x{x.shape} does not match W{W.shape}: need x[-1] == {W.shape[1]}")
    if b.shape[0] != W.shape[0]:
        raise ShapeError(f"b{b.shape} does not match W{W.shape}: need len(b) == {W.shape[0]}")
    return x @ W.T + b


def affine_backward(dy, x, W) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients ``(dx, dW, db)`` of ``affine`` given upstream ``dy``."""
    dy, x = _as_f64(dy), _as_f64(x)
    dx = dy @ W
    if x.ndim == 1:
        dW = np.outer(dy, x)
        db = dy.copy()
    else:
        x2 = x.reshape(-1, x.shape[-1])
        dy2 = dy.reshape(-1, dy.shape[-1])
        dW = dy2.T @ x2
        db = dy2.sum(axis=0)
    return dx, dW, db


# ----------------------------------------------------------------------
# softmax / cross-entropy
# ----------------------------------------------------------------------


def softmax(z) -> np.ndarray:
    """Softmax over the last axis with max subtraction."""
    z = _as_f64(z)
    if z.size == 0 or z.shape[-1] == 0:
        raise ValueError("softmax of an empty vector")
    shifted = z - z.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_backward(dp, p) -> np.ndarray:
    dp, p = _as_f64(dp), _as_f64(p)
    return p * (dp - np.sum(dp * p, axis=-1, keepdims=True))


def cross_entropy(pred, truth) -> float:
    """``-sum(truth * log(pred))`` with ``pred`` clamped at ``LOG_EPS``."""
    pred, truth = _as_f64(pred), _as_f64(truth)
    if pred.shape != truth.shape:
        raise ShapeError(f"pred{pred.shape} and truth{truth.shape} differ in shape")
    return float(-np.sum(truth * np.log(np.maximum(pred, LOG_EPS))))


def softmax_cross_entropy(logits, targets) -> Tuple[float, np.ndarray, np.ndarray]:
    """Summed cross-entropy of row-wise softmax against integer class targets.

    Returns ``(loss, probs, dlogits)``. The gradient is exact whenever no
    probability falls under the clamp, which is the regime training runs in.
    """
    logits = _as_f64(logits)
    targets = np.asarray(targets, dtype=np.int64)
    probs = softmax(logits)
    rows = np.arange(logits.shape[0])
    loss = float(-np.sum(np.log(np.maximum(probs[rows, targets], LOG_EPS))))
    dlogits = probs.copy()
    dlogits[rows, targets] -= 1.0
    return loss, probs, dlogits


# ----------------------------------------------------------------------
# recurrent cell
# ----------------------------------------------------------------------


def sigmoid(x) -> np.ndarray:
    # tanh form is overflow-free for any finite x
    return 0.5 * (1.0 + np.tanh(0.5 * _as_f64(x)))


def lstm_gates(z, c_prev):
    """Apply LSTM gate nonlinearities to pre-activations ``z``.

    ``z`` holds ``4 * hidden`` trailing entries in gate order input, forget,
    output, candidate. Returns ``(h, c, cache)``.
    """
    H = c_prev.shape[-1]
    s = sigmoid(z[..., :3 * H])
    i, f, o = s[..., :H], s[..., H:2 * H], s[..., 2 * H:]
    g = np.tanh(z[..., 3 * H:])
    c = f * c_prev + i * g
    tc = np.tanh(c)
    h = o * tc
    return h, c, (i, f, o, g, tc, c_prev)


def lstm_gates_backward(dh, dc, cache):
    """Return ``(dz, dc_prev)`` for ``lstm_gates``."""
    i, f, o, g, tc, c_prev = cache
    dc = dc + dh * o * (1.0 - tc * tc)
    dz = np.concatenate(
        [dc * g * i * (1.0 - i), dc * c_prev * f * (1.0 - f), dh * tc * o * (1.0 - o), dc * i * (1.0 - g * g)],
        axis=-1,
    )
    return dz, dc * f


def lstm_cell(x, h_prev, c_prev, W, b):
    """One LSTM step. ``W`` is ``4H x (in + H)`` acting on ``[x; h_prev]``.

    Returns ``(h, c, cache)``.
    """
    x, h_prev, c_prev = _as_f64(x), _as_f64(h_prev), _as_f64(c_prev)
    H = W.shape[0] // 4
    if W.shape[0] != 4 * H or h_prev.shape[-1] != H or c_prev.shape[-1] != H:
        raise ShapeError(
            f"hidden size mismatch: W{W.shape}, h_prev{h_prev.shape}, c_prev{c_prev.shape}"
        )
    if x.shape[-1] + H != W.shape[1]:
        raise ShapeError(f"x{x.shape} with hidden {H} does not match W{W.shape}")
    xh = np.concatenate([x, h_prev], axis=-1)
    z = affine(xh, W, b)
    h, c, gcache = lstm_gates(z, c_prev)
    return h, c, (xh, W, gcache)


def lstm_cell_backward(dh, dc, cache):
    """Return ``(dx, dh_prev, dc_prev, dW, db)`` for ``lstm_cell``."""
    xh, W, gcache = cache
    dz, dc_prev = lstm_gates_backward(dh, dc, gcache)
    dxh, dW, db = affine_backward(dz, xh, W)
    n_in = W.shape[1] - W.shape[0] // 4
    return dxh[..., :n_in], dxh[..., n_in:], dc_prev, dW, db


# ----------------------------------------------------------------------
# finite-difference gradient checking
# ----------------------------------------------------------------------


@dataclass
class GradCheckReport:
    tolerance: float
    max_rel_error: Dict[str, float] = field(default_factory=dict)
    checked_entries: Dict[str, int] = field(default_factory=dict)

    @property
    def failures(self) -> List[str]:
        return [n for n, e in self.max_rel_error.items() if not e < self.tolerance]

    @property
    def passed(self) -> bool:
        return not self.failures

    def format(self) -> str:
        width = max([len(n) for n in self.max_rel_error] + [6])
        lines = []
        for name, err in self.max_rel_error.items():
            status = "ok" if err < self.tolerance else "FAIL"
            lines.append(
                f"{name:<{width}}  entries={self.checked_entries[name]:<5d} "
                f"max_rel_err={err:.3e}  {status}"
            )
        verdict = "PASS" if self.passed else f"FAIL ({', '.join(self.failures)})"
        lines.append(f"tolerance={self.tolerance:.1e}  {verdict}")
        return "\n".join(lines)


def relative_error(analytic: float, numeric: float, floor: float = 1e-5) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def grad_check(
    closure: Callable[[ParameterStore], float],
    params: ParameterStore,
    tolerance: float = 1e-4,
    step: float = 1e-5,
    max_entries: Optional[int] = 40,
    floor: float = 1e-5,
    seed: int = 0,
) -> GradCheckReport:
    """Compare analytic gradients against central differences.

    ``closure(params)`` must return the scalar loss and accumulate analytic
    gradients into ``params``. Tensors larger than ``max_entries`` are checked
    on a seeded random sample of entries.
    """
    params.zero_grad()
    loss0 = closure(params)
    analytic = {n: params.grad(n).copy() for n in params}
    params.zero_grad()
    if closure(params) != loss0:
        raise DeterminismError("closure returned different losses for identical parameters")

    rng = np.random.default_rng(seed)
    report = GradCheckReport(tolerance=tolerance)
    for name in params:
        value = params[name]
        flat = value.reshape(-1)
        if max_entries is None or flat.size <= max_entries:
            idx = np.arange(flat.size)
        else:
            idx = np.sort(rng.choice(flat.size, size=max_entries, replace=False))
        worst = 0.0
        a_flat = analytic[name].reshape(-1)
        for k in idx:
            orig = flat[k]
            flat[k] = orig + step
            up = closure(params)
            flat[k] = orig - step
            down = closure(params)
            flat[k] = orig
            numeric = (up - down) / (2.0 * step)
            worst = max(worst, relative_error(a_flat[k], numeric, floor))
        report.max_rel_error[name] = worst
        report.checked_entries[name] = int(idx.size)
    params.zero_grad()
    return report
