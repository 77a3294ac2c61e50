"""One-step and iterative gradient-sign attacks plus the random directional attack.

Every attack perturbs within the L-infinity ball of radius ``epsilon`` around
the clean sample and, when ``clip_box`` is set, inside the [0, 1] pixel box.
Baselines accept a ``target`` network: gradients come from ``net`` and success
is scored on ``target`` (transfer setting).  Without it, ``net`` does both.
"""

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .netcore import ShapeError, forward, input_gradient
from .rotation import generate_rotation_set, included_angle_deg, shuffle_set

# candidate batch sizes for the direction search; results do not depend on them
_CHUNK_START = 4
_CHUNK_MAX = 64


@dataclass(frozen=True)
class AttackConfig:
    epsilon: float = 0.1
    alpha: float | None = None  # iterative step; None means epsilon / 10
    iterations: int = 20
    momentum_decay: float = 1.0
    theta: int = 180
    l: int = 10
    clip_box: bool = True
    max_search_iters: int = 5000
    seed: int = 42
    mi_literal: bool = False  # MI-FGSM steps by epsilon instead of epsilon / iterations

    def __post_init__(self):
        if not 0 < self.epsilon <= 1:
            raise ValueError(f"epsilon must lie in (0, 1], got {self.epsilon}")
        if self.alpha is not None and not 0 < self.alpha <= self.epsilon:
            raise ValueError(f"alpha must lie in (0, epsilon={self.epsilon}], got {self.alpha}")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.momentum_decay < 0:
            raise ValueError("momentum_decay must be >= 0")
        if not 1 <= self.theta <= 180:
            raise ValueError("theta must lie in [1, 180]")
        if self.l < 2 or self.l % 2:
            raise ValueError("l must be an even number >= 2")
        if self.max_search_iters < 1:
            raise ValueError("max_search_iters must be >= 1")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be an unsigned 64-bit integer")

    @property
    def step(self):
        return self.alpha if self.alpha is not None else self.epsilon / 10


@dataclass
class AttackOutcome:
    x_adv: np.ndarray
    success: bool
    search_iterations: int = 0
    queries: int = 0
    angle_to_gradient_deg: float = 0.0
    final_true_confidence: float = float("nan")
    # the one-step gradient direction already succeeded (what FGSM would do)
    initial_success: bool = False
    # "success", "initial", "local_optimum", "iteration_cap" or "fixed" for baselines
    stop_reason: str = "fixed"
    # true-class confidence after the initial direction and after each accepted step
    trace: tuple = field(default=())
    # final search direction (RDA only); x_adv == perturb_one_step(x, direction, epsilon)
    direction: np.ndarray | None = None


def sign_vec(v):
    """Componentwise sign with sign(0) = 0, keeping the input dtype."""
    return np.sign(np.asarray(v, dtype=np.float32))


def perturb_one_step(x, v, epsilon, clip_box=True):
    """``x + epsilon * sign(v)``, clamped to [0, 1] when ``clip_box``."""
    x = np.asarray(x, dtype=np.float32)
    v = np.asarray(v, dtype=np.float32)
    if x.shape != v.shape:
        raise ShapeError(f"length mismatch {x.shape} vs {v.shape}")
    out = x + np.float32(epsilon) * np.sign(v)
    if clip_box:
        np.clip(out, np.float32(0.0), np.float32(1.0), out=out)
    return out


def _project(x_t, lo, hi, clip_box):
    np.clip(x_t, lo, hi, out=x_t)
    if clip_box:
        np.clip(x_t, np.float32(0.0), np.float32(1.0), out=x_t)
    return x_t


def is_success(net, x_adv, y):
    return bool(np.argmax(forward(net, x_adv)) != int(y))


def _as_input(net, x):
    x = np.ascontiguousarray(x, dtype=np.float32).reshape(-1)
    if x.shape[0] != net.input_dim:
        raise ShapeError(f"expected input of length {net.input_dim}, got {x.shape[0]}")
    return x


def _scored(x_adv, y, scorer, queries=1):
    p = forward(scorer, x_adv)
    ok = bool(np.argmax(p) != y)
    return AttackOutcome(
        x_adv=x_adv,
        success=ok,
        queries=queries,
        final_true_confidence=float(p[y]),
        initial_success=ok,
    )


def fgsm(net, x, y, cfg, target=None):
    x = _as_input(net, x)
    x_adv = perturb_one_step(x, input_gradient(net, x, y), cfg.epsilon, cfg.clip_box)
    return _scored(x_adv, int(y), target or net)


def bim(net, x, y, cfg, target=None):
    x = _as_input(net, x)
    eps = np.float32(cfg.epsilon)
    alpha = np.float32(cfg.step)
    lo, hi = x - eps, x + eps
    x_t = x.copy()
    for _ in range(cfg.iterations):
        x_t = _project(x_t + alpha * sign_vec(input_gradient(net, x_t, y)), lo, hi, cfg.clip_box)
    return _scored(x_t, int(y), target or net)


def llclass(net, x, cfg, y=None, target=None):
    """Iterative descent toward the least-likely class of the clean input.

    Success is judged against ``y`` (default: the clean prediction).
    """
    x = _as_input(net, x)
    p = forward(net, x)
    y_ll = int(np.argmin(p))
    y_true = int(np.argmax(p)) if y is None else int(y)
    eps = np.float32(cfg.epsilon)
    alpha = np.float32(cfg.step)
    lo, hi = x - eps, x + eps
    x_t = x.copy()
    for _ in range(cfg.iterations):
        x_t = _project(x_t - alpha * sign_vec(input_gradient(net, x_t, y_ll)), lo, hi, cfg.clip_box)
    return _scored(x_t, y_true, target or net, queries=1 if target is not None else 2)


def mifgsm(net, x, y, cfg, target=None):
    """Momentum iterative FGSM with an L1-normalised gradient accumulator.

    Each step moves by ``epsilon / iterations`` (``epsilon`` when
    ``cfg.mi_literal``).  A zero gradient contributes nothing to the
    accumulator.
    """
    x = _as_input(net, x)
    eps = np.float32(cfg.epsilon)
    step = np.float32(cfg.epsilon if cfg.mi_literal else cfg.epsilon / cfg.iterations)
    lo, hi = x - eps, x + eps
    x_t = x.copy()
    g = np.zeros(x.shape[0], dtype=np.float64)
    for _ in range(cfg.iterations):
        grad = input_gradient(net, x_t, y).astype(np.float64)
        norm = np.abs(grad).sum()
        g = cfg.momentum_decay * g + (grad / norm if norm > 0 else 0.0)
        x_t = _project(x_t + step * np.sign(g).astype(np.float32), lo, hi, cfg.clip_box)
    return _scored(x_t, int(y), target or net)


def rda(gradient_net, query_net, x, y, cfg, rng, initial_direction=None):
    """Random directional attack: first-choice hill climbing over partial rotations.

    The search starts from the input gradient of ``gradient_net`` (or from
    ``initial_direction`` when given) and only reads probability vectors of
    ``query_net``.  If the starting direction already misclassifies, it is
    returned without searching.  Otherwise each round draws a fresh shuffled
    set of ``2 * theta`` rotations and moves to the first one that flips the
    prediction or strictly lowers the true-class confidence.  The search ends
    on misclassification, when a full round brings no improvement, or after
    ``cfg.max_search_iters`` accepted steps.

    Rotations that leave the perturbed sample unchanged are rejected without a
    query: their confidence necessarily equals the current one.
    """
    y = int(y)
    x = _as_input(query_net, x)
    m = x.shape[0]
    if initial_direction is None:
        if gradient_net is None:
            raise ValueError("need a gradient network or an explicit initial direction")
        if (gradient_net.input_dim, gradient_net.class_count) != (query_net.input_dim, query_net.class_count):
            raise ShapeError(
                f"gradient network {gradient_net.input_dim}->{gradient_net.class_count} does not match "
                f"query network {query_net.input_dim}->{query_net.class_count}"
            )
        v0 = input_gradient(gradient_net, x, y)
    else:
        v0 = np.ascontiguousarray(initial_direction, dtype=np.float32).reshape(-1)
        if v0.shape[0] != m:
            raise ShapeError(f"initial direction has length {v0.shape[0]}, expected {m}")
    if cfg.l > m:
        raise ValueError(f"l={cfg.l} exceeds the input dimension {m}")

    eps = np.float32(cfg.epsilon)
    clip = bool(cfg.clip_box)
    current = perturb_one_step(x, v0, eps, clip)
    p = forward(query_net, current)
    queries = 1
    cur_best = p[y]
    trace = [float(cur_best)]
    if np.argmax(p) != y:
        return AttackOutcome(current, True, 0, queries, 0.0, float(cur_best), True, "initial", tuple(trace), v0)

    v = v0.copy()
    iterations = 0
    success = False
    buf = np.empty((_CHUNK_MAX, m), dtype=np.float32)
    while True:
        if iterations >= cfg.max_search_iters:
            reason = "iteration_cap"
            break
        rset = shuffle_set(generate_rotation_set(m, cfg.l, cfg.theta, rng), rng)
        order = np.arange(len(rset), dtype=np.int64)
        pos, chunk, accepted = 0, _CHUNK_START, False
        while pos < len(order) and not accepted:
            n, plans, pos = kernels.build_candidates(
                x, v, current, rset.indices, rset.cos, rset.sin, order, pos, eps, clip, buf[:chunk]
            )
            if n == 0:
                break
            probs = forward(query_net, buf[:n])
            for r in range(n):
                queries += 1
                pr = probs[r]
                flipped = np.argmax(pr) != y
                if flipped or pr[y] < cur_best:
                    j = plans[r]
                    v = kernels.rotate_pairs(v, rset.indices[j], rset.cos[j], rset.sin[j])
                    current = buf[r].copy()
                    cur_best = pr[y]
                    trace.append(float(cur_best))
                    iterations += 1
                    success = bool(flipped)
                    accepted = True
                    break
            chunk = min(2 * chunk, _CHUNK_MAX)
        if not accepted:
            reason = "local_optimum"
            break
        if success:
            reason = "success"
            break

    x_adv = perturb_one_step(x, v, eps, clip)
    angle = included_angle_deg(v0, v) if np.any(v0) else 0.0
    return AttackOutcome(x_adv, success, iterations, queries, angle, float(cur_best), False, reason, tuple(trace), v)


def run_method(method, net, x, y, cfg, target=None, rng=None):
    """Dispatch one baseline (``net`` crafts, ``target`` scores) or RDA."""
    if method == "fgsm":
        return fgsm(net, x, y, cfg, target)
    if method == "bim":
        return bim(net, x, y, cfg, target)
    if method == "llclass":
        return llclass(net, x, cfg, y=y, target=target)
    if method == "mifgsm":
        return mifgsm(net, x, y, cfg, target)
    if method == "rda":
        return rda(net, target or net, x, y, cfg, rng)
    raise ValueError(f"unknown attack method {method!r}")


__all__ = [
    "AttackConfig",
    "AttackOutcome",
    "bim",
    "fgsm",
    "is_success",
    "llclass",
    "mifgsm",
    "perturb_one_step",
    "rda",
    "run_method",
    "sign_vec",
]
