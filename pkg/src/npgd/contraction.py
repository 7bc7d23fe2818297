"""Contraction diagnostics for the unrolled iteration.

With every gate pinned to a recorded mask snapshot the proximal becomes an
affine map. Writing M_* for the map frozen at the ground truth x_* and M_t
for the map frozen at the actual proximal input of step t, one error step
decomposes exactly (in exact arithmetic) as

    x_{t+1} - x_* = L_*[(I - a N) d_t]                (frozen linear part)
                  + (M_t - M_*)[x_* + (I - a N) d_t]  (mask perturbation)
                  + (M_*(x_*) - x_*)                  (representation error xi)

where d_t = x_t - x_*, N = adjoint(apply(.)), a is the step size, and
L_*(v) = M_*(v) - M_*(0) is the linear part of M_*. The two contraction
ratios measured on real trajectories are

    eta1_t = ||L_*[(I - a N) d_t]|| / ||d_t||
    eta2_t = ||(M_t - M_*)[x_* + (I - a N) d_t]|| / ||d_t||

and the triangle inequality gives the per-step bound
||x_{t+1} - x_*|| <= (eta1_t + eta2_t) ||d_t|| + ||xi||, whose slack is
reported alongside the decomposition residual.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from .core import ComplexImage, norm
from .errors import ContractError, UndefinedRatioError, UnsupportedConfigError
from .operators import LinearOperator, gradient_step
from .proxnet import MaskSnapshot, ProximalNet, capture_masks
from .unroll import unrolled_forward


def _channels(x) -> np.ndarray:
    if isinstance(x, ComplexImage):
        return x.to_channels()
    return np.asarray(x, np.float32)


class FrozenAffineMap:
    """The proximal with gates pinned to one snapshot: an affine operator.

    ``linear`` applies the linear part (differences kill the bias), with
    the constant M(0) cached after the first use.
    """

    def __init__(self, net: ProximalNet, snapshot: MaskSnapshot):
        if net.config.normalization != "none":
            raise UnsupportedConfigError(
                "frozen-mask analysis requires normalization=none")
        if snapshot.signature != net.signature:
            raise ContractError(
                f"snapshot from {snapshot.signature!r} cannot drive {net.signature!r}")
        self.net = net
        self.snapshot = snapshot
        self._at_zero: Optional[np.ndarray] = None

    def __call__(self, u) -> np.ndarray:
        return self.net.forward_frozen(_channels(u), self.snapshot)

    def at_zero(self) -> np.ndarray:
        if self._at_zero is None:
            shape = self.snapshot.masks[0].shape[1:]
            self._at_zero = self(np.zeros((2,) + shape, np.float32))
        return self._at_zero

    def linear(self, v) -> np.ndarray:
        return self(v) - self.at_zero()


def frozen_apply(net: ProximalNet, snapshot: MaskSnapshot, u) -> np.ndarray:
    """Forward pass with every gate replaced by its recorded mask."""
    return FrozenAffineMap(net, snapshot)(u)


def _preconditioned(op: LinearOperator, alpha: float, delta2: np.ndarray) -> np.ndarray:
    """(I - alpha * adjoint(apply(.))) applied to a plane stack."""
    return delta2 - np.float32(alpha) * op.normal_channels(delta2)


def eta1(net: ProximalNet, masks_star: MaskSnapshot, op: LinearOperator,
         alpha: float, delta) -> float:
    """Contraction ratio of the frozen map at the realized perturbation."""
    d2 = _channels(delta)
    nd = norm(d2)
    if nd == 0.0:
        raise UndefinedRatioError("eta1 undefined for a zero perturbation")
    w = _preconditioned(op, alpha, d2)
    return norm(FrozenAffineMap(net, masks_star).linear(w)) / nd


def eta2(net: ProximalNet, masks_star: MaskSnapshot, masks_t: MaskSnapshot,
         op: LinearOperator, alpha: float, delta, x_star) -> float:
    """Perturbation-map ratio at the realized perturbation."""
    d2 = _channels(delta)
    nd = norm(d2)
    if nd == 0.0:
        raise UndefinedRatioError("eta2 undefined for a zero perturbation")
    u = _channels(x_star) + _preconditioned(op, alpha, d2)
    m_star = FrozenAffineMap(net, masks_star)
    m_t = FrozenAffineMap(net, masks_t)
    return norm(m_t(u) - m_star(u)) / nd


def xi_vector(net: ProximalNet, x_star) -> np.ndarray:
    """forward(x*) - x*: how far the truth is from being a fixed point."""
    x2 = _channels(x_star)
    return net.forward(x2).value - x2


def xi_norm(net: ProximalNet, x_star) -> float:
    return norm(xi_vector(net, x_star))


def _require_noiseless(op: LinearOperator, x_star: ComplexImage,
                       y: ComplexImage) -> None:
    ref = max(norm(y), 1e-12)
    if norm(y - op.apply(x_star)) > 1e-4 * ref:
        raise ContractError("decomposition requires noiseless measurements y = apply(x*)")


def decomposition_check(net: ProximalNet, op: LinearOperator, alpha: float,
                        x_t: ComplexImage, x_star: ComplexImage,
                        y: ComplexImage) -> float:
    """|| (x_{t+1} - x_*) - (three decomposition terms + xi) ||.

    Exact in exact arithmetic; anything beyond float roundoff means the
    frozen maps and the live recursion disagree.
    """
    _require_noiseless(op, x_star, y)
    s_next = gradient_step(x_t, y, alpha, op)
    x_next = net.forward(s_next.to_channels()).value
    masks_t = capture_masks(net, s_next)
    masks_star = capture_masks(net, x_star)
    m_t = FrozenAffineMap(net, masks_t)
    m_star = FrozenAffineMap(net, masks_star)
    x2, s2 = x_star.to_channels(), x_t.to_channels()
    w = _preconditioned(op, alpha, s2 - x2)
    term_frozen = m_star.linear(w)
    term_perturb_lin = m_t.linear(w) - term_frozen
    term_perturb_const = m_t(x2) - m_star(x2)
    xi = m_star(x2) - x2  # == forward(x*) - x* since masks_star was captured at x*
    rhs = term_frozen + term_perturb_lin + term_perturb_const + xi
    return norm((x_next - x2) - rhs)


def bound_slack(eta1_t: float, eta2_t: float, delta_norm: float,
                xi: float, err_next: float) -> float:
    """(eta1 + eta2) ||d_t|| + ||xi|| - ||x_{t+1} - x_*||; nonnegative up to
    roundoff by the triangle inequality."""
    return (eta1_t + eta2_t) * delta_norm + xi - err_next


@dataclass
class TraceRow:
    t: int
    nrmse: float
    eta1: float
    eta2: float
    xi_norm: float
    decomp_residual: float
    bound_slack: float
    delta_norm: float
    err_next: float


@dataclass
class ContractionTrace:
    sample: int
    rows: List[TraceRow]


@dataclass
class DebiasResult:
    x: ComplexImage
    converged: bool
    diverged: bool
    iterations: int


def debias(net: ProximalNet, masks_t: MaskSnapshot, op: LinearOperator,
           alpha: float, y: ComplexImage, x_t: ComplexImage,
           max_iters: int = 200, tol: float = 1e-5) -> DebiasResult:
    """Re-solve the fixed point with the proximal replaced by its frozen
    affine map (masks from the final iterate).

    The affine iteration is not guaranteed to contract; on divergence
    (norm growing 100x) the original x_t comes back with a flag.
    """
    frozen = FrozenAffineMap(net, masks_t)
    x = x_t
    norm0 = max(norm(x_t), np.finfo(np.float32).tiny)
    for it in range(1, max_iters + 1):
        xn = ComplexImage.from_channels(frozen(gradient_step(x, y, alpha, op)))
        if norm(xn) > 100.0 * norm0:
            return DebiasResult(x_t, converged=False, diverged=True, iterations=it)
        step = norm(xn - x)
        x = xn
        if step <= tol * max(norm(x), np.finfo(np.float32).tiny):
            return DebiasResult(x, converged=True, diverged=False, iterations=it)
    return DebiasResult(x, converged=False, diverged=False, iterations=max_iters)


def analyze_trajectory(net: ProximalNet, alpha: float, op: LinearOperator,
                       test_set: Sequence[Tuple[ComplexImage, ComplexImage]],
                       iterations: int,
                       out_dir: Optional[Union[str, os.PathLike]] = None
                       ) -> Tuple[List[ContractionTrace], List[tuple]]:
    """Per-sample contraction traces over (ground truth, measurement) pairs.

    Row t covers iterate x_t and the transition to x_{t+1} (one extra
    proximal application extends the last transition past x_T). When
    out_dir is given, writes trace_NNNN.csv per sample plus aggregate.csv.
    """
    if net.config.normalization != "none":
        raise UnsupportedConfigError(
            "contraction analysis requires a chain or normalization-free model")
    traces = []
    for idx, (x_star, y) in enumerate(test_set):
        _require_noiseless(op, x_star, y)
        traj = unrolled_forward(net, op, y, iterations, alpha)
        x2 = x_star.to_channels()
        ref = norm(x2)
        masks_star = capture_masks(net, x2)
        m_star = FrozenAffineMap(net, masks_star)
        xi_vec = net.forward(x2).value - x2
        xi = norm(xi_vec)
        m_star_at_truth = m_star(x2)

        xs = list(traj.x)
        s_extra = gradient_step(ComplexImage.from_channels(xs[-1]), y, alpha, op)
        xs.append(net.forward(s_extra.to_channels()).value)
        s_states = list(traj.s[1:]) + [s_extra.to_channels()]

        rows = []
        for t in range(1, iterations + 1):
            x_t = xs[t - 1]
            x_next = xs[t]
            delta = x_t - x2
            dn = norm(delta)
            err_next = norm(x_next - x2)
            if dn == 0.0:
                # already exactly at the truth: ratios are undefined; record
                # zeros so the trace stays finite
                rows.append(TraceRow(t, 0.0, 0.0, 0.0, xi,
                                     norm((x_next - x2) - xi_vec),
                                     bound_slack(0.0, 0.0, 0.0, xi, err_next),
                                     0.0, err_next))
                continue
            w = _preconditioned(op, alpha, delta)
            masks_t = capture_masks(net, s_states[t - 1])
            m_t = FrozenAffineMap(net, masks_t)
            term_frozen = m_star.linear(w)
            e1 = norm(term_frozen) / dn
            u = x2 + w
            perturb = m_t(u) - m_star(u)
            e2 = norm(perturb) / dn
            rhs = term_frozen + perturb + xi_vec
            resid = norm((x_next - x2) - rhs)
            slack = bound_slack(e1, e2, dn, xi, err_next)
            rows.append(TraceRow(t, dn / ref, e1, e2, xi, resid, slack, dn, err_next))
        traces.append(ContractionTrace(idx, rows))

    aggregate = []
    for t in range(1, iterations + 1):
        at = [tr.rows[t - 1] for tr in traces]
        nr = np.array([r.nrmse for r in at])
        e1 = np.array([r.eta1 for r in at])
        e2 = np.array([r.eta2 for r in at])
        aggregate.append((t, nr.mean(), nr.std(), e1.mean(), e1.std(),
                          e2.mean(), e2.std()))

    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        for tr in traces:
            path = os.path.join(out_dir, f"trace_{tr.sample:04d}.csv")
            with open(path, "w", newline="") as fh:
                fh.write("t,nrmse,eta1,eta2,xi_norm,decomp_residual,bound_slack\n")
                for r in tr.rows:
                    fh.write(f"{r.t},{r.nrmse:.9g},{r.eta1:.9g},{r.eta2:.9g},"
                             f"{r.xi_norm:.9g},{r.decomp_residual:.9g},"
                             f"{r.bound_slack:.9g}\n")
        with open(os.path.join(out_dir, "aggregate.csv"), "w", newline="") as fh:
            fh.write("t,nrmse_mean,nrmse_std,eta1_mean,eta1_std,eta2_mean,eta2_std\n")
            for row in aggregate:
                fh.write(f"{row[0]}," + ",".join(f"{v:.9g}" for v in row[1:]) + "\n")
    return traces, aggregate
