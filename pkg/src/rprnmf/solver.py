"""Multiplicative-update solvers for constraint-penalised factorisation.

Both solvers alternate a full W sweep with a full H sweep.  Within a sweep
the data-fit numerator/denominator come from the sweep-start factors (so the
unconstrained case collapses exactly to the classic multiplicative rules),
while penalty terms are re-evaluated from the freshest entries, walking
latent columns outermost and constrained indices innermost.

The divergence solver adapts its penalty coefficients: an iteration that
increases the objective is rolled back and both coefficients are halved,
otherwise they grow by 1%.  The Euclidean solver keeps its coefficients
fixed.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .constraints import ConstraintSet, Measure, _pair_distances, csr as csr_of
from .exceptions import (
    IndexOutOfRangeError,
    InvalidConfigError,
    NegativeEntryError,
    PenaltyOverflowError,
    ShapeMismatchError,
)
from .matrix import (
    EPS,
    DenseMatrix,
    MaskMatrix,
    as_array,
    as_mask_array,
    frobenius_sq_diff,
    matrix_divergence,
)
from .penalties import (
    MAX_EXP,
    div_penalty_grad,
    div_penalty_value,
    euc_penalty_grad,
    euc_penalty_value,
)

# Objective comparisons tolerate this much relative float noise before a
# divergence-mode iteration is treated as an increase and rolled back.
ACCEPT_REL_SLACK = 1e-12


@dataclass
class SolverConfig:
    """Hyperparameters for one factorisation run."""

    k: int
    measure: Measure
    lambda_w: float = 0.0
    lambda_h: float = 0.0
    max_iters: int = 500
    rel_tol: float = 1e-6
    seed: int = 0
    mask: MaskMatrix | None = None
    init_low: float = 0.01
    init_high: float = 1.0

    def __post_init__(self):
        if self.k < 1:
            raise InvalidConfigError(f"latent dimension must be >= 1, got {self.k}")
        if self.lambda_w < 0 or self.lambda_h < 0:
            raise InvalidConfigError("penalty coefficients must be non-negative")
        if self.max_iters < 1:
            raise InvalidConfigError("max_iters must be >= 1")
        if self.rel_tol < 0:
            raise InvalidConfigError("rel_tol must be non-negative")
        if not (0 < self.init_low < self.init_high):
            raise InvalidConfigError("need 0 < init_low < init_high")

    @property
    def adapt_lambda(self) -> bool:
        """Coefficient adaptation runs for the divergence objective only."""
        return self.measure is Measure.DIVERGENCE


@dataclass
class SolverState:
    """Mutable per-run state: live factors, trace and coefficient schedule."""

    w: np.ndarray
    h: np.ndarray
    iteration: int = 0
    objective_trace: list[float] = field(default_factory=list)
    current_lambda_w: float = 0.0
    current_lambda_h: float = 0.0
    last_accepted: tuple[np.ndarray, np.ndarray] | None = None
    rollback_iters: list[int] = field(default_factory=list)


@dataclass
class FactorisationReport:
    """Final factors plus run bookkeeping."""

    w: DenseMatrix
    h: DenseMatrix
    iterations: int
    final_objective: float
    objective_trace: list[float]
    csr: float | None
    rollback_iters: list[int]
    wall_time_s: float


def masked_update_terms(v, mask, w, h, measure: Measure, side: str) -> tuple[np.ndarray, np.ndarray]:
    """Snapshot numerator/denominator of the data-fit ratio for one factor side.

    ``side`` is "w" (terms shaped like W) or "h" (shaped like H).  Without a
    mask these are the classic multiplicative-update terms; with one, only
    observed entries contribute, including the plain row/column sums of the
    divergence denominator, so fully-masked cells are inert.
    """
    va, wa, ha, ma = as_array(v), as_array(w), as_array(h), as_mask_array(mask)
    n, m = va.shape
    if wa.shape[0] != n or ha.shape[1] != m or wa.shape[1] != ha.shape[0]:
        raise ShapeMismatchError(f"factor shapes {wa.shape}, {ha.shape} do not fit data {va.shape}")
    if ma is not None and ma.shape != va.shape:
        raise ShapeMismatchError(f"mask shape {ma.shape} vs data shape {va.shape}")
    k = wa.shape[1]
    if measure is Measure.EUCLIDEAN:
        if ma is None:
            if side == "w":
                return va @ ha.T, wa @ (ha @ ha.T)
            return wa.T @ va, (wa.T @ wa) @ ha
        wh = wa @ ha
        if side == "w":
            return (ma * va) @ ha.T, (ma * wh) @ ha.T
        return wa.T @ (ma * va), wa.T @ (ma * wh)
    wh = np.maximum(wa @ ha, EPS)
    ratio = (va if ma is None else ma * va) / wh
    if side == "w":
        num = ratio @ ha.T
        den = np.broadcast_to(ha.sum(axis=1), (n, k)) if ma is None else ma @ ha.T
        return num, den
    num = wa.T @ ratio
    den = np.broadcast_to(wa.sum(axis=0)[:, None], (k, m)) if ma is None else wa.T @ ma
    return num, den


def euc_update_w_entry(v, w, h, set_w, a: int, b: int, lambda_w: float, mask=None) -> float:
    """New value for W[a, b] under the Euclidean rule, factors as given."""
    num, den = masked_update_terms(v, mask, w, h, Measure.EUCLIDEAN, "w")
    wa = as_array(w)
    _check_entry(wa.shape, a, b)
    cpos = cneg = 0.0
    if set_w is not None and len(set_w) and lambda_w > 0:
        cpos, cneg = euc_penalty_grad(wa, set_w, a, b)
    return float(wa[a, b] * (num[a, b] + lambda_w * cneg) / max(den[a, b] + lambda_w * cpos, EPS))


def euc_update_h_entry(v, w, h, set_h, a: int, b: int, lambda_h: float, mask=None) -> float:
    """New value for H[b, a]: ``a`` is the constrained column, ``b`` the latent row."""
    num, den = masked_update_terms(v, mask, w, h, Measure.EUCLIDEAN, "h")
    ha = as_array(h)
    _check_entry((ha.shape[1], ha.shape[0]), a, b)
    cpos = cneg = 0.0
    if set_h is not None and len(set_h) and lambda_h > 0:
        cpos, cneg = euc_penalty_grad(ha, set_h, a, b)
    return float(ha[b, a] * (num[b, a] + lambda_h * cneg) / max(den[b, a] + lambda_h * cpos, EPS))


def div_update_w_entry(v, w, h, set_w, a: int, b: int, lambda_w: float, mask=None) -> float:
    """New value for W[a, b] under the divergence rule with negative-denominator fallback."""
    num, den = masked_update_terms(v, mask, w, h, Measure.DIVERGENCE, "w")
    wa = as_array(w)
    _check_entry(wa.shape, a, b)
    plain = float(den[a, b])
    if set_w is not None and len(set_w) and lambda_w > 0:
        p = div_penalty_grad(wa, set_w, a, b)
        penalised = 0.5 * lambda_w * p + plain
        if penalised >= 0:
            return float(wa[a, b] * num[a, b] / max(penalised, EPS))
    return float(wa[a, b] * num[a, b] / max(plain, EPS))


def div_update_h_entry(v, w, h, set_h, a: int, b: int, lambda_h: float, mask=None) -> float:
    """Mirror of :func:`div_update_w_entry` for H[b, a]."""
    num, den = masked_update_terms(v, mask, w, h, Measure.DIVERGENCE, "h")
    ha = as_array(h)
    _check_entry((ha.shape[1], ha.shape[0]), a, b)
    plain = float(den[b, a])
    if set_h is not None and len(set_h) and lambda_h > 0:
        p = div_penalty_grad(ha, set_h, a, b)
        penalised = 0.5 * lambda_h * p + plain
        if penalised >= 0:
            return float(ha[b, a] * num[b, a] / max(penalised, EPS))
    return float(ha[b, a] * num[b, a] / max(plain, EPS))


def _check_entry(shape, a, b):
    if not (0 <= a < shape[0]) or not (0 <= b < shape[1]):
        raise IndexOutOfRangeError(f"entry ({a}, {b}) outside factor of shape {shape}")


def objective(v, w, h, sets, config: SolverConfig) -> float:
    """Data-fit term plus coefficient-weighted penalties of both factor sides."""
    set_w, set_h = sets
    return _objective_value(
        as_array(v), as_array(w), as_array(h), set_w, set_h,
        config.lambda_w, config.lambda_h, config.measure, as_mask_array(config.mask),
    )


def _objective_value(va, wa, ha, set_w, set_h, lam_w, lam_h, measure, ma) -> float:
    wh = wa @ ha
    if measure is Measure.EUCLIDEAN:
        total = frobenius_sq_diff(va, wh, ma)
        pen_value = euc_penalty_value
    else:
        total = matrix_divergence(va, np.maximum(wh, EPS), ma)
        pen_value = div_penalty_value
    if set_w is not None and len(set_w) and lam_w > 0:
        total += lam_w * pen_value(wa, set_w)
    if set_h is not None and len(set_h) and lam_h > 0:
        total += lam_h * pen_value(ha, set_h)
    return float(total)


class _PreparedSet:
    """Constraint indices flattened for the inner sweep loop (all 0-based)."""

    __slots__ = ("q", "r", "s", "touched", "adj", "n", "q_arr", "r_arr", "s_arr")

    def __init__(self, cset: ConstraintSet, dim: int):
        cset.check_bounds(dim)
        q_arr, r_arr, s_arr = cset.index_arrays()
        self.q_arr, self.r_arr, self.s_arr = q_arr, r_arr, s_arr
        self.q = q_arr.tolist()
        self.r = r_arr.tolist()
        self.s = s_arr.tolist()
        self.n = len(cset)
        adj: dict[int, list[tuple[int, int]]] = {}
        for l in range(self.n):
            adj.setdefault(self.q[l], []).append((l, 0))
            adj.setdefault(self.r[l], []).append((l, 1))
            adj.setdefault(self.s[l], []).append((l, 2))
        self.touched = sorted(adj)
        self.adj = adj


def _sd_term(x: float, y: float) -> float:
    cx = x if x > EPS else EPS
    cy = y if y > EPS else EPS
    return 0.5 * (cx - cy) * math.log(cx / cy)


def _sweep(fac: np.ndarray, num: np.ndarray, den: np.ndarray,
           prep: _PreparedSet | None, lam: float, measure: Measure) -> None:
    """One full in-place sweep of ``fac`` (vectors x latent orientation).

    ``num``/``den`` are the sweep-start data-fit terms in the same
    orientation.  Unconstrained entries are applied in one vectorised step;
    constrained entries walk the pinned order with distance caches kept
    incrementally up to date, so penalties always see the freshest values.
    """
    if prep is None or lam == 0.0 or prep.n == 0:
        fac *= num / np.maximum(den, EPS)
        return

    nvec, kdim = fac.shape
    plain = fac * (num / np.maximum(den, EPS))
    untouched = np.ones(nvec, dtype=bool)
    untouched[prep.touched] = False
    fac[untouched, :] = plain[untouched, :]

    d1 = _pair_distances(fac, prep.q_arr, prep.r_arr, measure).tolist()
    d2 = _pair_distances(fac, prep.q_arr, prep.s_arr, measure).tolist()
    qs, rs, ss, adj = prep.q, prep.r, prep.s, prep.adj
    euclid = measure is Measure.EUCLIDEAN
    exp = math.exp
    log = math.log

    for k in range(kdim):
        col = fac[:, k].tolist()
        nk = num[:, k].tolist()
        dk = den[:, k].tolist()
        for a in prep.touched:
            old = col[a]
            if euclid:
                cpos = cneg = 0.0
                for l, role in adj[a]:
                    e = d1[l]
                    if e > MAX_EXP:
                        raise PenaltyOverflowError(e)
                    e1 = exp(e)
                    e2 = exp(-d2[l])
                    wq = col[qs[l]]
                    if role == 0:
                        cpos += e1 * wq + e2 * col[ss[l]]
                        cneg += e1 * col[rs[l]] + e2 * wq
                    elif role == 1:
                        cpos += e1 * old
                        cneg += e1 * wq
                    else:
                        cpos += e2 * wq
                        cneg += e2 * old
                new = old * (nk[a] + lam * cneg) / max(dk[a] + lam * cpos, EPS)
            else:
                p = 0.0
                for l, role in adj[a]:
                    if d1[l] < d2[l]:
                        continue
                    wq = col[qs[l]]
                    wq = wq if wq > EPS else EPS
                    if role == 0:
                        wr = col[rs[l]]
                        wr = wr if wr > EPS else EPS
                        ws = col[ss[l]]
                        ws = ws if ws > EPS else EPS
                        p += log(ws / wr) + (ws - wr) / wq
                    elif role == 1:
                        wr = col[rs[l]]
                        wr = wr if wr > EPS else EPS
                        p += log(wr / wq) + (wr - wq) / wr
                    else:
                        ws = col[ss[l]]
                        ws = ws if ws > EPS else EPS
                        p -= log(ws / wq) + (ws - wq) / ws
                pen_den = 0.5 * lam * p + dk[a]
                if pen_den < 0:
                    new = old * nk[a] / max(dk[a], EPS)
                else:
                    new = old * nk[a] / max(pen_den, EPS)
            col[a] = new
            if new != old:
                for l, role in adj[a]:
                    if role == 0:
                        other_r = col[rs[l]]
                        other_s = col[ss[l]]
                        if euclid:
                            d1[l] += (other_r - new) ** 2 - (other_r - old) ** 2
                            d2[l] += (other_s - new) ** 2 - (other_s - old) ** 2
                        else:
                            d1[l] += _sd_term(other_r, new) - _sd_term(other_r, old)
                            d2[l] += _sd_term(other_s, new) - _sd_term(other_s, old)
                    elif role == 1:
                        other = col[qs[l]]
                        if euclid:
                            d1[l] += (other - new) ** 2 - (other - old) ** 2
                        else:
                            d1[l] += _sd_term(other, new) - _sd_term(other, old)
                    else:
                        other = col[qs[l]]
                        if euclid:
                            d2[l] += (other - new) ** 2 - (other - old) ** 2
                        else:
                            d2[l] += _sd_term(other, new) - _sd_term(other, old)
        fac[:, k] = col


def run(v, sets: tuple[ConstraintSet | None, ConstraintSet | None], config: SolverConfig) -> FactorisationReport:
    """Factorise ``v`` into non-negative W (N x K) and H (K x M).

    ``sets`` carries the optional row constraints on W and column constraints
    on H.  With zero coefficients and empty sets this is exactly classic
    multiplicative NMF.  Non-convergence within ``max_iters`` is not an
    error; the report is returned regardless.
    """
    t_start = time.perf_counter()
    va = as_array(v)
    if va.ndim != 2:
        raise ShapeMismatchError(f"expected 2-D data, got ndim={va.ndim}")
    neg = np.where(va.ravel() < 0)[0]
    if neg.size:
        raise NegativeEntryError(int(neg[0]), float(va.ravel()[neg[0]]))
    n, m = va.shape
    set_w, set_h = sets if sets is not None else (None, None)
    ma = as_mask_array(config.mask)
    if ma is not None:
        if ma.shape != va.shape:
            raise ShapeMismatchError(f"mask shape {ma.shape} vs data shape {va.shape}")
        config.mask.require_coverage()

    rng = np.random.default_rng(config.seed)
    state = SolverState(
        w=rng.uniform(config.init_low, config.init_high, size=(n, config.k)),
        h=rng.uniform(config.init_low, config.init_high, size=(config.k, m)),
        current_lambda_w=config.lambda_w,
        current_lambda_h=config.lambda_h,
    )
    prep_w = _PreparedSet(set_w, n) if set_w is not None and len(set_w) else None
    prep_h = _PreparedSet(set_h, m) if set_h is not None and len(set_h) else None
    measure = config.measure

    def current_objective() -> float:
        return _objective_value(
            va, state.w, state.h, set_w, set_h,
            state.current_lambda_w, state.current_lambda_h, measure, ma,
        )

    accepted = current_objective()
    state.objective_trace.append(accepted)

    for it in range(1, config.max_iters + 1):
        state.iteration = it
        if config.adapt_lambda:
            state.last_accepted = (state.w.copy(), state.h.copy())
        num, den = masked_update_terms(va, ma, state.w, state.h, measure, "w")
        _sweep(state.w, num, den, prep_w, state.current_lambda_w, measure)
        num, den = masked_update_terms(va, ma, state.w, state.h, measure, "h")
        _sweep(state.h.T, num.T, den.T, prep_h, state.current_lambda_h, measure)
        obj = current_objective()
        if config.adapt_lambda:
            if obj <= accepted * (1.0 + ACCEPT_REL_SLACK) + ACCEPT_REL_SLACK:
                rel_change = abs(obj - accepted) / max(abs(accepted), EPS)
                accepted = obj
                state.objective_trace.append(obj)
                state.current_lambda_w *= 1.01
                state.current_lambda_h *= 1.01
                if rel_change < config.rel_tol:
                    break
            else:
                state.w[:], state.h[:] = state.last_accepted
                state.current_lambda_w *= 0.5
                state.current_lambda_h *= 0.5
                state.rollback_iters.append(it)
                state.objective_trace.append(accepted)
        else:
            prev = state.objective_trace[-1]
            state.objective_trace.append(obj)
            if abs(obj - prev) / max(abs(prev), EPS) < config.rel_tol:
                break

    final_csr = None
    if (set_w is not None and len(set_w)) or (set_h is not None and len(set_h)):
        final_csr = csr_of(set_w, state.w, set_h, state.h, measure)
    return FactorisationReport(
        w=DenseMatrix(state.w),
        h=DenseMatrix(state.h),
        iterations=len(state.objective_trace) - 1,
        final_objective=state.objective_trace[-1],
        objective_trace=state.objective_trace,
        csr=final_csr,
        rollback_iters=state.rollback_iters,
        wall_time_s=time.perf_counter() - t_start,
    )
