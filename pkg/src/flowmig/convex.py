"""Continuous relaxation of an :class:`~flowmig.formulation.MiqcpModel`.

A :class:`ConeProgram` is the model with every binary either fixed to 0/1
or relaxed to [0, 1]. :func:`solve_cone` presolves it (fixed variables are
substituted, singleton rows and cones with a single free member become
bounds), equilibrates the rows and hands the remainder to Clarabel's
interior-point method. Rotated cones ``a * b >= c**2`` are passed as
``||(2c, a*t - b/t)|| <= a*t + b/t`` with a per-cone balancing factor ``t``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Mapping

import clarabel
import numpy as np
import scipy.sparse as sp

from .formulation import MiqcpModel


@dataclass(frozen=True)
class ToleranceConfig:
    feas: float = 1e-7
    gap: float = 1e-7
    max_iter: int = 200

    def __post_init__(self):
        if not (self.feas > 0 and self.gap > 0 and self.max_iter > 0):
            raise ValueError("tolerances must be positive")


@dataclass(frozen=True)
class ConeProgram:
    lb: np.ndarray
    ub: np.ndarray
    A: sp.csr_matrix
    sense: np.ndarray
    rhs: np.ndarray
    cones: np.ndarray
    obj: np.ndarray
    offset: float = 0.0
    binary: np.ndarray | None = None
    fixings: Mapping[int, float] = field(default_factory=dict)

    @classmethod
    def from_model(cls, model: MiqcpModel, fixings: Mapping[int, float] | None = None) -> "ConeProgram":
        return cls(
            lb=model.lb,
            ub=model.ub,
            A=model.A,
            sense=model.sense,
            rhs=model.rhs,
            cones=model.cones,
            obj=model.obj,
            offset=model.offset,
            binary=model.binary,
            fixings=dict(fixings or {}),
        )

    @property
    def n_vars(self) -> int:
        return len(self.lb)

    def with_fixings(self, fixings: Mapping[int, float]) -> "ConeProgram":
        return replace(self, fixings=dict(fixings))

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        lb, ub = self.lb.astype(float).copy(), self.ub.astype(float).copy()
        if self.fixings:
            idx = np.fromiter(self.fixings.keys(), dtype=int)
            val = np.fromiter(self.fixings.values(), dtype=float)
            lb[idx] = val
            ub[idx] = val
        return lb, ub


@dataclass
class ConeSolution:
    status: str  # "optimal" | "infeasible" | "numerical-failure"
    values: np.ndarray | None
    objective: float
    residuals: dict[str, float] = field(default_factory=dict)
    certificate: object = None
    iterations: int = 0
    message: str = ""
    # Lower bound on the program optimum that stays valid however loosely
    # the solver converged; -inf when none is known.
    bound: float = -math.inf


class _Infeasible(Exception):
    pass


_FIX_RTOL = 1e-10


def _presolve(prog: ConeProgram, feas: float):
    """Propagate fixed values and singleton rows/cones into bounds.

    Returns (lb, ub, fixed mask). Raises _Infeasible with a reason when a
    row or cone over fixed variables is violated or bounds cross.
    """
    lb, ub = prog.bounds()
    A = prog.A.tocsr()
    rows_of_nnz = np.repeat(np.arange(A.shape[0]), np.diff(A.indptr))
    is_le = prog.sense == "<"
    is_ge = prog.sense == ">"
    is_eq = prog.sense == "="
    row_scale = np.maximum(abs(A).max(axis=1).toarray().ravel(), 1e-300)
    cones = prog.cones

    for _ in range(50):
        width = ub - lb
        if np.any(width < -feas * np.maximum(1.0, abs(lb))):
            j = int(np.argmin(width))
            raise _Infeasible(f"bounds cross on variable {j}: [{lb[j]:.6g}, {ub[j]:.6g}]")
        fixed = width <= _FIX_RTOL * np.maximum(1.0, abs(lb))
        val = np.where(fixed, 0.5 * (lb + ub), 0.0)
        ub = np.where(fixed, val, ub)
        lb = np.where(fixed, val, lb)
        changed = False

        free_nnz = ~fixed[A.indices]
        n_free = np.bincount(rows_of_nnz[free_nnz], minlength=A.shape[0])
        const = A @ val
        slack = prog.rhs - const

        empty = n_free == 0
        if np.any(empty):
            s = slack[empty] / row_scale[empty]
            bad = (is_le[empty] & (s < -feas)) | (is_ge[empty] & (s > feas)) | (is_eq[empty] & (abs(s) > feas))
            if np.any(bad):
                k = int(np.flatnonzero(empty)[np.argmax(bad)])
                raise _Infeasible(f"row {k} violated by fixed variables")

        single = n_free == 1
        if np.any(single):
            pos = np.flatnonzero(free_nnz & single[rows_of_nnz])
            rows = rows_of_nnz[pos]
            cols = A.indices[pos]
            coef = A.data[pos]
            bnd = slack[rows] / coef
            # a*v <= s: v <= s/a when a > 0, v >= s/a when a < 0; '>' flips.
            upper = (is_le[rows] & (coef > 0)) | (is_ge[rows] & (coef < 0)) | is_eq[rows]
            lower = (is_le[rows] & (coef < 0)) | (is_ge[rows] & (coef > 0)) | is_eq[rows]
            new_ub = ub.copy()
            new_lb = lb.copy()
            np.minimum.at(new_ub, cols[upper], bnd[upper])
            np.maximum.at(new_lb, cols[lower], bnd[lower])
            if _tightened(lb, ub, new_lb, new_ub):
                changed = True
            lb, ub = new_lb, new_ub

        if len(cones):
            a, b, c = cones[:, 0], cones[:, 1], cones[:, 2]
            fa, fb, fc = fixed[a], fixed[b], fixed[c]
            all_fixed = fa & fb & fc
            if np.any(all_fixed):
                va, vb, vc = lb[a], lb[b], lb[c]
                viol = (vc * vc - va * vb) / np.maximum(1.0, vc * vc)
                if np.any(all_fixed & (viol > feas)):
                    k = int(np.flatnonzero(all_fixed & (viol > feas))[0])
                    raise _Infeasible(f"cone {k} violated by fixed variables")
            new_lb = lb.copy()
            for one, other in ((a, b), (b, a)):
                m = fixed[one] & fc & ~fixed[other] & (lb[one] > 0)
                if np.any(m):
                    need = lb[c[m]] ** 2 / lb[one[m]]
                    np.maximum.at(new_lb, other[m], need)
            if _tightened(lb, ub, new_lb, ub):
                changed = True
            lb = new_lb
        if not changed:
            break
    width = ub - lb
    fixed = width <= _FIX_RTOL * np.maximum(1.0, abs(lb))
    mid = 0.5 * (lb + ub)
    lb = np.where(fixed, mid, lb)
    ub = np.where(fixed, mid, ub)
    return lb, ub, fixed


def _tightened(lb, ub, new_lb, new_ub) -> bool:
    scale = np.maximum(1.0, np.maximum(abs(lb), abs(np.where(np.isfinite(ub), ub, 0.0))))
    return bool(np.any(new_lb - lb > 1e-12 * scale) or np.any(ub - new_ub > 1e-12 * scale))


def _safe_bound(q, A, b, z, n_zero, n_nonneg, lb, ub) -> float:
    """Lower bound on ``q @ x`` that holds whatever the accuracy of ``z``.

    ``z`` is projected onto the dual cone; for any ``x`` in the box with
    ``A x + s = b`` and ``s`` in the cone, weak duality gives
    ``q @ x >= -b @ z + sum_j min(r_j lb_j, r_j ub_j)`` with ``r = q + A.T z``.
    The interior-point gap alone is not enough: its dual residual is measured
    on scaled rows and can hide errors of order 1e-6 behind big-M columns.
    """
    z = z.copy()
    k = n_zero + n_nonneg
    z[n_zero:k] = np.maximum(z[n_zero:k], 0.0)
    soc = z[k:].reshape(-1, 3)
    if len(soc):
        t = soc[:, 0]
        nx = np.hypot(soc[:, 1], soc[:, 2])
        outside = nx > t
        scale = np.where(outside, (t + nx) / (2.0 * np.maximum(nx, 1e-300)), 1.0)
        proj = soc * scale[:, None]
        proj[:, 0] = np.where(outside, (t + nx) / 2.0, t)
        proj[outside & (nx <= -t)] = 0.0
        z[k:] = proj.ravel()
    r = q + A.T @ z
    with np.errstate(invalid="ignore"):
        lo = np.where(r > 0, r * lb, r * ub)
    lo = np.where(r == 0, 0.0, lo)
    return float(-b @ z + lo.sum())


def _residuals(prog: ConeProgram, lb, ub, v: np.ndarray) -> dict[str, float]:
    A = prog.A
    lhs = A @ v
    scale = np.maximum(abs(A).max(axis=1).toarray().ravel(), 1e-300)
    diff = (lhs - prog.rhs) / scale
    viol = np.where(prog.sense == "<", diff, np.where(prog.sense == ">", -diff, abs(diff)))
    bscale = np.maximum(1.0, np.maximum(abs(lb), abs(np.where(np.isfinite(ub), ub, 0.0))))
    bviol = np.maximum(lb - v, v - ub) / bscale
    cv = 0.0
    if len(prog.cones):
        a, b, c = (v[prog.cones[:, k]] for k in range(3))
        # Product form: the norm form hides shortfalls when a + b is large.
        prod = (c * c - a * b) / np.maximum(1.0, c * c)
        cv = float(np.max(np.maximum(prod, np.maximum(-a, -b)), initial=0.0))
    return {
        "primal": float(max(viol.max(initial=0.0), bviol.max(initial=0.0), 0.0)),
        "cone": max(cv, 0.0),
    }


def solve_cone(prog: ConeProgram, tol: ToleranceConfig | None = None) -> ConeSolution:
    """Solve the relaxation to certified tolerances.

    ``status == "optimal"`` guarantees the returned point satisfies every row
    and cone to ``tol.feas`` (rows scaled by their largest coefficient) and
    that the primal/dual objectives agree to ``tol.gap`` relative.
    """
    tol = tol or ToleranceConfig()
    try:
        lb, ub, fixed = _presolve(prog, tol.feas)
    except _Infeasible as exc:
        return ConeSolution("infeasible", None, math.inf, certificate=str(exc), message=str(exc))

    n = prog.n_vars
    free = np.flatnonzero(~fixed)
    col_of = -np.ones(n, dtype=int)
    col_of[free] = np.arange(len(free))
    val_fixed = np.where(fixed, lb, 0.0)
    offset = prog.offset + float(prog.obj @ val_fixed)

    if len(free) == 0:
        v = val_fixed.copy()
        res = _residuals(prog, *prog.bounds(), v)
        return ConeSolution("optimal", v, offset, residuals=res | {"gap": 0.0}, bound=offset)

    A = prog.A.tocsr()
    const = A @ val_fixed
    rhs = prog.rhs - const
    sub = A[:, free].tocsr()
    keep = np.diff(sub.indptr) > 0
    sub = sub[keep]
    rhs = rhs[keep]
    sense = prog.sense[keep]
    scale = np.maximum(abs(sub).max(axis=1).toarray().ravel(), 1e-300)
    sub = sp.diags(1.0 / scale) @ sub
    rhs = rhs / scale

    flip = np.where(sense == ">", -1.0, 1.0)
    eq = sense == "="
    blocks_A = []
    blocks_b = []
    cone_spec = []
    if np.any(eq):
        blocks_A.append(sub[eq])
        blocks_b.append(rhs[eq])
        cone_spec.append(clarabel.ZeroConeT(int(eq.sum())))
    ineq = ~eq
    nf = len(free)
    lb_f, ub_f = lb[free], ub[free]
    has_lb = np.isfinite(lb_f)
    has_ub = np.isfinite(ub_f)
    ident = sp.identity(nf, format="csr")
    bscale_lb = np.maximum(1.0, abs(lb_f[has_lb]))
    bscale_ub = np.maximum(1.0, abs(ub_f[has_ub]))
    nonneg_A = sp.vstack(
        [
            sp.diags(flip[ineq]) @ sub[ineq],
            sp.diags(-1.0 / bscale_lb) @ ident[has_lb],
            sp.diags(1.0 / bscale_ub) @ ident[has_ub],
        ]
    )
    nonneg_b = np.concatenate([flip[ineq] * rhs[ineq], -lb_f[has_lb] / bscale_lb, ub_f[has_ub] / bscale_ub])
    if nonneg_A.shape[0]:
        blocks_A.append(nonneg_A)
        blocks_b.append(nonneg_b)
        cone_spec.append(clarabel.NonnegativeConeT(nonneg_A.shape[0]))

    # Cones with any free member become SOC(3) blocks; constants go to b.
    if len(prog.cones):
        cones = prog.cones
        active = ~(fixed[cones[:, 0]] & fixed[cones[:, 1]] & fixed[cones[:, 2]])
        cones = cones[active]
        k = len(cones)
        if k:
            rows, cols, data = [], [], []
            bvec = np.zeros(3 * k)
            # (a*t)(b/t) >= c**2 with t balancing the upper bounds of a and b,
            # so both factors are O(1) near the top of their range.
            ua, ubb = ub[cones[:, 0]], ub[cones[:, 1]]
            ok = np.isfinite(ua) & np.isfinite(ubb) & (ua > 0) & (ubb > 0)
            t = np.ones(k)
            t[ok] = np.sqrt(ubb[ok] / ua[ok])
            # s = (a t + b/t, 2c, a t - b/t); s = bvec - A v  =>  A = -coef on free, bvec = const.
            terms = ((0, 0, t), (0, 1, 1.0 / t), (1, 2, np.full(k, 2.0)), (2, 0, t), (2, 1, -1.0 / t))
            for comp, member, coef in terms:
                var = cones[:, member]
                is_free = ~fixed[var]
                r = 3 * np.arange(k) + comp
                rows.append(r[is_free])
                cols.append(col_of[var[is_free]])
                data.append(-coef[is_free])
                np.add.at(bvec, r[~is_free], coef[~is_free] * val_fixed[var[~is_free]])
            soc_A = sp.csr_matrix(
                (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))), shape=(3 * k, nf)
            )
            blocks_A.append(soc_A)
            blocks_b.append(bvec)
            cone_spec.extend(clarabel.SecondOrderConeT(3) for _ in range(k))

    n_zero = int(eq.sum())
    n_nonneg = nonneg_A.shape[0]
    Afull = sp.vstack(blocks_A).tocsc()
    bfull = np.concatenate(blocks_b)
    q = prog.obj[free].astype(float)
    P = sp.csc_matrix((nf, nf))

    plb, pub = prog.bounds()
    iters = 0
    failure = None
    for variant in _VARIANTS:
        settings = clarabel.DefaultSettings()
        settings.verbose = False
        settings.tol_feas = min(1e-8, tol.feas * 0.1)
        settings.tol_gap_abs = min(1e-8, tol.gap * 0.1)
        settings.tol_gap_rel = min(1e-8, tol.gap * 0.1)
        settings.max_iter = tol.max_iter
        settings.max_threads = 1
        for key, val in variant.items():
            setattr(settings, key, val)
        out = clarabel.DefaultSolver(P, q, Afull, bfull, cone_spec, settings).solve()
        iters += out.iterations
        status = str(out.status)
        if status in ("PrimalInfeasible", "AlmostPrimalInfeasible"):
            return ConeSolution(
                "infeasible", None, math.inf, certificate=np.asarray(out.z), iterations=iters,
                message=status,
            )
        v = val_fixed.copy()
        v[free] = np.asarray(out.x)
        safe = _safe_bound(q, Afull, bfull, np.asarray(out.z), n_zero, n_nonneg, lb_f, ub_f) + offset
        # Snap tiny bound excursions from the interior-point method.
        v = np.clip(v, plb, pub)
        res = _residuals(prog, plb, pub, v)
        obj = float(prog.obj @ v + prog.offset)
        pobj, dobj = float(out.obj_val), float(out.obj_val_dual)
        res["gap"] = abs(pobj - dobj) / max(1.0, abs(pobj))
        res["safe_gap"] = (obj - safe) / max(1.0, abs(obj))
        ok = res["primal"] <= tol.feas and res["cone"] <= tol.feas and res["gap"] <= tol.gap
        if status in ("Solved", "AlmostSolved") and ok:
            return ConeSolution(
                "optimal", v, obj, residuals=res, iterations=iters, message=status,
                bound=safe,
            )
        if failure is None or res["gap"] + res["primal"] < failure.residuals["gap"] + failure.residuals["primal"]:
            failure = ConeSolution(
                "numerical-failure", v, obj, residuals=res, iterations=iters,
                message=f"clarabel status {status}; residuals {res}", bound=safe,
            )
    failure.iterations = iters
    return failure


# Tried in order until one run certifies; rows are pre-scaled, so Clarabel's
# own equilibration is off by default.
_VARIANTS = (
    {"equilibrate_enable": False},
    {
        "equilibrate_enable": False,
        "iterative_refinement_reltol": 1e-15,
        "iterative_refinement_abstol": 1e-15,
        "iterative_refinement_max_iter": 50,
    },
    {"equilibrate_enable": False, "static_regularization_constant": 1e-9},
    {"equilibrate_enable": False, "direct_solve_method": "faer"},
    {"equilibrate_enable": True},
)
