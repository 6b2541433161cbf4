"""Small dense second-order cone programming.

Problems have the form::

    maximize    c^T x
    subject to  a_i^T x <= b_i                 (linear inequalities)
                ||A_j x + u_j||_2 <= r_j        (second-order cones)

and are solved with a primal-dual interior-point method on the homogeneous
self-dual embedding, using Nesterov-Todd scaling and Mehrotra
predictor-corrector steps.  Several problems sharing the same cone
structure can be solved together in one vectorised batch, which is how the
precoder solves all timeslots of a block at once.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

OPTIMAL = "Optimal"
INFEASIBLE = "Infeasible"
UNBOUNDED = "Unbounded"
NUMERICAL_FAILURE = "NumericalFailure"

DEFAULT_TOL = 1e-8
DEFAULT_MAX_ITER = 200
_STEP_FRACTION = 0.99
_REFINE_STEPS = 2


@dataclass(frozen=True)
class SocConstraint:
    """``||A x + u||_2 <= r`` with a constant right-hand side."""

    A: np.ndarray
    u: np.ndarray
    r: float

    @property
    def dim(self) -> int:
        return self.A.shape[0]


@dataclass(frozen=True)
class SocpProblem:
    n: int
    objective: np.ndarray
    lin_A: np.ndarray = None  # (m, n)
    lin_b: np.ndarray = None  # (m,)
    socs: tuple = ()

    def __post_init__(self):
        c = np.asarray(self.objective, dtype=float).reshape(-1)
        if c.shape != (self.n,):
            raise ValueError(f"objective has length {c.size}, expected n={self.n}")
        A = np.zeros((0, self.n)) if self.lin_A is None else np.asarray(self.lin_A, dtype=float)
        b = np.zeros(0) if self.lin_b is None else np.asarray(self.lin_b, dtype=float).reshape(-1)
        if A.ndim != 2 or A.shape[1] != self.n or A.shape[0] != b.size:
            raise ValueError("linear inequality data has inconsistent dimensions")
        socs = []
        for soc in self.socs:
            if not isinstance(soc, SocConstraint):
                soc = SocConstraint(*soc)
            Aj = np.asarray(soc.A, dtype=float)
            uj = np.asarray(soc.u, dtype=float).reshape(-1)
            if Aj.ndim != 2 or Aj.shape[1] != self.n or Aj.shape[0] != uj.size or Aj.shape[0] < 1:
                raise ValueError("cone data has inconsistent dimensions")
            socs.append(SocConstraint(Aj, uj, float(soc.r)))
        for arr in [c, A, b] + [s.A for s in socs] + [s.u for s in socs]:
            if not np.all(np.isfinite(arr)):
                raise ValueError("problem data must be finite")
        if not all(np.isfinite(s.r) for s in socs):
            raise ValueError("problem data must be finite")
        object.__setattr__(self, "objective", c)
        object.__setattr__(self, "lin_A", A)
        object.__setattr__(self, "lin_b", b)
        object.__setattr__(self, "socs", tuple(socs))

    @classmethod
    def build(cls, n, objective, linear_ineqs=(), soc_constraints=()) -> "SocpProblem":
        """Construct from ``[(a, b), ...]`` rows and ``[(A, u, r), ...]`` cones."""
        rows = [np.asarray(a, dtype=float).reshape(-1) for a, _ in linear_ineqs]
        A = np.array(rows).reshape(len(rows), n)
        b = np.array([float(bb) for _, bb in linear_ineqs])
        return cls(n, objective, A, b, tuple(SocConstraint(*s) for s in soc_constraints))

    @property
    def structure(self) -> tuple:
        return (self.n, self.lin_A.shape[0], tuple(s.dim for s in self.socs))

    def violation(self, x: np.ndarray) -> float:
        """Worst constraint residual at ``x`` (0 when feasible)."""
        x = np.asarray(x, dtype=float)
        worst = 0.0
        if self.lin_b.size:
            worst = max(worst, float(np.max(self.lin_A @ x - self.lin_b)))
        for s in self.socs:
            worst = max(worst, float(np.linalg.norm(s.A @ x + s.u) - s.r))
        return worst

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "objective": self.objective.tolist(),
            "linear_ineqs": [{"a": a.tolist(), "b": float(b)} for a, b in zip(self.lin_A, self.lin_b)],
            "soc_constraints": [{"A": s.A.tolist(), "u": s.u.tolist(), "r": s.r} for s in self.socs],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "SocpProblem":
        return cls.build(
            data["n"],
            data["objective"],
            [(row["a"], row["b"]) for row in data["linear_ineqs"]],
            [(np.array(s["A"], dtype=float).reshape(-1, data["n"]), s["u"], s["r"]) for s in data["soc_constraints"]],
        )

    def dump(self, path) -> None:
        """Write the instance as JSON for offline cross-checking."""
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))


@dataclass
class SocpSolution:
    status: str
    x: np.ndarray
    objective_value: float
    max_violation: float
    iterations: int
    info: dict = field(default_factory=dict, repr=False)


class _Cones:
    """Nonnegative orthant of size ``nl`` followed by Lorentz cones."""

    def __init__(self, nl: int, soc_dims: Sequence[int]):
        self.nl = nl
        self.slices = []
        start = nl
        for q in soc_dims:
            self.slices.append(slice(start, start + q))
            start += q
        self.m = start
        self.degree = nl + len(self.slices)
        self.e = np.zeros(self.m)
        self.e[:nl] = 1.0
        for sl in self.slices:
            self.e[sl.start] = 1.0

    def prod(self, u, v):
        """Jordan product ``u o v``."""
        out = np.empty_like(u)
        nl = self.nl
        out[:, :nl] = u[:, :nl] * v[:, :nl]
        for sl in self.slices:
            uu, vv = u[:, sl], v[:, sl]
            out[:, sl.start] = np.einsum("bi,bi->b", uu, vv)
            out[:, sl.start + 1:sl.stop] = uu[:, :1] * vv[:, 1:] + vv[:, :1] * uu[:, 1:]
        return out

    def div(self, lam, r):
        """Solve ``lam o x = r`` for ``x``."""
        out = np.empty_like(r)
        nl = self.nl
        out[:, :nl] = r[:, :nl] / lam[:, :nl]
        for sl in self.slices:
            l0, l1 = lam[:, sl.start], lam[:, sl.start + 1:sl.stop]
            r0, r1 = r[:, sl.start], r[:, sl.start + 1:sl.stop]
            det = _soc_det(lam[:, sl])
            x0 = (l0 * r0 - np.einsum("bi,bi->b", l1, r1)) / det
            out[:, sl.start] = x0
            out[:, sl.start + 1:sl.stop] = (r1 - x0[:, None] * l1) / l0[:, None]
        return out

    def min_eig(self, u):
        """Smallest Jordan eigenvalue over all cones (negative when outside)."""
        vals = []
        if self.nl:
            vals.append(u[:, :self.nl].min(axis=1))
        for sl in self.slices:
            vals.append(u[:, sl.start] - np.linalg.norm(u[:, sl.start + 1:sl.stop], axis=1))
        return np.min(np.stack(vals), axis=0)

    def max_step(self, u, du):
        """Largest ``alpha`` with ``u + alpha du`` in the cone, capped at ``inf``."""
        B = u.shape[0]
        alpha = np.full(B, np.inf)
        if self.nl:
            ul, dl = u[:, :self.nl], du[:, :self.nl]
            with np.errstate(divide="ignore", invalid="ignore"):
                ratio = np.where(dl < 0, -ul / dl, np.inf)
            alpha = np.minimum(alpha, ratio.min(axis=1))
        for sl in self.slices:
            alpha = np.minimum(alpha, _soc_max_step(u[:, sl], du[:, sl]))
        return alpha


def _soc_det(u):
    """``u0^2 - ||u1||^2`` computed without cancellation."""
    n1 = np.linalg.norm(u[:, 1:], axis=1)
    return (u[:, 0] - n1) * (u[:, 0] + n1)


def _soc_max_step(u, du):
    a = du[:, 0] ** 2 - np.einsum("bi,bi->b", du[:, 1:], du[:, 1:])
    b = 2.0 * (u[:, 0] * du[:, 0] - np.einsum("bi,bi->b", u[:, 1:], du[:, 1:]))
    c = np.maximum(_soc_det(u), 0.0)
    disc = b * b - 4.0 * a * c
    out = np.full(u.shape[0], np.inf)
    with np.errstate(divide="ignore", invalid="ignore"):
        sq = np.sqrt(np.maximum(disc, 0.0))
        q = -0.5 * (b + np.where(b >= 0, sq, -sq))
        r1 = q / a
        r2 = c / q
    roots = np.stack([r1, r2])
    valid = np.isfinite(roots) & (roots >= 0) & (disc >= 0)
    roots = np.where(valid, roots, np.inf)
    out = np.minimum(out, roots.min(axis=0))
    # linear case: a == 0
    lin = np.abs(a) <= 1e-300
    with np.errstate(divide="ignore", invalid="ignore"):
        lin_root = np.where((b < 0) & lin, -c / b, np.inf)
    out = np.minimum(out, lin_root)
    # the scalar part must stay nonnegative as well
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.minimum(out, np.where(du[:, 0] < 0, -u[:, 0] / du[:, 0], np.inf))
    return out


class _NTScaling:
    """Nesterov-Todd scaling ``W`` with ``W z = W^{-1} s = lam`` (W symmetric)."""

    def __init__(self, cones: _Cones, s, z):
        self.cones = cones
        nl = cones.nl
        self.d = np.sqrt(s[:, :nl] / z[:, :nl])
        self.soc = []
        for sl in cones.slices:
            ss, zz = s[:, sl], z[:, sl]
            sn = np.sqrt(np.maximum(_soc_det(ss), 1e-300))
            zn = np.sqrt(np.maximum(_soc_det(zz), 1e-300))
            sb = ss / sn[:, None]
            zb = zz / zn[:, None]
            gam = np.sqrt(np.maximum(0.5 * (1.0 + np.einsum("bi,bi->b", sb, zb)), 1e-300))
            w = sb.copy()
            w[:, 0] += zb[:, 0]
            w[:, 1:] -= zb[:, 1:]
            w /= 2.0 * gam[:, None]
            beta = np.sqrt(sn / zn)
            self.soc.append((beta, w))

    def apply(self, v, inverse=False):
        """``W v`` (or ``W^{-1} v``) for ``v`` of shape (B, m) or (B, m, k)."""
        mat = v.ndim == 3
        out = np.empty_like(v)
        nl = self.cones.nl
        d = self.d[:, :, None] if mat else self.d
        out[:, :nl] = v[:, :nl] / d if inverse else v[:, :nl] * d
        sign = -1.0 if inverse else 1.0
        for sl, (beta, w) in zip(self.cones.slices, self.soc):
            w0, w1 = w[:, 0], w[:, 1:]
            v0, v1 = v[:, sl.start], v[:, sl.start + 1:sl.stop]
            if mat:
                w1v1 = (w1[:, None, :] @ v1)[:, 0, :]
                top = w0[:, None] * v0 + sign * w1v1
                coef = sign * v0 + w1v1 / (1.0 + w0)[:, None]
                rest = v1 + w1[:, :, None] * coef[:, None, :]
                scale = (1.0 / beta if inverse else beta)[:, None]
                out[:, sl.start] = scale * top
                out[:, sl.start + 1:sl.stop] = scale[:, :, None] * rest
            else:
                w1v1 = np.einsum("bi,bi->b", w1, v1)
                top = w0 * v0 + sign * w1v1
                coef = sign * v0 + w1v1 / (1.0 + w0)
                rest = v1 + w1 * coef[:, None]
                scale = 1.0 / beta if inverse else beta
                out[:, sl.start] = scale * top
                out[:, sl.start + 1:sl.stop] = scale[:, None] * rest
        return out


def _stack_problems(problems: Sequence[SocpProblem]):
    struct = problems[0].structure
    for p in problems[1:]:
        if p.structure != struct:
            raise ValueError("batched problems must share the same cone structure")
    n, nl, soc_dims = struct
    cones = _Cones(nl, [q + 1 for q in soc_dims])
    B = len(problems)
    G = np.zeros((B, cones.m, n))
    h = np.zeros((B, cones.m))
    c = np.zeros((B, n))
    for b, p in enumerate(problems):
        G[b, :nl] = p.lin_A
        h[b, :nl] = p.lin_b
        for sl, soc in zip(cones.slices, p.socs):
            G[b, sl.start + 1:sl.stop] = -soc.A
            h[b, sl.start] = soc.r
            h[b, sl.start + 1:sl.stop] = soc.u
        c[b] = -p.objective  # internal form minimises
    return cones, G, h, c


def _equilibrate(cones: _Cones, G, h, c):
    """Scale rows (cone blocks) to unit norm and the objective to unit length."""
    row_norms = np.ones(G.shape[:2])
    nl = cones.nl
    if nl:
        rn = np.linalg.norm(G[:, :nl], axis=2)
        row_norms[:, :nl] = np.where(rn > 0, rn, 1.0)
    for sl in cones.slices:
        bn = np.linalg.norm(G[:, sl.start + 1:sl.stop], axis=2).max(axis=1)
        row_norms[:, sl] = np.where(bn > 0, bn, 1.0)[:, None]
    Gs = G / row_norms[:, :, None]
    hs = h / row_norms
    cn = np.linalg.norm(c, axis=1)
    cn = np.where(cn > 0, cn, 1.0)
    return Gs, hs, c / cn[:, None]


def _violation(cones: _Cones, G, h, x):
    """Worst constraint residual of ``G x <=_K h`` per problem (>= 0)."""
    t = h - np.einsum("bmn,bn->bm", G, x)
    worst = np.zeros(x.shape[0])
    if cones.nl:
        worst = np.maximum(worst, (-t[:, :cones.nl]).max(axis=1))
    for sl in cones.slices:
        worst = np.maximum(worst, np.linalg.norm(t[:, sl.start + 1:sl.stop], axis=1) - t[:, sl.start])
    return worst


def _shift_interior(cones: _Cones, u):
    alpha = -cones.min_eig(u)
    shift = np.where(alpha < 0, 0.0, 1.0 + alpha)
    return u + shift[:, None] * cones.e[None, :]


def solve_socp_batch(problems: Sequence[SocpProblem], tol: float = DEFAULT_TOL,
                     max_iter: int = DEFAULT_MAX_ITER) -> list[SocpSolution]:
    """Solve several problems with identical cone structure in one vectorised run."""
    if not problems:
        return []
    if not 0 < tol <= 1e-2:
        raise ValueError("tol must lie in (0, 1e-2]")
    cones, G0, h0, c0 = _stack_problems(problems)
    G, h, c = _equilibrate(cones, G0, h0, c0)
    B, m, n = G.shape
    deg = cones.degree
    e = cones.e[None, :]
    GT = G.transpose(0, 2, 1)

    # static regularisation keeps the normal equations definite for rank-deficient G
    eye = np.eye(n)[None]
    gram = np.einsum("bmi,bmj->bij", G, G)
    reg = 1e-13 * (1.0 + np.einsum("bii->b", gram))[:, None, None]
    gram = gram + reg * eye
    x = np.linalg.solve(gram, np.einsum("bmn,bm->bn", G, h)[..., None])[..., 0]
    s = _shift_interior(cones, h - np.einsum("bmn,bn->bm", G, x))
    z = -np.einsum("bmn,bn->bm", G, np.linalg.solve(gram, c[..., None])[..., 0])
    z = _shift_interior(cones, z)
    tau = np.ones(B)
    kap = np.ones(B)

    status = np.array([NUMERICAL_FAILURE] * B, dtype=object)
    active = np.ones(B, dtype=bool)
    iters = np.zeros(B, dtype=int)
    stalls = np.zeros(B, dtype=int)
    hnorm = np.maximum(1.0, np.linalg.norm(h, axis=1))

    for it in range(max_iter + 1):
        Gx = (G @ x[..., None])[..., 0]
        Gtz = (GT @ z[..., None])[..., 0]
        cx = np.einsum("bn,bn->b", c, x)
        hz = np.einsum("bm,bm->b", h, z)
        r_x = -Gtz - c * tau[:, None]
        r_z = s + Gx - h * tau[:, None]
        r_t = kap + cx + hz

        xs = x / tau[:, None]
        pcost = cx / tau
        dcost = -hz / tau
        viol = np.maximum(_violation(cones, G, h, xs), _violation(cones, G0, h0, xs))
        dres = np.linalg.norm(r_x, axis=1) / tau
        gap = np.maximum(np.einsum("bm,bm->b", s, z) / tau ** 2, np.abs(pcost - dcost))
        done_opt = (viol <= tol) & (dres <= tol) & (gap <= tol * np.maximum(1.0, np.abs(pcost)))
        with np.errstate(divide="ignore", invalid="ignore"):
            pinf = (hz < 0) & (np.linalg.norm(Gtz, axis=1) <= tol * -hz)
            dinf = (cx < 0) & (np.linalg.norm(Gx + s, axis=1) <= tol * -cx * hnorm)
        for mask, label in ((done_opt, OPTIMAL), (pinf & ~done_opt, INFEASIBLE),
                            (dinf & ~done_opt & ~pinf, UNBOUNDED)):
            hit = mask & active
            status[hit] = label
            active &= ~hit
        bad = active & ~(np.all(np.isfinite(x), axis=1) & np.isfinite(tau))
        active &= ~bad
        if not active.any() or it == max_iter:
            break
        iters[active] += 1

        W = _NTScaling(cones, s, z)
        lam = W.apply(z)
        Ghat = W.apply(G, inverse=True)
        GhatT = Ghat.transpose(0, 2, 1)
        N = GhatT @ Ghat
        N = N + 1e-14 * (1.0 + np.einsum("bii->b", N))[:, None, None] * eye
        # one inverse per iteration serves every right-hand side; refinement repairs its round-off
        Ninv = np.linalg.inv(N)
        mu = (np.einsum("bm,bm->b", s, z) + tau * kap) / (deg + 1)

        def reduced_solve(p, q):
            """Solve ``G^T dz = p``, ``G dx - W^2 dz = q`` for several right-hand sides."""
            Wq = W.apply(q, inverse=True)
            dx = Ninv @ (p + GhatT @ Wq)
            for _ in range(_REFINE_STEPS):
                # the second block holds by construction, so only G^T dz = p needs correcting
                dz = W.apply(Ghat @ dx - Wq, inverse=True)
                dx = dx + Ninv @ (p - GT @ dz)
            dz = W.apply(Ghat @ dx - Wq, inverse=True)
            return dx, dz

        def direction(sigma, r_s, r_k, x1, z1):
            dscale = -(1.0 - sigma)
            d_x, d_z, d_t = dscale[:, None] * r_x, dscale[:, None] * r_z, dscale * r_t
            Wrs = W.apply(cones.div(lam, r_s))
            x2, z2 = reduced_solve((-d_x)[..., None], (d_z - Wrs)[..., None])
            x2, z2 = x2[..., 0], z2[..., 0]
            num = d_t - r_k / tau - np.einsum("bn,bn->b", c, x2) - np.einsum("bm,bm->b", h, z2)
            den = np.einsum("bn,bn->b", c, x1) + np.einsum("bm,bm->b", h, z1) - kap / tau
            dtau = num / den
            dx = x2 + dtau[:, None] * x1
            dz = z2 + dtau[:, None] * z1
            ds = Wrs - W.apply(W.apply(dz))
            dkap = (r_k - kap * dtau) / tau
            return dx, dz, ds, dtau, dkap

        def step_length(dz, ds, dtau, dkap):
            both = cones.max_step(np.concatenate([s, z]), np.concatenate([ds, dz]))
            alpha = np.minimum(both[:B], both[B:])
            with np.errstate(divide="ignore", invalid="ignore"):
                alpha = np.minimum(alpha, np.where(dtau < 0, -tau / dtau, np.inf))
                alpha = np.minimum(alpha, np.where(dkap < 0, -kap / dkap, np.inf))
            return alpha

        x1, z1 = reduced_solve((-c)[..., None], h[..., None])
        x1, z1 = x1[..., 0], z1[..., 0]

        zero = np.zeros(B)
        r_s = -cones.prod(lam, lam)
        r_k = -kap * tau
        dxa, dza, dsa, dta, dka = direction(zero, r_s, r_k, x1, z1)
        alpha_a = np.minimum(1.0, step_length(dza, dsa, dta, dka))
        sigma = np.clip((1.0 - alpha_a) ** 3, 0.0, 1.0)

        r_s = (-cones.prod(lam, lam)
               - cones.prod(W.apply(dsa, inverse=True), W.apply(dza))
               + (sigma * mu)[:, None] * e)
        r_k = -kap * tau - dka * dta + sigma * mu
        dx, dz, ds, dtau, dkap = direction(sigma, r_s, r_k, x1, z1)
        alpha = np.minimum(1.0, _STEP_FRACTION * step_length(dz, ds, dtau, dkap))
        finite = (np.isfinite(alpha) & np.isfinite(dtau) & np.isfinite(dkap)
                  & np.all(np.isfinite(dx), axis=1) & np.all(np.isfinite(dz), axis=1)
                  & np.all(np.isfinite(ds), axis=1))
        active &= finite
        alpha = np.where(active, alpha, 0.0)
        dx, ds, dz = (np.where(active[:, None], v, 0.0) for v in (dx, ds, dz))
        dtau, dkap = (np.where(active, v, 0.0) for v in (dtau, dkap))

        stalls = np.where(active & (alpha < 1e-10), stalls + 1, 0)
        active &= stalls < 5

        x = x + alpha[:, None] * dx
        s = s + alpha[:, None] * ds
        z = z + alpha[:, None] * dz
        tau = tau + alpha * dtau
        kap = kap + alpha * dkap

    results = []
    for b, p in enumerate(problems):
        label = status[b]
        if label == INFEASIBLE:
            xb = np.full(p.n, np.nan)
            obj = -np.inf
            mv = np.inf
        elif label == UNBOUNDED:
            xb = x[b] / max(-float(c[b] @ x[b]), 1e-300)
            obj = np.inf
            mv = np.nan
        else:
            xb = x[b] / tau[b]
            obj = float(p.objective @ xb)
            mv = max(0.0, p.violation(xb))
        results.append(SocpSolution(label, xb, obj, mv, int(iters[b]),
                                    {"tau": float(tau[b]), "kappa": float(kap[b])}))
    return results


def solve_socp(problem: SocpProblem, tol: float = DEFAULT_TOL,
               max_iter: int = DEFAULT_MAX_ITER) -> SocpSolution:
    """Solve one problem; see :func:`solve_socp_batch`."""
    return solve_socp_batch([problem], tol=tol, max_iter=max_iter)[0]
