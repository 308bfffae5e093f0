"""Pure numpy kernels for the built-in Hamiltonian families.

Both families share the form

    H(q, p) = 1/2 p^T A p + beta * sum(p_i^4) + V(q)

with a constant symmetric positive-definite mass matrix ``A``, ``beta >= 0``
(``beta = 0`` is the natural family) and a polynomial potential ``V`` given as
coefficients and an integer exponent table. Every batch method takes arrays of
shape ``(m, n)`` and works row by row.

This module is the reference implementation. The compiled ``_ckernel`` mirrors
it call for call and is selected at import when available.
"""

from __future__ import annotations

import math

import numpy as np

FLOW_H = 0
FLOW_U = 1

STATUS_OK = 0
STATUS_MARGIN = 1
STATUS_MAX_STEPS = 2
STATUS_STEP_UNDERFLOW = 3
STATUS_DOMAIN = 4

# Dormand-Prince 5(4) tableau with Hairer's dense-output coefficients.
_C = (0.0, 0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0)
_A = (
    (),
    (0.2,),
    (3.0 / 40.0, 9.0 / 40.0),
    (44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0),
    (19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0),
    (9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0),
    (35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0),
)
_E = (71.0 / 57600.0, 0.0, -71.0 / 16695.0, 71.0 / 1920.0, -17253.0 / 339200.0, 22.0 / 525.0, -1.0 / 40.0)
_D = (
    -12715105075.0 / 11282082432.0, 0.0, 87487479700.0 / 32700410799.0,
    -10690763975.0 / 1880347072.0, 701980252875.0 / 199316789632.0,
    -1453857185.0 / 822651844.0, 69997945.0 / 29380423.0,
)

OMEGA_BISECT_FRACTION = 1e-3
_BRACKET_SLACK = 1e-9


class FamilyKernel:
    """Batch evaluators, shell solves and flow integrators for one model."""

    backend = "python"

    def __init__(self, mass, beta, coefs, exps, energy, lam_min, lam_max):
        self.A = np.ascontiguousarray(mass, dtype=float)
        self.n = self.A.shape[0]
        self.Ainv = np.linalg.inv(self.A)
        self.beta = float(beta)
        self.coefs = np.ascontiguousarray(coefs, dtype=float)
        self.exps = np.ascontiguousarray(exps, dtype=np.int64).reshape(len(self.coefs), self.n)
        self.energy = float(energy)
        self.lam_min = float(lam_min)
        self.lam_max = float(lam_max)

    # ------------------------------------------------------------------ potential
    def V(self, Q):
        Q = np.asarray(Q, dtype=float)
        mono = np.prod(Q[:, None, :] ** self.exps[None], axis=2)
        return mono @ self.coefs

    def _partial(self, Q, j):
        e = self.exps[:, j]
        mask = e > 0
        if not mask.any():
            return np.zeros(len(Q))
        ex = self.exps[mask].copy()
        ex[:, j] -= 1
        mono = np.prod(Q[:, None, :] ** ex[None], axis=2)
        return mono @ (self.coefs[mask] * e[mask])

    def gradV(self, Q):
        Q = np.asarray(Q, dtype=float)
        return np.stack([self._partial(Q, j) for j in range(self.n)], axis=1)

    def hessV(self, Q):
        Q = np.asarray(Q, dtype=float)
        m, n = Q.shape
        out = np.zeros((m, n, n))
        for a in range(n):
            for b in range(a, n):
                ex = self.exps.copy()
                fac = ex[:, a].astype(float)
                ex[:, a] -= 1
                fac = fac * ex[:, b]
                ex[:, b] -= 1
                mask = fac != 0
                if not mask.any():
                    continue
                mono = np.prod(Q[:, None, :] ** ex[mask][None], axis=2)
                val = mono @ (self.coefs[mask] * fac[mask])
                out[:, a, b] = val
                out[:, b, a] = val
        return out

    # ------------------------------------------------------------------ kinetic
    def K(self, P):
        P = np.asarray(P, dtype=float)
        return 0.5 * np.einsum("mi,ij,mj->m", P, self.A, P) + self.beta * np.sum(P**4, axis=1)

    def Kp(self, P):
        P = np.asarray(P, dtype=float)
        return P @ self.A.T + 4.0 * self.beta * P**3

    def Kpp(self, P):
        P = np.asarray(P, dtype=float)
        out = np.broadcast_to(self.A, (len(P), self.n, self.n)).copy()
        idx = np.arange(self.n)
        out[:, idx, idx] += 12.0 * self.beta * P**2
        return out

    def H(self, Q, P):
        return self.K(P) + self.V(Q)

    # ------------------------------------------------------------------ shell
    def omega(self, Q, Th):
        """Shell scale ``w > 0`` with ``H(q, w*theta) = E``; NaN where no root."""
        Q = np.asarray(Q, dtype=float)
        Th = np.asarray(Th, dtype=float)
        c = self.energy - self.V(Q)
        a = np.einsum("mi,ij,mj->m", Th, self.A, Th)
        b = self.beta * np.sum(Th**4, axis=1)
        out = np.full(len(Q), np.nan)
        ok = (c > 0) & (a > 0) & np.all(np.isfinite(Th), axis=1)
        if not ok.any():
            return out
        c, a, b = c[ok], a[ok], b[ok]
        nu_hi = self.lam_max + 24.0 * max(self.beta, 0.0) * c / self.lam_min
        lo = np.sqrt(2.0 * c / (nu_hi * (1.0 + _BRACKET_SLACK)))
        hi = np.sqrt(2.0 * c / (self.lam_min * (1.0 - _BRACKET_SLACK)))

        def f(w):
            w2 = w * w
            return 0.5 * a * w2 + b * w2 * w2 - c

        valid = (f(lo) <= 0.0) & (f(hi) >= 0.0)
        lo0, hi0 = lo.copy(), hi.copy()
        width = hi - lo
        for _ in range(64):
            mid = 0.5 * (lo + hi)
            pos = f(mid) > 0.0
            hi = np.where(pos, mid, hi)
            lo = np.where(pos, lo, mid)
            if np.all(hi - lo <= OMEGA_BISECT_FRACTION * width):
                break
        w = 0.5 * (lo + hi)
        for _ in range(30):
            df = a * w + 4.0 * b * w**3
            step = f(w) / df
            wn = np.clip(w - step, lo0, hi0)
            done = np.abs(wn - w) <= 1e-15 * w
            w = wn
            if np.all(done):
                break
        w = np.where(valid, w, np.nan)
        out[ok] = w
        return out

    def U(self, Q, P):
        P = np.asarray(P, dtype=float)
        r = np.linalg.norm(P, axis=1)
        out = np.zeros(len(P))
        nz = r > 0
        if nz.any():
            th = P[nz] / r[nz, None]
            w = self.omega(np.asarray(Q, dtype=float)[nz], th)
            out[nz] = (r[nz] / w) ** 2
        return out

    def gradU(self, Q, P):
        """Return ``(U, U_q, U_p)``; zero gradients at ``p = 0``."""
        Q = np.asarray(Q, dtype=float)
        P = np.asarray(P, dtype=float)
        u = self.U(Q, P)
        Uq = np.zeros_like(P)
        Up = np.zeros_like(P)
        nz = u > 0
        nz &= np.isfinite(u)
        if nz.any():
            su = np.sqrt(u[nz])
            ph = P[nz] / su[:, None]
            hp = self.Kp(ph)
            mu = 2.0 / np.sum(hp * ph, axis=1)
            Up[nz] = (su * mu)[:, None] * hp
            Uq[nz] = (u[nz] * mu)[:, None] * self.gradV(Q[nz])
        bad = ~np.isfinite(u)
        Uq[bad] = np.nan
        Up[bad] = np.nan
        return u, Uq, Up

    def to_momentum(self, Q, Vel, tol=1e-13, max_iter=50):
        """Solve ``U_p(q, p) = v`` for ``p``; NaN rows where Newton fails."""
        Q = np.asarray(Q, dtype=float)
        Vel = np.asarray(Vel, dtype=float)
        m, n = Vel.shape
        P = np.zeros_like(Vel)
        vn = np.linalg.norm(Vel, axis=1)
        P[~np.isfinite(vn)] = np.nan
        act = vn > 0
        act &= np.isfinite(vn)
        if not act.any():
            return P
        Qa, Va = Q[act], Vel[act]
        P0 = Va @ self.Ainv.T
        W = self.gradU(Qa, P0)[2]
        s = np.sum(Va * W, axis=1) / np.sum(W * W, axis=1)
        Pa = s[:, None] * P0
        thr = tol * (1.0 + vn[act])

        def resid(Pc, Qc, Vc):
            return self.gradU(Qc, Pc)[2] - Vc

        R = resid(Pa, Qa, Va)
        rn = np.linalg.norm(R, axis=1)
        rn = np.where(np.isfinite(rn), rn, np.inf)
        frozen = ~np.isfinite(rn)
        for _ in range(max_iter):
            live = (rn > thr) & ~frozen
            if not live.any():
                break
            idx = np.nonzero(live)[0]
            Pl, Ql, Vl = Pa[idx], Qa[idx], Va[idx]
            h = 1e-6 * np.linalg.norm(Pl, axis=1)
            J = np.empty((len(idx), n, n))
            for j in range(n):
                Pp = Pl.copy()
                Pm = Pl.copy()
                Pp[:, j] += h
                Pm[:, j] -= h
                J[:, :, j] = (resid(Pp, Ql, Vl) - resid(Pm, Ql, Vl)) / (2.0 * h[:, None])
            delta = np.stack([_solve_or_lstsq(Ji, -ri) for Ji, ri in zip(J, R[idx])])
            lam = np.ones(len(idx))
            pending = np.ones(len(idx), dtype=bool)
            for _ in range(30):
                k = np.nonzero(pending)[0]
                if len(k) == 0:
                    break
                Pt = Pl[k] + lam[k, None] * delta[k]
                Rt = resid(Pt, Ql[k], Vl[k])
                nt = np.linalg.norm(Rt, axis=1)
                good = np.isfinite(nt) & (nt < rn[idx[k]])
                g = idx[k[good]]
                Pa[g], R[g], rn[g] = Pt[good], Rt[good], nt[good]
                pending[k[good]] = False
                lam[k[~good]] *= 0.5
            frozen[idx[pending]] = True
        failed = ~(rn <= 1e3 * thr) | ~np.all(np.isfinite(Pa), axis=1)
        Pa[failed] = np.nan
        P[act] = Pa
        return P

    # ------------------------------------------------------------------ flows
    def rhs(self, flow, y):
        n = self.n
        q = y[None, :n]
        p = y[None, n:2 * n]
        f = np.empty_like(y)
        if flow == FLOW_H:
            kp = self.Kp(p)[0]
            f[:n] = kp
            f[n:2 * n] = -self.gradV(q)[0]
            f[2 * n] = 0.5 * float(kp @ p[0])
        else:
            u, uq, up = self.gradU(q, p)
            if not (np.isfinite(u[0]) and np.all(np.isfinite(uq)) and np.all(np.isfinite(up))):
                return None
            f[:n] = up[0]
            f[n:2 * n] = -uq[0]
            f[2 * n] = math.sqrt(u[0])
        return f

    def _renormalize(self, y):
        n = self.n
        u = self.U(y[None, :n], y[None, n:2 * n])[0]
        if np.isfinite(u) and u > 0:
            y[n:2 * n] /= math.sqrt(u)

    def integrate(self, z0, t_end, flow, rtol, atol, hmax, renorm, stop_margin, max_steps):
        """Adaptive DP5(4) from ``t = 0`` to ``t_end`` on the augmented state.

        The state is ``(q, p, ell)`` where ``ell`` accumulates the Finsler
        arclength. Returns ``(ts, ys, rcont, status)``.
        """
        n = self.n
        d = 2 * n + 1
        y = np.array(z0, dtype=float)
        if flow == FLOW_U and renorm:
            self._renormalize(y)
        ts = [0.0]
        ys = [y.copy()]
        rc = []
        k1 = self.rhs(flow, y)
        if k1 is None:
            return np.array(ts), np.array(ys), np.zeros((0, 5, d)), STATUS_DOMAIN
        t = 0.0
        h = _initial_step(self, flow, y, k1, t_end, rtol, atol, hmax)
        status = STATUS_OK
        nsteps = 0
        last_rejected = False
        while t < t_end:
            if nsteps >= max_steps:
                status = STATUS_MAX_STEPS
                break
            if t + 1.01 * h >= t_end:
                h = t_end - t
            k = [k1]
            failed = False
            for s in range(1, 7):
                yt = y + h * sum(a * k[j] for j, a in enumerate(_A[s]) if a != 0.0)
                ks = self.rhs(flow, yt)
                if ks is None:
                    failed = True
                    break
                k.append(ks)
            if failed:
                h *= 0.25
                last_rejected = True
                if h < 1e-14 * max(1.0, abs(t)):
                    status = STATUS_DOMAIN
                    break
                continue
            y1 = y + h * sum(a * k[j] for j, a in enumerate(_A[6]) if a != 0.0)
            errv = h * sum(e * k[j] for j, e in enumerate(_E) if e != 0.0)
            sc = atol + rtol * np.maximum(np.abs(y), np.abs(y1))
            err = math.sqrt(float(np.mean((errv / sc) ** 2)))
            nsteps += 1
            if not math.isfinite(err):
                h *= 0.25
                last_rejected = True
                continue
            if err <= 1.0:
                ydiff = y1 - y
                bspl = h * k[0] - ydiff
                r5 = h * sum(dd * k[j] for j, dd in enumerate(_D) if dd != 0.0)
                rc.append(np.stack([y.copy(), ydiff, bspl, ydiff - h * k[6] - bspl, r5]))
                t = t + h if t + h < t_end else t_end
                y = y1
                k1 = k[6]
                if flow == FLOW_U and renorm:
                    self._renormalize(y)
                    k1 = self.rhs(flow, y)
                ts.append(t)
                ys.append(y.copy())
                if k1 is None:
                    status = STATUS_DOMAIN
                    break
                if stop_margin > 0 and self.energy - self.V(y[None, :n])[0] < stop_margin:
                    status = STATUS_MARGIN
                    break
                fac = min(5.0, max(0.2, 0.9 * err ** -0.2)) if err > 0 else 5.0
                if last_rejected:
                    fac = min(fac, 1.0)
                h = min(h * fac, hmax)
                last_rejected = False
            else:
                h *= max(0.2, 0.9 * err ** -0.2)
                last_rejected = True
            if h < 1e-14 * max(1.0, abs(t)):
                status = STATUS_STEP_UNDERFLOW
                break
        rcont = np.array(rc) if rc else np.zeros((0, 5, d))
        return np.array(ts), np.array(ys), rcont, status


def _solve_or_lstsq(M, b):
    try:
        return np.linalg.solve(M, b)
    except np.linalg.LinAlgError:
        return np.linalg.lstsq(M, b, rcond=None)[0]


def _initial_step(kernel, flow, y0, f0, t_end, rtol, atol, hmax):
    sc = atol + rtol * np.abs(y0)
    d0 = math.sqrt(float(np.mean((y0 / sc) ** 2)))
    d1 = math.sqrt(float(np.mean((f0 / sc) ** 2)))
    h0 = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
    h0 = min(h0, t_end, hmax)
    f1 = kernel.rhs(flow, y0 + h0 * f0)
    if f1 is None:
        return h0 * 0.01
    d2 = math.sqrt(float(np.mean(((f1 - f0) / sc) ** 2))) / h0
    if max(d1, d2) <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** 0.2
    return min(100.0 * h0, h1, t_end, hmax)
