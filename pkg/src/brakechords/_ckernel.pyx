# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels for the built-in Hamiltonian families.

Mirrors ``brakechords._pykernel.FamilyKernel`` call for call. The heavy loops
(shell root solves, Legendre Newton iterations and the DP5(4) integrator) run
without the GIL so independent solves can proceed on separate threads.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, fabs, isfinite, pow, NAN
from libc.stdlib cimport malloc, realloc, free
from libc.string cimport memcpy

cnp.import_array()

cdef enum:
    MAXN = 16
    MAXD = 33

FLOW_H = 0
FLOW_U = 1

cdef double OMEGA_BISECT_FRACTION = 1e-3
cdef double BRACKET_SLACK = 1e-9

# Dormand-Prince 5(4)
cdef double A21 = 0.2
cdef double A31 = 3.0 / 40.0, A32 = 9.0 / 40.0
cdef double A41 = 44.0 / 45.0, A42 = -56.0 / 15.0, A43 = 32.0 / 9.0
cdef double A51 = 19372.0 / 6561.0, A52 = -25360.0 / 2187.0, A53 = 64448.0 / 6561.0, A54 = -212.0 / 729.0
cdef double A61 = 9017.0 / 3168.0, A62 = -355.0 / 33.0, A63 = 46732.0 / 5247.0, A64 = 49.0 / 176.0
cdef double A65 = -5103.0 / 18656.0
cdef double A71 = 35.0 / 384.0, A73 = 500.0 / 1113.0, A74 = 125.0 / 192.0, A75 = -2187.0 / 6784.0
cdef double A76 = 11.0 / 84.0
cdef double E1 = 71.0 / 57600.0, E3 = -71.0 / 16695.0, E4 = 71.0 / 1920.0, E5 = -17253.0 / 339200.0
cdef double E6 = 22.0 / 525.0, E7 = -1.0 / 40.0
cdef double D1 = -12715105075.0 / 11282082432.0, D3 = 87487479700.0 / 32700410799.0
cdef double D4 = -10690763975.0 / 1880347072.0, D5 = 701980252875.0 / 199316789632.0
cdef double D6 = -1453857185.0 / 822651844.0, D7 = 69997945.0 / 29380423.0


cdef inline double ipow(double x, int e) noexcept nogil:
    cdef double r = 1.0
    while e > 0:
        r *= x
        e -= 1
    return r


cdef int solve_dense(double* M, double* b, int n) noexcept nogil:
    """Gaussian elimination with partial pivoting, in place; 0 if singular."""
    cdef int i, j, k, piv
    cdef double big, t, f
    for k in range(n):
        piv = k
        big = fabs(M[k * n + k])
        for i in range(k + 1, n):
            if fabs(M[i * n + k]) > big:
                big = fabs(M[i * n + k])
                piv = i
        if big == 0.0 or not isfinite(big):
            return 0
        if piv != k:
            for j in range(n):
                t = M[k * n + j]
                M[k * n + j] = M[piv * n + j]
                M[piv * n + j] = t
            t = b[k]
            b[k] = b[piv]
            b[piv] = t
        for i in range(k + 1, n):
            f = M[i * n + k] / M[k * n + k]
            for j in range(k, n):
                M[i * n + j] -= f * M[k * n + j]
            b[i] -= f * b[k]
    for k in range(n - 1, -1, -1):
        t = b[k]
        for j in range(k + 1, n):
            t -= M[k * n + j] * b[j]
        b[k] = t / M[k * n + k]
    return 1


cdef class FamilyKernel:
    """Batch evaluators, shell solves and flow integrators for one model."""

    cdef readonly int n
    cdef int nmono
    cdef readonly double beta, energy, lam_min, lam_max
    cdef double* A
    cdef double* Ainv
    cdef double* coef
    cdef int* exps
    cdef readonly object mass

    backend = "cython"

    def __cinit__(self, mass, double beta, coefs, exps, double energy, double lam_min, double lam_max):
        cdef cnp.ndarray[cnp.float64_t, ndim=2] Am = np.ascontiguousarray(mass, dtype=np.float64)
        cdef cnp.ndarray[cnp.float64_t, ndim=2] Ai = np.ascontiguousarray(np.linalg.inv(Am))
        cdef cnp.ndarray[cnp.float64_t, ndim=1] cf = np.ascontiguousarray(coefs, dtype=np.float64)
        cdef int n = Am.shape[0]
        cdef cnp.ndarray[cnp.int64_t, ndim=2] ex = np.ascontiguousarray(
            np.asarray(exps, dtype=np.int64).reshape(cf.shape[0], n))
        cdef int i, j
        if n > MAXN:
            raise ValueError("compiled kernel supports n <= %d" % MAXN)
        self.mass = Am
        self.n = n
        self.nmono = cf.shape[0]
        self.beta = beta
        self.energy = energy
        self.lam_min = lam_min
        self.lam_max = lam_max
        self.A = <double*> malloc(n * n * sizeof(double))
        self.Ainv = <double*> malloc(n * n * sizeof(double))
        self.coef = <double*> malloc(max(self.nmono, 1) * sizeof(double))
        self.exps = <int*> malloc(max(self.nmono * n, 1) * sizeof(int))
        if not self.A or not self.Ainv or not self.coef or not self.exps:
            raise MemoryError()
        for i in range(n):
            for j in range(n):
                self.A[i * n + j] = Am[i, j]
                self.Ainv[i * n + j] = Ai[i, j]
        for i in range(self.nmono):
            self.coef[i] = cf[i]
            for j in range(n):
                self.exps[i * n + j] = <int> ex[i, j]

    def __dealloc__(self):
        free(self.A)
        free(self.Ainv)
        free(self.coef)
        free(self.exps)

    # ------------------------------------------------------------------ scalar cores
    cdef double _V(self, const double* q) noexcept nogil:
        cdef double s = 0.0, t
        cdef int k, j, n = self.n
        for k in range(self.nmono):
            t = self.coef[k]
            for j in range(n):
                t *= ipow(q[j], self.exps[k * n + j])
            s += t
        return s

    cdef void _gradV(self, const double* q, double* g) noexcept nogil:
        cdef int k, j, i, e, n = self.n
        cdef double t
        for j in range(n):
            g[j] = 0.0
        for k in range(self.nmono):
            for j in range(n):
                e = self.exps[k * n + j]
                if e == 0:
                    continue
                t = self.coef[k] * e * ipow(q[j], e - 1)
                for i in range(n):
                    if i != j:
                        t *= ipow(q[i], self.exps[k * n + i])
                g[j] += t

    cdef void _hessV(self, const double* q, double* h) noexcept nogil:
        cdef int k, a, b, i, ea, eb, n = self.n
        cdef double t
        for a in range(n * n):
            h[a] = 0.0
        for k in range(self.nmono):
            for a in range(n):
                ea = self.exps[k * n + a]
                if ea == 0:
                    continue
                for b in range(a, n):
                    eb = self.exps[k * n + b]
                    if a == b:
                        if ea < 2:
                            continue
                        t = self.coef[k] * ea * (ea - 1) * ipow(q[a], ea - 2)
                        for i in range(n):
                            if i != a:
                                t *= ipow(q[i], self.exps[k * n + i])
                    else:
                        if eb == 0:
                            continue
                        t = self.coef[k] * ea * eb * ipow(q[a], ea - 1) * ipow(q[b], eb - 1)
                        for i in range(n):
                            if i != a and i != b:
                                t *= ipow(q[i], self.exps[k * n + i])
                    h[a * n + b] += t
                    if a != b:
                        h[b * n + a] += t

    cdef double _K(self, const double* p) noexcept nogil:
        cdef int i, j, n = self.n
        cdef double s = 0.0, t, p2
        for i in range(n):
            t = 0.0
            for j in range(n):
                t += self.A[i * n + j] * p[j]
            p2 = p[i] * p[i]
            s += 0.5 * p[i] * t + self.beta * p2 * p2
        return s

    cdef void _Kp(self, const double* p, double* out) noexcept nogil:
        cdef int i, j, n = self.n
        cdef double t
        for i in range(n):
            t = 0.0
            for j in range(n):
                t += self.A[i * n + j] * p[j]
            out[i] = t + 4.0 * self.beta * p[i] * p[i] * p[i]

    cdef double _omega(self, const double* q, const double* th) noexcept nogil:
        """Shell scale along ``th``; negative when no root is bracketed."""
        cdef int i, j, n = self.n, it
        cdef double c = self.energy - self._V(q)
        cdef double a = 0.0, b = 0.0, t, nu_hi, lo, hi, lo0, hi0, width, mid, w, w2, f, df, wn
        if not (c > 0.0):
            return -1.0
        for i in range(n):
            if not isfinite(th[i]):
                return -1.0
            t = 0.0
            for j in range(n):
                t += self.A[i * n + j] * th[j]
            a += th[i] * t
            b += th[i] * th[i] * th[i] * th[i]
        b *= self.beta
        if not (a > 0.0):
            return -1.0
        nu_hi = self.lam_max + 24.0 * (self.beta if self.beta > 0.0 else 0.0) * c / self.lam_min
        lo = sqrt(2.0 * c / (nu_hi * (1.0 + BRACKET_SLACK)))
        hi = sqrt(2.0 * c / (self.lam_min * (1.0 - BRACKET_SLACK)))
        w2 = lo * lo
        if 0.5 * a * w2 + b * w2 * w2 - c > 0.0:
            return -1.0
        w2 = hi * hi
        if 0.5 * a * w2 + b * w2 * w2 - c < 0.0:
            return -1.0
        lo0 = lo
        hi0 = hi
        width = hi - lo
        for it in range(64):
            if hi - lo <= OMEGA_BISECT_FRACTION * width:
                break
            mid = 0.5 * (lo + hi)
            w2 = mid * mid
            if 0.5 * a * w2 + b * w2 * w2 - c > 0.0:
                hi = mid
            else:
                lo = mid
        w = 0.5 * (lo + hi)
        for it in range(30):
            w2 = w * w
            f = 0.5 * a * w2 + b * w2 * w2 - c
            df = a * w + 4.0 * b * w2 * w
            wn = w - f / df
            if wn < lo0:
                wn = lo0
            elif wn > hi0:
                wn = hi0
            if fabs(wn - w) <= 1e-15 * w:
                w = wn
                break
            w = wn
        return w

    cdef double _U(self, const double* q, const double* p) noexcept nogil:
        cdef int i, n = self.n
        cdef double r = 0.0, w
        cdef double th[MAXN]
        for i in range(n):
            r += p[i] * p[i]
        if r == 0.0:
            return 0.0
        r = sqrt(r)
        for i in range(n):
            th[i] = p[i] / r
        w = self._omega(q, th)
        if w <= 0.0:
            return NAN
        return (r / w) * (r / w)

    cdef int _gradU(self, const double* q, const double* p, double* u, double* uq, double* up) noexcept nogil:
        cdef int i, n = self.n
        cdef double su, mu, s
        cdef double ph[MAXN]
        cdef double hp[MAXN]
        u[0] = self._U(q, p)
        if not isfinite(u[0]):
            return 0
        if u[0] == 0.0:
            for i in range(n):
                uq[i] = 0.0
                up[i] = 0.0
            return 1
        su = sqrt(u[0])
        for i in range(n):
            ph[i] = p[i] / su
        self._Kp(ph, hp)
        s = 0.0
        for i in range(n):
            s += hp[i] * ph[i]
        if not (s > 0.0):
            return 0
        mu = 2.0 / s
        self._gradV(q, uq)
        for i in range(n):
            up[i] = su * mu * hp[i]
            uq[i] *= u[0] * mu
        return 1

    cdef int _up_resid(self, const double* q, const double* p, const double* v, double* r) noexcept nogil:
        cdef double u
        cdef double uq[MAXN]
        cdef int i
        if not self._gradU(q, p, &u, uq, r):
            return 0
        for i in range(self.n):
            r[i] -= v[i]
        return 1

    cdef int _to_momentum(self, const double* q, const double* v, double* p, double tol, int max_iter) noexcept nogil:
        cdef int i, j, it, k, n = self.n
        cdef double vn = 0.0, rn, rn_new, lam, h, pn, thr, s1, s2, u
        cdef double p0[MAXN]
        cdef double w[MAXN]
        cdef double r[MAXN]
        cdef double rt[MAXN]
        cdef double pt[MAXN]
        cdef double delta[MAXN]
        cdef double rp[MAXN]
        cdef double rm[MAXN]
        cdef double uq[MAXN]
        cdef double J[MAXN * MAXN]
        cdef int improved
        for i in range(n):
            vn += v[i] * v[i]
        if vn == 0.0:
            for i in range(n):
                p[i] = 0.0
            return 1
        vn = sqrt(vn)
        thr = tol * (1.0 + vn)
        for i in range(n):
            s1 = 0.0
            for j in range(n):
                s1 += self.Ainv[i * n + j] * v[j]
            p0[i] = s1
        if not self._gradU(q, p0, &u, uq, w):
            return 0
        s1 = 0.0
        s2 = 0.0
        for i in range(n):
            s1 += v[i] * w[i]
            s2 += w[i] * w[i]
        if not (s2 > 0.0):
            return 0
        for i in range(n):
            p[i] = p0[i] * s1 / s2
        if not self._up_resid(q, p, v, r):
            return 0
        rn = 0.0
        for i in range(n):
            rn += r[i] * r[i]
        rn = sqrt(rn)
        for it in range(max_iter):
            if rn <= thr:
                return 1
            pn = 0.0
            for i in range(n):
                pn += p[i] * p[i]
            h = 1e-6 * sqrt(pn)
            for j in range(n):
                memcpy(pt, p, n * sizeof(double))
                pt[j] = p[j] + h
                if not self._up_resid(q, pt, v, rp):
                    return 0
                pt[j] = p[j] - h
                if not self._up_resid(q, pt, v, rm):
                    return 0
                for i in range(n):
                    J[i * n + j] = (rp[i] - rm[i]) / (2.0 * h)
            for i in range(n):
                delta[i] = -r[i]
            if not solve_dense(J, delta, n):
                return 0
            lam = 1.0
            improved = 0
            for k in range(30):
                for i in range(n):
                    pt[i] = p[i] + lam * delta[i]
                if self._up_resid(q, pt, v, rt):
                    rn_new = 0.0
                    for i in range(n):
                        rn_new += rt[i] * rt[i]
                    rn_new = sqrt(rn_new)
                    if isfinite(rn_new) and rn_new < rn:
                        improved = 1
                        break
                lam *= 0.5
            if not improved:
                return 1 if rn <= 1e3 * thr else 0
            memcpy(p, pt, n * sizeof(double))
            memcpy(r, rt, n * sizeof(double))
            rn = rn_new
        return 1 if rn <= 1e3 * thr else 0

    # ------------------------------------------------------------------ batch API
    def V(self, Q):
        cdef double[:, ::1] Qv = np.ascontiguousarray(Q, dtype=np.float64)
        cdef Py_ssize_t m = Qv.shape[0], r
        out = np.empty(m)
        cdef double[::1] o = out
        with nogil:
            for r in range(m):
                o[r] = self._V(&Qv[r, 0])
        return out

    def gradV(self, Q):
        cdef double[:, ::1] Qv = np.ascontiguousarray(Q, dtype=np.float64)
        cdef Py_ssize_t m = Qv.shape[0], r
        out = np.empty((m, self.n))
        cdef double[:, ::1] o = out
        with nogil:
            for r in range(m):
                self._gradV(&Qv[r, 0], &o[r, 0])
        return out

    def hessV(self, Q):
        cdef double[:, ::1] Qv = np.ascontiguousarray(Q, dtype=np.float64)
        cdef Py_ssize_t m = Qv.shape[0], r
        out = np.empty((m, self.n, self.n))
        cdef double[:, :, ::1] o = out
        with nogil:
            for r in range(m):
                self._hessV(&Qv[r, 0], &o[r, 0, 0])
        return out

    def K(self, P):
        cdef double[:, ::1] Pv = np.ascontiguousarray(P, dtype=np.float64)
        cdef Py_ssize_t m = Pv.shape[0], r
        out = np.empty(m)
        cdef double[::1] o = out
        with nogil:
            for r in range(m):
                o[r] = self._K(&Pv[r, 0])
        return out

    def Kp(self, P):
        cdef double[:, ::1] Pv = np.ascontiguousarray(P, dtype=np.float64)
        cdef Py_ssize_t m = Pv.shape[0], r
        out = np.empty((m, self.n))
        cdef double[:, ::1] o = out
        with nogil:
            for r in range(m):
                self._Kp(&Pv[r, 0], &o[r, 0])
        return out

    def Kpp(self, P):
        P = np.ascontiguousarray(P, dtype=np.float64)
        out = np.broadcast_to(self.mass, (P.shape[0], self.n, self.n)).copy()
        idx = np.arange(self.n)
        out[:, idx, idx] += 12.0 * self.beta * P**2
        return out

    def H(self, Q, P):
        return self.K(P) + self.V(Q)

    def omega(self, Q, Th):
        cdef double[:, ::1] Qv = np.ascontiguousarray(Q, dtype=np.float64)
        cdef double[:, ::1] Tv = np.ascontiguousarray(Th, dtype=np.float64)
        cdef Py_ssize_t m = Qv.shape[0], r
        cdef double w
        out = np.empty(m)
        cdef double[::1] o = out
        with nogil:
            for r in range(m):
                w = self._omega(&Qv[r, 0], &Tv[r, 0])
                o[r] = w if w > 0.0 else NAN
        return out

    def U(self, Q, P):
        cdef double[:, ::1] Qv = np.ascontiguousarray(Q, dtype=np.float64)
        cdef double[:, ::1] Pv = np.ascontiguousarray(P, dtype=np.float64)
        cdef Py_ssize_t m = Qv.shape[0], r
        out = np.empty(m)
        cdef double[::1] o = out
        with nogil:
            for r in range(m):
                o[r] = self._U(&Qv[r, 0], &Pv[r, 0])
        return out

    def gradU(self, Q, P):
        """Return ``(U, U_q, U_p)``; zero gradients at ``p = 0``."""
        cdef double[:, ::1] Qv = np.ascontiguousarray(Q, dtype=np.float64)
        cdef double[:, ::1] Pv = np.ascontiguousarray(P, dtype=np.float64)
        cdef Py_ssize_t m = Qv.shape[0], r
        cdef int i
        u = np.empty(m)
        uq = np.empty((m, self.n))
        up = np.empty((m, self.n))
        cdef double[::1] uv = u
        cdef double[:, ::1] uqv = uq
        cdef double[:, ::1] upv = up
        with nogil:
            for r in range(m):
                if not self._gradU(&Qv[r, 0], &Pv[r, 0], &uv[r], &uqv[r, 0], &upv[r, 0]):
                    uv[r] = NAN
                    for i in range(self.n):
                        uqv[r, i] = NAN
                        upv[r, i] = NAN
        return u, uq, up

    def to_momentum(self, Q, Vel, double tol=1e-13, int max_iter=50):
        """Solve ``U_p(q, p) = v`` for ``p``; NaN rows where Newton fails."""
        cdef double[:, ::1] Qv = np.ascontiguousarray(Q, dtype=np.float64)
        cdef double[:, ::1] Vv = np.ascontiguousarray(Vel, dtype=np.float64)
        cdef Py_ssize_t m = Qv.shape[0], r
        cdef int i
        out = np.empty((m, self.n))
        cdef double[:, ::1] o = out
        with nogil:
            for r in range(m):
                if not self._to_momentum(&Qv[r, 0], &Vv[r, 0], &o[r, 0], tol, max_iter):
                    for i in range(self.n):
                        o[r, i] = NAN
        return out

    # ------------------------------------------------------------------ flows
    cdef int _rhs(self, int flow, const double* y, double* f) noexcept nogil:
        cdef int i, n = self.n
        cdef double s, u
        if flow == 0:
            self._Kp(&y[n], f)
            self._gradV(y, &f[n])
            s = 0.0
            for i in range(n):
                f[n + i] = -f[n + i]
                s += f[i] * y[n + i]
            f[2 * n] = 0.5 * s
            return 1
        if not self._gradU(y, &y[n], &u, &f[n], f):
            return 0
        for i in range(n):
            f[n + i] = -f[n + i]
        f[2 * n] = sqrt(u)
        return 1

    cdef void _renormalize(self, double* y) noexcept nogil:
        cdef int i, n = self.n
        cdef double u = self._U(y, &y[n]), su
        if isfinite(u) and u > 0.0:
            su = sqrt(u)
            for i in range(n):
                y[n + i] /= su

    cdef double _initial_step(self, int flow, const double* y0, const double* f0, double t_end,
                              double rtol, double atol, double hmax) noexcept nogil:
        cdef int i, d = 2 * self.n + 1
        cdef double sc, d0 = 0.0, d1 = 0.0, d2 = 0.0, h0, h1
        cdef double y1[MAXD]
        cdef double f1[MAXD]
        for i in range(d):
            sc = atol + rtol * fabs(y0[i])
            d0 += (y0[i] / sc) ** 2
            d1 += (f0[i] / sc) ** 2
        d0 = sqrt(d0 / d)
        d1 = sqrt(d1 / d)
        if d0 < 1e-5 or d1 < 1e-5:
            h0 = 1e-6
        else:
            h0 = 0.01 * d0 / d1
        h0 = min(h0, min(t_end, hmax))
        for i in range(d):
            y1[i] = y0[i] + h0 * f0[i]
        if not self._rhs(flow, y1, f1):
            return h0 * 0.01
        for i in range(d):
            sc = atol + rtol * fabs(y0[i])
            d2 += ((f1[i] - f0[i]) / sc) ** 2
        d2 = sqrt(d2 / d) / h0
        if max(d1, d2) <= 1e-15:
            h1 = max(1e-6, h0 * 1e-3)
        else:
            h1 = pow(0.01 / max(d1, d2), 0.2)
        return min(min(100.0 * h0, h1), min(t_end, hmax))

    cdef int _dopri(self, double* y, double t_end, int flow, double rtol, double atol, double hmax,
                    bint renorm, double stop_margin, int max_steps,
                    double** ts_buf, double** ys_buf, double** rc_buf, int* count) noexcept nogil:
        cdef int n = self.n, d = 2 * n + 1, i, nsteps = 0, cap = 256, status = 0, ok
        cdef double t = 0.0, h, err, sc, fac, ydiff
        cdef bint last_rejected = False
        cdef double k1[MAXD]
        cdef double k2[MAXD]
        cdef double k3[MAXD]
        cdef double k4[MAXD]
        cdef double k5[MAXD]
        cdef double k6[MAXD]
        cdef double k7[MAXD]
        cdef double yt[MAXD]
        cdef double y1[MAXD]
        cdef double* tsb
        cdef double* ysb
        cdef double* rcb
        cdef double* rr
        tsb = <double*> malloc(cap * sizeof(double))
        ysb = <double*> malloc(cap * d * sizeof(double))
        rcb = <double*> malloc(cap * 5 * d * sizeof(double))
        count[0] = 1
        ts_buf[0] = tsb
        ys_buf[0] = ysb
        rc_buf[0] = rcb
        if not tsb or not ysb or not rcb:
            return -1
        if flow == 1 and renorm:
            self._renormalize(y)
        tsb[0] = 0.0
        memcpy(ysb, y, d * sizeof(double))
        if not self._rhs(flow, y, k1):
            return 4
        h = self._initial_step(flow, y, k1, t_end, rtol, atol, hmax)
        while t < t_end:
            if nsteps >= max_steps:
                status = 2
                break
            if t + 1.01 * h >= t_end:
                h = t_end - t
            for i in range(d):
                yt[i] = y[i] + h * A21 * k1[i]
            ok = self._rhs(flow, yt, k2)
            if ok:
                for i in range(d):
                    yt[i] = y[i] + h * (A31 * k1[i] + A32 * k2[i])
                ok = self._rhs(flow, yt, k3)
            if ok:
                for i in range(d):
                    yt[i] = y[i] + h * (A41 * k1[i] + A42 * k2[i] + A43 * k3[i])
                ok = self._rhs(flow, yt, k4)
            if ok:
                for i in range(d):
                    yt[i] = y[i] + h * (A51 * k1[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i])
                ok = self._rhs(flow, yt, k5)
            if ok:
                for i in range(d):
                    yt[i] = y[i] + h * (A61 * k1[i] + A62 * k2[i] + A63 * k3[i] + A64 * k4[i] + A65 * k5[i])
                ok = self._rhs(flow, yt, k6)
            if ok:
                for i in range(d):
                    y1[i] = y[i] + h * (A71 * k1[i] + A73 * k3[i] + A74 * k4[i] + A75 * k5[i] + A76 * k6[i])
                ok = self._rhs(flow, y1, k7)
            if not ok:
                h *= 0.25
                last_rejected = True
                if h < 1e-14 * max(1.0, fabs(t)):
                    status = 4
                    break
                continue
            err = 0.0
            for i in range(d):
                sc = atol + rtol * max(fabs(y[i]), fabs(y1[i]))
                err += (h * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]) / sc) ** 2
            err = sqrt(err / d)
            nsteps += 1
            if not isfinite(err):
                h *= 0.25
                last_rejected = True
                continue
            if err <= 1.0:
                if count[0] >= cap:
                    cap *= 2
                    tsb = <double*> realloc(tsb, cap * sizeof(double))
                    ysb = <double*> realloc(ysb, cap * d * sizeof(double))
                    rcb = <double*> realloc(rcb, cap * 5 * d * sizeof(double))
                    ts_buf[0] = tsb
                    ys_buf[0] = ysb
                    rc_buf[0] = rcb
                    if not tsb or not ysb or not rcb:
                        return -1
                rr = &rcb[(count[0] - 1) * 5 * d]
                for i in range(d):
                    ydiff = y1[i] - y[i]
                    rr[i] = y[i]
                    rr[d + i] = ydiff
                    rr[2 * d + i] = h * k1[i] - ydiff
                    rr[3 * d + i] = ydiff - h * k7[i] - rr[2 * d + i]
                    rr[4 * d + i] = h * (D1 * k1[i] + D3 * k3[i] + D4 * k4[i] + D5 * k5[i] + D6 * k6[i] + D7 * k7[i])
                t = t + h if t + h < t_end else t_end
                memcpy(y, y1, d * sizeof(double))
                memcpy(k1, k7, d * sizeof(double))
                ok = 1
                if flow == 1 and renorm:
                    self._renormalize(y)
                    ok = self._rhs(flow, y, k1)
                tsb[count[0]] = t
                memcpy(&ysb[count[0] * d], y, d * sizeof(double))
                count[0] += 1
                if not ok:
                    status = 4
                    break
                if stop_margin > 0.0 and self.energy - self._V(y) < stop_margin:
                    status = 1
                    break
                if err > 0.0:
                    fac = min(5.0, max(0.2, 0.9 * pow(err, -0.2)))
                else:
                    fac = 5.0
                if last_rejected:
                    fac = min(fac, 1.0)
                h = min(h * fac, hmax)
                last_rejected = False
            else:
                h *= max(0.2, 0.9 * pow(err, -0.2))
                last_rejected = True
            if h < 1e-14 * max(1.0, fabs(t)):
                status = 3
                break
        return status

    def integrate(self, z0, double t_end, int flow, double rtol, double atol, double hmax,
                  bint renorm, double stop_margin, int max_steps):
        """Adaptive DP5(4) from ``t = 0`` to ``t_end`` on the augmented state.

        The state is ``(q, p, ell)`` where ``ell`` accumulates the Finsler
        arclength. Returns ``(ts, ys, rcont, status)``.
        """
        cdef int d = 2 * self.n + 1, count = 0, status
        cdef cnp.ndarray[cnp.float64_t, ndim=1] y = np.array(z0, dtype=np.float64).reshape(-1)
        cdef double* tsb = NULL
        cdef double* ysb = NULL
        cdef double* rcb = NULL
        if y.shape[0] != d:
            raise ValueError("state must have length 2n+1")
        cdef double* yp = <double*> y.data
        with nogil:
            status = self._dopri(yp, t_end, flow, rtol, atol, hmax, renorm, stop_margin, max_steps,
                                 &tsb, &ysb, &rcb, &count)
        try:
            if status < 0:
                raise MemoryError()
            ts = np.array(<double[:count]> tsb) if count > 0 else np.zeros(0)
            ys = np.array(<double[:count * d]> ysb).reshape(count, d)
            if count > 1:
                rc = np.array(<double[:(count - 1) * 5 * d]> rcb).reshape(count - 1, 5, d)
            else:
                rc = np.zeros((0, 5, d))
        finally:
            free(tsb)
            free(ysb)
            free(rcb)
        return ts, ys, rc, status
