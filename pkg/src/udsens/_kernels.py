"""Compiled whole-record passes for the UD and conventional engines.

These mirror the step-level functions in :mod:`udsens.udfilter`,
:mod:`udsens.sensitivity` and :mod:`udsens.baseline` operation for operation;
the test suite checks them against those reference steps. Failures are
reported through a status code and step index instead of exceptions.
"""

import math

import numpy as np
from numba import njit

OK = 0
RANK_DEFICIENT = 1
INVALID_RE = 2
NOT_PD = 3
NON_FINITE = 4

_LOG_2PI = math.log(2.0 * math.pi)


@njit(cache=True)
def mwgs_inplace(b, w, u, d, reorth_tol, floor2):
    """Orthogonalize the columns of ``b`` in place; ``u`` must enter as identity.

    Returns the failing column index, or -1.
    """
    r, s = b.shape
    norms = np.zeros(s)
    for j in range(s):
        acc = 0.0
        for t in range(r):
            acc += w[t] * b[t, j] * b[t, j]
        norms[j] = acc
    c = np.zeros(s)
    for j in range(s - 1, -1, -1):
        dj = 0.0
        for t in range(r):
            dj += w[t] * b[t, j] * b[t, j]
        if j < s - 1 and dj > 0.0:
            worst = 0.0
            for i in range(j + 1, s):
                acc = 0.0
                for t in range(r):
                    acc += b[t, i] * w[t] * b[t, j]
                c[i] = acc
                cos = abs(acc) / math.sqrt(d[i] * dj)
                if cos > worst:
                    worst = cos
            if worst > reorth_tol:
                for i in range(j + 1, s):
                    coef = c[i] / d[i]
                    for t in range(r):
                        b[t, j] -= coef * b[t, i]
                    u[j, i] += coef
                dj = 0.0
                for t in range(r):
                    dj += w[t] * b[t, j] * b[t, j]
        if not (math.isfinite(dj) and dj > 0.0 and dj >= floor2 * norms[j]):
            return j
        d[j] = dj
        for k in range(j):
            acc = 0.0
            for t in range(r):
                acc += b[t, k] * w[t] * b[t, j]
            coef = acc / dj
            u[k, j] = coef
            for t in range(r):
                b[t, k] -= coef * b[t, j]
    return -1


@njit(cache=True)
def mwgs_derivative_into(b, w, a_prime, w_prime, u, d, u_prime, d_prime):
    r, s = b.shape
    m0 = np.zeros((s, s))
    m2 = np.zeros((s, s))
    for i in range(s):
        for j in range(s):
            acc0 = 0.0
            acc2 = 0.0
            for t in range(r):
                acc0 += b[t, i] * w[t] * a_prime[t, j]
                acc2 += b[t, i] * w_prime[t] * b[t, j]
            m0[i, j] = acc0
            m2[i, j] = acc2
    # m0 <- m0 U^{-T}: each row x solves U x^T = row^T
    for i in range(s):
        for j in range(s - 1, -1, -1):
            acc = m0[i, j]
            for k in range(j + 1, s):
                acc -= u[j, k] * m0[i, k]
            m0[i, j] = acc
    upper = np.zeros((s, s))
    for i in range(s):
        for j in range(i + 1, s):
            upper[i, j] = (m0[j, i] + m0[i, j] + m2[i, j]) / d[j]
    for i in range(s):
        d_prime[i] = 2.0 * m0[i, i] + m2[i, i]
        for j in range(s):
            if j <= i:
                u_prime[i, j] = 0.0
            else:
                acc = 0.0
                for k in range(i, j):
                    acc += u[i, k] * upper[k, j]
                u_prime[i, j] = acc


@njit(cache=True)
def _back_sub_unit(u, rhs, out):
    m = rhs.shape[0]
    for i in range(m - 1, -1, -1):
        acc = rhs[i]
        for k in range(i + 1, m):
            acc -= u[i, k] * out[k]
        out[i] = acc


@njit(cache=True)
def ud_pass(f, g, h, uq, dq, ur, dr, upi, dpi,
            df, dg, dh, duq, ddq, dur, ddr, dupi, ddpi,
            zs, reorth_tol, floor2, terms, xs, dxs):
    """UD filter with sensitivities over a whole record.

    Returns ``(loglik, grad, status, step)``; ``status`` is ``OK`` on success.
    """
    n = f.shape[0]
    m = h.shape[0]
    q = g.shape[1]
    p = df.shape[0]
    r = q + n + m
    s = n + m
    n_steps = zs.shape[0]

    x = np.zeros(n)
    up = upi.copy()
    dp = dpi.copy()
    xpr = np.zeros((p, n))
    upr = dupi.copy()
    dpr = ddpi.copy()
    grad = np.zeros(p)
    loglik = 0.0

    gu = g @ uq
    a = np.zeros((r, s))
    bmat = np.zeros((r, s))
    w = np.zeros(r)
    apr = np.zeros((r, s))
    wpr = np.zeros(r)
    u = np.zeros((s, s))
    d = np.zeros(s)
    u_prime = np.zeros((s, s))
    d_prime = np.zeros(s)
    e = np.zeros(m)
    e_bar = np.zeros(m)
    rhs = np.zeros(m)
    e_bar_p = np.zeros(m)
    x_next = np.zeros(n)
    xpr_next = np.zeros((p, n))

    for k in range(n_steps):
        # pre-arrays
        a[:, :] = 0.0
        fu = f @ up
        hu = h @ up
        for i in range(n):
            for t in range(q):
                a[t, i] = gu[i, t]
            for t in range(n):
                a[q + t, i] = fu[i, t]
        for i in range(m):
            for t in range(n):
                a[q + t, n + i] = hu[i, t]
            for t in range(m):
                a[q + n + t, n + i] = ur[i, t]
        w[:q] = dq
        w[q:q + n] = dp
        w[q + n:] = dr
        bmat[:, :] = a
        u[:, :] = 0.0
        for i in range(s):
            u[i, i] = 1.0
        if mwgs_inplace(bmat, w, u, d, reorth_tol, floor2) >= 0:
            return loglik, grad, RANK_DEFICIENT, k

        u_re = u[n:, n:]
        d_re = d[n:]
        for i in range(m):
            if not d_re[i] > 0.0:
                return loglik, grad, INVALID_RE, k
        for i in range(m):
            acc = zs[k, i]
            for t in range(n):
                acc -= h[i, t] * x[t]
            e[i] = acc
        _back_sub_unit(u_re, e, e_bar)
        for i in range(n):
            acc = 0.0
            for t in range(n):
                acc += f[i, t] * x[t]
            for t in range(m):
                acc += u[i, n + t] * e_bar[t]
            x_next[i] = acc
        term = m * _LOG_2PI
        for i in range(m):
            term += math.log(d_re[i]) + e_bar[i] * e_bar[i] / d_re[i]
        term *= -0.5
        loglik += term
        terms[k] = term

        for ip in range(p):
            apr[:, :] = 0.0
            gup = dg[ip] @ uq + g @ duq[ip]
            fup = df[ip] @ up + f @ upr[ip]
            hup = dh[ip] @ up + h @ upr[ip]
            for i in range(n):
                for t in range(q):
                    apr[t, i] = gup[i, t]
                for t in range(n):
                    apr[q + t, i] = fup[i, t]
            for i in range(m):
                for t in range(n):
                    apr[q + t, n + i] = hup[i, t]
                for t in range(m):
                    apr[q + n + t, n + i] = dur[ip][i, t]
            wpr[:q] = ddq[ip]
            wpr[q:q + n] = dpr[ip]
            wpr[q + n:] = ddr[ip]
            mwgs_derivative_into(bmat, w, apr, wpr, u, d, u_prime, d_prime)

            for i in range(m):
                acc = 0.0
                for t in range(n):
                    acc -= dh[ip][i, t] * x[t] + h[i, t] * xpr[ip, t]
                for t in range(m):
                    acc -= u_prime[n + i, n + t] * e_bar[t]
                rhs[i] = acc
            _back_sub_unit(u_re, rhs, e_bar_p)
            for i in range(n):
                acc = 0.0
                for t in range(n):
                    acc += df[ip][i, t] * x[t] + f[i, t] * xpr[ip, t]
                for t in range(m):
                    acc += u_prime[i, n + t] * e_bar[t] + u[i, n + t] * e_bar_p[t]
                xpr_next[ip, i] = acc
            gt = 0.0
            for i in range(m):
                dd = d_prime[n + i]
                gt += dd / d_re[i] + 2.0 * e_bar_p[i] * e_bar[i] / d_re[i] \
                    - e_bar[i] * e_bar[i] * dd / (d_re[i] * d_re[i])
            grad[ip] += -0.5 * gt
            upr[ip] = u_prime[:n, :n]
            dpr[ip] = d_prime[:n]

        up[:, :] = u[:n, :n]
        dp[:] = d[:n]
        x[:] = x_next
        xpr[:, :] = xpr_next
        xs[k] = x
        dxs[k] = xpr
    return loglik, grad, OK, -1


@njit(cache=True)
def _cholesky(a, lower):
    m = a.shape[0]
    lower[:, :] = 0.0
    for j in range(m):
        acc = a[j, j]
        for k in range(j):
            acc -= lower[j, k] * lower[j, k]
        if not acc > 0.0:
            return False
        ljj = math.sqrt(acc)
        lower[j, j] = ljj
        for i in range(j + 1, m):
            acc = a[i, j]
            for k in range(j):
                acc -= lower[i, k] * lower[j, k]
            lower[i, j] = acc / ljj
    return True


@njit(cache=True)
def _cho_solve(lower, b):
    """Solve ``(L L^T) X = B`` for a matrix right-hand side ``b`` (m x c)."""
    m, c = b.shape
    x = b.copy()
    for col in range(c):
        for i in range(m):
            acc = x[i, col]
            for k in range(i):
                acc -= lower[i, k] * x[k, col]
            x[i, col] = acc / lower[i, i]
        for i in range(m - 1, -1, -1):
            acc = x[i, col]
            for k in range(i + 1, m):
                acc -= lower[k, i] * x[k, col]
            x[i, col] = acc / lower[i, i]
    return x


@njit(cache=True)
def conv_pass(f, g, h, qm, rm, pi0, df, dg, dh, dq, dr, dpi0, zs, terms, xs, dxs):
    """Differentiated conventional filter over a whole record."""
    n = f.shape[0]
    m = h.shape[0]
    p = df.shape[0]
    n_steps = zs.shape[0]
    x = np.zeros(n)
    pm = pi0.copy()
    xpr = np.zeros((p, n))
    ppr = dpi0.copy()
    grad = np.zeros(p)
    loglik = 0.0
    lower = np.zeros((m, m))
    gqg = g @ qm @ g.T
    for k in range(n_steps):
        ph = pm @ h.T
        r_e = rm + h @ ph
        if not _cholesky(r_e, lower):
            return loglik, grad, NOT_PD, k
        e = zs[k] - h @ x
        kk = f @ ph
        kp = _cho_solve(lower, kk.T.copy()).T.copy()
        x_next = f @ x + kp @ e
        p_next = f @ pm @ f.T + gqg - kp @ r_e @ kp.T
        p_next = 0.5 * (p_next + p_next.T)
        re_inv_e = _cho_solve(lower, e.reshape(m, 1).copy())[:, 0].copy()
        logdet = 0.0
        for i in range(m):
            logdet += 2.0 * math.log(lower[i, i])
        term = -0.5 * (m * _LOG_2PI + logdet + e @ re_inv_e)
        if not math.isfinite(term):
            return loglik, grad, NON_FINITE, k
        loglik += term
        terms[k] = term
        xpr_next = np.empty((p, n))
        ppr_next = np.empty((p, n, n))
        for i in range(p):
            xp = xpr[i].copy()
            pp = ppr[i].copy()
            re_p = dr[i] + dh[i] @ ph + h @ pp @ h.T + h @ pm @ dh[i].T
            k_p = df[i] @ ph + f @ pp @ h.T + f @ pm @ dh[i].T
            kp_p = _cho_solve(lower, k_p.T.copy()).T - kp @ _cho_solve(lower, re_p.T.copy()).T
            e_p = -(dh[i] @ x) - h @ xp.copy()
            xpr_next[i] = df[i] @ x + f @ xp + kp_p @ e + kp @ e_p
            fpf_p = df[i] @ pm @ f.T
            gqg_p = dg[i] @ qm @ g.T
            kre_p = kp_p @ r_e @ kp.T
            pn = (fpf_p + fpf_p.T + f @ pp @ f.T + gqg_p + gqg_p.T + g @ dq[i] @ g.T
                  - kre_p - kre_p.T - kp @ re_p @ kp.T)
            ppr_next[i] = 0.5 * (pn + pn.T)
            tr = 0.0
            sol = _cho_solve(lower, re_p.copy())
            for j in range(m):
                tr += sol[j, j]
            gt = -0.5 * (tr + 2.0 * (e_p @ re_inv_e) - re_inv_e @ (re_p @ re_inv_e))
            if not math.isfinite(gt):
                return loglik, grad, NON_FINITE, k
            grad[i] += gt
        x = x_next
        pm = p_next
        xpr = xpr_next
        ppr = ppr_next
        xs[k] = x
        dxs[k] = xpr
    return loglik, grad, OK, -1
