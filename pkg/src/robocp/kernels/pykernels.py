"""Pure numpy kernels: reference fallback for the compiled extension.

Each kernel provides fused forward simulation, output evaluation and reverse
(adjoint) accumulation of policy/uncertainty gradients.  The linear-family
kernel is batched over scenarios, which is what the minimization step of the
reduction loop consumes; single-scenario adjoints additionally return
gradients with respect to (w, d) for the maximization subproblems.

The compiled kernels in ``_native`` implement the identical contract and are
cross-checked against these in the test suite and the benchmark.
"""

from __future__ import annotations

import numpy as np

from ..models.saturation import smooth_sat, smooth_sat_deriv


class LinearKernelPy:
    """Fallback kernel for the affine-parametric linear family."""

    backend = "python"

    def __init__(self, fam):
        self.fam = fam
        self._mask = fam.feedback_mask.astype(bool)

    # -- forward ---------------------------------------------------------

    def _assemble(self, Ds):
        fam = self.fam
        if fam.n_d:
            A = fam.A0 + np.einsum("sj,jab->sab", Ds, fam.dA)
            B = fam.B0 + np.einsum("sj,jab->sab", Ds, fam.dB)
            x0 = fam.x0_base + Ds @ fam.dx0
        else:
            S = Ds.shape[0]
            A = np.broadcast_to(fam.A0, (S, *fam.A0.shape))
            B = np.broadcast_to(fam.B0, (S, *fam.B0.shape))
            x0 = np.broadcast_to(fam.x0_base, (S, fam.n_x))
        return A, B, x0

    def simulate_many(self, q, r, Ws, Ds):
        fam = self.fam
        S = Ds.shape[0]
        N, n_u = fam.horizon, fam.n_u
        A, B, x0 = self._assemble(Ds)
        F = fam.feedback_matrix(r)
        qk = q.reshape(N, n_u)
        X = np.empty((S, N + 1, fam.n_x))
        U = np.empty((S, N, n_u))
        X[:, 0] = x0
        for k in range(N):
            v = X[:, k] @ F.T + qk[k]
            u = smooth_sat(v, fam.sat) if fam.sat is not None else v
            U[:, k] = u
            xn = np.einsum("sab,sb->sa", A, X[:, k]) + np.einsum("sab,sb->sa", B, u)
            if fam.n_w:
                xn += Ws[:, k] @ fam.W.T
            X[:, k + 1] = xn
        return X, U

    def simulate(self, q, r, w, d):
        X, U = self.simulate_many(q, r, w[None], d[None])
        return X[0], U[0]

    # -- outputs ----------------------------------------------------------

    def outputs_many(self, q, r, Ws, Ds, X, U):
        fam = self.fam
        J = fam.cost_scale * np.einsum("sku,sku->s", U, U)
        G = X[:, :-1] @ fam.Cx.T + U @ fam.Cu.T + fam.g_offset
        if np.any(fam.Cxn):
            G = G + X[:, 1:] @ fam.Cxn.T
        return J, G

    def outputs(self, q, r, w, d, x, u):
        J, G = self.outputs_many(q, r, w[None], d[None], x[None], u[None])
        return float(J[0]), G[0]

    # -- adjoint ----------------------------------------------------------

    def vjp_many(self, q, r, Ws, Ds, X, U, wJ, WG, need_wd=False):
        """Gradients of sum_s [wJ[s]*J_s + sum_{k,h} WG[s,k,h]*G_s[k,h]].

        Returns (gq, gr) summed over scenarios and, when ``need_wd`` is set,
        per-scenario (gw, gd) as well.
        """
        fam = self.fam
        S = Ds.shape[0]
        N, n_u, n_x = fam.horizon, fam.n_u, fam.n_x
        A, B, _ = self._assemble(Ds)
        F = fam.feedback_matrix(r)
        qk = q.reshape(N, n_u)
        two_c = 2.0 * fam.cost_scale

        gq = np.zeros((N, n_u))
        gR = np.zeros((n_u, n_x))
        gw = np.zeros((S, N, fam.n_w)) if need_wd else None
        gd = np.zeros((S, fam.n_d)) if need_wd else None

        lam = np.zeros((S, n_x))
        for k in range(N - 1, -1, -1):
            lam = lam + WG[:, k] @ fam.Cxn
            if need_wd:
                if fam.n_w:
                    gw[:, k] = lam @ fam.W
                if fam.n_d:
                    gd += np.einsum("jab,sa,sb->sj", fam.dA, lam, X[:, k])
                    gd += np.einsum("jab,sa,sb->sj", fam.dB, lam, U[:, k])
            ubar = np.einsum("sab,sa->sb", B, lam) + WG[:, k] @ fam.Cu + two_c * wJ[:, None] * U[:, k]
            v = X[:, k] @ F.T + qk[k]
            sd = smooth_sat_deriv(v, fam.sat) if fam.sat is not None else np.ones_like(v)
            vbar = sd * ubar
            gq[k] = vbar.sum(axis=0)
            gR += np.einsum("su,sx->ux", vbar, X[:, k])
            lam = np.einsum("sab,sa->sb", A, lam) + vbar @ F + WG[:, k] @ fam.Cx
        if need_wd and fam.n_d:
            gd += lam @ fam.dx0.T
        gr = gR[self._mask]
        if need_wd:
            return gq.ravel(), gr, gw, gd
        return gq.ravel(), gr

    def vjp(self, q, r, w, d, x, u, wJ, WG):
        gq, gr, gw, gd = self.vjp_many(
            q, r, w[None], d[None], x[None], u[None],
            np.asarray([wJ], dtype=float), WG[None], need_wd=True,
        )
        return gq, gr, gw[0], gd[0]
