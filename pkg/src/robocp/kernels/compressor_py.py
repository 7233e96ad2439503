"""Compressor kernel: implicit trapezoidal stepping of the 6-state surge loop.

States y = (p_s, p_d, m, omega, m_r, e):

    dp_s/dt = (a01^2/V_s) (m_in - m + m_r)
    dp_d/dt = (a01^2/V_d) (m - m_out - m_r)
    dm/dt   = (A1/L_c) (Pi(m, omega) p_s - p_d)
    domega  = (tau - k_tau omega m) / J_shaft
    dm_r/dt = (m_sp - m_r) / tau_r
    de/dt   = m - m_d

with valve flows m_in/m_out/m_sp proportional to guarded square roots of
pressure differences, the quadratic pressure-ratio map Pi, an internal
anti-surge proportional law opening the recycle valve at low flow, and the
drive torque tau held constant over each interval (ZOH).  Each step solves
the trapezoidal defect by damped Newton to ~1e-12, so simulated trajectories
satisfy the collocation equations to well below solver tolerances.

The adjoint pass differentiates through the implicit steps with the same
Jacobians the Newton iterations use.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..ocp import DivergedTrajectory

_SQRT_EPS = 1e-6

# torque saturation (decreasing: large negative raw input -> max torque)
TAU_SAT = (73.324, 0.072, 0.005, 0.0)
# recycle-valve saturation (decreasing: valve opens as flow drops below the margin)
REC_SAT = (0.072, 0.071, 5.279, -0.001)


def _sat(raw, b):
    b0, b1, b2, b3 = b
    t = b2 * raw
    if t >= 0.0:
        z = math.exp(-t)
        return b0 * z / (b1 * z + 1.0) + b3
    z = math.exp(t)
    return b0 / (b1 + z) + b3


def _sat_deriv(raw, b):
    b0, b1, b2, _ = b
    t = b2 * raw
    z = math.exp(-abs(t))
    if t >= 0.0:
        return -b0 * b2 * z / (b1 * z + 1.0) ** 2
    return -b0 * b2 * z / (b1 + z) ** 2


def _smax(x):
    root = math.sqrt(x * x + _SQRT_EPS * _SQRT_EPS)
    if x >= 0.0:
        return 0.5 * (x + root)
    # stable form for x < 0: avoids catastrophic cancellation / underflow
    return 0.5 * _SQRT_EPS * _SQRT_EPS / (root - x)


def _ssqrt(x):
    """sqrt of a C1-smoothed max(x, 0); positive and differentiable everywhere."""
    return math.sqrt(_smax(x))


def _ssqrt_deriv(x):
    root = math.sqrt(x * x + _SQRT_EPS * _SQRT_EPS)
    return 0.25 * (1.0 + x / root) / math.sqrt(_smax(x))


@dataclass(frozen=True)
class CompressorParams:
    a01: float
    V_s: float
    V_d: float
    A1: float
    L_c: float
    J_shaft: float
    tau_r: float
    A_in: float
    A_out: float
    A_rec: float
    k_in: float
    k_out: float
    k_rec: float
    p_in: float
    p_out: float
    k_tau: float
    tau_bias: float
    k_as: float
    m_as: float
    m_d: float
    alpha: tuple  # six map coefficients
    x0: tuple  # initial (p_s, p_d, m, omega, m_r, e)

    @property
    def c_s(self):
        return self.a01**2 / self.V_s

    @property
    def c_d(self):
        return self.a01**2 / self.V_d

    @property
    def c_m(self):
        return self.A1 / self.L_c


class CompressorKernelPy:
    """Fallback kernel; same contract as the linear-family kernels (n_w = 0)."""

    backend = "python"
    n_x = 6
    n_u = 1
    n_g = 4

    # stage-constraint rows: m - 105, 65 - m, omega - 876, 550 - omega
    M_MAX, M_MIN = 105.0, 65.0
    W_MAX, W_MIN = 876.0, 550.0

    def __init__(self, params: CompressorParams, horizon: int, dt: float):
        self.p = params
        self.N = horizon
        self.dt = dt

    # -- plant ------------------------------------------------------------

    def _gains(self, d):
        p = self.p
        kin = p.k_in * d[0]
        kout = p.k_out * d[1]
        krec = p.k_rec * d[2]
        al = tuple(p.alpha[i] * d[3 + i] for i in range(6))
        return kin, kout, krec, al

    def f(self, y, tau, d):
        p = self.p
        kin, kout, krec, al = self._gains(np.asarray(d, float))
        ps, pd, m, om, mr, e = y
        pi = al[0] + al[1] * m + al[2] * om + al[3] * m * om + al[4] * m * m + al[5] * om * om
        m_in = 0.4 * kin * p.A_in * _ssqrt(p.p_in - ps)
        m_out = 0.8 * kout * p.A_out * _ssqrt(pd - p.p_out)
        u_rec = _sat(p.k_as * (m - p.m_as), REC_SAT)
        m_sp = krec * u_rec * p.A_rec * _ssqrt(pd - ps)
        return np.array(
            [
                p.c_s * (m_in - m + mr),
                p.c_d * (m - m_out - mr),
                p.c_m * (pi * ps - pd),
                (tau - p.k_tau * om * m) / p.J_shaft,
                (m_sp - mr) / p.tau_r,
                m - p.m_d,
            ]
        )

    def f_jac(self, y, tau, d):
        """(df/dy, df/dtau, df/dd) at (y, tau, d)."""
        p = self.p
        dv = np.asarray(d, float)
        kin, kout, krec, al = self._gains(dv)
        ps, pd, m, om, mr, e = y
        pi = al[0] + al[1] * m + al[2] * om + al[3] * m * om + al[4] * m * m + al[5] * om * om
        dpi_dm = al[1] + al[3] * om + 2.0 * al[4] * m
        dpi_dom = al[2] + al[3] * m + 2.0 * al[5] * om

        s_in, ds_in = _ssqrt(p.p_in - ps), _ssqrt_deriv(p.p_in - ps)
        s_out, ds_out = _ssqrt(pd - p.p_out), _ssqrt_deriv(pd - p.p_out)
        s_rec, ds_rec = _ssqrt(pd - ps), _ssqrt_deriv(pd - ps)
        u_rec = _sat(p.k_as * (m - p.m_as), REC_SAT)
        du_rec = _sat_deriv(p.k_as * (m - p.m_as), REC_SAT) * p.k_as

        Jy = np.zeros((6, 6))
        # dp_s/dt
        Jy[0, 0] = p.c_s * 0.4 * kin * p.A_in * (-ds_in)
        Jy[0, 2] = -p.c_s
        Jy[0, 4] = p.c_s
        # dp_d/dt
        Jy[1, 1] = -p.c_d * 0.8 * kout * p.A_out * ds_out
        Jy[1, 2] = p.c_d
        Jy[1, 4] = -p.c_d
        # dm/dt
        Jy[2, 0] = p.c_m * pi
        Jy[2, 1] = -p.c_m
        Jy[2, 2] = p.c_m * dpi_dm * ps
        Jy[2, 3] = p.c_m * dpi_dom * ps
        # domega/dt
        Jy[3, 2] = -p.k_tau * om / p.J_shaft
        Jy[3, 3] = -p.k_tau * m / p.J_shaft
        # dm_r/dt
        crec = krec * p.A_rec / p.tau_r
        Jy[4, 0] = crec * u_rec * (-ds_rec)
        Jy[4, 1] = crec * u_rec * ds_rec
        Jy[4, 2] = crec * du_rec * s_rec
        Jy[4, 4] = -1.0 / p.tau_r
        # de/dt
        Jy[5, 2] = 1.0

        Jtau = np.zeros(6)
        Jtau[3] = 1.0 / p.J_shaft

        Jd = np.zeros((6, 9))
        Jd[0, 0] = p.c_s * 0.4 * p.k_in * p.A_in * s_in
        Jd[1, 1] = -p.c_d * 0.8 * p.k_out * p.A_out * s_out
        Jd[4, 2] = p.k_rec * u_rec * p.A_rec * s_rec / p.tau_r
        basis = (1.0, m, om, m * om, m * m, om * om)
        for i in range(6):
            Jd[2, 3 + i] = p.c_m * p.alpha[i] * basis[i] * ps
        return Jy, Jtau, Jd

    # -- policy -----------------------------------------------------------

    def control(self, y, r):
        raw = r[0] * (y[2] - self.p.m_d) + r[1] * y[5] + self.p.tau_bias
        return _sat(raw, TAU_SAT), raw

    # -- stepping ---------------------------------------------------------

    def step_implicit(self, y, tau, d, k):
        """Trapezoidal step with ZOH torque, solved by damped Newton."""
        dt = self.dt
        f0 = self.f(y, tau, d)
        base = y + 0.5 * dt * f0
        yn = y + dt * f0  # explicit Euler predictor
        scale = 1.0 + np.max(np.abs(y))
        for _ in range(40):
            R = yn - base - 0.5 * dt * self.f(yn, tau, d)
            err = np.max(np.abs(R))
            if err <= 1e-12 * scale:
                return yn
            Jy, _, _ = self.f_jac(yn, tau, d)
            M = np.eye(6) - 0.5 * dt * Jy
            try:
                delta = np.linalg.solve(M, R)
            except np.linalg.LinAlgError:
                raise DivergedTrajectory(k, "singular step Jacobian") from None
            if not np.all(np.isfinite(delta)):
                raise DivergedTrajectory(k)
            # Damp long extrapolations; the plant is stiff near closed valves.
            norm = np.max(np.abs(delta))
            if norm > 10.0 * scale:
                delta *= 10.0 * scale / norm
            yn = yn - delta
        R = yn - base - 0.5 * dt * self.f(yn, tau, d)
        if np.max(np.abs(R)) <= 1e-9 * scale:
            return yn
        raise DivergedTrajectory(k, "implicit step did not converge")

    def simulate(self, q, r, w, d):
        N = self.N
        X = np.empty((N + 1, 6))
        U = np.empty((N, 1))
        X[0] = np.array(self.p.x0, dtype=float)
        for k in range(N):
            tau, _ = self.control(X[k], r)
            U[k, 0] = tau
            X[k + 1] = self.step_implicit(X[k], tau, d, k)
            if not np.all(np.isfinite(X[k + 1])):
                raise DivergedTrajectory(k + 1)
        return X, U

    # -- outputs ----------------------------------------------------------

    def stage_weights(self):
        h = np.full(self.N, self.dt)
        h[0] = 0.5 * self.dt
        return h

    def running_cost(self, y):
        m, om, mr = y[2], y[3], y[4]
        return 100.0 * mr * mr + 0.1 * om * om + 1000.0 * (m - self.p.m_d) ** 2

    def running_cost_grad(self, y):
        g = np.zeros(6)
        g[2] = 2000.0 * (y[2] - self.p.m_d)
        g[3] = 0.2 * y[3]
        g[4] = 200.0 * y[4]
        return g

    def outputs(self, q, r, w, d, x, u):
        h = self.stage_weights()
        ell = np.array([self.running_cost(x[k]) for k in range(self.N + 1)])
        J = float(h @ ell[:-1] + 0.5 * self.dt * ell[-1])
        G = np.empty((self.N, 4))
        G[:, 0] = x[:-1, 2] - self.M_MAX
        G[:, 1] = self.M_MIN - x[:-1, 2]
        G[:, 2] = x[:-1, 3] - self.W_MAX
        G[:, 3] = self.W_MIN - x[:-1, 3]
        return J, G

    # -- batched fronts (loop; scenario counts here are small) -------------

    def simulate_many(self, q, r, Ws, Ds):
        S = Ds.shape[0]
        X = np.empty((S, self.N + 1, 6))
        U = np.empty((S, self.N, 1))
        for i in range(S):
            X[i], U[i] = self.simulate(q, r, Ws[i], Ds[i])
        return X, U

    def outputs_many(self, q, r, Ws, Ds, X, U):
        S = Ds.shape[0]
        Js = np.empty(S)
        Gs = np.empty((S, self.N, 4))
        for i in range(S):
            Js[i], Gs[i] = self.outputs(q, r, Ws[i], Ds[i], X[i], U[i])
        return Js, Gs

    # -- adjoint ----------------------------------------------------------

    def vjp(self, q, r, w, d, x, u, wJ, WG):
        """Gradients of wJ*J + sum WG*G w.r.t. (q, r, w, d); q and w are empty."""
        p = self.p
        dt = self.dt
        N = self.N
        h = self.stage_weights()

        gr = np.zeros(2)
        gd = np.zeros(9)
        lam = 0.5 * dt * wJ * self.running_cost_grad(x[N])
        for k in range(N - 1, -1, -1):
            yk, yk1 = x[k], x[k + 1]
            tau = u[k, 0]
            J0, Jt0, Jd0 = self.f_jac(yk, tau, d)
            J1, Jt1, Jd1 = self.f_jac(yk1, tau, d)
            M = np.eye(6) - 0.5 * dt * J1
            muv = np.linalg.solve(M.T, lam)
            gd += 0.5 * dt * (Jd0 + Jd1).T @ muv
            gu = 0.5 * dt * (Jt0 + Jt1) @ muv
            lam_prev = (np.eye(6) + 0.5 * dt * J0).T @ muv
            # torque from the PI policy at the left grid point
            raw = r[0] * (yk[2] - p.m_d) + r[1] * yk[5] + p.tau_bias
            sd = _sat_deriv(raw, TAU_SAT)
            vbar = sd * gu
            gr[0] += vbar * (yk[2] - p.m_d)
            gr[1] += vbar * yk[5]
            lam_prev[2] += vbar * r[0]
            lam_prev[5] += vbar * r[1]
            # direct dependence of G[k] and the stage cost on x_k
            lam_prev += h[k] * wJ * self.running_cost_grad(yk)
            lam_prev[2] += WG[k, 0] - WG[k, 1]
            lam_prev[3] += WG[k, 2] - WG[k, 3]
            lam = lam_prev
        return np.zeros(0), gr, np.zeros((N, 0)), gd

    def vjp_many(self, q, r, Ws, Ds, X, U, wJ, WG):
        gq = np.zeros(0)
        gr = np.zeros(2)
        for i in range(Ds.shape[0]):
            _, gri, _, _ = self.vjp(q, r, Ws[i], Ds[i], X[i], U[i], float(wJ[i]), WG[i])
            gr += gri
        return gq, gr
