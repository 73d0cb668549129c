"""State-space models: coordinated-turn bearing-only tracking with glint noise,
the unicycle robot, and a linear-Gaussian model used as a Kalman oracle.

Models are vectorised over particle arrays of shape ``(n, n_x)``.  All
randomness enters through an explicitly passed ``numpy.random.Generator``.
"""
from __future__ import annotations

import functools
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate

LOG_2PI = np.log(2.0 * np.pi)


class ModelError(ValueError):
    pass


def wrap_angle(a):
    """Wrap angles to the half-open interval (-pi, pi]."""
    a = np.asarray(a, dtype=float)
    w = np.mod(a + np.pi, 2.0 * np.pi) - np.pi
    w = np.where(w <= -np.pi, w + 2.0 * np.pi, w)
    return w if w.ndim else float(w)


def gaussian_logpdf(X, mean, cov):
    """Log density of N(mean, cov) evaluated at the rows of X."""
    X = np.atleast_2d(X)
    L = np.linalg.cholesky(cov)
    diff = (X - mean).T
    sol = np.linalg.solve(L, diff)
    maha = np.sum(sol**2, axis=0)
    logdet = 2.0 * np.sum(np.log(np.diag(L)))
    return -0.5 * (maha + logdet + X.shape[1] * LOG_2PI)


def _check_spd(M, name):
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.shape[0] != M.shape[1] or not np.allclose(M, M.T, atol=1e-12 * max(1.0, np.abs(M).max())):
        raise ModelError(f"{name} must be a symmetric square matrix")
    try:
        np.linalg.cholesky(M)
    except np.linalg.LinAlgError:
        raise ModelError(f"{name} is not positive definite") from None
    return M


def numerical_jacobian(fun, x, step_scale=1e-6):
    """Central finite-difference Jacobian of ``fun`` at a single point."""
    x = np.asarray(x, dtype=float)
    f0 = np.atleast_1d(fun(x))
    jac = np.empty((f0.size, x.size))
    for i in range(x.size):
        h = step_scale * (1.0 + abs(x[i]))
        e = np.zeros_like(x)
        e[i] = h
        jac[:, i] = (np.atleast_1d(fun(x + e)) - np.atleast_1d(fun(x - e))) / (2.0 * h)
    return jac


# ---------------------------------------------------------------------------
# Base model


class StateSpaceModel:
    """x(k) = f(x(k-1)) + xi(k),  z_l(k) = g_l(x(k)) + zeta_l(k).

    Subclasses provide the vectorised pieces used by the particle filters and
    by the PCRLB module.  ``process_cov`` is ``None`` for models whose process
    noise is not additive Gaussian.
    """

    n_x: int
    n_nodes: int
    position_indices: tuple = (0, 1)
    process_cov: np.ndarray | None = None
    angle_indices: tuple = ()

    # dynamics -------------------------------------------------------------
    def transition_mean(self, X):
        raise NotImplementedError

    def propagate(self, X, rng):
        raise NotImplementedError

    def transition_logpdf(self, X_new, X_prev):
        raise NotImplementedError

    def transition_jacobian(self, X):
        """Array (n, n_x, n_x) with d f_i / d x_j."""
        X = np.atleast_2d(X)
        return np.stack([numerical_jacobian(lambda x: self.transition_mean(x[None])[0], x) for x in X])

    # observations ---------------------------------------------------------
    def observe(self, x, node, rng):
        raise NotImplementedError

    def log_likelihood(self, z, X, node):
        raise NotImplementedError

    def measurement_information(self, X, node):
        """Per-sample Fisher information of z_l about x, shape (n, n_x, n_x)."""
        raise NotImplementedError

    def observe_all(self, x, rng):
        return [self.observe(x, l, rng) for l in range(self.n_nodes)]

    def log_likelihood_all(self, zs, X):
        total = np.zeros(np.atleast_2d(X).shape[0])
        for l, z in enumerate(zs):
            total += self.log_likelihood(z, X, l)
        return total


# ---------------------------------------------------------------------------
# Coordinated turn / bearing-only tracking


@dataclass(frozen=True)
class CoordinatedTurnParams:
    A_m: float = 1.08e-5
    dt: float = 1.0
    sigma_v: float = 1.6e-3

    def __post_init__(self):
        if not self.A_m > 0:
            raise ModelError("A_m must be positive")
        if not self.dt > 0:
            raise ModelError("dt must be positive")
        if not self.sigma_v > 0:
            raise ModelError("sigma_v must be positive")


@dataclass(frozen=True)
class GlintNoiseParams:
    epsilon: float = 0.09
    variance_coeffs: tuple = (0.08, 0.1150, 0.7405)
    inflation: float = 1e4

    def __post_init__(self):
        if not 0.0 <= self.epsilon <= 1.0:
            raise ModelError("epsilon must lie in [0, 1]")
        a2, a1, a0 = self.variance_coeffs
        # sigma^2(r) > 0 on r >= 0
        if a0 <= 0 or a2 < 0 or (a1 < 0 and a2 > 0 and a1 * a1 >= 4 * a2 * a0) or (a1 < 0 and a2 == 0):
            raise ModelError("variance polynomial must be positive for r >= 0")
        if self.inflation <= 0:
            raise ModelError("inflation must be positive")

    def variance(self, r):
        a2, a1, a0 = self.variance_coeffs
        r = np.asarray(r, dtype=float)
        return a2 * r * r + a1 * r + a0

    def variance_derivative(self, r):
        a2, a1, _ = self.variance_coeffs
        return 2.0 * a2 * np.asarray(r, dtype=float) + a1


def _sinc_terms(w):
    """sin(w)/w and (1 - cos w)/w, stable near w = 0."""
    s = np.sinc(w / np.pi)
    c = np.sin(w / 2.0) * np.sinc(w / (2.0 * np.pi))
    return s, c


def _sinc_term_derivatives(w):
    """d/dw of sin(w)/w and (1 - cos w)/w."""
    w = np.asarray(w, dtype=float)
    small = np.abs(w) < 1e-4
    ws = np.where(small, 1.0, w)
    ds = np.where(small, -w / 3.0, (ws * np.cos(ws) - np.sin(ws)) / ws**2)
    dc = np.where(small, 0.5 - w * w / 8.0, (ws * np.sin(ws) - (1.0 - np.cos(ws))) / ws**2)
    return ds, dc


def ct_matrix(state, params: CoordinatedTurnParams):
    """The 4x4 coordinated-turn transition matrix evaluated at ``state``."""
    state = np.asarray(state, dtype=float)
    speed = np.hypot(state[2], state[3])
    if speed == 0.0:
        raise ModelError("degenerate turn rate: zero speed")
    omega = params.A_m / speed
    w = omega * params.dt
    s, c = _sinc_terms(w)
    a, b = params.dt * s, params.dt * c
    cw, sw = np.cos(w), np.sin(w)
    return np.array([
        [1.0, 0.0, a, -b],
        [0.0, 1.0, b, a],
        [0.0, 0.0, cw, -sw],
        [0.0, 0.0, sw, cw],
    ])


def ct_transition(state, params: CoordinatedTurnParams, noise_draw=None):
    """One coordinated-turn step ``f(x) x + noise`` for a single state."""
    state = np.asarray(state, dtype=float)
    if state.shape != (4,):
        raise ModelError("coordinated-turn state must have 4 components")
    out = ct_matrix(state, params) @ state
    if noise_draw is not None:
        out = out + np.asarray(noise_draw, dtype=float)
    return out


def bearing(state, sensor_position, single_quadrant=False):
    """Bearing of the target from a sensor, clockwise positive from +y."""
    state = np.asarray(state, dtype=float)
    dx = state[..., 0] - sensor_position[0]
    dy = state[..., 1] - sensor_position[1]
    if np.any((dx == 0) & (dy == 0)):
        raise ModelError("undefined bearing: target coincides with sensor")
    if single_quadrant:
        with np.errstate(divide="ignore"):
            out = np.arctan(dx / dy)
    else:
        out = np.arctan2(dx, dy)
    return wrap_angle(out)


def _mixture_log_terms(t, epsilon, inflation):
    l1 = np.log1p(-epsilon) - 0.5 * t * t if epsilon < 1 else -np.inf
    l2 = np.log(epsilon) - 0.5 * t * t / inflation - 0.5 * np.log(inflation) if epsilon > 0 else -np.inf
    return l1, l2


def _mixture_density(t, epsilon, inflation):
    l1, l2 = _mixture_log_terms(t, epsilon, inflation)
    return np.exp(np.logaddexp(l1, l2) - 0.5 * LOG_2PI)


def _mixture_score(t, epsilon, inflation):
    """d/dt log of the unit-scale mixture density."""
    l1, l2 = _mixture_log_terms(t, epsilon, inflation)
    tot = np.logaddexp(l1, l2)
    return -t * (np.exp(l1 - tot) + np.exp(l2 - tot) / inflation)


@functools.lru_cache(maxsize=32)
def glint_fisher_constants(epsilon, inflation):
    """Location and log-scale Fisher information of the unit glint mixture.

    For p(d) = phi0(d / sigma) / sigma the information about a location
    shift is a / sigma^2 and about sigma^2 is b / (4 sigma^4).  Gaussian
    noise gives a = 1, b = 2.
    """
    wide = np.sqrt(inflation)

    def loc(t):
        return _mixture_score(t, epsilon, inflation) ** 2 * _mixture_density(t, epsilon, inflation)

    def scale(t):
        return (1.0 + t * _mixture_score(t, epsilon, inflation)) ** 2 * _mixture_density(t, epsilon, inflation)

    pts = [0.0, 2.0, 5.0, 10.0, wide, 5.0 * wide, 12.0 * wide, 40.0 * wide]
    a = 2.0 * sum(integrate.quad(loc, lo, hi, limit=200, epsabs=1e-13)[0] for lo, hi in zip(pts, pts[1:]))
    b = 2.0 * sum(integrate.quad(scale, lo, hi, limit=200, epsabs=1e-13)[0] for lo, hi in zip(pts, pts[1:]))
    return a, b


def glint_log_likelihood(z, predicted_bearing, r, params: GlintNoiseParams):
    """log[(1-eps) N(d; 0, s2) + eps N(d; 0, inflation*s2)], d the wrapped residual."""
    z = np.asarray(z, dtype=float)
    predicted_bearing = np.asarray(predicted_bearing, dtype=float)
    r = np.asarray(r, dtype=float)
    if not (np.all(np.isfinite(z)) and np.all(np.isfinite(predicted_bearing)) and np.all(np.isfinite(r))):
        raise ModelError("non-finite input to glint likelihood")
    if np.any(r < 0):
        raise ModelError("range must be non-negative")
    d = wrap_angle(z - predicted_bearing)
    s2 = params.variance(r)
    big = params.inflation * s2
    l1 = np.log1p(-params.epsilon) if params.epsilon < 1 else -np.inf
    l2 = np.log(params.epsilon) if params.epsilon > 0 else -np.inf
    t1 = l1 - 0.5 * (LOG_2PI + np.log(s2) + d * d / s2)
    t2 = l2 - 0.5 * (LOG_2PI + np.log(big) + d * d / big)
    out = np.logaddexp(t1, t2)
    return out if np.ndim(out) else float(out)


class BearingOnlyModel(StateSpaceModel):
    """Coordinated-turn target observed by bearing sensors with glint noise.

    ``variance_scale`` converts sigma^2(r) into rad^2 (1 for rad^2,
    (pi/180)^2 when the polynomial is read in degrees^2).
    """

    n_x = 4
    position_indices = (0, 1)

    def __init__(self, sensor_positions, ct=None, glint=None, variance_scale=1.0, single_quadrant=False):
        self.sensors = np.atleast_2d(np.asarray(sensor_positions, dtype=float))
        self.n_nodes = self.sensors.shape[0]
        self.ct = ct or CoordinatedTurnParams()
        glint = glint or GlintNoiseParams()
        if variance_scale != 1.0:
            glint = GlintNoiseParams(glint.epsilon, tuple(variance_scale * c for c in glint.variance_coeffs), glint.inflation)
        self.glint = glint
        self.single_quadrant = single_quadrant
        self.process_cov = self.ct.sigma_v**2 * np.eye(4)
        self._chol_q = self.ct.sigma_v * np.eye(4)

    def transition_mean(self, X):
        X = np.atleast_2d(X)
        vx, vy = X[:, 2], X[:, 3]
        speed = np.hypot(vx, vy)
        moving = speed > 0
        omega = np.where(moving, self.ct.A_m / np.where(moving, speed, 1.0), 0.0)
        w = omega * self.ct.dt
        s, c = _sinc_terms(w)
        a, b = self.ct.dt * s, self.ct.dt * c
        cw, sw = np.cos(w), np.sin(w)
        out = np.empty_like(X)
        out[:, 0] = X[:, 0] + a * vx - b * vy
        out[:, 1] = X[:, 1] + b * vx + a * vy
        out[:, 2] = cw * vx - sw * vy
        out[:, 3] = sw * vx + cw * vy
        return out

    def propagate(self, X, rng):
        X = np.atleast_2d(X)
        return self.transition_mean(X) + rng.standard_normal(X.shape) * self.ct.sigma_v

    def transition_logpdf(self, X_new, X_prev):
        d = np.atleast_2d(X_new) - self.transition_mean(X_prev)
        s2 = self.ct.sigma_v**2
        return -0.5 * (np.sum(d * d, axis=1) / s2 + 4 * (LOG_2PI + np.log(s2)))

    def transition_jacobian(self, X):
        X = np.atleast_2d(X)
        n = X.shape[0]
        dt, A = self.ct.dt, self.ct.A_m
        vx, vy = X[:, 2], X[:, 3]
        speed = np.hypot(vx, vy)
        speed = np.where(speed > 0, speed, np.inf)
        w = A / speed * dt
        s, c = _sinc_terms(w)
        ds, dc = _sinc_term_derivatives(w)
        cw, sw = np.cos(w), np.sin(w)
        # dw/dv = -dt A v / |v|^3
        dw = np.stack([-dt * A * vx / speed**3, -dt * A * vy / speed**3], axis=1)
        da = dt * ds[:, None] * dw
        db = dt * dc[:, None] * dw
        dcw = -sw[:, None] * dw
        dsw = cw[:, None] * dw
        J = np.zeros((n, 4, 4))
        J[:, 0, 0] = 1.0
        J[:, 1, 1] = 1.0
        J[:, 0, 2:] = np.stack([dt * s, -dt * c], axis=1) + vx[:, None] * da - vy[:, None] * db
        J[:, 1, 2:] = np.stack([dt * c, dt * s], axis=1) + vx[:, None] * db + vy[:, None] * da
        J[:, 2, 2:] = np.stack([cw, -sw], axis=1) + vx[:, None] * dcw - vy[:, None] * dsw
        J[:, 3, 2:] = np.stack([sw, cw], axis=1) + vx[:, None] * dsw + vy[:, None] * dcw
        return J

    def _geometry(self, X, node):
        X = np.atleast_2d(X)
        dx = X[:, 0] - self.sensors[node, 0]
        dy = X[:, 1] - self.sensors[node, 1]
        return dx, dy, np.hypot(dx, dy)

    def bearing(self, X, node):
        return np.atleast_1d(bearing(np.atleast_2d(X), self.sensors[node], self.single_quadrant))

    def observe(self, x, node, rng):
        x = np.asarray(x, dtype=float)
        _, _, r = self._geometry(x, node)
        s2 = float(self.glint.variance(r[0]))
        if rng.random() < self.glint.epsilon:
            s2 *= self.glint.inflation
        return float(wrap_angle(self.bearing(x, node)[0] + np.sqrt(s2) * rng.standard_normal()))

    def log_likelihood(self, z, X, node):
        _, _, r = self._geometry(X, node)
        return glint_log_likelihood(z, self.bearing(X, node), r, self.glint)

    def observation_jacobian(self, X, node):
        dx, dy, r = self._geometry(X, node)
        H = np.zeros((dx.size, 1, 4))
        H[:, 0, 0] = dy / r**2
        H[:, 0, 1] = -dx / r**2
        return H

    def measurement_information(self, X, node):
        dx, dy, r = self._geometry(X, node)
        a, b = glint_fisher_constants(self.glint.epsilon, self.glint.inflation)
        s2 = self.glint.variance(r)
        gb = np.zeros((dx.size, 4))
        gb[:, 0], gb[:, 1] = dy / r**2, -dx / r**2
        gs = np.zeros((dx.size, 4))
        ds2 = self.glint.variance_derivative(r)
        gs[:, 0], gs[:, 1] = ds2 * dx / r, ds2 * dy / r
        return (a / s2)[:, None, None] * gb[:, :, None] * gb[:, None, :] + (
            b / (4.0 * s2**2)
        )[:, None, None] * gs[:, :, None] * gs[:, None, :]

    def snr_db(self, x, node):
        """Bearing power over noise variance, in dB (diagnostic only)."""
        b = float(self.bearing(x, node)[0])
        _, _, r = self._geometry(x, node)
        return 10.0 * np.log10(max(b * b, 1e-300) / float(self.glint.variance(r[0])))


# ---------------------------------------------------------------------------
# Unicycle robot


@dataclass(frozen=True)
class UnicycleParams:
    dt: float = 1.0
    velocity_mean: float = 30.0
    velocity_std: float = 5.0
    angular_velocity_mean: float = 0.08
    angular_velocity_std: float = 0.01
    orientation_noise_std: float = 0.01
    length_per_unit: float = 100.0  # cm per region unit
    angular_floor: float = 1e-6

    def __post_init__(self):
        if not self.dt > 0:
            raise ModelError("dt must be positive")
        if self.velocity_std < 0 or self.angular_velocity_std < 0 or self.orientation_noise_std < 0:
            raise ModelError("standard deviations must be non-negative")


def _arc_displacement(th, v, w, dt):
    """(V/W)(sin(th + W dt) - sin th) and (V/W)(cos(th + W dt) - cos th).

    Written with half-angle products so that the W -> 0 limit is exact.
    """
    half = 0.5 * w * dt
    chord = v * dt * np.sinc(half / np.pi)  # (V/W) * 2 sin(W dt / 2)
    mid = th + half
    return chord * np.cos(mid), -chord * np.sin(mid)


def unicycle_transition(state, params: UnicycleParams, noise_draw):
    """Apply the printed unicycle update with noise_draw = (V, W, xi_theta).

    V is in region units per second.  The Y update keeps the printed sign of
    the cosine-difference term.
    """
    state = np.asarray(state, dtype=float)
    v, w, xi = (float(u) for u in noise_draw)
    if abs(w) < params.angular_floor:
        raise ModelError("angular velocity below the configured floor")
    x, y, th = state
    dx, dy = _arc_displacement(th, v, w, params.dt)
    return np.array([x + dx, y + dy, th + w * params.dt + xi * params.dt])


class UnicycleModel(StateSpaceModel):
    """Unicycle robot localised by bearing sensors with glint noise.

    The process noise is not additive, so ``transition_logpdf`` uses a
    Gaussian approximation obtained by linearising the update in the noise
    variables around their means.
    """

    n_x = 3
    position_indices = (0, 1)
    angle_indices = (2,)

    def __init__(self, sensor_positions, params=None, glint=None, variance_scale=1.0):
        self.sensors = np.atleast_2d(np.asarray(sensor_positions, dtype=float))
        self.n_nodes = self.sensors.shape[0]
        self.params = params or UnicycleParams()
        self._bot = BearingOnlyModel(self.sensors, glint=glint, variance_scale=variance_scale)
        self.glint = self._bot.glint
        self.process_cov = None

    def _moments(self):
        p = self.params
        scale = 1.0 / p.length_per_unit
        return (p.velocity_mean * scale, p.velocity_std * scale, p.angular_velocity_mean, p.angular_velocity_std)

    def draw_noise(self, n, rng):
        vm, vs, wm, ws = self._moments()
        v = vm + vs * rng.standard_normal(n)
        w = wm + ws * rng.standard_normal(n)
        bad = np.abs(w) < self.params.angular_floor
        while np.any(bad):
            w[bad] = wm + ws * rng.standard_normal(int(bad.sum()))
            bad = np.abs(w) < self.params.angular_floor
        xi = self.params.orientation_noise_std * rng.standard_normal(n)
        return v, w, xi

    def _apply(self, X, v, w, xi):
        X = np.atleast_2d(X)
        dt = self.params.dt
        th = X[:, 2]
        dx, dy = _arc_displacement(th, v, w, dt)
        out = np.empty_like(X)
        out[:, 0] = X[:, 0] + dx
        out[:, 1] = X[:, 1] + dy
        out[:, 2] = th + w * dt + xi * dt
        return out

    def transition_mean(self, X):
        vm, _, wm, _ = self._moments()
        n = np.atleast_2d(X).shape[0]
        return self._apply(X, np.full(n, vm), np.full(n, wm), np.zeros(n))

    def propagate(self, X, rng):
        X = np.atleast_2d(X)
        v, w, xi = self.draw_noise(X.shape[0], rng)
        return self._apply(X, v, w, xi)

    def _noise_covariance(self, X):
        vm, vs, wm, ws = self._moments()
        dt = self.params.dt
        th = np.atleast_2d(X)[:, 2]
        s1, s0 = np.sin(th + wm * dt), np.sin(th)
        c1, c0 = np.cos(th + wm * dt), np.cos(th)
        G = np.zeros((th.size, 3, 3))
        G[:, 0, 0] = (s1 - s0) / wm
        G[:, 1, 0] = (c1 - c0) / wm
        G[:, 0, 1] = -vm / wm**2 * (s1 - s0) + vm / wm * c1 * dt
        G[:, 1, 1] = -vm / wm**2 * (c1 - c0) - vm / wm * s1 * dt
        G[:, 2, 1] = dt
        G[:, 2, 2] = dt
        S = np.diag([vs**2, ws**2, self.params.orientation_noise_std**2])
        C = G @ S @ G.transpose(0, 2, 1)
        return C + 1e-12 * np.eye(3)

    def transition_logpdf(self, X_new, X_prev):
        d = np.atleast_2d(X_new) - self.transition_mean(X_prev)
        d[:, 2] = wrap_angle(d[:, 2])
        C = self._noise_covariance(X_prev)
        L = np.linalg.cholesky(C)
        sol = np.linalg.solve(L, d[:, :, None])[:, :, 0]
        logdet = 2.0 * np.sum(np.log(np.diagonal(L, axis1=1, axis2=2)), axis=1)
        return -0.5 * (np.sum(sol**2, axis=1) + logdet + 3 * LOG_2PI)

    def observe(self, x, node, rng):
        return self._bot.observe(np.r_[np.asarray(x)[:2], 0.0, 0.0], node, rng)

    def log_likelihood(self, z, X, node):
        X = np.atleast_2d(X)
        return self._bot.log_likelihood(z, np.c_[X[:, :2], np.zeros((X.shape[0], 2))], node)

    def measurement_information(self, X, node):
        X = np.atleast_2d(X)
        full = self._bot.measurement_information(np.c_[X[:, :2], np.zeros((X.shape[0], 2))], node)
        return full[:, :3, :3] * np.array([1.0, 1.0, 0.0])[None, :, None] * np.array([1.0, 1.0, 0.0])[None, None, :]


# ---------------------------------------------------------------------------
# Linear-Gaussian oracle model


@dataclass
class LinearGaussianModel(StateSpaceModel):
    """x(k) = F x(k-1) + N(0, Q);  z_l(k) = H_l x(k) + N(0, R_l)."""

    F: np.ndarray
    Q: np.ndarray
    H: list
    R: list
    position_indices: tuple = field(default=(0,))

    def __post_init__(self):
        self.F = np.atleast_2d(np.asarray(self.F, dtype=float))
        self.Q = _check_spd(self.Q, "Q")
        self.n_x = self.F.shape[0]
        if self.F.shape != (self.n_x, self.n_x) or self.Q.shape != self.F.shape:
            raise ModelError("F and Q must be n_x x n_x")
        self.H = [np.atleast_2d(np.asarray(h, dtype=float)) for h in self.H]
        self.R = [_check_spd(r, f"R[{i}]") for i, r in enumerate(self.R)]
        if len(self.H) != len(self.R) or not self.H:
            raise ModelError("need one (H, R) pair per node")
        for h, r in zip(self.H, self.R):
            if h.shape != (r.shape[0], self.n_x):
                raise ModelError("H_l must be n_z x n_x")
        self.n_nodes = len(self.H)
        self.process_cov = self.Q
        self._LQ = np.linalg.cholesky(self.Q)
        self.position_indices = tuple(i for i in self.position_indices if i < self.n_x)

    def transition_mean(self, X):
        return np.atleast_2d(X) @ self.F.T

    def propagate(self, X, rng):
        X = np.atleast_2d(X)
        return self.transition_mean(X) + rng.standard_normal(X.shape) @ self._LQ.T

    def transition_logpdf(self, X_new, X_prev):
        d = np.atleast_2d(X_new) - self.transition_mean(X_prev)
        return gaussian_logpdf(d, np.zeros(self.n_x), self.Q)

    def transition_jacobian(self, X):
        return np.broadcast_to(self.F, (np.atleast_2d(X).shape[0],) + self.F.shape).copy()

    def observe(self, x, node, rng):
        H, R = self.H[node], self.R[node]
        return H @ np.asarray(x, dtype=float) + np.linalg.cholesky(R) @ rng.standard_normal(R.shape[0])

    def log_likelihood(self, z, X, node):
        X = np.atleast_2d(X)
        pred = X @ self.H[node].T
        return gaussian_logpdf(pred - np.atleast_1d(z), np.zeros(self.R[node].shape[0]), self.R[node])

    def observation_jacobian(self, X, node):
        return np.broadcast_to(self.H[node], (np.atleast_2d(X).shape[0],) + self.H[node].shape).copy()

    def measurement_information(self, X, node):
        H = self.H[node]
        info = H.T @ np.linalg.solve(self.R[node], H)
        return np.broadcast_to(info, (np.atleast_2d(X).shape[0],) + info.shape).copy()


def linear_gaussian_model(F, Q, H_per_node, R_per_node, position_indices=(0,)):
    return LinearGaussianModel(F, Q, list(H_per_node), list(R_per_node), tuple(position_indices))


def kalman_filter(model: LinearGaussianModel, m0, P0, measurements):
    """Centralised Kalman filter over all nodes; returns means, covariances, information matrices."""
    m, P = np.asarray(m0, dtype=float), np.asarray(P0, dtype=float)
    means, covs, infos = [], [], []
    for zs in measurements:
        m = model.F @ m
        P = model.F @ P @ model.F.T + model.Q
        Y = np.linalg.inv(P)
        y = Y @ m
        for H, R, z in zip(model.H, model.R, zs):
            Ri = np.linalg.inv(R)
            Y = Y + H.T @ Ri @ H
            y = y + H.T @ Ri @ np.atleast_1d(z)
        P = np.linalg.inv(Y)
        m = P @ y
        means.append(m)
        covs.append(P)
        infos.append(Y)
    return np.array(means), np.array(covs), np.array(infos)
