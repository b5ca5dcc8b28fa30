"""Output-peak bounds for stabilized LTI systems measured in a quadratic metric.

Two routes are provided for eta = max_{t >= 0} ||C exp(A_bar t) s0||^2:

* ``exact_output_peak`` finds the peak from the critical points of ||z(t)||^2,
  located by dense sampling and refined by safeguarded Newton steps, with the
  search horizon certified by an exponential envelope.
* ``relaxed_output_peak`` returns a feasible point of the invariant-ellipsoid
  SDP, restricted to the family of Lyapunov solutions of the shifted matrix
  A_bar + beta I, and minimizes over beta.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.linalg import expm
from scipy.optimize import minimize

from .errors import BoundUncertainError, ConfigurationError, EigenvaluePairingError, StabilityError

EXACT = "exact-critical-points"
RELAXED = "invariant-ellipsoid"
ENERGY = "lyapunov-energy"


@dataclass(frozen=True)
class ClosedLoopSystem:
    a_bar: np.ndarray
    c_out: np.ndarray
    proj: np.ndarray
    state_dim: int
    pos_dim: int
    spectral_abscissa: float

    def with_metric(self, q) -> "ClosedLoopSystem":
        """Same dynamics, output z = Q^{1/2} P s for a new metric Q."""
        return ClosedLoopSystem(
            a_bar=self.a_bar,
            c_out=sym_sqrt(q) @ self.proj,
            proj=self.proj,
            state_dim=self.state_dim,
            pos_dim=self.pos_dim,
            spectral_abscissa=self.spectral_abscissa,
        )

    @property
    def metric(self) -> np.ndarray:
        # C = Q^{1/2} P with P a selector, so Q = C P^T P C^T restricted to positions
        cp = self.c_out @ self.proj.T
        return cp @ cp.T


@dataclass(frozen=True)
class PeakBound:
    value: float
    method: str
    argmax_time: float | None = None
    decay_rate: float | None = None


@dataclass(frozen=True)
class InvariantEllipsoidCert:
    u: np.ndarray
    delta: float


@dataclass(frozen=True)
class HorizonConfig:
    sample_dt: float = 0.01
    decay_margin: float = 0.9  # sigma = margin * |max Re lambda|
    max_horizon: float = 400.0
    newton_tol: float = 1e-13
    newton_max_iter: int = 60


@dataclass(frozen=True)
class SearchConfig:
    n_scan: int = 24
    beta_lo_frac: float = 1e-4
    beta_hi_frac: float = 0.999
    golden_iter: int = 40
    eps_scale: float = 1e-6
    polish_evals: int = 0  # >0 enables the local search over the full Lyapunov family


def sym_sqrt(q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    lam, v = np.linalg.eigh(0.5 * (q + q.T))
    if lam.min() < 0:
        raise ConfigurationError(f"metric matrix is not positive semidefinite (min eigenvalue {lam.min()})")
    return (v * np.sqrt(lam)) @ v.T


def position_selector(pos_dim: int, state_dim: int) -> np.ndarray:
    return np.hstack([np.eye(pos_dim), np.zeros((pos_dim, state_dim - pos_dim))])


def double_integrator(k: float, zeta: float, n: int = 2):
    """(A, B, K) of n decoupled double integrators under u = -2k x - zeta xdot."""
    z, i = np.zeros((n, n)), np.eye(n)
    a = np.block([[z, i], [z, z]])
    b = np.vstack([z, i])
    kg = np.hstack([2.0 * k * i, zeta * i])
    return a, b, kg


def build_closed_loop(a, b, k_gain, q_dir, pos_dim=None) -> ClosedLoopSystem:
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.atleast_2d(np.asarray(b, dtype=float))
    k_gain = np.atleast_2d(np.asarray(k_gain, dtype=float))
    q = np.atleast_2d(np.asarray(q_dir.q if hasattr(q_dir, "q") else q_dir, dtype=float))
    ns = a.shape[0]
    if a.shape != (ns, ns) or b.shape[0] != ns or k_gain.shape != (b.shape[1], ns):
        raise ConfigurationError(f"inconsistent shapes A{a.shape} B{b.shape} K{k_gain.shape}")
    n = q.shape[0] if pos_dim is None else pos_dim
    if q.shape != (n, n) or n > ns:
        raise ConfigurationError(f"metric shape {q.shape} incompatible with state dimension {ns}")
    a_bar = a - b @ k_gain
    abscissa = float(np.max(np.linalg.eigvals(a_bar).real))
    if not abscissa < 0:
        raise StabilityError(f"closed-loop matrix is not Hurwitz (max real eigenvalue {abscissa:.6g})")
    proj = position_selector(n, ns)
    return ClosedLoopSystem(
        a_bar=a_bar,
        c_out=sym_sqrt(q) @ proj,
        proj=proj,
        state_dim=ns,
        pos_dim=n,
        spectral_abscissa=abscissa,
    )


# ---------------------------------------------------------------------------
# exact peak


@lru_cache(maxsize=16)
def _propagators(a_key: bytes, ns: int, dt: float, count: int):
    """exp(A t_k) for t_k = k dt, k < count, plus A exp(A t_k)."""
    a = np.frombuffer(a_key).reshape(ns, ns)
    step = expm(a * dt)
    out = np.empty((count, ns, ns))
    out[0] = np.eye(ns)
    for k in range(1, count):
        out[k] = out[k - 1] @ step
    a_out = np.einsum("ij,kjl->kil", a, out)
    out.setflags(write=False)
    a_out.setflags(write=False)
    return out, a_out


@lru_cache(maxsize=16)
def _envelope_constant(a_key: bytes, ns: int, pos_dim: int, sigma: float, abscissa: float):
    """M with ||P exp(A t)|| <= M exp(-sigma t), from operator norms sampled on a long grid."""
    a = np.frombuffer(a_key).reshape(ns, ns)
    gap = abs(abscissa) - sigma
    # t^(ns-1) exp(-gap t) peaks at (ns-1)/gap; sample well past it
    t_end = max(4.0 * ns / gap, 10.0 / abs(abscissa))
    count = 4000
    dt = t_end / (count - 1)
    step = expm(a * dt)
    stack = np.empty((count, ns, ns))
    stack[0] = np.eye(ns)
    for k in range(1, count):
        stack[k] = stack[k - 1] @ step
    norms = np.linalg.norm(stack[:, :pos_dim], ord=2, axis=(1, 2))
    return float(np.max(norms * np.exp(sigma * dt * np.arange(count))))


def _taylor_state(a, s, tau, order=16):
    """exp(A tau) s by a truncated Taylor series; only used for |A| tau small."""
    term = s.copy()
    acc = s.copy()
    for k in range(1, order + 1):
        term = (a @ term) * (tau / k)
        acc = acc + term
    return acc


def _state_at(a, s_base, tau):
    if np.linalg.norm(a, 1) * abs(tau) <= 0.5:
        return _taylor_state(a, s_base, tau)
    return expm(a * tau) @ s_base


def exact_output_peak(sys: ClosedLoopSystem, s0, horizon_cfg: HorizonConfig | None = None) -> PeakBound:
    cfg = horizon_cfg or HorizonConfig()
    s0 = np.asarray(s0, dtype=float).reshape(-1)
    if s0.shape != (sys.state_dim,):
        raise ConfigurationError(f"initial state has shape {s0.shape}, expected ({sys.state_dim},)")
    snorm2 = float(s0 @ s0)
    if snorm2 == 0.0:
        return PeakBound(0.0, EXACT, argmax_time=0.0)

    a = sys.a_bar
    c = sys.c_out
    alpha = abs(sys.spectral_abscissa)
    sigma = cfg.decay_margin * alpha
    a_key = np.ascontiguousarray(a, dtype=float).tobytes()
    m_env = _envelope_constant(a_key, sys.state_dim, sys.pos_dim, sigma, sys.spectral_abscissa)
    lam_q = float(np.linalg.norm(c, 2) ** 2)
    env0 = lam_q * m_env**2 * snorm2

    dt = cfg.sample_dt
    horizon = min(cfg.max_horizon, max(10.0 / alpha, 50 * dt))
    while True:
        count = int(math.ceil(horizon / dt)) + 1
        props, a_props = _propagators(a_key, sys.state_dim, dt, count)
        s_grid = props @ s0
        z = s_grid @ c.T
        zd = (a_props @ s0) @ c.T
        vals = np.einsum("ij,ij->i", z, z)
        ders = np.einsum("ij,ij->i", z, zd)
        k_best = int(np.argmax(vals))
        best, t_best = float(vals[k_best]), k_best * dt

        # interior maxima: derivative sign change + -> -
        idx = np.nonzero((ders[:-1] > 0) & (ders[1:] <= 0))[0]
        for i in idx:
            t_loc, v_loc = _refine_peak(a, c, s_grid[i], i * dt, dt, cfg)
            if v_loc > best:
                best, t_best = v_loc, t_loc

        if best > 0:
            t_cert = math.log(max(env0 / best, 1.0)) / (2.0 * sigma)
        else:
            t_cert = math.inf
        t_grid = (count - 1) * dt
        if t_cert <= t_grid:
            return PeakBound(best, EXACT, argmax_time=t_best, decay_rate=sigma)
        if horizon >= cfg.max_horizon:
            raise BoundUncertainError(
                f"peak not certified: envelope needs horizon {t_cert:.3g}s, limit {cfg.max_horizon:.3g}s "
                f"(best={best:.6g}, envelope={env0:.6g})"
            )
        horizon = min(cfg.max_horizon, max(2 * horizon, 1.05 * t_cert))


def _refine_peak(a, c, s_i, t_i, dt, cfg: HorizonConfig):
    """Safeguarded Newton on d/dt ||z||^2 = 0 inside [t_i, t_i + dt]."""
    a2 = a @ a

    def parts(tau):
        s = _state_at(a, s_i, tau)
        z = c @ s
        zd = c @ (a @ s)
        zdd = c @ (a2 @ s)
        return float(z @ z), float(z @ zd), float(zd @ zd + z @ zdd)

    lo, hi = 0.0, dt
    tau = 0.5 * dt
    for _ in range(cfg.newton_max_iter):
        _, f, fp = parts(tau)
        if f > 0:
            lo = tau
        else:
            hi = tau
        nxt = tau - f / fp if fp != 0 else math.nan
        if not (lo < nxt < hi):
            nxt = 0.5 * (lo + hi)
        if abs(nxt - tau) <= cfg.newton_tol * max(1.0, t_i) or hi - lo <= cfg.newton_tol:
            tau = nxt
            break
        tau = nxt
    val, _, _ = parts(tau)
    return t_i + tau, val


# ---------------------------------------------------------------------------
# relaxed (invariant ellipsoid) bound


def solve_lyapunov(m, rhs) -> np.ndarray:
    """X with m^T X + X m = rhs, through the Kronecker-product linear system."""
    m = np.atleast_2d(np.asarray(m, dtype=float))
    rhs = np.atleast_2d(np.asarray(rhs, dtype=float))
    n = m.shape[0]
    if m.shape != (n, n) or rhs.shape != (n, n):
        raise ConfigurationError(f"solve_lyapunov needs square, matching matrices; got {m.shape} and {rhs.shape}")
    lam = np.linalg.eigvals(m)
    sums = np.abs(lam[:, None] + lam[None, :])
    scale = max(1.0, float(np.linalg.norm(m, 2)))
    if sums.min() <= 1e-10 * scale:
        i, j = np.unravel_index(np.argmin(sums), sums.shape)
        raise EigenvaluePairingError(
            f"eigenvalues {lam[i]:.6g} and {lam[j]:.6g} sum to {lam[i] + lam[j]:.3g}; Lyapunov operator is singular"
        )
    mt = m.T
    eye = np.eye(n)
    kron = np.kron(mt, eye) + np.kron(eye, mt)
    x = np.linalg.solve(kron, rhs.reshape(-1)).reshape(n, n)
    if np.allclose(rhs, rhs.T, rtol=0, atol=1e-14 * max(1.0, np.abs(rhs).max())):
        x = 0.5 * (x + x.T)
    return x


def check_certificate(sys: ClosedLoopSystem, s0, cert: InvariantEllipsoidCert, atol=1e-8) -> list[str]:
    """Names of violated conditions (empty when the certificate is valid)."""
    u = cert.u
    s0 = np.asarray(s0, dtype=float)
    if u is None:
        # degenerate certificate: only valid for the zero state
        return [] if not np.any(s0) and cert.delta >= 0 else ["positive-definite"]
    failed = []
    if not np.allclose(u, u.T, atol=1e-10 * max(1.0, np.abs(u).max())):
        failed.append("symmetric")
    lyap = sys.a_bar.T @ u + u @ sys.a_bar
    lyap = 0.5 * (lyap + lyap.T)
    if np.linalg.eigvalsh(lyap).max() > atol:
        failed.append("decrease")
    if float(s0 @ u @ s0) > 1 + 1e-9:
        failed.append("contains-s0")
    try:
        lam_u = np.linalg.eigvalsh(0.5 * (u + u.T))
        if lam_u.min() <= 0:
            failed.append("positive-definite")
        else:
            cuc = sys.c_out @ np.linalg.solve(u, sys.c_out.T)
            if np.linalg.eigvalsh(0.5 * (cuc + cuc.T)).max() > cert.delta + atol:
                failed.append("output-bound")
    except np.linalg.LinAlgError:
        failed.append("positive-definite")
    return failed


def _family_member(sys, s0, beta, eps):
    n = sys.state_dim
    u = solve_lyapunov(sys.a_bar + beta * np.eye(n), -eps * np.eye(n))
    scale = float(s0 @ u @ s0)
    u = u / scale
    cuc = sys.c_out @ np.linalg.solve(u, sys.c_out.T)
    delta = float(np.linalg.eigvalsh(0.5 * (cuc + cuc.T)).max())
    return delta, u


def _polish(sys, s0, u0, delta0, max_evals):
    """Local search over U = Lyap^{-1}(-R R^T); every iterate is feasible.

    Any R R^T >= 0 yields a U satisfying the decrease condition, so the search
    can only tighten the bound. Uses the beta-family optimum as the start.
    """
    n = sys.state_dim
    r0 = -(sys.a_bar.T @ u0 + u0 @ sys.a_bar)
    r0 = 0.5 * (r0 + r0.T)
    try:
        l0 = np.linalg.cholesky(r0)
    except np.linalg.LinAlgError:
        return delta0, u0
    tril = np.tril_indices(n)
    scale = float(np.abs(l0).max())
    ridge = 1e-12 * np.eye(n)
    best = [delta0, u0]

    def objective(p):
        lf = np.zeros((n, n))
        lf[tril] = p
        try:
            u = solve_lyapunov(sys.a_bar, -(lf @ lf.T + ridge))
            u = 0.5 * (u + u.T)
            u = u / float(s0 @ u @ s0)
            cuc = sys.c_out @ np.linalg.solve(u, sys.c_out.T)
            if np.linalg.eigvalsh(u).min() <= 0:
                return math.inf
        except (EigenvaluePairingError, np.linalg.LinAlgError, ZeroDivisionError):
            return math.inf
        d = float(np.linalg.eigvalsh(0.5 * (cuc + cuc.T)).max())
        if d < best[0] and not check_certificate(sys, s0, InvariantEllipsoidCert(u, d)):
            best[0], best[1] = d, u
        return d

    minimize(objective, l0[tril] / scale, method="Powell",
             options={"maxfev": max_evals, "xtol": 1e-10, "ftol": 1e-13})
    return best[0], best[1]


def relaxed_output_peak(sys: ClosedLoopSystem, s0, search_cfg: SearchConfig | None = None, external=None):
    """Invariant-ellipsoid upper bound delta >= eta with its certificate.

    ``external`` may carry a (U, delta) pair from an outside SDP solve; it is
    used when it passes the certificate checks and beats the family optimum.
    """
    cfg = search_cfg or SearchConfig()
    s0 = np.asarray(s0, dtype=float).reshape(-1)
    n = sys.state_dim
    if not np.any(s0):
        # the ellipsoid degenerates to the origin; no finite U certifies it
        return PeakBound(0.0, RELAXED), InvariantEllipsoidCert(u=None, delta=0.0)

    alpha = abs(sys.spectral_abscissa)
    eps = cfg.eps_scale * float(np.linalg.norm(sys.a_bar, 2))
    lo_frac, hi_frac = cfg.beta_lo_frac, cfg.beta_hi_frac

    def evaluate(log_beta):
        try:
            return _family_member(sys, s0, math.exp(log_beta), eps)
        except (EigenvaluePairingError, np.linalg.LinAlgError):
            return math.inf, None

    for _ in range(8):
        grid = np.linspace(math.log(lo_frac * alpha), math.log(hi_frac * alpha), cfg.n_scan)
        scores = [evaluate(lb) for lb in grid]
        vals = np.array([d for d, _ in scores])
        if np.isfinite(vals).any():
            break
        # singular near the spectral abscissa: pull the bracket in
        hi_frac = 0.5 * (lo_frac + hi_frac)
    else:
        raise BoundUncertainError("no member of the Lyapunov family could be solved")

    k = int(np.nanargmin(vals))
    best_delta, best_u = scores[k]
    best_beta = math.exp(grid[k])
    a_lo, b_hi = grid[max(k - 1, 0)], grid[min(k + 1, len(grid) - 1)]
    invphi = (math.sqrt(5) - 1) / 2
    x1 = b_hi - invphi * (b_hi - a_lo)
    x2 = a_lo + invphi * (b_hi - a_lo)
    f1, f2 = evaluate(x1), evaluate(x2)
    for _ in range(cfg.golden_iter):
        for xv, fv in ((x1, f1), (x2, f2)):
            if fv[0] < best_delta:
                best_delta, best_u, best_beta = fv[0], fv[1], math.exp(xv)
        if f1[0] <= f2[0]:
            b_hi, x2, f2 = x2, x1, f1
            x1 = b_hi - invphi * (b_hi - a_lo)
            f1 = evaluate(x1)
        else:
            a_lo, x1, f1 = x1, x2, f2
            x2 = a_lo + invphi * (b_hi - a_lo)
            f2 = evaluate(x2)

    if cfg.polish_evals > 0:
        best_delta, best_u = _polish(sys, s0, best_u, best_delta, cfg.polish_evals)

    cert = InvariantEllipsoidCert(u=best_u, delta=best_delta)
    if external is not None:
        u_ext, d_ext = external
        ext = InvariantEllipsoidCert(u=np.asarray(u_ext, dtype=float), delta=float(d_ext))
        if not check_certificate(sys, s0, ext) and ext.delta < best_delta:
            return PeakBound(ext.delta, RELAXED), ext
    return PeakBound(best_delta, RELAXED, decay_rate=best_beta), cert
