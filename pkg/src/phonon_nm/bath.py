"""Structured phonon environment for the four-level defect.

The strain coupling enters through two Hermitian coefficient matrices
(orbital sigma_z and sigma_x taken in the field-dependent eigenbasis) and a
phenomenological spectral density peaked at the orbital gap.  Sine-kernel
integrals of that density give time-dependent rates that start at zero, ring
while the bath correlations build up, and settle on the golden-rule plateau;
their transient sign changes are the only source of trace-distance backflow
in this channel, so the quadrature keeps them exact rather than smoothing
them away.  The master equation lives in the eigenbasis and never mixes
populations with coherences, which is what makes repeated initial-state
scans affordable.
"""

from dataclasses import dataclass, replace

import numpy as np
from scipy.integrate import quad
from scipy.interpolate import CubicSpline
from scipy.linalg import expm

from .qcore import dag, hermitize, check_density_matrix, trace_distance_series
from .siv import SivParams, HBAR_OVER_KB, bose_occupation, label_spectrum
from .dynamics import Trajectory
from .nonmarkov import (NmResult, ResolutionError, positive_increment_sum,
                        initial_state_from_angles, PAIR_LB, PAIR_UB)

__all__ = [
    "BathParams", "CouplingTensors", "RateSet", "spectral_density",
    "normalize_j0", "coupling_tensors", "rate_integrals", "golden_rule_rate",
    "tlme_generator", "TlmeCache", "propagate_tlme", "TlmeBlpSetup",
]

_SZ_ORB = np.diag([1.0, -1.0]).astype(complex)
_SX_ORB = np.array([[0.0, 1.0], [1.0, 0.0]], dtype=complex)

# 16-point Gauss-Legendre per panel; exact through degree 31, so half an
# oscillation of the sine kernel per panel is resolved to machine precision
_GLX, _GLW = np.polynomial.legendre.leggauss(16)
_MAX_PANELS = 20000


# --- environment description --------------------------------------------------

@dataclass(frozen=True)
class BathParams:
    """Lorentzian-filtered cubic spectral density plus thermal state of the bath.

    j0 carries units of s/rad so that J(omega) comes out in rad/s and its
    frequency integral in rad^2/s^2 (a sum of squared couplings).  cross_mode
    picks the mixed density J3: "full" means the two strain channels share one
    coherent mode family (J3 = J), "zero" switches the interference off.
    """

    j0: float
    width: float
    center: float
    temperature: float = 0.0
    omega_max: float = 0.0       # 0 means: use 5 * center
    cross_mode: str = "full"

    def __post_init__(self):
        if self.center <= 0:
            raise ValueError("center frequency must be positive")
        if self.width <= 0:
            raise ValueError("width must be positive")
        if self.j0 <= 0:
            raise ValueError("j0 must be positive")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.omega_max == 0.0:
            object.__setattr__(self, "omega_max", 5.0 * self.center)
        if self.omega_max <= self.center:
            raise ValueError("omega_max must exceed the center frequency")
        if self.cross_mode not in ("full", "zero"):
            raise ValueError("cross_mode must be 'full' or 'zero'")


def spectral_density(omega, p: BathParams):
    """J(omega): cubic acoustic rise filtered by a Lorentzian at the gap.

    Accepts scalars or arrays; negative frequencies are a caller bug.
    """
    w = np.asarray(omega, dtype=float)
    if np.any(w < 0):
        raise ValueError("spectral_density wants omega >= 0")
    hw = 0.5 * p.width
    j = p.j0 * w ** 3 / ((w / p.center) ** 2 + 1.0) * hw / ((w - p.center) ** 2 + hw ** 2)
    if np.ndim(omega) == 0:
        return float(j)
    return j


def normalize_j0(target_sum, p: BathParams):
    """Amplitude that makes the [0, omega_max] quadrature of J equal target_sum.

    J is linear in j0, so one reference quadrature at j0 = 1 settles it.
    target_sum is the summed squared coupling the density must account for.
    """
    if target_sum <= 0:
        raise ValueError("target_sum must be positive")
    ref = replace(p, j0=1.0)
    val, err = quad(lambda w: spectral_density(w, ref), 0.0, p.omega_max,
                    points=[p.center], limit=400, epsabs=0.0, epsrel=1e-12)
    if not np.isfinite(val) or val <= 0.0 or err > 1e-8 * val:
        raise RuntimeError("spectral quadrature did not settle: value %g, abserr %g"
                           % (val, err))
    return float(target_sum / val)


# --- strain coefficients in the eigenbasis ------------------------------------

@dataclass
class CouplingTensors:
    """Matrix elements of the two orbital strain operators, eigenbasis-ordered."""

    a: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        self.a = np.asarray(self.a, dtype=complex)
        self.b = np.asarray(self.b, dtype=complex)
        for name, m in (("a", self.a), ("b", self.b)):
            if m.shape != (4, 4):
                raise ValueError("%s must be 4x4" % name)
            if np.max(np.abs(m - dag(m))) > 1e-12 * max(1.0, np.max(np.abs(m))):
                raise ValueError("%s is not Hermitian" % name)
        self.a = hermitize(self.a)
        self.b = hermitize(self.b)


def coupling_tensors(p: SivParams) -> CouplingTensors:
    """sigma_z and sigma_x orbital expectation matrices in the labelled eigenbasis.

    The labelled basis handles degenerate clusters by rotating them onto the
    zero-strain reference first, so the matrix elements stay deterministic and
    continuous in the field.  Everything downstream (rates, master equation)
    must use the same basis ordering.
    """
    v = label_spectrum(p).states
    i2 = np.eye(2, dtype=complex)
    a = dag(v) @ np.kron(_SZ_ORB, i2) @ v
    b = dag(v) @ np.kron(_SX_ORB, i2) @ v
    return CouplingTensors(a, b)


# --- time-dependent rates -----------------------------------------------------

@dataclass(frozen=True)
class RateSet:
    """The eight sine-kernel rates at one (omega, t) point.

    Pairs (g11, g22) and (g33, g44) coincide because both strain channels see
    the same density here; the mixed ones (g12, g21, g34, g43) vanish when the
    cross density is switched off.
    """

    g11: float
    g12: float
    g22: float
    g21: float
    g33: float
    g34: float
    g44: float
    g43: float


def _occupation(x, temperature):
    # vectorized Bose factor; quadrature nodes are strictly interior so x > 0
    if temperature <= 0.0:
        return np.zeros_like(x)
    a = HBAR_OVER_KB * x / temperature
    out = np.zeros_like(x)
    small = a < 700.0
    out[small] = 1.0 / np.expm1(a[small])
    return out


def _quad_edges(p: BathParams, t_char, sinc_centers, subdivide=1):
    """Panel edges on [0, omega_max] for the oscillatory rate integrals.

    Geometric clusters resolve the Lorentzian peak and each sine-kernel
    center; a uniform background keeps at most half a kernel oscillation per
    panel, which 16-point Gauss handles to machine precision.  The background
    count grows linearly with t_char, hence the hard panel cap.
    """
    hi = p.omega_max
    edges = [0.0, hi]

    def cluster(c, s):
        if 0.0 < c < hi:
            edges.append(c)
        for k in (0.5, 1.0, 2.0, 4.0, 8.0, 16.0, 32.0):
            for sgn in (-1.0, 1.0):
                e = c + sgn * k * s
                if 0.0 < e < hi:
                    edges.append(e)

    cluster(p.center, 0.5 * p.width)
    if t_char > 0.0:
        n_bg = hi * t_char / np.pi
        if n_bg * subdivide > _MAX_PANELS:
            raise RuntimeError("rate quadrature needs %d panels (cap %d); "
                               "the time span is too long for this cutoff"
                               % (int(n_bg * subdivide), _MAX_PANELS))
        for c in sinc_centers:
            cluster(c, np.pi / t_char)
        edges.extend(np.linspace(0.0, hi, int(np.ceil(n_bg)) + 1).tolist())
    e = np.unique(np.asarray(edges, dtype=float))
    if subdivide > 1:
        frac = np.arange(1, subdivide) / float(subdivide)
        mids = (e[:-1, None] + np.diff(e)[:, None] * frac[None, :]).ravel()
        e = np.unique(np.concatenate([e, mids]))
    return e


def _panel_nodes(edges):
    # map the Gauss rule onto every panel; flat node and weight arrays
    lo = edges[:-1]
    hi = edges[1:]
    half = 0.5 * (hi - lo)
    mid = 0.5 * (hi + lo)
    x = (mid[:, None] + half[:, None] * _GLX[None, :]).ravel()
    w = (half[:, None] * _GLW[None, :]).ravel()
    return x, w


def rate_integrals(omega, t, p: BathParams, subdivide=1) -> RateSet:
    """The eight time-dependent rates at transition frequency omega, time t.

    Each is 2 * integral of a spectral weight times sin((omega +- omega')t) /
    (omega +- omega'); the removable singularity is evaluated through the sinc
    form, so nothing special happens at omega' = omega.  All eight vanish
    identically at t = 0.
    """
    if t < 0:
        raise ValueError("t must be >= 0")
    if t == 0.0:
        return RateSet(*([0.0] * 8))
    centers = [abs(omega)] if 0.0 < abs(omega) < p.omega_max else []
    x, wq = _panel_nodes(_quad_edges(p, t, centers, subdivide))
    j = spectral_density(x, p)
    n = _occupation(x, p.temperature)
    # sin(y t)/y written as t*sinc so the y -> 0 limit is the exact value t
    kplus = t * np.sinc((omega + x) * (t / np.pi))
    kminus = t * np.sinc((omega - x) * (t / np.pi))
    up = 2.0 * float(np.dot(wq, j * n * kplus))
    down = 2.0 * float(np.dot(wq, j * (n + 1.0) * kminus))
    cross = 1.0 if p.cross_mode == "full" else 0.0
    return RateSet(g11=up, g12=cross * up, g22=up, g21=cross * up,
                   g33=down, g34=cross * down, g44=down, g43=cross * down)


def golden_rule_rate(omega, p: BathParams):
    """Long-time plateau of the combined rate: emission above, absorption below."""
    if omega == 0.0:
        return 0.0
    j = spectral_density(abs(omega), p)
    n = bose_occupation(abs(omega), p.temperature) if p.temperature > 0 else 0.0
    return float(2.0 * np.pi * j * (n + 1.0 if omega > 0 else n))


# --- master equation assembly -------------------------------------------------

def _channel_weights(ct: CouplingTensors, p: BathParams):
    """Per-pair damping weight and the dephasing weight matrix.

    With one shared density the four-term rate assembly collapses to a single
    combined rate per transition; cross terms fold into the weights, giving
    |A_ij + B_ij|^2 when the mixed density is on.  Both outputs are real.
    """
    x = 1.0 if p.cross_mode == "full" else 0.0
    w = np.abs(ct.a) ** 2 + np.abs(ct.b) ** 2 \
        + x * 2.0 * np.real(np.conj(ct.a) * ct.b)
    da = np.real(np.diag(ct.a))
    db = np.real(np.diag(ct.b))
    d = np.outer(da, da) + np.outer(db, db) + x * (np.outer(db, da) + np.outer(da, db))
    return np.real(w), d


def tlme_generator(rho, t, ct: CouplingTensors, p: BathParams, spectrum):
    """d(rho)/dt of the time-local equation, eigenbasis, interaction picture.

    `spectrum` only needs an .energies attribute and must come from the same
    basis that produced ct.  Populations follow a classical rate matrix,
    every coherence decays with its own real log-derivative; the generator is
    trace-free by construction.  This is the plain reference path: each call
    does fresh quadrature, so use TlmeCache for anything repeated.
    """
    rho = np.asarray(rho, dtype=complex)
    en = np.asarray(spectrum.energies, dtype=float)
    w, d = _channel_weights(ct, p)

    def combined(om):
        rs = rate_integrals(om, t, p)
        return rs.g11 + rs.g33

    gam = np.zeros((4, 4))
    for i in range(4):
        for j in range(4):
            if i != j:
                gam[i, j] = w[i, j] * combined(en[j] - en[i])
    omg = d * combined(0.0)
    out_rate = gam.sum(axis=0)          # total leak out of each level
    pops = np.real(np.diag(rho))
    drho = np.zeros((4, 4), dtype=complex)
    drho[np.diag_indices(4)] = gam @ pops - out_rate * pops
    for a in range(4):
        for b in range(4):
            if a != b:
                lam = -0.5 * (out_rate[a] + out_rate[b]) \
                    + omg[a, b] - 0.5 * (omg[a, a] + omg[b, b])
                drho[a, b] = lam * rho[a, b]
    return drho


# --- cached propagation -------------------------------------------------------

class TlmeCache:
    """Rate tables and propagators for the time-local equation on a fixed grid.

    The combined rate is tabulated once per distinct transition frequency
    (cubic splines in t), the population sector is advanced by substepped
    midpoint exponentials of the rate matrix, and every coherence gets an
    exact integral of its log-derivative from the spline antiderivatives.
    After construction, propagating any initial state is a matrix-vector
    product plus an elementwise multiply per sample.
    """

    def __init__(self, ct: CouplingTensors, p: BathParams, spectrum, t_grid,
                 subdivide=1):
        t_grid = np.asarray(t_grid, dtype=float)
        if t_grid.size < 2 or t_grid[0] != 0.0 or np.any(np.diff(t_grid) <= 0):
            raise ValueError("t_grid must start at 0 and increase strictly")
        self.p = p
        self.ct = ct
        self.t_grid = t_grid
        en = np.asarray(spectrum.energies, dtype=float)
        self.energies = en
        w, d = _channel_weights(ct, p)
        self._w = w
        self._deph = d

        # group the 12 transition frequencies (plus omega = 0 for dephasing)
        # so degenerate gaps share one table
        vals = [0.0]
        pairs = []
        for i in range(4):
            for j in range(4):
                if i != j:
                    pairs.append((i, j, en[j] - en[i]))
                    vals.append(en[j] - en[i])
        vals = np.asarray(vals)
        scale = max(p.center, float(np.ptp(en)), 1.0)
        order = np.argsort(vals)
        reps = [vals[order[0]]]
        gids = np.empty(vals.size, dtype=int)
        gids[order[0]] = 0
        for k in order[1:]:
            if vals[k] - reps[-1] > 1e-9 * scale:
                reps.append(vals[k])
            gids[k] = len(reps) - 1
        self._omegas = np.asarray(reps)
        self._g0 = int(gids[0])
        gidx = np.zeros((4, 4), dtype=int)
        for (i, j, _), g in zip(pairs, gids[1:]):
            gidx[i, j] = g
        self._gidx = gidx

        # one shared node set (finest kernel is the one at t_max), one kernel
        # matrix per distinct frequency, then splines and their antiderivatives
        tmax = float(t_grid[-1])
        centers = sorted({abs(om) for om in reps if 0.0 < abs(om) < p.omega_max})
        x, wq = _panel_nodes(_quad_edges(p, tmax, centers, subdivide))
        j = spectral_density(x, p)
        n = _occupation(x, p.temperature)
        fup = wq * j * n
        fdown = wq * j * (n + 1.0)
        self._ksp = []
        self._kint = []
        over_pi = t_grid / np.pi
        for om in self._omegas:
            kp = t_grid[:, None] * np.sinc(np.outer(over_pi, om + x))
            km = t_grid[:, None] * np.sinc(np.outer(over_pi, om - x))
            tab = 2.0 * (kp @ fup + km @ fdown)
            sp = CubicSpline(t_grid, tab)
            self._ksp.append(sp)
            self._kint.append(sp.antiderivative())

        self._build_population_propagator()
        self._build_coherence_factors()

    # -- internals --

    def _rate_matrix(self, t):
        k = np.array([sp(t) for sp in self._ksp])
        gam = self._w * k[self._gidx]
        np.fill_diagonal(gam, 0.0)
        m = gam.copy()
        m[np.diag_indices(4)] = -gam.sum(axis=0)
        return m

    def _build_population_propagator(self):
        # substepped midpoint exponentials; substep count follows the local
        # variation of the rate matrix, since a constant matrix is exact at
        # any step size
        t = self.t_grid
        nt = t.size
        prop = np.empty((nt, 4, 4))
        prop[0] = np.eye(4)
        acc = np.eye(4)
        for k in range(nt - 1):
            dt = t[k + 1] - t[k]
            m0 = self._rate_matrix(t[k])
            m1 = self._rate_matrix(t[k + 1])
            var = float(np.max(np.abs(m1 - m0))) * dt
            nsub = 1 + int(min(63, np.ceil(8.0 * var)))
            h = dt / nsub
            step = np.eye(4)
            for s in range(nsub):
                mm = self._rate_matrix(t[k] + (s + 0.5) * h)
                step = expm(mm * h) @ step
            acc = step @ acc
            prop[k + 1] = acc
        col_err = float(np.max(np.abs(prop.sum(axis=1) - 1.0)))
        if col_err > 1e-8:
            raise RuntimeError("population propagator lost the trace: %g" % col_err)
        self._pop = prop

    def _build_coherence_factors(self):
        # Lambda_ab(t) = -(1/2) int (R_a + R_b) + deph coefficient * int K0;
        # assembled exactly from the spline antiderivatives
        t = self.t_grid
        kint = np.stack([ki(t) for ki in self._kint])       # (groups, nt)
        coeff = np.zeros((4, len(self._omegas)))
        for a in range(4):
            for k in range(4):
                if k != a:
                    coeff[a, self._gidx[k, a]] += self._w[k, a]
        out_int = coeff @ kint                              # int R_a dt'
        d = self._deph
        lam = np.empty((t.size, 4, 4))
        k0int = kint[self._g0]
        for a in range(4):
            for b in range(4):
                if a == b:
                    lam[:, a, b] = 0.0
                else:
                    c0 = d[a, b] - 0.5 * (d[a, a] + d[b, b])
                    lam[:, a, b] = -0.5 * (out_int[a] + out_int[b]) + c0 * k0int
        self._coh = np.exp(lam)

    # -- propagation --

    def state_series(self, rho0):
        """States on the grid for one eigenbasis initial matrix (Hermitian in,
        Hermitian out; works for differences too, which is all BLP needs)."""
        rho0 = np.asarray(rho0, dtype=complex)
        if rho0.shape != (4, 4):
            raise ValueError("expect a 4x4 matrix in the eigenbasis")
        pops = np.real(np.diag(rho0))
        out = self._coh * rho0[None, :, :]
        idx = np.arange(4)
        out[:, idx, idx] = self._pop @ pops
        return out

    def trace_distance_series(self, rho1, rho2):
        """Half trace norm of the propagated difference, per sample."""
        diff = self.state_series(np.asarray(rho1, complex) - np.asarray(rho2, complex))
        return trace_distance_series(diff)


def propagate_tlme(rho0, t_grid, ct: CouplingTensors, p: BathParams, spectrum,
                   subdivide=1, cache=None) -> Trajectory:
    """Integrate the time-local equation for one initial density matrix.

    Transient positivity violations are expected physics for these equations
    and are surfaced in Trajectory.meta instead of being treated as failure;
    the trace, on the other hand, has to stay put.
    """
    rho0 = np.asarray(rho0, dtype=complex)
    check_density_matrix(rho0)
    if cache is None:
        cache = TlmeCache(ct, p, spectrum, t_grid, subdivide)
    states = cache.state_series(rho0)
    tr_err = float(np.max(np.abs(np.einsum("tii->t", states).real - 1.0)))
    if tr_err > 1e-8:
        raise RuntimeError("trace drifted by %g during propagation" % tr_err)
    min_eig = float(np.min(np.linalg.eigvalsh(states)))
    meta = {
        "min_eigenvalue": min_eig,
        "positivity_violated": bool(min_eig < -1e-4),
        "trace_error": tr_err,
        "method": "tlme-cache",
    }
    return Trajectory(cache.t_grid, states, meta=meta)


# --- BLP adapter --------------------------------------------------------------

class TlmeBlpSetup:
    """Pair-scoring machinery for the structured-bath equation.

    Same shape as the single-mode BlpSetup, but the window is plain seconds
    (there is no |g| to scale by); backflow intervals are reported in units
    of 1/center so the numbers stay near unity.  Construction builds the
    cache; scoring a pair afterwards is essentially free.
    """

    def __init__(self, p: SivParams, bath: BathParams, window, samples=2000,
                 subdivide=1):
        if samples < 16:
            raise ResolutionError("need at least 16 samples to trust a backflow sum")
        if window <= 0:
            raise ValueError("window must be positive (seconds)")
        self.p = p
        self.bath = bath
        self.window = float(window)
        self.samples = int(samples)
        lb = label_spectrum(p)
        self.basis = lb.states
        self.ct = coupling_tensors(p)
        self.t_grid = np.linspace(0.0, self.window, self.samples)
        self.cache = TlmeCache(self.ct, bath, lb, self.t_grid, subdivide)
        self.times_dimensionless = self.t_grid * bath.center

    def pair_states(self, x):
        x = np.asarray(x, dtype=float).ravel()
        if x.size != 8:
            raise ValueError("need eight angles (two product states)")
        if np.any(x < PAIR_LB - 1e-12) or np.any(x > PAIR_UB + 1e-12):
            raise ValueError("angles outside the box")
        v = self.basis
        r1 = dag(v) @ initial_state_from_angles(x[:4]) @ v
        r2 = dag(v) @ initial_state_from_angles(x[4:]) @ v
        return r1, r2

    def functional(self, x1, x2):
        """Backflow between two angle-parametrized states, as an NmResult."""
        x1 = np.asarray(x1, dtype=float).ravel()
        x2 = np.asarray(x2, dtype=float).ravel()
        r1, r2 = self.pair_states(np.concatenate([x1, x2]))
        d = self.cache.trace_distance_series(r1, r2)
        value, intervals = positive_increment_sum(self.times_dimensionless, d)
        return NmResult(value, intervals, (self.window, self.samples),
                        "angles %s | %s" % (np.round(x1, 6), np.round(x2, 6)))

    def loss(self, x8):
        """Minus the backflow of one packed 8-vector (minimization form)."""
        r1, r2 = self.pair_states(x8)
        d = self.cache.trace_distance_series(r1, r2)
        inc = np.diff(d)
        return -float(inc[inc > 0].sum())
