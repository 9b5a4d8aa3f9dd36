"""Classical-field treatment of the large-occupation regime.

The mode is replaced by its coherent amplitude alpha(t) and the two-level
system by the expectation triple (sp, sz).  The coupled nonlinear equations
are integrated literally, in the lab frame; the backflow measure is the
positive variation of the qubit trace distance between the evolving spin
state and its thermal equilibrium point.  Everything is in rad/s
internally; temperature enters only through the thermally scaled two-level
damping rate and the equilibrium inversion.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.integrate import solve_ivp
from scipy.stats import t as student_t

from .siv import bose_occupation
from .nonmarkov import NmResult, positive_increment_sum


@dataclass(frozen=True)
class MeanFieldParams:
    """Knobs of the classical-field model."""

    omega_s: float
    omega_ph: float
    g: complex
    gamma_ph: float
    gamma_siv: float
    temperature: float = 0.0

    def __post_init__(self):
        if self.gamma_ph < 0 or self.gamma_siv < 0:
            raise ValueError("damping rates must be >= 0")

    @property
    def n_thermal(self):
        if self.temperature <= 0:
            return 0.0
        return bose_occupation(self.omega_s, self.temperature)

    @property
    def gamma_big(self):
        """Thermally scaled two-level width Gamma_SiV (2 N + 1)."""
        return self.gamma_siv * (2.0 * self.n_thermal + 1.0)


@dataclass
class MeanFieldState:
    """Amplitude and two-level expectations; loosely validated on entry."""

    alpha: complex
    sp: complex
    sz: float

    def __post_init__(self):
        if abs(self.sz) > 1.0 + 1e-6:
            raise ValueError("|<sigma_z>| = %g exceeds 1" % abs(self.sz))
        if abs(self.sp) > 1.0 + 1e-6:
            raise ValueError("|<sigma_+>| = %g exceeds 1" % abs(self.sp))

    def pack(self):
        return np.array([self.alpha.real, self.alpha.imag,
                         self.sp.real, self.sp.imag, self.sz])

    @classmethod
    def unpack(cls, y):
        obj = cls.__new__(cls)
        obj.alpha = complex(y[0], y[1])
        obj.sp = complex(y[2], y[3])
        obj.sz = float(y[4])
        return obj

    @property
    def bloch(self):
        return np.array([2.0 * self.sp.real, 2.0 * self.sp.imag, self.sz])


def meanfield_rhs(p: MeanFieldParams, state: MeanFieldState) -> MeanFieldState:
    """Time derivative of the coupled amplitude/spin expectations.

    d alpha /dt = -i omega_ph alpha - i (g* sp + g sp*) - gamma_ph alpha
    d sp    /dt = +i omega_s  sp    - i g (alpha+alpha*) sz - (Gamma/2) sp
    d sz    /dt = 2 i (alpha+alpha*) (g sp* - g* sp) - Gamma sz
    """
    a, sp, sz = state.alpha, state.sp, state.sz
    gb = p.gamma_big
    field = a + np.conj(a)
    da = -1j * p.omega_ph * a - 1j * (np.conj(p.g) * sp + p.g * np.conj(sp)) \
        - p.gamma_ph * a
    dsp = 1j * p.omega_s * sp - 1j * p.g * field * sz - 0.5 * gb * sp
    dsz = 2j * field * (p.g * np.conj(sp) - np.conj(p.g) * sp) - gb * sz
    out = MeanFieldState.__new__(MeanFieldState)
    out.alpha, out.sp, out.sz = da, dsp, float(np.real(dsz))
    return out


def _rhs_packed(p: MeanFieldParams):
    gb = p.gamma_big
    g = p.g

    def rhs(t, y):
        a = complex(y[0], y[1])
        sp = complex(y[2], y[3])
        sz = y[4]
        field = 2.0 * a.real
        da = -1j * p.omega_ph * a - 1j * (np.conj(g) * sp + g * np.conj(sp)) \
            - p.gamma_ph * a
        dsp = 1j * p.omega_s * sp - 1j * g * field * sz - 0.5 * gb * sp
        dsz = 4.0 * field * np.imag(np.conj(g) * sp) - gb * sz
        return [da.real, da.imag, dsp.real, dsp.imag, dsz]

    return rhs


def propagate_meanfield(p: MeanFieldParams, state0: MeanFieldState, t_grid,
                        rtol=1e-8, atol=1e-10):
    """Integrate the classical equations on the given time grid."""
    t_grid = np.asarray(t_grid, dtype=float)
    sol = solve_ivp(_rhs_packed(p), (t_grid[0], t_grid[-1]), state0.pack(),
                    t_eval=t_grid, rtol=rtol, atol=atol, method="RK45")
    if not sol.success:
        reached = sol.t[-1] if sol.t.size else t_grid[0]
        raise RuntimeError("mean-field integration failed at t = %g: %s"
                           % (reached, sol.message))
    return sol.y


def equilibrium_sz(p: MeanFieldParams):
    """Spin inversion the dissipative two-level system relaxes to.

    The classical equations damp the inversion toward zero, but the physical
    reference is the thermal point -1/(2 n + 1) of the underlying two-level
    bath coupling (ground state at T = 0).  Distances are measured from it.
    """
    return -1.0 / (2.0 * p.n_thermal + 1.0)


def meanfield_nd(alpha0, p: MeanFieldParams, window=2.5, samples=3000) -> NmResult:
    """Backflow of the two-level trace distance from its equilibrium point.

    Starts the two-level system excited and the field at the complex
    amplitude alpha0.  The field drives full Rabi swings of the Bloch
    vector, and the distance to the thermal equilibrium point,
    D = (1/2) |r(t) - r_eq| (the qubit trace distance), rises and falls
    once per Rabi cycle; the positive increments accumulate to a value
    that grows linearly with |alpha0|.  window is in units of |g| t.
    Mean-field treatment needs a macroscopic field; |alpha0|^2 < 4 warns.
    """
    g_abs = abs(p.g)
    if g_abs == 0.0:
        raise ValueError("window is measured in |g| t; need g != 0")
    if abs(alpha0) ** 2 < 4.0:
        warnings.warn("initial occupation |alpha0|^2 = %g is small for a "
                      "classical-field treatment" % abs(alpha0) ** 2,
                      stacklevel=2)
    state0 = MeanFieldState(complex(alpha0), 0.0 + 0.0j, 1.0)
    t_grid = np.linspace(0.0, window / g_abs, samples)
    y = propagate_meanfield(p, state0, t_grid)
    dz = y[4] - equilibrium_sz(p)
    dist = 0.5 * np.sqrt(4.0 * (y[2] ** 2 + y[3] ** 2) + dz ** 2)
    value, intervals = positive_increment_sum(t_grid * g_abs, dist)
    return NmResult(value, intervals, (window, samples),
                    "meanfield alpha0 = %s" % alpha0)


def fit_linear_through_origin(xs, ys):
    """Least squares y = a x with a 95% half-width from t statistics.

    Returns (a, half_width).  All-zero xs cannot pin a slope and raise.
    """
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    if xs.shape != ys.shape or xs.ndim != 1:
        raise ValueError("xs and ys must be matching 1-d arrays")
    sxx = float(np.dot(xs, xs))
    if sxx == 0.0:
        raise ValueError("degenerate fit: all abscissae are zero")
    a = float(np.dot(xs, ys)) / sxx
    dof = xs.size - 1
    if dof <= 0:
        return a, float("inf")
    resid = ys - a * xs
    s2 = float(np.dot(resid, resid)) / dof
    half = float(student_t.ppf(0.975, dof) * np.sqrt(s2 / sxx))
    return a, half


def meanfield_scaling(alpha0s, p: MeanFieldParams, window=2.5, samples=3000):
    """N_D over a range of initial amplitudes plus the through-origin fit.

    Returns dict with the raw values, fitted slope, its 95% half-width and
    the R^2 of the fit.
    """
    alpha0s = np.asarray(alpha0s, dtype=float)
    values = np.array([meanfield_nd(a0, p, window, samples).value
                       for a0 in alpha0s])
    slope, half = fit_linear_through_origin(alpha0s, values)
    resid = values - slope * alpha0s
    total = values - values.mean()
    sst = float(np.dot(total, total))
    # all-equal responses leave R^2 undefined; nan instead of dividing by zero
    r2 = 1.0 - float(np.dot(resid, resid)) / sst if sst > 0 else float("nan")
    return {"alpha0": alpha0s, "nd": values, "slope": slope,
            "conf_half_width": half, "r_squared": r2}
