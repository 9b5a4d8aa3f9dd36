"""Four-level model of the SiV- ground-state fine structure and its strain coupling to a mode.

Unit conventions
----------------
All frequencies, couplings and rates inside the package are angular (rad/s);
hbar = 1 so energies are rad/s too.  Config files and helper constructors speak
ordinary frequency in GHz, magnetic fields in tesla, temperatures in kelvin.

Basis conventions
-----------------
Two bases show up:

* the product basis {e_x, e_y} x {up, down} in which the bare Hamiltonian is
  written (orbital factor first, so the order is ex.up, ex.dn, ey.up, ey.dn);
* the labelled eigenbasis {|1>, |2>, |3>, |4>} of the longitudinal-field
  Hamiltonian, ordered by the closed-form branches, not by energy:
  |1> ~ |e-,dn>, |2> ~ |e+,up>, |3> ~ |e+,dn>, |4> ~ |e-,up>.

The labelled basis is where the dynamics and all jump operators live.  The
relative sign between the spin-orbit and orbital-Zeeman terms below fixes
which spin sector rides the lower orbital branch at positive field; it is
chosen so that |1> (spin down) is the global ground state for B_z > 0.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .qcore import FockSpace, dag, hermitize, tensor

TWO_PI = 2.0 * np.pi
GHZ = TWO_PI * 1e9               # rad/s per GHz of ordinary frequency

# Electron spin gyromagnetic ratio, 2.8 MHz/G = 28 GHz/T, as angular frequency per tesla.
GAMMA_S = TWO_PI * 2.8e6 * 1e4   # rad/(s T)
GAMMA_L = 0.5 * GAMMA_S          # orbital counterpart before quenching

HBAR_OVER_KB = 7.6382e-12        # s K; converts rad/s to kelvin scales
HBAR_SI = 1.054571817e-34        # J s, only for the device-coupling estimate

# Material constants for the strain-coupling estimate (diamond, SI units).
SOUND_SPEED = 1.2e4              # m/s
MASS_DENSITY = 3500.0            # kg/m^3

_SX = np.array([[0.0, 1.0], [1.0, 0.0]], dtype=complex)
_SY = np.array([[0.0, -1.0j], [1.0j, 0.0]], dtype=complex)
_SZ = np.array([[1.0, 0.0], [0.0, -1.0]], dtype=complex)
_I2 = np.eye(2, dtype=complex)


@dataclass(frozen=True)
class SivParams:
    """Static parameters of the four-level center.

    lam is the spin-orbit splitting, gamma_x/gamma_y the symmetry-breaking
    orbital (Jahn-Teller-like) couplings, f the orbital Zeeman quenching
    factor, b the magnetic field vector in tesla.  All frequencies rad/s.
    """

    lam: float
    gamma_x: float
    gamma_y: float
    b: tuple = (0.0, 0.0, 0.0)
    f: float = 0.1

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lam must be >= 0")
        if len(self.b) != 3:
            raise ValueError("b must be a 3-vector in tesla")
        object.__setattr__(self, "b", tuple(float(x) for x in self.b))

    @classmethod
    def from_ghz(cls, lam_ghz, gamma_x_ghz, gamma_y_ghz, b=(0.0, 0.0, 0.0), f=0.1):
        return cls(lam_ghz * GHZ, gamma_x_ghz * GHZ, gamma_y_ghz * GHZ, tuple(b), f)

    @property
    def gamma_s(self):
        """Spin gyromagnetic ratio, rad/(s T)."""
        return GAMMA_S

    @property
    def gamma_l(self):
        """Orbital gyromagnetic ratio before the quenching factor f, rad/(s T)."""
        return GAMMA_L

    @property
    def upsilon(self):
        """Quadrature sum of the two orbital couplings."""
        return float(np.hypot(self.gamma_x, self.gamma_y))

    @property
    def delta0(self):
        """Zero-field orbital gap sqrt(lam^2 + upsilon^2)."""
        return float(np.hypot(self.lam, self.upsilon))

    @property
    def longitudinal(self):
        return self.b[0] == 0.0 and self.b[1] == 0.0

    def with_field(self, b):
        return SivParams(self.lam, self.gamma_x, self.gamma_y, tuple(b), self.f)


@dataclass(frozen=True)
class PhononModeParams:
    """One harmonic mode and its coupling to the orbital degree of freedom.

    omega_ph is the mode frequency, (g1, g2) the two quadratures of the
    orbital-strain coupling, q the quality factor, all angular.  n_max sets
    the Fock truncation.
    """

    omega_ph: float
    g1: float
    g2: float = 0.0
    q: float = 1e5
    temperature: float = 0.0
    n_max: int = 15

    def __post_init__(self):
        if self.omega_ph <= 0:
            raise ValueError("omega_ph must be > 0")
        if self.q <= 0:
            raise ValueError("q must be > 0")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.n_max < 0:
            raise ValueError("n_max must be >= 0")
        if self.g_abs > 0.3 * self.omega_ph:
            warnings.warn(
                "coupling |g| = %.3g is above 0.3*omega_ph; the linear-coupling "
                "model is outside its comfort zone" % self.g_abs,
                stacklevel=3,
            )
        if self.g_abs != 0.0 and self.g_abs < 10.0 * self.gamma_ph:
            warnings.warn(
                "coupling |g| = %.3g is not well above the mode damping %.3g; "
                "coherent exchange will be overdamped" % (self.g_abs, self.gamma_ph),
                stacklevel=3,
            )

    @classmethod
    def from_ghz(cls, omega_ph_ghz, g1_ghz, g2_ghz=0.0, q=1e5, temperature=0.0, n_max=15):
        return cls(omega_ph_ghz * GHZ, g1_ghz * GHZ, g2_ghz * GHZ, q, temperature, n_max)

    @property
    def gamma_ph(self):
        """Mode energy decay rate omega_ph / Q."""
        return self.omega_ph / self.q

    @property
    def g(self):
        return complex(self.g1, self.g2)

    @property
    def g_abs(self):
        return abs(complex(self.g1, self.g2))

    @property
    def theta_g(self):
        """Phase of the coupling, atan2(g2, g1)."""
        return float(np.arctan2(self.g2, self.g1))

    def fock(self):
        return FockSpace(self.n_max)


@dataclass
class EnergySpectrum:
    """Eigenvalues (ascending) and eigenvector columns of a Hermitian Hamiltonian."""

    energies: np.ndarray
    states: np.ndarray

    def __post_init__(self):
        self.energies = np.asarray(self.energies, dtype=float)
        self.states = np.asarray(self.states, dtype=complex)
        if np.any(np.diff(self.energies) < 0):
            raise ValueError("energies must be ascending")


def bose_occupation(omega, temperature):
    """Mean thermal occupation 1/(exp(hbar*omega/kB*T) - 1).

    omega in rad/s (must be positive), temperature in kelvin; T = 0 gives 0.
    """
    if omega <= 0:
        raise ValueError("bose_occupation needs omega > 0")
    if temperature < 0:
        raise ValueError("temperature must be >= 0")
    if temperature == 0.0:
        return 0.0
    x = HBAR_OVER_KB * omega / temperature
    if x > 700.0:
        return 0.0
    return float(1.0 / np.expm1(x))


# --- bare four-level Hamiltonian (product basis) ---

def build_siv_hamiltonian(p: SivParams):
    """4x4 Hamiltonian in the product basis {ex, ey} x {up, dn}.

    Terms: spin-orbit -lam*Lz*Sz, orbital Zeeman -f*gamma_l*Bz*Lz, the
    symmetry-breaking orbital couplings, and the spin Zeeman gamma_s*B.S,
    with Lz = sigma_y on the orbital doublet (hbar = 1 throughout).
    """
    bx, by, bz = p.b
    lz = _SY
    jt = 0.5 * (p.gamma_x * _SZ - p.gamma_y * _SX)
    h = -p.lam * np.kron(lz, 0.5 * _SZ)
    h = h - p.f * p.gamma_l * bz * np.kron(lz, _I2)
    h = h + np.kron(jt, _I2)
    h = h + p.gamma_s * np.kron(_I2, 0.5 * (bx * _SX + by * _SY + bz * _SZ))
    return h


def spectrum(h) -> EnergySpectrum:
    """Ascending eigensystem of a Hermitian matrix, with a residual check."""
    h = np.asarray(h, dtype=complex)
    w, v = np.linalg.eigh(hermitize(h))
    scale = float(np.linalg.norm(h, 2))
    resid = float(np.max(np.abs(h @ v - v * w)))
    if scale > 0 and resid > 1e-9 * scale:
        raise RuntimeError("eigensolve residual %g above 1e-9 of ||H|| = %g" % (resid, scale))
    return EnergySpectrum(w, v)


def eigenenergies_longitudinal(p: SivParams):
    """Closed-form level energies at purely longitudinal field, in label order E1..E4.

    The two branch gaps are d_minus/d_plus = sqrt((lam -/+ 2 f gamma_l Bz)^2 + upsilon^2);
    spin-down levels carry d_minus, spin-up carry d_plus.  Label order is not
    energy order once the spin Zeeman term overtakes the orbital gaps.
    """
    if not p.longitudinal:
        raise ValueError("closed forms hold only for B = (0, 0, Bz)")
    bz = p.b[2]
    ups2 = p.gamma_x ** 2 + p.gamma_y ** 2
    dm = np.sqrt((p.lam - 2.0 * p.f * p.gamma_l * bz) ** 2 + ups2)
    dp = np.sqrt((p.lam + 2.0 * p.f * p.gamma_l * bz) ** 2 + ups2)
    zs = p.gamma_s * bz
    return np.array([
        0.5 * (-zs - dm),
        0.5 * (+zs - dp),
        0.5 * (-zs + dm),
        0.5 * (+zs + dp),
    ])


def _reference_label_states():
    # Zero-strain labelled states: |e-,dn>, |e+,up>, |e+,dn>, |e-,up>,
    # with |e+-> = (|ex> +- i|ey>)/sqrt(2); columns in the product basis.
    em = np.array([1.0, -1.0j], dtype=complex) / np.sqrt(2.0)
    ep = np.array([1.0, +1.0j], dtype=complex) / np.sqrt(2.0)
    up = np.array([1.0, 0.0], dtype=complex)
    dn = np.array([0.0, 1.0], dtype=complex)
    cols = [np.kron(em, dn), np.kron(ep, up), np.kron(ep, dn), np.kron(em, up)]
    return np.stack(cols, axis=1)


def _fix_phases(v):
    # Deterministic gauge: the largest-magnitude component of each column real positive.
    v = v.copy()
    for j in range(v.shape[1]):
        k = int(np.argmax(np.abs(v[:, j])))
        ph = v[k, j]
        if abs(ph) > 0:
            v[:, j] *= np.conj(ph) / abs(ph)
    return v


@dataclass
class LabelBasis:
    """Eigensystem of the bare Hamiltonian in label order |1>..|4> (not energy order)."""

    energies: np.ndarray
    states: np.ndarray


def label_spectrum(p: SivParams) -> LabelBasis:
    """Numeric eigensystem of build_siv_hamiltonian, columns ordered as |1>..|4>.

    At longitudinal field the labels follow the exact spin quantum number plus
    energy order inside each spin sector.  At transverse field (where spin is
    not conserved) columns are assigned by best overlap with the zero-strain
    reference states, with degenerate clusters rotated onto the reference
    first so the assignment stays deterministic and continuous in B.
    """
    h = build_siv_hamiltonian(p)
    w, v = np.linalg.eigh(h)
    if p.longitudinal:
        sz = np.kron(_I2, 0.5 * _SZ)
        szexp = np.real(np.einsum("ij,jk,ki->i", dag(v), sz, v))
        dn = [i for i in range(4) if szexp[i] < 0]
        up = [i for i in range(4) if szexp[i] >= 0]
        if len(dn) != 2:
            raise RuntimeError("longitudinal field but spin sectors did not split 2+2")
        dn.sort(key=lambda i: w[i])
        up.sort(key=lambda i: w[i])
        order = [dn[0], up[0], dn[1], up[1]]   # labels 1..4
        vv = v
    else:
        ref = _reference_label_states()
        scale = max(p.delta0, 1.0)
        vv = v.copy()
        # rotate inside each degenerate cluster so its columns line up with the
        # reference instead of whatever mixture eigh happened to return
        i = 0
        while i < 4:
            j = i + 1
            while j < 4 and abs(w[j] - w[j - 1]) < 1e-9 * scale:
                j += 1
            if j - i > 1:
                block = vv[:, i:j]
                c = dag(block) @ ref                                   # k x 4
                cols = np.sort(np.argsort(-np.linalg.norm(c, axis=0))[: j - i])
                u, _, vh = np.linalg.svd(c[:, cols])
                vv[:, i:j] = block @ (u @ vh)
            i = j
        ov = np.abs(dag(vv) @ ref) ** 2
        order = [-1, -1, -1, -1]
        # greedy best-overlap assignment; it is a 4x4 problem
        for _ in range(4):
            k = int(np.argmax(ov))
            row, col = divmod(k, 4)
            order[col] = row
            ov[row, :] = -1.0
            ov[:, col] = -1.0
    return LabelBasis(np.asarray(w[order], dtype=float), _fix_phases(vv[:, order]))


# --- operators in the labelled basis ---

def ladder_up():
    """Orbital raising operator in the labelled basis: |3><1| + |2><4|."""
    l = np.zeros((4, 4), dtype=complex)
    l[2, 0] = 1.0
    l[1, 3] = 1.0
    return l


def ladder_down():
    return dag(ladder_up())


def relaxation_lowering():
    """De-excitation jump within both orbital doublets: |1><3| + |2><4|.

    Partner ordering follows the level energies (3 -> 1 and 4 -> 2), so a
    thermal environment with this jump always relaxes downward; this also
    keeps the dissipative model symmetric under Bz -> -Bz.
    """
    j = np.zeros((4, 4), dtype=complex)
    j[0, 2] = 1.0
    j[1, 3] = 1.0
    return j


def orbital_coupling(m: PhononModeParams):
    """Strain coupling operator in the labelled basis, g L+ + conj(g) L-."""
    lp = ladder_up()
    return m.g * lp + np.conj(m.g) * dag(lp)


def build_full_hamiltonian(p: SivParams, m: PhononModeParams):
    """Labelled four levels + mode, longitudinal field.

    H = sum_i E_i |i><i| + omega_ph n + (g L+ + g* L-)(c + c^dag)
    in the system-major product ordering.  Requires n_max >= 1 (the coupling
    needs at least one phonon to talk to).
    """
    if m.n_max < 1:
        raise ValueError("build_full_hamiltonian needs n_max >= 1")
    if not p.longitudinal:
        raise ValueError("transverse fields go through build_transverse_hamiltonian")
    e = eigenenergies_longitudinal(p)
    f = m.fock()
    x = f.destroy() + f.create()
    h = tensor(np.diag(e).astype(complex), f.identity())
    h += tensor(np.eye(4, dtype=complex), m.omega_ph * f.number())
    h += tensor(orbital_coupling(m), x)
    return h


def build_transverse_hamiltonian(p: SivParams, m: PhononModeParams):
    """Labelled model with an additional in-plane field component B_x.

    The transverse spin Zeeman term couples the spin partners pairwise,
    (b_x/2)(|1><4| + |2><3| + h.c.) with b_x = gamma_s B_x; the orbital
    content of each partner pair is treated as common, which is exact at
    zero strain splitting and the standard reading of the labelled model
    otherwise.  B_y must be zero.
    """
    if p.b[1] != 0.0:
        raise ValueError("only B = (Bx, 0, Bz) is supported")
    pz = p.with_field((0.0, 0.0, p.b[2]))
    if m.n_max < 1:
        raise ValueError("needs n_max >= 1")
    e = eigenenergies_longitudinal(pz)
    hsys = np.diag(e).astype(complex)
    bx = p.gamma_s * p.b[0]
    hsys[0, 3] += 0.5 * bx
    hsys[3, 0] += 0.5 * bx
    hsys[1, 2] += 0.5 * bx
    hsys[2, 1] += 0.5 * bx
    f = m.fock()
    x = f.destroy() + f.create()
    h = tensor(hsys, f.identity())
    h += tensor(np.eye(4, dtype=complex), m.omega_ph * f.number())
    h += tensor(orbital_coupling(m), x)
    return h


def build_microscopic_hamiltonian(p: SivParams, m: PhononModeParams):
    """Exact product-basis Hamiltonian, center + mode, any field direction.

    Works in {ex, ey} x {up, dn} x Fock rather than the labelled basis, so
    nothing is approximated away: the strain coupling g1 (L+ + L-) -
    i g2 (L- - L+) collapses to (g1 sz - g2 sx) on the orbital doublet
    (same operator content as the Jahn-Teller term).  Meant for spectral
    diagnostics; the dissipative models stay in the labelled basis.
    """
    h4 = build_siv_hamiltonian(p)
    coup = np.kron(m.g1 * _SZ - m.g2 * _SX, _I2)
    f = m.fock()
    x = f.destroy() + f.create()
    h = tensor(h4, f.identity())
    h += tensor(np.eye(4, dtype=complex), m.omega_ph * f.number())
    h += tensor(coup, x)
    return h


# --- two-level reductions ---

_MANIFOLDS = {1: (0, 2), 2: (1, 3)}   # (lower, upper) label indices, 0-based


def effective_rabi(p: SivParams, m: PhononModeParams, manifold):
    """Two-level + mode block of the full Hamiltonian for one orbital doublet.

    manifold 1 is the spin-down pair (lower |1>, upper |3>), manifold 2 the
    spin-up pair (lower |2>, upper |4>); the block basis is {lower, upper} x
    Fock.  The upper-from-lower coupling element is g for manifold 1 and
    conj(g) for manifold 2.  At longitudinal field the two blocks together
    carry the exact spectrum of build_full_hamiltonian.
    """
    if manifold not in _MANIFOLDS:
        raise ValueError("manifold must be 1 or 2")
    lo, hi = _MANIFOLDS[manifold]
    e = eigenenergies_longitudinal(p)
    coup = m.g if manifold == 1 else np.conj(m.g)
    h2 = np.array([[e[lo], 0.0], [0.0, e[hi]]], dtype=complex)
    cop = np.array([[0.0, np.conj(coup)], [coup, 0.0]], dtype=complex)
    f = m.fock()
    h = tensor(h2, f.identity())
    h += tensor(np.eye(2, dtype=complex), m.omega_ph * f.number())
    h += tensor(cop, f.destroy() + f.create())
    return h


def canonicalize_rabi(p: SivParams, m: PhononModeParams, manifold):
    """effective_rabi with the coupling phase gauged away (coupling = |g|).

    A diagonal phase rotation of the upper level removes theta_g without
    touching the spectrum.
    """
    m_real = PhononModeParams(m.omega_ph, m.g_abs, 0.0, m.q, m.temperature, m.n_max)
    return effective_rabi(p, m_real, manifold)


def jaynes_cummings(omega_s, m: PhononModeParams):
    """Excitation-conserving two-level + mode Hamiltonian.

    omega_s is the two-level splitting; the counter-rotating part of the
    coupling is dropped, so [H, sigma_ee + n] = 0 exactly.  Warns when |g|
    is above a tenth of omega_s, where dropping it stops being harmless.
    """
    if omega_s <= 0:
        raise ValueError("omega_s must be > 0")
    if m.g_abs > 0.1 * omega_s:
        warnings.warn(
            "|g| = %.3g above 0.1*omega_s; rotating-wave form is questionable" % m.g_abs,
            stacklevel=2,
        )
    f = m.fock()
    sp = np.array([[0.0, 0.0], [1.0, 0.0]], dtype=complex)   # |e><g|, basis {g, e}
    h = tensor(omega_s * np.diag([0.0, 1.0]).astype(complex), f.identity())
    h += tensor(np.eye(2, dtype=complex), m.omega_ph * f.number())
    h += m.g_abs * (tensor(sp, f.destroy()) + tensor(dag(sp), f.create()))
    return h


def estimate_phonon_coupling(d_strain, length, width, thickness, omega_ph):
    """Single-phonon strain coupling of a beam-style diamond resonator.

    g = (d/v_s) sqrt(hbar omega / (2 rho V)) with the strain susceptibility
    d in rad/s per unit strain, dimensions in meters, omega_ph in rad/s;
    sound speed and mass density are fixed diamond numbers.  Doubling the
    mode volume costs a factor sqrt(2).
    """
    if min(length, width, thickness) <= 0:
        raise ValueError("dimensions must be positive")
    if omega_ph <= 0:
        raise ValueError("omega_ph must be > 0")
    vol = length * width * thickness
    return (d_strain / SOUND_SPEED) * np.sqrt(HBAR_SI * omega_ph / (2.0 * MASS_DENSITY * vol))
