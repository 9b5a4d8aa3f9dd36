"""Dense operator algebra for a four-level emitter attached to a truncated bosonic mode.

Everything is plain numpy. Operators are complex ndarrays, density matrices are
ndarrays that satisfy trace/Hermiticity/positivity checks, and composite-space
objects always use the fixed ordering

    (system) x (mode),   flat index = s * (n_max + 1) + n

with s the system level and n the mode occupation.  Only Hermitian eigensolvers
are used anywhere in the package; nothing here diagonalizes a non-normal matrix.
"""

from __future__ import annotations

import numpy as np

# Guard against accidentally huge Kronecker products (a 4096-dim operator is
# already a 128 MB complex matrix).
DIM_LIMIT = 4096

# Density-matrix admission thresholds.  EIG_FLOOR is negative on purpose:
# finite-precision propagation leaves eigenvalues a hair below zero.
TRACE_TOL = 1e-9
HERM_TOL = 1e-10
EIG_FLOOR = -1e-8


def dag(a):
    """Conjugate transpose."""
    return np.asarray(a).conj().T


def hermitize(a):
    """Project onto the Hermitian part, (a + a^dag)/2."""
    a = np.asarray(a)
    return 0.5 * (a + a.conj().T)


def is_hermitian(a, tol=1e-12):
    """True if a equals its conjugate transpose up to tol (relative to its largest entry)."""
    a = np.asarray(a)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        return False
    scale = max(1.0, float(np.max(np.abs(a)))) if a.size else 1.0
    return float(np.max(np.abs(a - a.conj().T))) <= tol * scale


def ket(dim, i):
    """Basis column vector |i> of the given dimension."""
    v = np.zeros(dim, dtype=complex)
    v[i] = 1.0
    return v


def projector(psi):
    """|psi><psi| normalized to unit trace."""
    psi = np.asarray(psi, dtype=complex).ravel()
    n2 = float(np.vdot(psi, psi).real)
    if n2 <= 0.0:
        raise ValueError("projector of a null vector")
    return np.outer(psi, psi.conj()) / n2


def tensor(*ops, dim_limit=DIM_LIMIT):
    """Kronecker product of the operators, left factor slowest.

    Raises ValueError once the running dimension would exceed dim_limit;
    that is almost always a sign of a forgotten partial trace.
    """
    if not ops:
        raise ValueError("tensor of nothing")
    out = np.asarray(ops[0], dtype=complex)
    for op in ops[1:]:
        op = np.asarray(op, dtype=complex)
        if out.shape[0] * op.shape[0] > dim_limit:
            raise ValueError(
                "tensor dimension %d exceeds limit %d"
                % (out.shape[0] * op.shape[0], dim_limit)
            )
        out = np.kron(out, op)
    return out


class FockSpace:
    """Truncated mode with levels |0..n_max>.

    The truncation is hard: a|n_max> has the exact sqrt(n_max) amplitude but
    a^dag|n_max> is silently dropped, so convergence in n_max must be checked
    by whoever drives the dynamics.
    """

    def __init__(self, n_max):
        n_max = int(n_max)
        if n_max < 0:
            raise ValueError("n_max must be >= 0")
        self.n_max = n_max
        self.dim = n_max + 1

    def __repr__(self):
        return "FockSpace(n_max=%d)" % self.n_max

    def destroy(self):
        """Annihilation operator, <n-1|a|n> = sqrt(n)."""
        return np.diag(np.sqrt(np.arange(1, self.dim, dtype=float)), k=1).astype(complex)

    def create(self):
        return dag(self.destroy())

    def number(self):
        return np.diag(np.arange(self.dim, dtype=float)).astype(complex)

    def identity(self):
        return np.eye(self.dim, dtype=complex)

    def basis_ket(self, n):
        if not 0 <= n <= self.n_max:
            raise ValueError("occupation %d outside truncation" % n)
        return ket(self.dim, n)

    def vacuum_state(self):
        return projector(self.basis_ket(0))

    def fock_state(self, n):
        return projector(self.basis_ket(n))

    def thermal_state(self, nbar):
        """Thermal mixture with mean occupation nbar, renormalized on the truncated ladder."""
        if nbar < 0:
            raise ValueError("nbar must be >= 0")
        if nbar == 0.0:
            return self.vacuum_state()
        x = nbar / (1.0 + nbar)
        p = x ** np.arange(self.dim)
        p /= p.sum()
        return np.diag(p).astype(complex)


def check_density_matrix(rho, trace_tol=TRACE_TOL, herm_tol=HERM_TOL, eig_floor=EIG_FLOOR):
    """Validate a density matrix, returning it unchanged.

    Trace within trace_tol of one, Hermitian within herm_tol (absolute; entries
    of a unit-trace state are O(1)), smallest eigenvalue above eig_floor.
    Raises ValueError naming the violated property.
    """
    rho = np.asarray(rho)
    if rho.ndim != 2 or rho.shape[0] != rho.shape[1]:
        raise ValueError("density matrix must be square, got shape %r" % (rho.shape,))
    tr = complex(np.trace(rho))
    if abs(tr - 1.0) > trace_tol:
        raise ValueError("trace %r is not 1 within %g" % (tr, trace_tol))
    if float(np.max(np.abs(rho - rho.conj().T))) > herm_tol:
        raise ValueError("density matrix is not Hermitian within %g" % herm_tol)
    wmin = float(np.linalg.eigvalsh(hermitize(rho))[0])
    if wmin < eig_floor:
        raise ValueError("negative eigenvalue %g below floor %g" % (wmin, eig_floor))
    return rho


def partial_trace_phonon(rho, fock):
    """Trace out the mode of a (4*fock.dim)-dimensional state, keeping the 4-level system.

    Relies on the package-wide system-major ordering.
    """
    rho = np.asarray(rho)
    d = 4 * fock.dim
    if rho.shape != (d, d):
        raise ValueError(
            "state has shape %r, expected (%d, %d) for n_max=%d"
            % (rho.shape, d, d, fock.n_max)
        )
    return np.einsum("anbn->ab", rho.reshape(4, fock.dim, 4, fock.dim))


def partial_trace_phonon_batch(states, fock):
    """Same as partial_trace_phonon for a stack of states, shape (k, d, d) -> (k, 4, 4)."""
    states = np.asarray(states)
    d = 4 * fock.dim
    if states.ndim != 3 or states.shape[1:] != (d, d):
        raise ValueError("expected a (k, %d, %d) stack" % (d, d))
    return np.einsum("kanbn->kab", states.reshape(-1, 4, fock.dim, 4, fock.dim))


def trace_distance(rho1, rho2, herm_tol=HERM_TOL):
    """Half the trace norm of rho1 - rho2.

    The difference must be Hermitian (that is what makes the eigvalsh route
    legitimate); a non-Hermitian difference raises instead of being patched.
    """
    diff = np.asarray(rho1, dtype=complex) - np.asarray(rho2, dtype=complex)
    if diff.ndim != 2 or diff.shape[0] != diff.shape[1]:
        raise ValueError("trace_distance needs two equal square matrices")
    if float(np.max(np.abs(diff - diff.conj().T))) > herm_tol:
        raise ValueError("difference is not Hermitian within %g" % herm_tol)
    return 0.5 * float(np.abs(np.linalg.eigvalsh(hermitize(diff))).sum())


def trace_distance_series(diffs):
    """Trace distances of a stack of Hermitian differences, shape (k, d, d) -> (k,).

    No Hermiticity policing here; this is the hot path and the callers build
    the differences from Hermitian states.
    """
    diffs = np.asarray(diffs)
    w = np.linalg.eigvalsh(0.5 * (diffs + diffs.transpose(0, 2, 1).conj()))
    return 0.5 * np.abs(w).sum(axis=1)


# --- vectorization helpers (row-major convention) ---
#
# vec stacks rows: vec(rho)[i*d+j] = rho[i,j], so vec(A rho B) = (A kron B^T) vec(rho).

def vec(rho):
    return np.asarray(rho, dtype=complex).reshape(-1)

def unvec(v, d=None):
    v = np.asarray(v)
    if d is None:
        d = int(round(np.sqrt(v.size)))
    return v.reshape(d, d)

def spre(a):
    """Superoperator for left multiplication, rho -> a rho."""
    a = np.asarray(a, dtype=complex)
    return np.kron(a, np.eye(a.shape[0], dtype=complex))

def spost(a):
    """Superoperator for right multiplication, rho -> rho a."""
    a = np.asarray(a, dtype=complex)
    return np.kron(np.eye(a.shape[0], dtype=complex), a.T)

def dissipator_super(o):
    """Superoperator of the dissipator D_o: rho -> o rho o^dag - {o^dag o, rho}/2."""
    o = np.asarray(o, dtype=complex)
    odo = dag(o) @ o
    eye = np.eye(o.shape[0], dtype=complex)
    return np.kron(o, o.conj()) - 0.5 * np.kron(odo, eye) - 0.5 * np.kron(eye, odo.T)
