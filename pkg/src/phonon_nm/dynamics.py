"""Lindblad dynamics of the labelled four levels coupled to one damped mode.

The generator is time independent, so two propagation routes coexist:

* an adaptive RK45 integration of the vectorized master equation (the
  reference path, works for any time grid);
* exact stepping with E = expm(L dt) on uniform grids, which has no step-size
  constraint from the fast Hamiltonian frequencies and is what the expensive
  acceptance-scale runs use.

At longitudinal field the model block-diagonalizes over the two orbital
doublets {1,3} and {2,4} (the Hamiltonian and every jump operator preserve
them), so the exact stepper works on three quarter-size superoperator blocks
instead of one full one.  That is a transparent optimization: outputs agree
with the full-space route to solver precision.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm
from scipy.integrate import solve_ivp

from . import qcore
from .qcore import (FockSpace, check_density_matrix, dag, dissipator_super,
                    hermitize, spre, spost, tensor, unvec, vec)
from .siv import (PhononModeParams, SivParams, bose_occupation,
                  build_full_hamiltonian, build_transverse_hamiltonian,
                  relaxation_lowering)


class AmbiguousSteadyState(RuntimeError):
    """Raised when the Liouvillian kernel has more than one direction.

    The caller is expected to fall back to long-time propagation from its
    actual initial state; with conserved sectors the stationary state depends
    on where you start.
    """


@dataclass
class LindbladModel:
    """Hamiltonian + weighted jump list on the (4 x fock) space."""

    h: np.ndarray
    jumps: list = field(default_factory=list)
    dims: tuple = (4, 1)

    def __post_init__(self):
        self.h = np.asarray(self.h, dtype=complex)
        d = self.dims[0] * self.dims[1]
        if self.h.shape != (d, d):
            raise ValueError("h has shape %r, dims say %d" % (self.h.shape, d))
        if not qcore.is_hermitian(self.h, 1e-12):
            raise ValueError("Hamiltonian is not Hermitian")
        clean = []
        for op, rate in self.jumps:
            op = np.asarray(op, dtype=complex)
            if op.shape != (d, d):
                raise ValueError("jump operator shape %r does not match h" % (op.shape,))
            if rate < 0:
                raise ValueError("negative jump rate %g" % rate)
            clean.append((op, float(rate)))
        self.jumps = clean

    @property
    def dim(self):
        return self.dims[0] * self.dims[1]

    @property
    def fock(self):
        return FockSpace(self.dims[1] - 1)

    def rates(self):
        return [r for _, r in self.jumps]


@dataclass
class Trajectory:
    """Sampled states and derived scalar series on a strictly increasing time grid."""

    times: np.ndarray
    states: np.ndarray
    scalars: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.states = np.asarray(self.states, dtype=complex)
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("times must be strictly increasing")
        if self.states.shape[0] != self.times.size:
            raise ValueError("one state per time, please")


def build_lindblad(p: SivParams, m: PhononModeParams, gamma_siv, n_delta=None):
    """Assemble the dissipative model: damped mode + orbital relaxation.

    Jump list: c at gamma_ph*(N(omega_ph)+1), c^dag at gamma_ph*N(omega_ph),
    the orbital de-excitation J- at gamma_siv*(n_delta+1) and J+ = J-^dag at
    gamma_siv*n_delta.  N(omega_ph) comes from the mode temperature; n_delta
    is taken as given (it is routinely quoted as an independent knob) or, when
    None, evaluated as the thermal occupation of the zero-field orbital gap at
    the mode temperature.  Zero-rate jumps are dropped, so gamma_siv = 0 at
    T = 0 with Q = inf yields a closed system.

    A transverse field component B_x is allowed; the Hamiltonian then comes
    from build_transverse_hamiltonian.
    """
    if gamma_siv < 0:
        raise ValueError("gamma_siv must be >= 0")
    if n_delta is None:
        n_delta = bose_occupation(p.delta0, m.temperature) if m.temperature > 0 else 0.0
    if n_delta < 0:
        raise ValueError("n_delta must be >= 0")
    if p.longitudinal:
        h = build_full_hamiltonian(p, m)
    else:
        h = build_transverse_hamiltonian(p, m)
    f = m.fock()
    i4 = np.eye(4, dtype=complex)
    c = tensor(i4, f.destroy())
    jm = tensor(relaxation_lowering(), f.identity())
    nph = bose_occupation(m.omega_ph, m.temperature) if m.temperature > 0 else 0.0
    jumps = []
    for op, rate in [
        (c, m.gamma_ph * (nph + 1.0)),
        (dag(c), m.gamma_ph * nph),
        (jm, gamma_siv * (n_delta + 1.0)),
        (dag(jm), gamma_siv * n_delta),
    ]:
        if rate > 0.0:
            jumps.append((op, rate))
    return LindbladModel(h, jumps, (4, f.dim))


def liouvillian(model: LindbladModel):
    """Dense superoperator of the model, acting on row-major vec(rho)."""
    sup = -1j * (spre(model.h) - spost(model.h))
    for op, rate in model.jumps:
        sup += rate * dissipator_super(op)
    return sup


def apply_generator(model: LindbladModel, rho):
    """Right-hand side of the master equation as matrix algebra (no superoperator)."""
    h = model.h
    out = -1j * (h @ rho - rho @ h)
    for op, rate in model.jumps:
        orho = op @ rho
        out += rate * (orho @ dag(op))
        odo = dag(op) @ op
        out -= 0.5 * rate * (odo @ rho + rho @ odo)
    return out


# --- sector structure ---------------------------------------------------------
#
# System labels {1,3} and {2,4} are never mixed by the longitudinal model.
# _sector_perm orders the composite basis as [sector A | sector B]; a sector
# pair (X, Y) then owns the rho block with bra side in X and ket side in Y.

_SECTOR_A = (0, 2)
_SECTOR_B = (1, 3)


def _sector_indices(nph):
    idx_a = np.concatenate([np.arange(nph) + s * nph for s in _SECTOR_A])
    idx_b = np.concatenate([np.arange(nph) + s * nph for s in _SECTOR_B])
    return idx_a, idx_b


def sector_blocks(model: LindbladModel):
    """Split h and every jump into the two doublet sectors, or None if they mix.

    Returns (idx_a, idx_b, ops) where ops maps 'h'/'jumps' to per-sector
    blocks.  Mixing happens at transverse field, where the caller must stay
    in the full space.
    """
    nph = model.dims[1]
    idx_a, idx_b = _sector_indices(nph)
    perm = np.concatenate([idx_a, idx_b])
    half = idx_a.size

    def split(opmat):
        po = opmat[np.ix_(perm, perm)]
        off = max(np.max(np.abs(po[:half, half:])), np.max(np.abs(po[half:, :half])))
        if off > 1e-12 * max(1.0, np.max(np.abs(opmat))):
            return None
        return po[:half, :half], po[half:, half:]

    hs = split(model.h)
    if hs is None:
        return None
    jumps_a, jumps_b = [], []
    for op, rate in model.jumps:
        parts = split(op)
        if parts is None:
            return None
        jumps_a.append((parts[0], rate))
        jumps_b.append((parts[1], rate))
    return {
        "idx": (idx_a, idx_b),
        "h": hs,
        "jumps": (jumps_a, jumps_b),
    }


def _block_liouvillian(ha, hb, jumps_a, jumps_b):
    # generator of the rho_AB block: rho -> -i(ha rho - rho hb) + sum r (oa rho ob^dag - ...)
    na, nb = ha.shape[0], hb.shape[0]
    ia, ib = np.eye(na, dtype=complex), np.eye(nb, dtype=complex)
    sup = -1j * (np.kron(ha, ib) - np.kron(ia, hb.T))
    for (oa, rate), (ob, _) in zip(jumps_a, jumps_b):
        sup += rate * np.kron(oa, ob.conj())
        sup -= 0.5 * rate * np.kron(dag(oa) @ oa, ib)
        sup -= 0.5 * rate * np.kron(ia, (dag(ob) @ ob).T)
    return sup


class SectorStepper:
    """Exact uniform-grid stepper on the three independent rho blocks.

    Blocks AA, AB and BB get their own expm(L_block dt); BA rides along as
    the conjugate transpose of AB.  Used both for plain propagation and for
    building reduced-map caches.
    """

    def __init__(self, model: LindbladModel, dt):
        parts = sector_blocks(model)
        if parts is None:
            raise ValueError("model mixes the doublet sectors; use the full-space path")
        self.model = model
        self.dt = float(dt)
        self.idx_a, self.idx_b = parts["idx"]
        ha, hb = parts["h"]
        ja, jb = parts["jumps"]
        self.e_aa = expm(_block_liouvillian(ha, ha, ja, ja) * dt)
        self.e_bb = expm(_block_liouvillian(hb, hb, jb, jb) * dt)
        self.e_ab = expm(_block_liouvillian(ha, hb, ja, jb) * dt)

    def split(self, rho):
        a, b = self.idx_a, self.idx_b
        return rho[np.ix_(a, a)], rho[np.ix_(a, b)], rho[np.ix_(b, b)]

    def join(self, raa, rab, rbb):
        d = self.model.dim
        rho = np.zeros((d, d), dtype=complex)
        a, b = self.idx_a, self.idx_b
        rho[np.ix_(a, a)] = raa
        rho[np.ix_(a, b)] = rab
        rho[np.ix_(b, a)] = dag(rab)
        rho[np.ix_(b, b)] = rbb
        return rho

    def run(self, rho0, n_steps):
        """Yield the state at every step, rho0 first (n_steps+1 states)."""
        raa, rab, rbb = self.split(np.asarray(rho0, dtype=complex))
        half = self.idx_a.size
        vaa, vab, vbb = vec(raa), vec(rab), vec(rbb)
        out = np.empty((n_steps + 1, self.model.dim, self.model.dim), dtype=complex)
        out[0] = self.join(raa, rab, rbb)
        for k in range(1, n_steps + 1):
            vaa = self.e_aa @ vaa
            vab = self.e_ab @ vab
            vbb = self.e_bb @ vbb
            out[k] = self.join(unvec(vaa, half), unvec(vab, half), unvec(vbb, half))
        return out


def _is_uniform(t_grid):
    t = np.asarray(t_grid, dtype=float)
    if t.size < 3:
        return t.size == 2
    dt = np.diff(t)
    return np.max(np.abs(dt - dt[0])) <= 1e-9 * abs(dt[0])


def propagate(model: LindbladModel, rho0, t_grid, method="auto"):
    """Integrate the master equation, sampling at t_grid (rho0 lives at t_grid[0]).

    method:
      'rk45'  adaptive RK45 on vec(rho), rtol 1e-8 / atol 1e-10;
      'expm'  exact stepping with expm(L dt), uniform grids only;
      'auto'  expm when the grid is uniform, else rk45.

    Every snapshot is Hermitized and its trace renormalized; a trace drift
    beyond 1e-7 before renormalization aborts with the last good time.  The
    measured drift is recorded in Trajectory.meta['trace_drift'].
    """
    t_grid = np.asarray(t_grid, dtype=float)
    if t_grid.ndim != 1 or t_grid.size < 2:
        raise ValueError("need at least two sample times")
    if np.any(np.diff(t_grid) <= 0):
        raise ValueError("t_grid must be strictly increasing")
    check_density_matrix(rho0)
    rho0 = np.asarray(rho0, dtype=complex)
    if rho0.shape != (model.dim, model.dim):
        raise ValueError("rho0 shape %r does not match model dim %d" % (rho0.shape, model.dim))

    if method == "auto":
        method = "expm" if _is_uniform(t_grid) else "rk45"

    if method == "expm":
        if not _is_uniform(t_grid):
            raise ValueError("expm stepping needs a uniform grid")
        dt = float(t_grid[1] - t_grid[0])
        n_steps = t_grid.size - 1
        try:
            stepper = SectorStepper(model, dt)
            states = stepper.run(rho0, n_steps)
        except ValueError:
            e = expm(liouvillian(model) * dt)
            v = vec(rho0)
            states = np.empty((n_steps + 1, model.dim, model.dim), dtype=complex)
            states[0] = rho0
            for k in range(1, n_steps + 1):
                v = e @ v
                states[k] = unvec(v, model.dim)
    elif method == "rk45":
        sup = liouvillian(model)

        def rhs(_t, v):
            return sup @ v

        sol = solve_ivp(rhs, (t_grid[0], t_grid[-1]), vec(rho0), t_eval=t_grid,
                        method="RK45", rtol=1e-8, atol=1e-10)
        if not sol.success:
            last = sol.t[-1] if sol.t.size else t_grid[0]
            raise RuntimeError(
                "integrator gave up at t = %g: %s" % (last, sol.message))
        states = sol.y.T.reshape(-1, model.dim, model.dim)
    else:
        raise ValueError("unknown method %r" % (method,))

    traces = np.einsum("kii->k", states).real
    drift = float(np.max(np.abs(traces - 1.0)))
    if drift > 1e-7:
        k_bad = int(np.argmax(np.abs(traces - 1.0)))
        raise RuntimeError(
            "trace drift %g at t = %g exceeds 1e-7; refine the grid or tolerances"
            % (drift, t_grid[k_bad]))
    states = 0.5 * (states + states.conj().transpose(0, 2, 1))
    states /= traces[:, None, None]
    return Trajectory(t_grid, states, meta={"trace_drift": drift, "method": method})


def propagate_and_relax(model: LindbladModel, rho0, t_grid, max_doublings=28):
    """Uniform-grid trajectory plus the long-time state, for one expm bill.

    The scan experiments need both the sampled evolution and the state it
    relaxes to, and building the step propagators dominates their cost.  So
    after running the grid, the same propagators are squared repeatedly
    (doubling the reach each time) and applied to the final state until it
    stops moving.  Same convergence and residual checks as the dedicated
    steady-state chaser; the trajectory matches propagate() exactly.
    """
    t_grid = np.asarray(t_grid, dtype=float)
    if not _is_uniform(t_grid):
        raise ValueError("propagate_and_relax needs a uniform grid")
    check_density_matrix(rho0)
    rho0 = np.asarray(rho0, dtype=complex)
    dt = float(t_grid[1] - t_grid[0])
    n_steps = t_grid.size - 1

    try:
        stepper = SectorStepper(model, dt)
    except ValueError:
        stepper = None

    if stepper is not None:
        states = stepper.run(rho0, n_steps)
        half = stepper.idx_a.size
        raa, rab, rbb = stepper.split(states[-1])
        vaa, vab, vbb = vec(raa), vec(rab), vec(rbb)
        eaa, eab, ebb = stepper.e_aa, stepper.e_ab, stepper.e_bb
        prev = None
        for _ in range(max_doublings + 1):
            vaa, vab, vbb = eaa @ vaa, eab @ vab, ebb @ vbb
            rho = stepper.join(unvec(vaa, half), unvec(vab, half),
                               unvec(vbb, half))
            if not np.all(np.isfinite(rho)):
                raise RuntimeError("propagation blew up while chasing the steady state")
            if prev is not None and float(np.max(np.abs(rho - prev))) <= 1e-12:
                prev = rho
                break
            prev = rho
            eaa, eab, ebb = eaa @ eaa, eab @ eab, ebb @ ebb
        relaxed = prev
    else:
        e = expm(liouvillian(model) * dt)
        v = vec(rho0)
        states = np.empty((n_steps + 1, model.dim, model.dim), dtype=complex)
        states[0] = rho0
        for k in range(1, n_steps + 1):
            v = e @ v
            states[k] = unvec(v, model.dim)
        prev = None
        for _ in range(max_doublings + 1):
            v = e @ v
            rho = unvec(v, model.dim)
            if not np.all(np.isfinite(rho)):
                raise RuntimeError("propagation blew up while chasing the steady state")
            if prev is not None and float(np.max(np.abs(rho - prev))) <= 1e-12:
                prev = rho
                break
            prev = rho
            e = e @ e
        relaxed = prev

    resid = float(np.max(np.abs(apply_generator(model, relaxed))))
    rate_scale = max(model.rates()) if model.jumps else 0.0
    if rate_scale > 0 and resid > 1e-6 * rate_scale:
        raise RuntimeError(
            "state is still moving (||L rho|| = %g vs rate scale %g); "
            "increase max_doublings" % (resid, rate_scale))
    relaxed = hermitize(relaxed)
    relaxed = relaxed / np.trace(relaxed).real

    traces = np.einsum("kii->k", states).real
    drift = float(np.max(np.abs(traces - 1.0)))
    if drift > 1e-7:
        k_bad = int(np.argmax(np.abs(traces - 1.0)))
        raise RuntimeError(
            "trace drift %g at t = %g exceeds 1e-7; refine the grid or tolerances"
            % (drift, t_grid[k_bad]))
    states = 0.5 * (states + states.conj().transpose(0, 2, 1))
    states /= traces[:, None, None]
    traj = Trajectory(t_grid, states, meta={"trace_drift": drift, "method": "expm"})
    return traj, relaxed


def steady_state(model: LindbladModel, svd_tol=1e-10):
    """Stationary state from the Liouvillian null space.

    SVD-based: the right-singular vector of the smallest singular value,
    Hermitized and trace-normalized.  A second singular value below
    svd_tol * s_max means the kernel is degenerate (conserved sectors), and
    AmbiguousSteadyState is raised; callers then fall back to
    steady_state_from_propagation with their initial state.
    """
    if not model.jumps:
        raise ValueError("steady_state needs at least one dissipator")
    sup = liouvillian(model)
    _, s, vh = np.linalg.svd(sup)
    small = s <= svd_tol * s[0]
    if int(np.sum(small)) > 1:
        raise AmbiguousSteadyState(
            "Liouvillian kernel is %d-dimensional; the stationary state depends "
            "on the initial sector weights" % int(np.sum(small)))
    rho = unvec(vh[-1].conj(), model.dim)
    rho = hermitize(rho)
    tr = np.trace(rho).real
    if abs(tr) < 1e-12:
        raise RuntimeError("null vector is traceless; no physical steady state found")
    rho = rho / tr
    resid = float(np.linalg.norm(sup @ vec(rho)))
    scale = float(np.linalg.norm(sup))
    if resid > 1e-10 * scale:
        raise RuntimeError("steady-state residual %g above 1e-10 * ||L|| = %g" % (resid, scale))
    w = np.linalg.eigvalsh(rho)
    if w[0] < -1e-8:
        raise RuntimeError("steady-state candidate has eigenvalue %g < 0" % w[0])
    return rho


def steady_state_from_propagation(model: LindbladModel, rho0, t_end=None, max_doublings=24):
    """Long-time limit from a concrete initial state.

    Starting horizon is t_end (default 10 / min nonzero rate); the propagator
    is squared, doubling the horizon, until successive states agree to 1e-12
    in max norm.  This is the documented fallback for degenerate kernels,
    where the answer legitimately depends on rho0.  Sector-block form is used
    when available, full superoperator otherwise.
    """
    if not model.jumps:
        raise ValueError("need at least one dissipator to relax anywhere")
    if t_end is None:
        t_end = 10.0 / min(model.rates())
    rho0 = np.asarray(rho0, dtype=complex)

    try:
        stepper = SectorStepper(model, t_end)
    except ValueError:
        stepper = None

    if stepper is not None:
        half = stepper.idx_a.size
        raa, rab, rbb = stepper.split(rho0)
        vaa, vab, vbb = vec(raa), vec(rab), vec(rbb)
        eaa, eab, ebb = stepper.e_aa, stepper.e_ab, stepper.e_bb
        prev = None
        for _ in range(max_doublings + 1):
            rho = stepper.join(unvec(eaa @ vaa, half), unvec(eab @ vab, half),
                               unvec(ebb @ vbb, half))
            if not np.all(np.isfinite(rho)):
                raise RuntimeError("propagation blew up while chasing the steady state")
            if prev is not None and float(np.max(np.abs(rho - prev))) <= 1e-12:
                prev = rho
                break
            prev = rho
            eaa, eab, ebb = eaa @ eaa, eab @ eab, ebb @ ebb
        rho = prev
    else:
        sup = liouvillian(model)
        e = expm(sup * t_end)
        prev = None
        for _ in range(max_doublings + 1):
            rho = unvec(e @ vec(rho0), model.dim)
            if not np.all(np.isfinite(rho)):
                raise RuntimeError("propagation blew up while chasing the steady state")
            if prev is not None and float(np.max(np.abs(rho - prev))) <= 1e-12:
                prev = rho
                break
            prev = rho
            e = e @ e
        rho = prev

    resid = float(np.max(np.abs(apply_generator(model, rho))))
    rate_scale = max(model.rates())
    if resid > 1e-6 * rate_scale:
        raise RuntimeError(
            "state is still moving (||L rho|| = %g vs rate scale %g); "
            "increase t_end or max_doublings" % (resid, rate_scale))
    rho = hermitize(rho)
    return rho / np.trace(rho).real


def relaxed_state(model: LindbladModel, rho0, t_end=None):
    """Unique steady state when it exists, otherwise the long-time limit from rho0.

    Sector-split models conserve both doublet weights, so their kernel is
    always degenerate; they go straight to the propagation route instead of
    paying for an SVD that is known to end in AmbiguousSteadyState.
    """
    if sector_blocks(model) is not None and model.jumps:
        return steady_state_from_propagation(model, rho0, t_end=t_end)
    try:
        return steady_state(model)
    except AmbiguousSteadyState:
        return steady_state_from_propagation(model, rho0, t_end=t_end)


class ReducedStepCache:
    """Precomputed maps from an initial system operator to its reduced evolution.

    For a fixed model, uniform grid and fixed initial mode state rho_ph, the
    map  X (4x4)  ->  Tr_ph[ exp(L k dt) (X kron rho_ph) ]  is linear; this
    class stores it for every k as small matrices, after which evaluating a
    reduced trajectory (or a trajectory of differences, as the state-pair
    optimization does thousands of times) is a few matrix-vector products.

    Only Hermitian X is supported (the lower sector block rides along as a
    conjugate transpose).
    """

    def __init__(self, model: LindbladModel, dt, n_steps, phonon_state=None):
        self.model = model
        self.dt = float(dt)
        self.n_steps = int(n_steps)
        f = model.fock
        if phonon_state is None:
            phonon_state = f.vacuum_state()
        self.phonon_state = np.asarray(phonon_state, dtype=complex)
        if self.phonon_state.shape != (f.dim, f.dim):
            raise ValueError("mode state has the wrong dimension")

        try:
            stepper = SectorStepper(model, dt)
        except ValueError:
            stepper = None
        self._sectored = stepper is not None

        if self._sectored:
            self._maps = {}
            for key, e_block in (("aa", stepper.e_aa), ("ab", stepper.e_ab),
                                 ("bb", stepper.e_bb)):
                self._maps[key] = self._build_block(e_block, f.dim)
        else:
            sup = liouvillian(model)
            e_full = expm(sup * dt)
            self._maps = {"full": self._build_full(e_full, f.dim)}

    def _build_block(self, e_block, nph):
        # columns: the four 2x2 system-block basis matrices, each kron rho_ph
        cols = np.zeros((4 * nph * nph, 4), dtype=complex)
        for idx in range(4):
            i, j = divmod(idx, 2)
            sys_b = np.zeros((2, 2), dtype=complex)
            sys_b[i, j] = 1.0
            cols[:, idx] = vec(np.kron(sys_b, self.phonon_state))
        out = np.empty((self.n_steps + 1, 4, 4), dtype=complex)
        v = cols
        out[0] = self._reduce_block(v, nph, 2)
        for k in range(1, self.n_steps + 1):
            v = e_block @ v
            out[k] = self._reduce_block(v, nph, 2)
        return out

    def _build_full(self, e_full, nph):
        cols = np.zeros((16 * nph * nph, 16), dtype=complex)
        for idx in range(16):
            i, j = divmod(idx, 4)
            sys_b = np.zeros((4, 4), dtype=complex)
            sys_b[i, j] = 1.0
            cols[:, idx] = vec(np.kron(sys_b, self.phonon_state))
        out = np.empty((self.n_steps + 1, 16, 16), dtype=complex)
        v = cols
        out[0] = self._reduce_block(v, nph, 4)
        for k in range(1, self.n_steps + 1):
            v = e_full @ v
            out[k] = self._reduce_block(v, nph, 4)
        return out

    @staticmethod
    def _reduce_block(cols, nph, nsys):
        # each column is vec of an (nsys*nph) square matrix; phonon-trace each
        ncols = cols.shape[1]
        m = cols.T.reshape(ncols, nsys, nph, nsys, nph)
        red = np.einsum("canbn->cab", m)
        return red.reshape(ncols, nsys * nsys).T

    @property
    def times(self):
        return self.dt * np.arange(self.n_steps + 1)

    def reduced_series(self, sys_op):
        """Reduced 4x4 evolution of sys_op kron rho_ph, shape (n_steps+1, 4, 4)."""
        sys_op = np.asarray(sys_op, dtype=complex)
        if sys_op.shape != (4, 4):
            raise ValueError("system operator must be 4x4")
        if float(np.max(np.abs(sys_op - sys_op.conj().T))) > 1e-9 * max(1.0, float(np.max(np.abs(sys_op)))):
            raise ValueError("only Hermitian system operators are supported")
        n = self.n_steps + 1
        out = np.zeros((n, 4, 4), dtype=complex)
        if self._sectored:
            a, b = _SECTOR_A, _SECTOR_B
            vaa = vec(sys_op[np.ix_(a, a)])
            vab = vec(sys_op[np.ix_(a, b)])
            vbb = vec(sys_op[np.ix_(b, b)])
            raa = np.einsum("kij,j->ki", self._maps["aa"], vaa).reshape(n, 2, 2)
            rab = np.einsum("kij,j->ki", self._maps["ab"], vab).reshape(n, 2, 2)
            rbb = np.einsum("kij,j->ki", self._maps["bb"], vbb).reshape(n, 2, 2)
            out[np.ix_(range(n), a, a)] = raa
            out[np.ix_(range(n), a, b)] = rab
            out[np.ix_(range(n), b, a)] = rab.conj().transpose(0, 2, 1)
            out[np.ix_(range(n), b, b)] = rbb
        else:
            v = vec(sys_op)
            out = np.einsum("kij,j->ki", self._maps["full"], v).reshape(n, 4, 4)
        return out


def truncation_check(p: SivParams, m: PhononModeParams, gamma_siv, n_delta,
                     rho0_builder, t_grid, rho_ss_builder=None):
    """Sup-norm change of D(t) when n_max is doubled.

    rho0_builder(fock) -> initial state on the given Fock truncation;
    returns (sup_diff, d_small, d_big).  Used by the validation suite to
    certify a truncation before the long runs.
    """
    from .nonmarkov import trace_distance_curve

    results = []
    for n_max in (m.n_max, 2 * m.n_max):
        mm = PhononModeParams(m.omega_ph, m.g1, m.g2, m.q, m.temperature, n_max)
        model = build_lindblad(p, mm, gamma_siv, n_delta)
        rho0 = rho0_builder(mm.fock())
        traj = propagate(model, rho0, t_grid)
        rho_ss = relaxed_state(model, rho0)
        results.append(trace_distance_curve(traj, rho_ss))
    d_small, d_big = results
    return float(np.max(np.abs(d_small - d_big))), d_small, d_big
