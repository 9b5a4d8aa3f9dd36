"""Parameter sweeps: field maps, temperature scans, and their bookkeeping.

Every sweep in here follows the same discipline.  The grid is declared up
front, each grid point gets its own deterministic seed (base_seed XOR point
index), finished points are journaled to an append-only checkpoint file as
they complete, and the result carries per-point provenance next to the value
matrix.  Interrupt a long map, rerun the same call, and the finished points
are read back instead of recomputed; the final matrix is identical either
way.

The physics inside the points is thin glue: single-trajectory backflow for
the detuning scan, angle-pair maximization (Lindblad or bath-kernel flavor)
for the field and temperature maps, and plain eigensolves for the spectral
ratio map.  The heavy lifting lives in dynamics, nonmarkov, bath, optimize.
"""

from __future__ import annotations

import hashlib
import json
import os
import threading
import time
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import stats

from .bath import BathParams, TlmeBlpSetup
from .dynamics import build_lindblad, propagate_and_relax
from .nonmarkov import (PAIR_LB, PAIR_UB, BlpSetup, positive_increment_sum,
                        trace_distance_curve)
from .optimize import OptProblem, differential_evolution, mixed_resolution_maximize
from .siv import (PhononModeParams, SivParams, build_full_hamiltonian,
                  build_transverse_hamiltonian, eigenenergies_longitudinal,
                  label_spectrum)


class FitError(RuntimeError):
    """The tanh fit could not produce trustworthy parameters."""


# --- grids, seeds, provenance -------------------------------------------------

@dataclass(frozen=True)
class GridSpec:
    """One uniformly sampled axis: name, endpoints, point count."""

    name: str
    lo: float
    hi: float
    count: int

    def __post_init__(self):
        if self.count < 2:
            raise ValueError("a grid axis needs at least 2 points, got %d" % self.count)
        if not self.hi > self.lo:
            raise ValueError("grid needs hi > lo, got [%g, %g]" % (self.lo, self.hi))

    def values(self):
        return np.linspace(self.lo, self.hi, self.count)


def grid_values(axis):
    """Accept a GridSpec or any 1-d array of sample points."""
    if isinstance(axis, GridSpec):
        return axis.values()
    v = np.asarray(axis, dtype=float).ravel()
    if v.size < 2:
        raise ValueError("a grid axis needs at least 2 points")
    return v


def point_seed(base_seed, index):
    """Per-point RNG seed: base XOR running point index."""
    return int(base_seed) ^ int(index)


def hash_config(mapping):
    """Short stable hash of the sweep-defining parameters."""
    def scrub(x):
        if isinstance(x, (np.floating, np.integer)):
            return x.item()
        if isinstance(x, np.ndarray):
            return x.tolist()
        if isinstance(x, dict):
            return {k: scrub(v) for k, v in sorted(x.items())}
        if isinstance(x, (list, tuple)):
            return [scrub(v) for v in x]
        return x
    blob = json.dumps(scrub(mapping), sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


@dataclass
class SweepResult:
    """Value matrix plus everything needed to reproduce or resume it.

    axes maps axis name to its sample points; values has one dimension per
    axis entry, in insertion order.  provenance holds one record per grid
    point (flattened row-major): coordinates, seed, status, value, wall
    time, and whatever the point worker adds (evaluation counts and such).
    """

    axes: dict
    values: np.ndarray
    provenance: list
    config_hash: str
    extras: dict = field(default_factory=dict)

    def failed_points(self):
        return [r for r in self.provenance if r["status"] != "ok"]


# --- checkpoint journal -------------------------------------------------------

class CheckpointLog:
    """Append-only journal of finished sweep points, one JSON record per line.

    Records are self-describing: index, coordinates, seed, status, value,
    wall time.  Appends go through a single O_APPEND write call followed by
    an fsync, so a crash can at worst leave one torn trailing line, which
    load() drops.  Never rewrites or truncates; resuming a sweep on top of a
    journal from different sweep parameters is refused via the header hash.
    """

    def __init__(self, path):
        self.path = str(path)
        self._lock = threading.Lock()

    def load(self, expect_hash=None):
        """Read back finished points as {index: record}; later lines win."""
        records = {}
        if not os.path.exists(self.path):
            return records
        with open(self.path, "r") as f:
            for line in f:
                line = line.strip()
                if not line:
                    continue
                try:
                    rec = json.loads(line)
                except json.JSONDecodeError:
                    continue   # torn final write from an interrupted run
                if "config_hash" in rec and len(rec) == 1:
                    if expect_hash is not None and rec["config_hash"] != expect_hash:
                        raise ValueError(
                            "checkpoint %s belongs to a different sweep "
                            "(hash %s, expected %s)" %
                            (self.path, rec["config_hash"], expect_hash))
                    continue
                if "index" in rec:
                    records[int(rec["index"])] = rec
        return records

    def append(self, record):
        def scrub(x):
            if isinstance(x, (np.floating, np.integer)):
                return x.item()
            if isinstance(x, np.ndarray):
                return x.tolist()
            raise TypeError("cannot journal %r" % type(x))
        line = (json.dumps(record, sort_keys=True, default=scrub) + "\n").encode()
        with self._lock:
            fd = os.open(self.path, os.O_WRONLY | os.O_CREAT | os.O_APPEND, 0o644)
            try:
                os.write(fd, line)
                os.fsync(fd)
            finally:
                os.close(fd)

    def start(self, config_hash):
        """Stamp the journal with the sweep hash (once, on first use)."""
        if not os.path.exists(self.path) or os.path.getsize(self.path) == 0:
            self.append({"config_hash": config_hash})


def _as_checkpoint(checkpoint):
    if checkpoint is None or isinstance(checkpoint, CheckpointLog):
        return checkpoint
    return CheckpointLog(checkpoint)


def _run_points(coords, worker, base_seed, config_hash, checkpoint=None, threads=1):
    """Run worker over every coordinate record not already journaled.

    coords is a list of per-point coordinate dicts; worker(index, seed) must
    return (value, extra_dict).  Failures are caught per point: the record
    gets status "failed" and the sweep continues.  threads > 1 partitions the
    pending indices into contiguous blocks, one thread each; workers must be
    thread-safe (ours only touch numpy and local state).
    """
    checkpoint = _as_checkpoint(checkpoint)
    done = {}
    if checkpoint is not None:
        done = checkpoint.load(expect_hash=config_hash)
        checkpoint.start(config_hash)
    records = dict(done)
    pending = [i for i in range(len(coords)) if i not in records]
    lock = threading.Lock()

    def run_block(block):
        for i in block:
            i = int(i)
            seed = point_seed(base_seed, i)
            rec = {"index": i, "coords": coords[i], "seed": seed}
            t0 = time.perf_counter()
            try:
                value, extra = worker(i, seed)
                rec["status"] = "infinite" if np.isinf(value) else "ok"
                rec["value"] = None if np.isinf(value) else float(value)
                rec.update(extra)
            except Exception as err:
                rec["status"] = "failed"
                rec["value"] = None
                rec["error"] = "%s: %s" % (type(err).__name__, err)
            rec["wall_time"] = round(time.perf_counter() - t0, 6)
            if checkpoint is not None:
                checkpoint.append(rec)
            with lock:
                records[i] = rec

    if threads > 1 and len(pending) > 1:
        blocks = [b for b in np.array_split(np.asarray(pending), threads) if b.size]
        ts = [threading.Thread(target=run_block, args=(list(b),)) for b in blocks]
        for t in ts:
            t.start()
        for t in ts:
            t.join()
    else:
        run_block(pending)
    return [records[i] for i in range(len(coords))]


def _value_of(rec):
    if rec["status"] == "ok":
        return float(rec["value"])
    if rec["status"] == "infinite":
        return float("inf")
    return float("nan")


# --- detuning scan: backflow vs longitudinal field ----------------------------

def single_trajectory_nd(p: SivParams, m: PhononModeParams, gamma_siv, n_delta,
                         manifold_n=1, window=30.0, samples=3000,
                         window_in_seconds=False):
    """Backflow of one composite trajectory against its own relaxed state.

    The protocol behind the scan experiments: start in |1> x |manifold_n+1>,
    propagate over the window, reduce to the four levels, and sum the
    positive increments of the unhalved separation from the reduced relaxed
    state.  The window is `window` units of |g| t by default, or plain
    seconds with window_in_seconds=True (the right choice when comparing
    couplings: a fixed real window holds the arch count proportional to
    |g|).  Returns (value, dimensionless times, D(t) samples); the D(t)
    curve keeps the conventional 1/2, the value does not.

    The value is window-limited by construction; no relaxation warning is
    raised here (unlike the generic flux helper, which flags it).
    """
    from .qcore import FockSpace, partial_trace_phonon

    if m.g_abs == 0.0:
        raise ValueError("the window is measured in |g| t; need g != 0")
    model = build_lindblad(p, m, gamma_siv, n_delta)
    level = manifold_n + 1
    if not 0 <= level <= m.n_max:
        raise ValueError("manifold %d needs Fock level %d <= n_max" % (manifold_n, level))
    rho0 = np.zeros((model.dim, model.dim), dtype=complex)
    rho0[level, level] = 1.0   # label 1 block sits first in system-major order
    t_final = float(window) if window_in_seconds else window / m.g_abs
    t_grid = np.linspace(0.0, t_final, samples)
    traj, rho_ss = propagate_and_relax(model, rho0, t_grid)
    rho_ss4 = partial_trace_phonon(rho_ss, FockSpace(m.n_max))
    d = trace_distance_curve(traj, rho_ss4)
    value, _ = positive_increment_sum(t_grid, 2.0 * d)
    return float(value), t_grid * m.g_abs, d


def nd_vs_bz(p: SivParams, m: PhononModeParams, gamma_siv, n_delta, bz_grid,
             g_list, manifold_n=1, window=30.0, samples=3000,
             window_in_seconds=False, base_seed=0, checkpoint=None,
             threads=1) -> SweepResult:
    """Backflow measure against longitudinal field, one row per coupling.

    Each point runs the single-trajectory protocol from |1> x |manifold_n+1>
    and sums the positive increments of the unhalved separation from the
    relaxed state.  The mode frequency stays fixed while B_z Zeeman-shifts
    the spin splitting, so the scan reads out the detuning dependence; at
    resonance the peak sits at B_z = 0.  When several couplings are
    compared, pass the window in seconds: at fixed real time the arch count
    is proportional to |g| and the peak value scales linearly through the
    origin.

    Rows of the returned matrix follow g_list, columns follow bz_grid.
    extras carries the per-row peak location and value, and a through-origin
    fit of peak value versus coupling when g_list has at least two entries.
    """
    bz = grid_values(bz_grid)
    gs = np.asarray(g_list, dtype=float).ravel()
    if gs.size == 0 or np.any(gs <= 0):
        raise ValueError("g_list must hold positive couplings")
    chash = hash_config({
        "sweep": "nd_vs_bz", "lam": p.lam, "gx": p.gamma_x, "gy": p.gamma_y,
        "f": p.f, "omega_ph": m.omega_ph, "q": m.q, "n_max": m.n_max,
        "temperature": m.temperature, "gamma_siv": gamma_siv, "n_delta": n_delta,
        "bz": bz, "g": gs, "manifold_n": manifold_n, "window": window,
        "seconds": window_in_seconds, "samples": samples, "seed": base_seed})

    coords = [{"g": float(g), "bz": float(b)} for g in gs for b in bz]

    def worker(i, seed):
        g = gs[i // bz.size]
        b = bz[i % bz.size]
        pi = p.with_field((0.0, 0.0, float(b)))
        mi = replace(m, g1=float(g), g2=0.0)
        value, _, _ = single_trajectory_nd(pi, mi, gamma_siv, n_delta,
                                           manifold_n=manifold_n,
                                           window=window, samples=samples,
                                           window_in_seconds=window_in_seconds)
        return value, {"samples": samples}

    recs = _run_points(coords, worker, base_seed, chash, checkpoint, threads)
    values = np.array([_value_of(r) for r in recs]).reshape(gs.size, bz.size)

    extras = {"manifold_n": manifold_n, "window": window,
              "peak_bz": [float(bz[int(np.nanargmax(row))]) for row in values],
              "peak_value": [float(np.nanmax(row)) for row in values]}
    if gs.size >= 2 and np.all(np.isfinite(extras["peak_value"])):
        peaks = np.asarray(extras["peak_value"])
        slope = float(np.dot(gs, peaks) / np.dot(gs, gs))
        resid = peaks - slope * gs
        denom = float(np.dot(peaks, peaks))
        r2 = 1.0 - float(np.dot(resid, resid)) / denom if denom > 0 else float("nan")
        extras["peak_scaling"] = {"slope": slope, "r_squared": r2}
    return SweepResult({"g": gs, "bz": bz}, values, recs, chash, extras)


# --- backflow map over the field plane ----------------------------------------

class _BoundedSetup:
    """Tack the angle-box bounds onto a pair evaluator (optimizer contract)."""

    def __init__(self, setup):
        self.setup = setup
        self.lower = PAIR_LB.copy()
        self.upper = PAIR_UB.copy()

    def loss(self, x):
        return self.setup.loss(x)


# a few pair guesses that keep showing up as winners: orthogonal orbital
# superpositions, orthogonal spin states, and a fully mixed-axis pair
_PAIR_GUESSES = np.array([
    [np.pi, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [np.pi / 2, np.pi / 2, 0.0, np.pi, 0.0, 0.0, 0.0, 0.0],
    [np.pi / 2, np.pi / 2, np.pi / 2, np.pi / 2, 0.0, np.pi, 0.0, np.pi],
])


def blp_map(p: SivParams, m: PhononModeParams, gamma_siv, n_delta, bx_grid,
            bz_grid, window=30.0, samples_low=400, samples_high=2000,
            opt_kwargs=None, top_k=3, base_seed=0, checkpoint=None,
            threads=1) -> SweepResult:
    """Maximized backflow over the first quadrant of the (B_x, B_z) plane.

    Both axes must start at 0: the model is even in either field component,
    so the other three quadrants are exact mirror copies and reflect_map
    produces them without recomputing anything.  Each point runs the
    two-stage mixed-resolution maximization over the eight state-pair
    angles, seeded per point; a failed point is recorded as invalid (nan in
    the matrix) and the map moves on.
    """
    bx = grid_values(bx_grid)
    bz = grid_values(bz_grid)
    if bx[0] != 0.0 or bz[0] != 0.0:
        raise ValueError("the map covers the first quadrant; both axes start at 0")
    kwargs = dict(pop_size=24, max_gen=12, f_weight=0.7, cr=0.5)
    if opt_kwargs:
        kwargs.update(opt_kwargs)
    chash = hash_config({
        "sweep": "blp_map", "lam": p.lam, "gx": p.gamma_x, "gy": p.gamma_y,
        "f": p.f, "omega_ph": m.omega_ph, "g1": m.g1, "g2": m.g2, "q": m.q,
        "n_max": m.n_max, "temperature": m.temperature, "gamma_siv": gamma_siv,
        "n_delta": n_delta, "bx": bx, "bz": bz, "window": window,
        "low": samples_low, "high": samples_high, "opt": kwargs,
        "top_k": top_k, "seed": base_seed})

    coords = [{"bx": float(x), "bz": float(z)} for x in bx for z in bz]

    def worker(i, seed):
        x, z = bx[i // bz.size], bz[i % bz.size]
        pi = p.with_field((float(x), 0.0, float(z)))

        def factory(res):
            return _BoundedSetup(BlpSetup(pi, m, gamma_siv, n_delta,
                                          window=res[0], samples=res[1]))

        out = mixed_resolution_maximize(
            factory, (window, samples_low), (window, samples_high),
            opt_kwargs=kwargs, top_k=top_k, seed=seed)
        # the canonical guesses are cheap insurance against a bad DE draw
        fine = factory((window, samples_high))
        best = out["value_high"]
        best_x = out["best_x"]
        for guess in _PAIR_GUESSES:
            v = -fine.loss(guess)
            if v > best:
                best, best_x = v, guess
        evals = out["stage1"].evaluations + top_k + len(_PAIR_GUESSES)
        return best, {"evaluations": evals,
                      "best_angles": [round(float(a), 6) for a in best_x]}

    recs = _run_points(coords, worker, base_seed, chash, checkpoint, threads)
    values = np.array([_value_of(r) for r in recs]).reshape(bx.size, bz.size)
    return SweepResult({"bx": bx, "bz": bz}, values, recs, chash,
                       {"window": window, "optimizer": kwargs})


def reflect_map(result: SweepResult) -> SweepResult:
    """Unfold a first-quadrant map to the full plane by mirroring both axes.

    Pure bookkeeping: quadrant values are copied bitwise, the shared zero
    row and column are not duplicated, and applying the reflection to an
    already-reflected map is refused (it is its own bookend, not an
    involution to iterate).
    """
    names = list(result.axes)
    if len(names) != 2:
        raise ValueError("reflection needs a two-axis map")
    ax0 = result.axes[names[0]]
    ax1 = result.axes[names[1]]
    if ax0[0] != 0.0 or ax1[0] != 0.0:
        raise ValueError("not a first-quadrant map; axes must start at 0")
    full0 = np.concatenate([-ax0[:0:-1], ax0])
    full1 = np.concatenate([-ax1[:0:-1], ax1])
    q = result.values
    top = np.concatenate([q[:0:-1, :0:-1], q[:0:-1, :]], axis=1)
    bot = np.concatenate([q[:, :0:-1], q], axis=1)
    filled = np.concatenate([top, bot], axis=0)
    extras = dict(result.extras)
    extras["reflected_from"] = (len(ax0), len(ax1))
    return SweepResult({names[0]: full0, names[1]: full1}, filled,
                       result.provenance, result.config_hash, extras)


def gap31_map(p: SivParams, bx_grid, bz_grid):
    """Bare-model E3 - E1 label gap over the field quadrant (no mode, no solver)."""
    bx = grid_values(bx_grid)
    bz = grid_values(bz_grid)
    out = np.zeros((bx.size, bz.size))
    for i, x in enumerate(bx):
        for k, z in enumerate(bz):
            e = label_spectrum(p.with_field((float(x), 0.0, float(z)))).energies
            out[i, k] = e[2] - e[0]
    return out


def rank_correlation(a, b):
    """Spearman rank correlation between two matrices of matching shape."""
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    keep = np.isfinite(a) & np.isfinite(b)
    if keep.sum() < 3:
        raise ValueError("need at least 3 finite pairs")
    rho = stats.spearmanr(a[keep], b[keep]).statistic
    return float(rho)


# --- spectral ratio map -------------------------------------------------------

def uncoupled_levels(p: SivParams, m: PhononModeParams):
    """Sorted composite levels at g = 0: dressed label energies plus ladders.

    Closed form, independent of the Hamiltonian builders: the transverse
    component only mixes the spin partners (1,4) and (2,3) pairwise, so each
    pair contributes (E_a+E_b)/2 +- sqrt(((E_a-E_b)/2)^2 + (b_x/2)^2) and a
    phonon ladder sits on top of every dressed level.
    """
    if p.b[1] != 0.0:
        raise ValueError("only B = (Bx, 0, Bz) is supported")
    e = eigenenergies_longitudinal(p.with_field((0.0, 0.0, p.b[2])))
    half_bx = 0.5 * p.gamma_s * p.b[0]
    dressed = []
    for a, b in ((0, 3), (1, 2)):
        mid = 0.5 * (e[a] + e[b])
        rad = np.hypot(0.5 * (e[a] - e[b]), half_bx)
        dressed.extend((mid - rad, mid + rad))
    ladder = m.omega_ph * np.arange(m.n_max + 1)
    return np.sort((np.array(dressed)[:, None] + ladder[None, :]).ravel())


def _untangle_cluster(w, v, v_prev, tol):
    """Reorder eigenvector columns inside degenerate clusters by continuity.

    Ascending order is ambiguous exactly where levels cross; matching each
    cluster column against the previous grid point's vectors keeps labels
    following their level through the crossing instead of swapping there.
    """
    order = np.arange(w.size)
    start = 0
    while start < w.size:
        end = start
        while end + 1 < w.size and w[end + 1] - w[end] <= tol:
            end += 1
        if end > start:
            idx = np.arange(start, end + 1)
            overlap = np.abs(v_prev[:, idx].conj().T @ v[:, idx])
            taken = np.zeros(idx.size, dtype=bool)
            pick = np.zeros(idx.size, dtype=int)
            for row in range(idx.size):
                col = int(np.argmax(np.where(taken, -1.0, overlap[row])))
                pick[row] = col
                taken[col] = True
            order[idx] = idx[pick]
        start = end + 1
    return order


def spectrum_ratio_map(p: SivParams, m: PhononModeParams, bx_grid, bz_grid,
                       pair=(17, 20), base_seed=0, checkpoint=None,
                       threads=1) -> SweepResult:
    """Mode frequency over the E_pair level gap across the field quadrant.

    Levels are the ascending eigenvalues of the coupled Hamiltonian, indexed
    1-based; where consecutive eigenvalues are degenerate to machine level
    the tie is broken by eigenvector continuity along the B_z direction, so
    a genuine level crossing does not silently relabel the pair.  A gap
    smaller than 1e-12 of the mode frequency is reported as an infinite
    ratio and flagged in the provenance rather than silently overflowing.

    Rows are computed as units (continuity needs the neighbor), so resuming
    from a checkpoint skips exactly the fully journaled rows.
    """
    bx = grid_values(bx_grid)
    bz = grid_values(bz_grid)
    lo, hi = int(pair[0]), int(pair[1])
    dim = 4 * (m.n_max + 1)
    if not 1 <= lo < hi <= dim:
        raise ValueError("pair %r out of range for %d levels" % (pair, dim))
    chash = hash_config({
        "sweep": "spectrum_ratio", "lam": p.lam, "gx": p.gamma_x,
        "gy": p.gamma_y, "f": p.f, "omega_ph": m.omega_ph, "g1": m.g1,
        "g2": m.g2, "n_max": m.n_max, "bx": bx, "bz": bz, "pair": [lo, hi]})
    checkpoint = _as_checkpoint(checkpoint)
    done = {}
    if checkpoint is not None:
        done = checkpoint.load(expect_hash=chash)
        checkpoint.start(chash)
    records = dict(done)
    lock = threading.Lock()
    tie_tol = 1e-10 * m.omega_ph

    def run_rows(rows):
        for i in rows:
            pi_base = p.with_field((float(bx[i]), 0.0, 0.0))
            v_prev = None
            for k in range(bz.size):
                idx = i * bz.size + k
                pp = pi_base.with_field((float(bx[i]), 0.0, float(bz[k])))
                rec = {"index": idx, "coords": {"bx": float(bx[i]), "bz": float(bz[k])},
                       "seed": point_seed(base_seed, idx)}
                t0 = time.perf_counter()
                h = (build_full_hamiltonian(pp, m) if pp.longitudinal
                     else build_transverse_hamiltonian(pp, m))
                w, v = np.linalg.eigh(h)
                if v_prev is not None:
                    order = _untangle_cluster(w, v, v_prev, tie_tol)
                    w, v = w[order], v[:, order]
                v_prev = v
                gap = w[hi - 1] - w[lo - 1]
                if abs(gap) < 1e-12 * m.omega_ph:
                    rec["status"], rec["value"] = "infinite", None
                else:
                    rec["status"], rec["value"] = "ok", float(m.omega_ph / gap)
                rec["wall_time"] = round(time.perf_counter() - t0, 6)
                if idx not in records:
                    if checkpoint is not None:
                        checkpoint.append(rec)
                    with lock:
                        records[idx] = rec

    pending_rows = [i for i in range(bx.size)
                    if any(i * bz.size + k not in records for k in range(bz.size))]
    if threads > 1 and len(pending_rows) > 1:
        blocks = [b for b in np.array_split(np.asarray(pending_rows), threads) if b.size]
        ts = [threading.Thread(target=run_rows, args=(list(b),)) for b in blocks]
        for t in ts:
            t.start()
        for t in ts:
            t.join()
    else:
        run_rows(pending_rows)

    recs = [records[i] for i in range(bx.size * bz.size)]
    values = np.array([_value_of(r) for r in recs]).reshape(bx.size, bz.size)
    return SweepResult({"bx": bx, "bz": bz}, values, recs, chash,
                       {"pair": (lo, hi), "omega_ph": m.omega_ph})


# --- temperature scan of the bath-kernel backflow -----------------------------

def blp_vs_temperature(p: SivParams, bath: BathParams, t_list, window=20.0,
                       samples=2000, subdivide=1, opt_kwargs=None,
                       base_seed=0, checkpoint=None, threads=1,
                       fit=True) -> SweepResult:
    """Maximized bath-kernel backflow at each temperature, plus a tanh fit.

    Each temperature rebuilds the time-dependent-rate cache and maximizes
    the pair functional over the eight angles (DE with one shared seed for
    the whole scan, canonical guesses folded in).  The fit a*tanh(b/T) + c
    runs on the finished scan; if it fails the raw scan is still returned,
    with the error recorded in extras instead of a fit.
    """
    ts = np.asarray(grid_values(t_list), dtype=float)
    if np.any(ts <= 0):
        raise ValueError("temperatures must be positive")
    kwargs = dict(pop_size=40, max_gen=25, f_weight=0.7, cr=0.5)
    if opt_kwargs:
        kwargs.update(opt_kwargs)
    chash = hash_config({
        "sweep": "blp_vs_temperature", "lam": p.lam, "gx": p.gamma_x,
        "gy": p.gamma_y, "f": p.f, "j0": bath.j0, "width": bath.width,
        "center": bath.center, "omega_max": bath.omega_max,
        "cross_mode": bath.cross_mode, "t": ts, "window": window,
        "samples": samples, "subdivide": subdivide, "opt": kwargs,
        "seed": base_seed})

    coords = [{"temperature": float(t)} for t in ts]

    def worker(i, seed):
        del seed
        bath_t = replace(bath, temperature=float(ts[i]))
        # window is dimensionless (units of 1/center); the setup wants seconds
        setup = TlmeBlpSetup(p, bath_t, window / bath.center, samples=samples,
                             subdivide=subdivide)
        # every temperature shares one optimizer seed: common random numbers
        # keep the per-point search errors correlated, so the scan stays
        # monotone through the cold plateau where the true slope is ~1e-5
        problem = OptProblem(setup.loss, PAIR_LB, PAIR_UB,
                             budget=kwargs["pop_size"] * (kwargs["max_gen"] + 2),
                             seed=base_seed)
        out = differential_evolution(problem, **kwargs)
        best, best_x = -out.best_value, out.best_x
        for guess in _PAIR_GUESSES:
            v = -setup.loss(guess)
            if v > best:
                best, best_x = v, guess
        return best, {"evaluations": out.evaluations + len(_PAIR_GUESSES),
                      "best_angles": [round(float(a), 6) for a in best_x]}

    recs = _run_points(coords, worker, base_seed, chash, checkpoint, threads)
    values = np.array([_value_of(r) for r in recs])
    extras = {"window": window, "samples": samples, "optimizer": kwargs}
    if fit:
        try:
            extras["fit"] = fit_tanh(ts, values)
        except (FitError, ValueError) as err:
            extras["fit_error"] = str(err)
    return SweepResult({"temperature": ts}, values, recs, chash, extras)


# --- saturating-decay fit -----------------------------------------------------

@dataclass
class TanhFit:
    """Parameters of y = a tanh(b / T) + c with their fit diagnostics.

    se holds the one-sigma standard errors of (a, b, c) from the usual
    linearized covariance s^2 (J^T J)^-1; nan when that matrix is singular.
    """

    a: float
    b: float
    c: float
    mse: float
    iterations: int
    converged: bool
    se: tuple = (float("nan"), float("nan"), float("nan"))


def fit_tanh(t, y, max_iter=200, tol=1e-12):
    """Least squares fit of a * tanh(b / t) + c by damped Gauss-Newton.

    Starts from a = span(y), b = median(t), c = min(y); the Levenberg
    damping factor grows on rejected steps and shrinks on accepted ones.
    Refuses fewer than four points (three parameters), constant data (the
    model is degenerate there: any a -> 0 with c at the mean fits), and a
    numerically singular Jacobian, reporting its condition number in the
    error so the caller can tell a bad grid from a bad model.
    """
    t = np.asarray(t, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    if t.size != y.size:
        raise ValueError("t and y must match")
    if t.size < 4:
        raise ValueError("need at least four points to fit three parameters")
    if np.any(t <= 0):
        raise ValueError("the model needs positive temperatures")
    if not np.all(np.isfinite(y)):
        raise ValueError("y holds non-finite values")
    if np.ptp(y) == 0.0:
        raise FitError("constant data: the model is degenerate "
                       "(any a -> 0 with c = mean fits equally well)")

    theta = np.array([float(np.ptp(y)), float(np.median(t)), float(np.min(y))])
    lam = 1e-3

    def residual(th):
        return th[0] * np.tanh(th[1] / t) + th[2] - y

    r = residual(theta)
    cost = float(np.dot(r, r))
    it = 0
    converged = False
    for it in range(1, max_iter + 1):
        th_t = np.tanh(theta[1] / t)
        jac = np.column_stack([th_t, theta[0] * (1.0 - th_t ** 2) / t,
                               np.ones_like(t)])
        jtj = jac.T @ jac
        cond = np.linalg.cond(jtj)
        if not np.isfinite(cond) or cond > 1e14:
            raise FitError("singular Jacobian: cond(J^T J) = %.3g at "
                           "(a, b, c) = (%g, %g, %g); the data do not "
                           "constrain all three parameters" %
                           (cond, *theta))
        g = jac.T @ r
        step = np.linalg.solve(jtj + lam * np.diag(np.diag(jtj)), -g)
        trial = theta + step
        r_trial = residual(trial)
        cost_trial = float(np.dot(r_trial, r_trial))
        if cost_trial < cost:
            rel = abs(cost - cost_trial) / max(cost, 1e-300)
            theta, r, cost = trial, r_trial, cost_trial
            lam = max(lam * 0.3, 1e-12)
            if rel < tol:
                converged = True
                break
        else:
            lam *= 10.0
            if lam > 1e12:
                converged = True   # stuck at a minimum the damping cannot leave
                break
    th_t = np.tanh(theta[1] / t)
    jac = np.column_stack([th_t, theta[0] * (1.0 - th_t ** 2) / t,
                           np.ones_like(t)])
    try:
        cov = cost / max(t.size - 3, 1) * np.linalg.inv(jac.T @ jac)
        se = tuple(float(v) for v in np.sqrt(np.maximum(np.diag(cov), 0.0)))
    except np.linalg.LinAlgError:
        se = (float("nan"), float("nan"), float("nan"))
    return TanhFit(float(theta[0]), float(theta[1]), float(theta[2]),
                   cost / t.size, it, converged, se)
