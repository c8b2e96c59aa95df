"""Parallel spin-level simulation engine.

Role separation follows a partitioner / worker / reducer contract: the
partitioner (master) rasterizes the object, precomputes everything that
does not depend on the spin (pulse trigonometry, gradient moments,
sample timing), cuts the spin set into blocks and hands blocks to
workers as they become free over a bounded queue; workers evolve their
spins through every elementary sequence and return per-block partial
echo sums; the reducer accumulates partials into the final records.  In
deterministic mode the reduction folds blocks in ascending index order
regardless of completion order, so results do not depend on the worker
count.

Loop order inside a worker: elementary sequences outer, samples inner,
with the per-spin arithmetic vectorized across the block.

The alternative decomposition, a pipeline of per-interval operator
stages that spins stream through, was rejected: every spin must visit
every stage in order, so the slowest stage plus the stage-to-stage
traffic bound the throughput, whereas disjoint spin blocks need no
communication between workers at all.
"""

from __future__ import annotations

import math
import os
import platform
import queue as queue_mod
import time
import warnings
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence as TySequence, Tuple

import multiprocessing as mp

import numpy as np

from .bloch import GAMMA_PROTON, RelaxationParams, hard_pulse_matrix
from .discretize import SpacingReport, max_spacing, pruned_max_spacing
from .errors import IncommensurateMoments, InvalidParameter, WorkerPanic
from .phantom import Phantom, SpinSample, rasterize
from .sequence import Sequence
from .system import SystemModel, complex_weight, default_system, spin_off_resonance

# ---------------------------------------------------------------------------
# spin-independent precomputation (master side)
# ---------------------------------------------------------------------------


@dataclass
class EsTable:
    """Precomputed operator data of one elementary sequence.

    Events partition the interval at every sample and snapshot instant:
    ``ev_dt[i]`` seconds and gradient-moment increment ``ev_dmom[i]``
    (rad/m per axis) lead up to event i, which then either records a
    sample (``ev_sample[i]`` with running acquisition index ``acq``) or
    a snapshot (``ev_snap[i]`` >= 0).
    """

    pulse_mat: Optional[np.ndarray]
    duration: float
    moments: np.ndarray
    ev_dt: np.ndarray
    ev_dmom: np.ndarray
    ev_sample: np.ndarray
    ev_snap: np.ndarray
    acq: int = -1
    n_samples: int = 0


@dataclass
class OperatorTables:
    entries: List[EsTable]
    n_acq: int
    acq_times: List[np.ndarray]
    snapshot_times: Tuple[float, ...]
    pulse_memo_hits: int
    gamma: float


def precompute_sequence_tables(
    sequence: Sequence,
    gamma: float = GAMMA_PROTON,
    snapshot_times: TySequence[float] = (),
    memoize: bool = True,
) -> OperatorTables:
    """Build per-elementary-sequence operator tables.

    Pulse matrices are shared between identical pulses (the memo hit
    count is reported); gradient moments and the event timing grid are
    evaluated once so workers never touch the waveform objects.
    """
    snapshot_times = tuple(sorted(snapshot_times))
    entries: List[EsTable] = []
    acq_times: List[np.ndarray] = []
    memo: Dict[Tuple[float, float], np.ndarray] = {}
    hits = 0
    t0 = 0.0
    acq = 0
    for es in sequence.elements:
        mat = None
        if es.pulse is not None and not es.pulse.is_identity:
            key = (es.pulse.alpha, es.pulse.phi)
            if memoize and key in memo:
                mat = memo[key]
                hits += 1
            else:
                mat = hard_pulse_matrix(es.pulse.alpha, es.pulse.phi)
                if memoize:
                    memo[key] = mat
        t1 = t0 + es.duration
        sample_ts = es.acquisition.sample_times(es.duration)
        events: List[Tuple[float, bool, int]] = [(float(t), True, -1) for t in sample_ts]
        for si, t_abs in enumerate(snapshot_times):
            if t0 < t_abs <= t1 or (t_abs == 0.0 == t0):
                events.append((float(t_abs - t0), False, si))
        events.sort(key=lambda e: (e[0], e[1]))
        ts = np.array([e[0] for e in events])
        partial = (
            es.gradient.partial_moments(ts, es.duration, gamma)
            if ts.size
            else np.zeros((0, 3))
        )
        total = es.gradient.moments(es.duration, gamma)
        ev_dt, ev_dmom, ev_sample, ev_snap = [], [], [], []
        prev_t, prev_m = 0.0, np.zeros(3)
        for i, (t, is_sample, snap) in enumerate(events):
            ev_dt.append(t - prev_t)
            ev_dmom.append(partial[i] - prev_m)
            ev_sample.append(is_sample)
            ev_snap.append(snap)
            prev_t, prev_m = t, partial[i]
        # tail: remaining evolution after the last event
        if prev_t < es.duration or np.any(prev_m != total):
            ev_dt.append(es.duration - prev_t)
            ev_dmom.append(total - prev_m)
            ev_sample.append(False)
            ev_snap.append(-1)
        entry = EsTable(
            pulse_mat=mat,
            duration=es.duration,
            moments=np.asarray(total, dtype=float),
            ev_dt=np.array(ev_dt, dtype=float),
            ev_dmom=np.array(ev_dmom, dtype=float) if ev_dmom else np.zeros((0, 3)),
            ev_sample=np.array(ev_sample, dtype=bool),
            ev_snap=np.array(ev_snap, dtype=int),
        )
        if es.acquisition.enabled:
            entry.acq = acq
            entry.n_samples = es.acquisition.n_samples
            acq_times.append(t0 + sample_ts)
            acq += 1
        entries.append(entry)
        t0 = t1
    return OperatorTables(
        entries=entries,
        n_acq=acq,
        acq_times=acq_times,
        snapshot_times=snapshot_times,
        pulse_memo_hits=hits,
        gamma=gamma,
    )


# ---------------------------------------------------------------------------
# spin blocks
# ---------------------------------------------------------------------------


@dataclass
class SpinBlock:
    """Contiguous slice of the spin set with precomputed per-spin data."""

    index: int
    pos: np.ndarray  # (n, 3)
    mx: np.ndarray
    my: np.ndarray
    mz: np.ndarray
    t1: np.ndarray
    t2: np.ndarray
    m0: np.ndarray
    domega: np.ndarray  # rad/s, off-resonance in the rotating frame
    weight: np.ndarray  # complex receive weight

    @property
    def n(self) -> int:
        return self.mx.size


def build_spin_arrays(
    spins: List[SpinSample], system: SystemModel
) -> SpinBlock:
    """Pack spins into arrays, folding in off-resonance and coil weight."""
    from .system import UniformSensitivity

    n = len(spins)
    pos = np.array([s.position for s in spins], dtype=float).reshape(n, 3)
    ctx = system.frame()
    object_dw = np.array([s.delta_omega for s in spins], dtype=float)
    if system.field.inhomogeneity is None:
        domega = (ctx.gamma * system.field.b0 - ctx.omega_hf) + object_dw
    else:
        domega = np.array(
            [
                spin_off_resonance(system.field, s.position, s.delta_omega, ctx)
                for s in spins
            ]
        )
    if isinstance(system.receive, UniformSensitivity):
        weight = np.full(n, complex(system.receive.s, 0.0))
    else:
        weight = np.array([complex_weight(system.receive, s.position) for s in spins])
    return SpinBlock(
        index=0,
        pos=pos,
        mx=np.array([s.m.mx for s in spins], dtype=float),
        my=np.array([s.m.my for s in spins], dtype=float),
        mz=np.array([s.m.mz for s in spins], dtype=float),
        t1=np.array([s.relax.t1 for s in spins], dtype=float),
        t2=np.array([s.relax.t2 for s in spins], dtype=float),
        m0=np.array([s.relax.m0 for s in spins], dtype=float),
        domega=domega,
        weight=weight,
    )


def partition_blocks(arrays: SpinBlock, n_blocks: int) -> List[SpinBlock]:
    """Cut the spin arrays into at most n_blocks contiguous, disjoint blocks."""
    n = arrays.n
    n_blocks = max(1, min(n_blocks, n)) if n else 1
    bounds = np.linspace(0, n, n_blocks + 1).astype(int)
    blocks = []
    for b in range(n_blocks):
        lo, hi = bounds[b], bounds[b + 1]
        blocks.append(
            SpinBlock(
                index=b,
                pos=arrays.pos[lo:hi].copy(),
                mx=arrays.mx[lo:hi].copy(),
                my=arrays.my[lo:hi].copy(),
                mz=arrays.mz[lo:hi].copy(),
                t1=arrays.t1[lo:hi].copy(),
                t2=arrays.t2[lo:hi].copy(),
                m0=arrays.m0[lo:hi].copy(),
                domega=arrays.domega[lo:hi].copy(),
                weight=arrays.weight[lo:hi].copy(),
            )
        )
    return blocks


# ---------------------------------------------------------------------------
# the compute kernel (worker side)
# ---------------------------------------------------------------------------


def compute_block(tables: OperatorTables, block: SpinBlock):
    """Evolve one block through the whole sequence.

    Returns (echo_partials, snapshots): echo_partials is a complex array
    (n_acq, n_samples) of coil-weighted transverse sums over the block;
    snapshots is a list of (n, 3) magnetization arrays, one per
    requested snapshot time.
    """
    mx, my, mz = block.mx.copy(), block.my.copy(), block.mz.copy()
    pos, domega = block.pos, block.domega
    w = block.weight
    inv_t1, inv_t2 = 1.0 / block.t1, 1.0 / block.t2
    m0 = block.m0
    relax_cache: Dict[float, Tuple[np.ndarray, np.ndarray, np.ndarray]] = {}
    n_samples = max((e.n_samples for e in tables.entries), default=0)
    echoes = np.zeros((tables.n_acq, n_samples), dtype=complex)
    snapshots: Dict[int, np.ndarray] = {}
    for entry in tables.entries:
        if entry.pulse_mat is not None:
            r = entry.pulse_mat
            mx, my, mz = (
                r[0, 0] * mx + r[0, 1] * my + r[0, 2] * mz,
                r[1, 0] * mx + r[1, 1] * my + r[1, 2] * mz,
                r[2, 0] * mx + r[2, 1] * my + r[2, 2] * mz,
            )
        sample_idx = 0
        for i in range(entry.ev_dt.size):
            dt = entry.ev_dt[i]
            dmom = entry.ev_dmom[i]
            if dt != 0.0 or dmom.any():
                theta = pos @ dmom + domega * dt
                c, s = np.cos(theta), np.sin(theta)
                mx, my = c * mx + s * my, -s * mx + c * my
                if dt != 0.0:
                    cached = relax_cache.get(dt)
                    if cached is None:
                        e1 = np.exp(-dt * inv_t1)
                        e2 = np.exp(-dt * inv_t2)
                        cached = (e1, e2, m0 * (1.0 - e1))
                        relax_cache[dt] = cached
                    e1, e2, regrow = cached
                    mx *= e2
                    my *= e2
                    mz = mz * e1 + regrow
            if entry.ev_sample[i]:
                echoes[entry.acq, sample_idx] = np.dot(w, mx) + 1j * np.dot(w, my)
                sample_idx += 1
            snap = entry.ev_snap[i]
            if snap >= 0:
                snapshots[snap] = np.column_stack([mx, my, mz])
    snap_list = [snapshots.get(i) for i in range(len(tables.snapshot_times))]
    return echoes, snap_list


def simulate_spin(
    spin: SpinSample,
    tables: OperatorTables,
    domega: float = 0.0,
    weight: complex = 1.0 + 0.0j,
):
    """Evolve a single spin; returns (echo contributions, snapshots).

    Convenience wrapper over the block kernel for tests and oracles.
    """
    block = SpinBlock(
        index=0,
        pos=np.array([spin.position], dtype=float),
        mx=np.array([spin.m.mx]),
        my=np.array([spin.m.my]),
        mz=np.array([spin.m.mz]),
        t1=np.array([spin.relax.t1]),
        t2=np.array([spin.relax.t2]),
        m0=np.array([spin.relax.m0]),
        domega=np.array([float(domega)]),
        weight=np.array([complex(weight)]),
    )
    return compute_block(tables, block)


# ---------------------------------------------------------------------------
# run orchestration
# ---------------------------------------------------------------------------


@dataclass
class EchoRecord:
    """One acquisition: normalized complex samples plus their timestamps."""

    acq_index: int
    values: np.ndarray
    timestamps: np.ndarray


@dataclass
class RunMetrics:
    wall_time_s: float
    spin_count: int
    throughput: float  # spins per second of wall time
    workers: int
    blocks: int
    busy_fraction: Dict[int, float]
    hardware: str


@dataclass
class RunResult:
    echoes: List[EchoRecord]
    metrics: RunMetrics
    snapshots: List[Tuple[float, np.ndarray]]
    spin_count: int
    spacing: Tuple[float, float, float]
    spacing_report: Optional[SpacingReport] = None

    def echo_matrix(self) -> np.ndarray:
        return np.array([rec.values for rec in self.echoes])


@dataclass
class Experiment:
    sequence: Sequence
    phantom: Phantom
    system: SystemModel = field(default_factory=default_system)
    spacing: Optional[Tuple[float, float, float]] = None
    workers: int = 1
    deterministic: bool = True
    blocks: Optional[int] = None  # default 4 * workers
    snapshot_times: Tuple[float, ...] = ()
    spin_cap: int = 2_000_000


def _worst_tissue(phantom: Phantom) -> RelaxationParams:
    """Longest-lived tissue present in the phantom (box properties sampled
    at centers and corners); used for the pruned spacing bound."""
    def value(prop, p):
        return float(prop(p[0], p[1], p[2])) if callable(prop) else float(prop)

    t1 = t2 = 0.0
    for box in phantom.boxes:
        o, s = np.asarray(box.origin), np.asarray(box.size)
        points = [o + s / 2.0]
        for corner in range(8):
            points.append(o + s * np.array([(corner >> ax) & 1 for ax in range(3)]))
        for p in points:
            t1 = max(t1, value(box.t1, p))
            t2 = max(t2, value(box.t2, p))
    if t1 <= 0.0 or t2 <= 0.0:
        t1, t2 = 1.0, 1.0
    return RelaxationParams(t1=t1, t2=t2, m0=1.0)


def _resolve_spacing(exp: Experiment) -> Tuple[Tuple[float, float, float], SpacingReport]:
    """Pick or validate the spin spacing.

    The relaxation-free bound is authoritative; when it is exceeded the
    steady-state pruned bound (worst-case tissue, 256 gray levels)
    decides whether the spacing is still sound before warning.
    """
    report = max_spacing(exp.sequence, phantom=exp.phantom)
    pruned: Optional[SpacingReport] = None

    def pruned_report() -> SpacingReport:
        nonlocal pruned
        if pruned is None:
            try:
                pruned = pruned_max_spacing(exp.sequence, _worst_tissue(exp.phantom))
            except IncommensurateMoments:
                pruned = report
        return pruned

    if exp.spacing is None:
        chosen = pruned_report()
        lo, hi = exp.phantom.bounding_box()
        extent = np.maximum(np.asarray(hi) - np.asarray(lo), 1e-12)
        spacing = tuple(
            chosen.spacing[ax] if math.isfinite(chosen.spacing[ax]) else 2.0 * float(extent[ax])
            for ax in range(3)
        )
        return spacing, chosen
    spacing = tuple(float(s) for s in exp.spacing)
    for ax in range(3):
        if spacing[ax] >= report.dx_max[ax] and spacing[ax] >= pruned_report().dx_max[ax]:
            warnings.warn(
                f"spacing override {spacing[ax]:.6g} m on axis {'xyz'[ax]} violates the "
                f"sampling bound {pruned_report().dx_max[ax]:.6g} m; expect replica artifacts",
                stacklevel=3,
            )
    return spacing, report


def _worker_main(task_q, result_q, tables, worker_id):
    while True:
        task = task_q.get()
        if task is None:
            break
        block = task
        started = time.perf_counter()
        try:
            echoes, snaps = compute_block(tables, block)
        except Exception as exc:  # surfaced as WorkerPanic by the master
            result_q.put((block.index, None, None, worker_id, 0.0, repr(exc)))
            continue
        result_q.put(
            (block.index, echoes, snaps, worker_id, time.perf_counter() - started, None)
        )


def run(exp: Experiment) -> RunResult:
    """Execute one experiment; see the module docstring for the roles."""
    if exp.workers < 1:
        raise InvalidParameter(f"workers must be >= 1, got {exp.workers}")
    wall_start = time.perf_counter()
    spacing, report = _resolve_spacing(exp)
    spins = rasterize(exp.phantom, spacing, cap=exp.spin_cap)
    if not spins:
        raise InvalidParameter("the phantom rasterized to zero spins")
    arrays = build_spin_arrays(spins, exp.system)
    tables = precompute_sequence_tables(
        exp.sequence, gamma=exp.system.gamma, snapshot_times=exp.snapshot_times
    )
    n_blocks = exp.blocks if exp.blocks is not None else 4 * exp.workers
    blocks = partition_blocks(arrays, n_blocks)
    busy: Dict[int, float] = {}

    partials: Dict[int, tuple] = {}
    if exp.workers == 1:
        for block in blocks:
            started = time.perf_counter()
            partials[block.index] = compute_block(tables, block)
            busy[0] = busy.get(0, 0.0) + (time.perf_counter() - started)
        ordered = [partials[i] for i in sorted(partials)]
        folds = ordered
    else:
        folds, ordered = _run_pool(exp, tables, blocks, busy)

    n_spins = arrays.n
    echo_sum: Optional[np.ndarray] = None
    for echoes, _snaps in folds:
        echo_sum = echoes if echo_sum is None else echo_sum + echoes
    # snapshots concatenate in block-index order regardless of the fold
    # order, preserving rasterization order
    snap_sums: List[Optional[np.ndarray]] = [None] * len(exp.snapshot_times)
    for _echoes, snaps in ordered:
        for i, snap in enumerate(snaps):
            if snap is None:
                continue
            snap_sums[i] = snap if snap_sums[i] is None else np.vstack([snap_sums[i], snap])
    records = []
    if echo_sum is not None and tables.n_acq:
        echo_sum = echo_sum / n_spins
        for i in range(tables.n_acq):
            records.append(
                EchoRecord(
                    acq_index=i,
                    values=echo_sum[i, : tables.acq_times[i].size],
                    timestamps=tables.acq_times[i],
                )
            )
    wall = time.perf_counter() - wall_start
    metrics = RunMetrics(
        wall_time_s=wall,
        spin_count=n_spins,
        throughput=n_spins / wall if wall > 0 else math.inf,
        workers=exp.workers,
        blocks=len(blocks),
        busy_fraction={w: t / wall for w, t in sorted(busy.items())} if wall > 0 else {},
        hardware=f"{platform.machine()} {platform.processor() or 'cpu'} x{os.cpu_count()}",
    )
    snapshots = [
        (t, snap_sums[i] if snap_sums[i] is not None else np.zeros((0, 3)))
        for i, t in enumerate(exp.snapshot_times)
    ]
    return RunResult(
        echoes=records,
        metrics=metrics,
        snapshots=snapshots,
        spin_count=n_spins,
        spacing=spacing,
        spacing_report=report,
    )


def _run_pool(exp: Experiment, tables: OperatorTables, blocks, busy):
    """Dispatch blocks to worker processes over bounded queues.

    The task queue is bounded so the partitioner only stays ahead of the
    workers by a fixed number of blocks; a block is retired only after
    the reducer has folded its partial result (backpressure toward the
    master).  Returns (fold_order, index_order): deterministic mode
    folds echoes in ascending block index, nondeterministic mode in
    completion order.
    """
    ctx = mp.get_context()
    task_q = ctx.Queue(maxsize=max(2, 2 * exp.workers))
    result_q = ctx.Queue()
    workers = [
        ctx.Process(target=_worker_main, args=(task_q, result_q, tables, wid), daemon=True)
        for wid in range(exp.workers)
    ]
    for proc in workers:
        proc.start()
    pending = list(blocks)
    sent = 0
    done = 0
    arrival: List[tuple] = []
    by_index: Dict[int, tuple] = {}
    failure = None
    try:
        while done < len(blocks):
            while sent < len(blocks):
                try:
                    task_q.put_nowait(pending[sent])
                except queue_mod.Full:
                    break
                sent += 1
            index, echoes, snaps, wid, t_comp, err = result_q.get()
            done += 1
            if err is not None:
                failure = WorkerPanic(index, err)
                break
            busy[wid] = busy.get(wid, 0.0) + t_comp
            arrival.append((echoes, snaps))
            by_index[index] = (echoes, snaps)
    finally:
        if failure is not None:
            for proc in workers:
                proc.terminate()
        else:
            for _ in workers:
                task_q.put(None)
        for proc in workers:
            proc.join()
        task_q.close()
        result_q.close()
    if failure is not None:
        raise failure
    ordered = [by_index[i] for i in sorted(by_index)]
    return (ordered if exp.deterministic else arrival), ordered


# ---------------------------------------------------------------------------
# result comparison
# ---------------------------------------------------------------------------


def delta_e_stoer(ref, test) -> float:
    """Energy of the difference between two datasets relative to the
    reference energy, in dB; -inf when the datasets are identical."""
    ref = np.asarray(ref).ravel()
    test = np.asarray(test).ravel()
    if ref.shape != test.shape:
        raise InvalidParameter(f"shape mismatch: {ref.shape} vs {test.shape}")
    num = float(np.sum(np.abs(ref - test) ** 2))
    den = float(np.sum(np.abs(ref) ** 2))
    if den == 0.0:
        return -math.inf if num == 0.0 else math.inf
    if num == 0.0:
        return -math.inf
    return 10.0 * math.log10(num / den)


@dataclass(frozen=True)
class ComparisonResult:
    delta_e_db: float
    exceedances: int
    compared: int
    rel_threshold: float


def compare_results(ref, test, rel_threshold: float = 1e-6) -> ComparisonResult:
    """Floating-point tolerant dataset comparison.

    Returns the difference-energy ratio in dB plus the number of
    components whose relative error exceeds the threshold.  Components
    where both values sit at machine-epsilon scale are not rated.
    """
    ref = np.asarray(ref)
    test = np.asarray(test)
    if ref.shape != test.shape:
        raise InvalidParameter(f"shape mismatch: {ref.shape} vs {test.shape}")
    if np.iscomplexobj(ref) or np.iscomplexobj(test):
        ref = np.concatenate([np.real(ref).ravel(), np.imag(ref).ravel()])
        test = np.concatenate([np.real(test).ravel(), np.imag(test).ravel()])
    else:
        ref = ref.ravel().astype(float)
        test = test.ravel().astype(float)
    scale = float(np.max(np.abs(ref))) if ref.size else 0.0
    eps_scale = np.finfo(float).eps * max(scale, 1e-300)
    rated = ~((np.abs(ref) < eps_scale) & (np.abs(test) < eps_scale))
    rel = np.zeros_like(ref)
    denom = np.abs(ref[rated])
    denom = np.where(denom > 0.0, denom, eps_scale)
    rel[rated] = np.abs(ref[rated] - test[rated]) / denom
    return ComparisonResult(
        delta_e_db=delta_e_stoer(ref, test),
        exceedances=int(np.sum(rel > rel_threshold)),
        compared=int(np.sum(rated)),
        rel_threshold=rel_threshold,
    )
