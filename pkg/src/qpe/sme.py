"""Stochastic-master-equation superoperators and Euler-Maruyama integrators.

Two integration modes share one step recipe:

* sampled: the "experiment" -- Wiener increments drive the diffusion term and
  the synthetic measurement current is I_j = <X>_c + dW_j / (sqrt(4 kappa eta) dt),
  with the same dW used in the state update (record and trajectory stay
  self-consistent).
* driven: the estimator filter -- the recorded current replaces the noise via
  the innovation term 2 kappa eta (I_j - <X>_c) H[A] rho dt.

Integrations are sequential per trajectory; independent trajectories can run
concurrently (states are never shared, RNG streams are derived per seed).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import _kernels
from .errors import (
    DimensionMismatch,
    DtMismatch,
    EmptyRecord,
    InvalidParam,
    NumericalBlowup,
)
from .hilbert import HilbertSpace, Operator, QuantumState
from .record import Metadata, TrajectoryRecord, make_rng

_DIAG_STRIDE = 100  # steps between min-eigenvalue diagnostics


@dataclass(frozen=True, eq=False)
class SmeTerms:
    """Everything that defines one SME: H, dissipators, measurement channel.

    ``dissipators`` includes the measurement channel (measurement_op, kappa)
    as its last entry; use :meth:`build` to assemble the list so that kappa
    appears exactly once.
    """

    hamiltonian: Operator
    dissipators: tuple[tuple[Operator, float], ...]
    measurement_op: Operator
    measured_observable: Operator
    kappa: float
    eta: float

    def __post_init__(self) -> None:
        if not self.measured_observable.is_hermitian(1e-12):
            raise ValueError("measured_observable must be Hermitian (<= 1e-12)")
        if not (0.0 < self.eta <= 1.0):
            raise ValueError(f"eta must be in (0, 1], got {self.eta}")
        if self.kappa < 0:
            raise ValueError("kappa must be >= 0")
        for _, rate in self.dissipators:
            if rate < 0:
                raise ValueError("dissipator rates must be >= 0")
        last_op, last_rate = self.dissipators[-1]
        if last_rate != self.kappa or last_op is not self.measurement_op:
            raise ValueError("last dissipator must be the measurement channel (measurement_op, kappa)")

    @classmethod
    def build(
        cls,
        hamiltonian: Operator,
        extra_dissipators: Sequence[tuple[Operator, float]],
        measurement_op: Operator,
        measured_observable: Operator,
        kappa: float,
        eta: float,
    ) -> "SmeTerms":
        return cls(
            hamiltonian=hamiltonian,
            dissipators=tuple(extra_dissipators) + ((measurement_op, kappa),),
            measurement_op=measurement_op,
            measured_observable=measured_observable,
            kappa=kappa,
            eta=eta,
        )

    @property
    def space(self) -> HilbertSpace:
        return self.hamiltonian.space


@dataclass(frozen=True)
class StepperConfig:
    """Integrator controls shared by the sampled and driven modes."""

    dt: float = 1e-3
    renormalize: bool = True
    symmetrize: bool = True
    burn_in_time: float = 0.0

    def __post_init__(self) -> None:
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.burn_in_time < 0:
            raise ValueError("burn_in_time must be >= 0")


@dataclass
class EstimatorRun:
    """Output of the record-driven filter."""

    times: np.ndarray
    cond_means: np.ndarray
    final_state: QuantumState
    min_eigen_seen: float
    trace_drift_seen: float
    snapshot_times: Optional[np.ndarray] = None
    snapshots: Optional[list] = None  # list of QuantumState


def dissipator_apply(op: Operator, state: QuantumState) -> np.ndarray:
    """Lindblad dissipator D[A]rho = A rho A+ - (A+A rho + rho A+A)/2."""
    if op.space.dim != state.space.dim:
        raise DimensionMismatch(f"{op.space.dim} vs {state.space.dim}")
    a = op.entries
    ad = a.conj().T
    ada = ad @ a
    rho = state.rho
    return a @ rho @ ad - 0.5 * (ada @ rho + rho @ ada)


def innovation_apply(op: Operator, state: QuantumState) -> np.ndarray:
    """Measurement superoperator H[A]rho = A rho + rho A+ - Tr[(A + A+) rho] rho."""
    if op.space.dim != state.space.dim:
        raise DimensionMismatch(f"{op.space.dim} vs {state.space.dim}")
    a = op.entries
    rho = state.rho
    out = a @ rho + rho @ a.conj().T
    return out - np.trace((a + a.conj().T) @ rho) * rho


class Propagator:
    """Precomputed matrices for one SmeTerms.

    The deterministic generator is kept in the compact form
    det(rho) = G rho + rho G+ + sum_k Lw_k rho Lw_k+ with
    G = -iH - (1/2) sum rate L+L and Lw_k = sqrt(rate_k) L_k.
    """

    def __init__(self, terms: SmeTerms):
        self.terms = terms
        d = terms.space.dim
        self.dim = d
        g = -1j * terms.hamiltonian.entries.astype(complex)
        lws = []
        for op, rate in terms.dissipators:
            if rate == 0.0:
                continue
            l = op.entries
            g = g - 0.5 * rate * (l.conj().T @ l)
            lws.append(math.sqrt(rate) * l)
        self.g = np.ascontiguousarray(g)
        self.gd = np.ascontiguousarray(g.conj().T)
        if lws:
            self.lw = np.ascontiguousarray(np.array(lws))
        else:
            self.lw = np.zeros((0, d, d), dtype=complex)
        self.lwd = np.ascontiguousarray(self.lw.conj().transpose(0, 2, 1))
        self.a = np.ascontiguousarray(terms.measurement_op.entries.astype(complex))
        self.ad = np.ascontiguousarray(self.a.conj().T)
        self.asum = np.ascontiguousarray(self.a + self.ad)
        self.x = np.ascontiguousarray(terms.measured_observable.entries.astype(complex))

    def cond_mean(self, rho: np.ndarray) -> float:
        return float(np.einsum("rc,cr->", self.x, rho).real)

    def det_apply(self, rho: np.ndarray) -> np.ndarray:
        out = self.g @ rho + rho @ self.gd
        for k in range(self.lw.shape[0]):
            out = out + self.lw[k] @ rho @ self.lwd[k]
        return out

    def innovation(self, rho: np.ndarray) -> np.ndarray:
        trc = np.einsum("rc,cr->", self.asum, rho)
        return self.a @ rho + rho @ self.ad - trc * rho

    def step(self, rho: np.ndarray, dt: float, weight: float, where: str) -> tuple[np.ndarray, float]:
        """One Euler-Maruyama step; ``weight`` multiplies H[A]rho
        (sqrt(kappa eta) dW sampled, 2 kappa eta (I - m) dt driven)."""
        rho1 = rho + dt * self.det_apply(rho) + weight * self.innovation(rho)
        tr = float(np.trace(rho1).real)
        drift = abs(tr - 1.0)
        if not np.isfinite(tr) or drift > 0.5 or np.max(np.abs(rho1)) > 1e6:
            raise NumericalBlowup(f"{where}: trace drifted to {tr:.3g}; reduce dt")
        return rho1, drift

    def finish(self, rho1: np.ndarray, config: StepperConfig) -> np.ndarray:
        if config.symmetrize:
            rho1 = 0.5 * (rho1 + rho1.conj().T)
        if config.renormalize:
            rho1 = rho1 / float(np.trace(rho1).real)
        return rho1

    def min_eigenvalue(self, rho: np.ndarray) -> float:
        return float(np.linalg.eigvalsh(0.5 * (rho + rho.conj().T)).min())

    def kernel_args(self):
        return (self.g, self.gd, self.lw, self.lwd, self.a, self.ad, self.asum, self.x)


def get_propagator(terms: SmeTerms) -> Propagator:
    return Propagator(terms)


def em_step_sampled(
    terms: SmeTerms,
    state: QuantumState,
    dt: float,
    dW: float,
    config: Optional[StepperConfig] = None,
) -> QuantumState:
    """One sampled-noise Euler-Maruyama step of the conditional SME."""
    config = config or StepperConfig(dt=dt)
    prop = Propagator(terms)
    rho1, _ = prop.step(state.rho, dt, math.sqrt(terms.kappa * terms.eta) * dW, "em_step_sampled")
    return QuantumState(state.space, prop.finish(rho1, config))


def em_step_driven(
    terms: SmeTerms,
    state: QuantumState,
    dt: float,
    record_sample: float,
    config: Optional[StepperConfig] = None,
) -> QuantumState:
    """One record-driven step of the estimator SME."""
    config = config or StepperConfig(dt=dt)
    prop = Propagator(terms)
    m_c = prop.cond_mean(state.rho)
    weight = 2.0 * terms.kappa * terms.eta * (record_sample - m_c) * dt
    rho1, _ = prop.step(state.rho, dt, weight, "em_step_driven")
    return QuantumState(state.space, prop.finish(rho1, config))


def _n_steps(duration: float, dt: float) -> int:
    n = int(round(duration / dt))
    if n < 2:
        raise ValueError(f"duration/dt = {duration / dt:.3g} must give at least 2 steps")
    if abs(n * dt - duration) > 1e-9 * max(1.0, duration):
        raise ValueError("duration must be an integer multiple of dt")
    return n


def _diag_buffers(n: int, d: int, snapshot_stride: Optional[int]):
    snap_stride = int(snapshot_stride or 0)
    n_snap = (n + snap_stride - 1) // snap_stride if snap_stride else 0
    snaps = np.zeros((max(n_snap, 1), d, d), dtype=complex)
    n_diag = (n + _DIAG_STRIDE - 1) // _DIAG_STRIDE
    diags = np.zeros((n_diag, d, d), dtype=complex)
    return snap_stride, snaps, diags


def _min_eig_over(prop: Propagator, states: np.ndarray, final_rho: np.ndarray) -> float:
    vals = [prop.min_eigenvalue(s) for s in states]
    vals.append(prop.min_eigenvalue(final_rho))
    return float(min(vals))


def simulate_record(
    terms: SmeTerms,
    initial: QuantumState,
    config: StepperConfig,
    duration: float,
    seed: int,
    emit_truth: bool = False,
    model_name: str = "",
    params: Optional[dict] = None,
    fixed: Optional[dict] = None,
    snapshot_stride: Optional[int] = None,
):
    """Integrate the sampled SME and synthesize the homodyne record.

    Returns the TrajectoryRecord; when ``snapshot_stride`` is given, returns
    (record, snapshot_times, snapshot_states) with states stored every
    ``snapshot_stride`` steps (pre-step, aligned with record times).
    """
    if terms.kappa * terms.eta <= 0:
        raise InvalidParam("record synthesis needs kappa * eta > 0")
    n = _n_steps(duration, config.dt)
    dt = config.dt
    prop = Propagator(terms)
    rng = make_rng(seed)
    dw = rng.normal(0.0, math.sqrt(dt), size=n)
    noise_gain = 1.0 / (math.sqrt(4.0 * terms.kappa * terms.eta) * dt)
    diff_gain = math.sqrt(terms.kappa * terms.eta)
    rho0 = np.ascontiguousarray(initial.rho)
    snap_stride, snaps, diags = _diag_buffers(n, prop.dim, snapshot_stride)

    if _kernels.HAVE_NUMBA:
        currents, truth, rho, drift_max, n_snap, n_diag, bad = _kernels.sampled_loop(
            *prop.kernel_args(), rho0, dt, dw, diff_gain, noise_gain,
            config.symmetrize, config.renormalize, snap_stride, snaps, _DIAG_STRIDE, diags,
        )
        if bad >= 0:
            raise NumericalBlowup(f"simulate_record step {bad}: trace diverged; reduce dt")
    else:
        rho = rho0.copy()
        currents = np.empty(n)
        truth = np.empty(n)
        drift_max = 0.0
        n_snap = n_diag = 0
        for j in range(n):
            m = prop.cond_mean(rho)
            truth[j] = m
            currents[j] = m + dw[j] * noise_gain
            if snap_stride and j % snap_stride == 0:
                snaps[n_snap] = rho
                n_snap += 1
            if j % _DIAG_STRIDE == 0:
                diags[n_diag] = rho
                n_diag += 1
            rho1, drift = prop.step(rho, dt, diff_gain * dw[j], f"simulate_record step {j}")
            drift_max = max(drift_max, drift)
            rho = prop.finish(rho1, config)

    meta = Metadata(
        model=model_name,
        params=dict(params or {}),
        fixed=dict(fixed or {}),
        dt=dt,
        tau=duration,
        n=n,
        seed=int(seed),
        dim=terms.space.dim,
        kappa=terms.kappa,
        eta=terms.eta,
    )
    rec = TrajectoryRecord(
        times=np.arange(n) * dt,
        currents=currents,
        meta=meta,
        truth=truth if emit_truth else None,
    )
    if snapshot_stride:
        snap_times = np.arange(n_snap) * (snap_stride * dt)
        states = [QuantumState(terms.space, snaps[i]) for i in range(n_snap)]
        return rec, snap_times, states
    return rec


def run_estimator(
    terms: SmeTerms,
    initial: QuantumState,
    config: StepperConfig,
    record: TrajectoryRecord,
    snapshot_stride: Optional[int] = None,
) -> EstimatorRun:
    """Drive the estimator SME with a recorded current across the full record."""
    if len(record) == 0:
        raise EmptyRecord("record has no samples")
    if abs(config.dt - record.meta.dt) > 1e-12:
        raise DtMismatch(f"config.dt={config.dt} vs record dt={record.meta.dt}")
    dt = config.dt
    n = len(record)
    prop = Propagator(terms)
    gain = 2.0 * terms.kappa * terms.eta * dt
    currents = np.ascontiguousarray(record.currents)
    rho0 = np.ascontiguousarray(initial.rho)
    snap_stride, snaps, diags = _diag_buffers(n, prop.dim, snapshot_stride)

    if _kernels.HAVE_NUMBA:
        cond_means, rho, drift_max, n_snap, n_diag, bad = _kernels.driven_loop(
            *prop.kernel_args(), rho0, dt, currents, gain,
            config.symmetrize, config.renormalize, snap_stride, snaps, _DIAG_STRIDE, diags,
        )
        if bad >= 0:
            raise NumericalBlowup(f"run_estimator step {bad}: trace diverged; reduce dt")
    else:
        rho = rho0.copy()
        cond_means = np.empty(n)
        drift_max = 0.0
        n_snap = n_diag = 0
        for j in range(n):
            m = prop.cond_mean(rho)
            cond_means[j] = m
            if snap_stride and j % snap_stride == 0:
                snaps[n_snap] = rho
                n_snap += 1
            if j % _DIAG_STRIDE == 0:
                diags[n_diag] = rho
                n_diag += 1
            rho1, drift = prop.step(rho, dt, gain * (currents[j] - m), f"run_estimator step {j}")
            drift_max = max(drift_max, drift)
            rho = prop.finish(rho1, config)

    return EstimatorRun(
        times=record.times.copy(),
        cond_means=cond_means,
        final_state=QuantumState(terms.space, rho),
        min_eigen_seen=_min_eig_over(prop, diags[:n_diag], rho),
        trace_drift_seen=float(drift_max),
        snapshot_times=record.times[::snap_stride].copy() if snap_stride else None,
        snapshots=[QuantumState(terms.space, snaps[i]) for i in range(n_snap)] if snap_stride else None,
    )


def lindblad_evolve(
    terms: SmeTerms,
    initial: QuantumState,
    config: StepperConfig,
    duration: float,
) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic (unconditional) evolution: same generator, no noise.

    Returns (times, <measured_observable>(t)); this is what the driven filter
    reduces to at zero innovation gain and what sampled trajectories average
    to over many seeds.
    """
    n = _n_steps(duration, config.dt)
    prop = Propagator(terms)
    rho0 = np.ascontiguousarray(initial.rho)
    if _kernels.HAVE_NUMBA:
        snap_stride, snaps, diags = _diag_buffers(n, prop.dim, None)
        means, rho, drift_max, _, _, bad = _kernels.driven_loop(
            *prop.kernel_args(), rho0, config.dt, np.zeros(n), 0.0,
            config.symmetrize, config.renormalize, 0, snaps, 0, diags,
        )
        if bad >= 0:
            raise NumericalBlowup(f"lindblad_evolve step {bad}: trace diverged; reduce dt")
        # gain 0 makes the innovation term vanish identically
        return np.arange(n) * config.dt, means
    rho = rho0.copy()
    means = np.empty(n)
    for j in range(n):
        means[j] = prop.cond_mean(rho)
        rho1, _ = prop.step(rho, config.dt, 0.0, f"lindblad_evolve step {j}")
        rho = prop.finish(rho1, config)
    return np.arange(n) * config.dt, means
