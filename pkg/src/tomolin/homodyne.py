"""Continuous-variable layer in a truncated Fock basis: coherent probes,
inefficient homodyne quadrature functionals and Wigner functions.

Conventions: [x, p] = i, vacuum variance 1/2, and x_theta is the rotated
quadrature x cos(theta) + p sin(theta), so <n|x_theta> carries the phase
e^{i n theta} and a coherent state has quadrature mean
sqrt(2) |alpha| cos(arg(alpha) - theta).  Wigner functions normalise to
unit integral over the (x, p) plane.
"""

from dataclasses import dataclass
from functools import lru_cache
from math import factorial

import numpy as np
from scipy.special import genlaguerre

from . import qstate

__all__ = [
    "QuadratureOutcome",
    "HomodyneMeasurement",
    "WignerGrid",
    "coherent_state_fock",
    "true_signal",
    "kraus_operators",
    "loss_channel",
    "hermite_functions",
    "quadrature_functional",
    "homodyne_measurement",
    "wigner",
]

AMPLITUDE_GUARD = 2.0  # truncation-safety bound on |alpha|


def coherent_state_fock(alpha: complex, d_f: int) -> np.ndarray:
    """Coherent state amplitudes c_n ~ alpha^n / sqrt(n!), renormalised
    within the truncation.  Rejects |alpha| > 2 where the truncated tail
    would no longer be negligible."""
    if abs(alpha) > AMPLITUDE_GUARD:
        raise ValueError(f"|alpha| = {abs(alpha):.3f} beyond truncation guard {AMPLITUDE_GUARD}")
    n = np.arange(d_f)
    log_fact = np.cumsum(np.log(np.maximum(n, 1)))
    c = alpha**n * np.exp(-0.5 * log_fact)
    return c / np.linalg.norm(c)


def true_signal(d_f: int = 6) -> np.ndarray:
    """The benchmark signal: amplitudes (sqrt(0.1), sqrt(0.2), sqrt(0.3))
    on the first three Fock states, renormalised to unit norm."""
    if d_f < 3:
        raise ValueError("signal needs at least three Fock states")
    amps = np.zeros(d_f, dtype=complex)
    amps[:3] = np.sqrt([0.1, 0.2, 0.3])
    return amps / np.linalg.norm(amps)


@lru_cache(maxsize=None)
def _kraus_stack(d_f: int, eta: float) -> np.ndarray:
    ks = np.zeros((d_f, d_f, d_f))
    for k in range(d_f):
        for n in range(k, d_f):
            binom = factorial(n) / (factorial(k) * factorial(n - k))
            ks[k, n - k, n] = np.sqrt(binom * eta ** (n - k) * (1.0 - eta) ** k)
    ks.setflags(write=False)
    return ks


def kraus_operators(d_f: int, eta: float) -> np.ndarray:
    """Kraus operators of the photon-loss (binomial beamsplitter) channel."""
    if not 0.0 <= eta <= 1.0:
        raise ValueError(f"efficiency must lie in [0, 1], got {eta}")
    return _kraus_stack(d_f, float(eta))


def loss_channel(rho, eta: float) -> np.ndarray:
    """Apply the loss channel sum_k A_k rho A_k*; trace preserving and
    completely positive by construction."""
    rho = np.asarray(rho, dtype=complex)
    ks = kraus_operators(rho.shape[0], eta)
    return np.einsum("kij,jl,kml->im", ks, rho, ks.conj())


def loss_channel_adjoint(op, eta: float) -> np.ndarray:
    """Heisenberg picture of the loss channel: sum_k A_k* op A_k, so that
    trace(loss(rho) op) = trace(rho adjoint(op))."""
    op = np.asarray(op, dtype=complex)
    ks = kraus_operators(op.shape[0], eta)
    return np.einsum("kji,jl,klm->im", ks.conj(), op, ks)


def hermite_functions(x: float, d_f: int) -> np.ndarray:
    """Harmonic-oscillator position amplitudes psi_n(x) = <n|x> for
    n < d_f, by the stable two-term recursion."""
    psi = np.zeros(d_f)
    psi[0] = np.pi**-0.25 * np.exp(-0.5 * x * x)
    if d_f > 1:
        psi[1] = np.sqrt(2.0) * x * psi[0]
    for n in range(2, d_f):
        psi[n] = np.sqrt(2.0 / n) * x * psi[n - 1] - np.sqrt((n - 1) / n) * psi[n - 2]
    return psi


@dataclass(frozen=True)
class QuadratureOutcome:
    """A single homodyne point: phase in [0, pi) and quadrature value."""

    theta: float
    x: float
    x_max: float = 5.0

    def __post_init__(self):
        if not 0.0 <= self.theta < np.pi:
            raise ValueError(f"theta must lie in [0, pi), got {self.theta}")
        if abs(self.x) > self.x_max:
            raise ValueError(f"|x| = {abs(self.x)} exceeds x_max = {self.x_max}")


def quadrature_functional(outcome: QuadratureOutcome, d_f: int) -> np.ndarray:
    """Rank-one operator |x_theta><x_theta| in the truncated Fock basis."""
    amp = hermite_functions(outcome.x, d_f) * np.exp(1j * np.arange(d_f) * outcome.theta)
    return np.outer(amp, amp.conj())


@dataclass(frozen=True)
class HomodyneMeasurement:
    """m binned quadrature functionals of an inefficient homodyne detector.

    effects[j] already includes the loss channel (Heisenberg picture) and
    the bin width, so probabilities are plain traces trace(rho E_j).
    The effects need not be complete; linearity is all the protocols use.
    """

    outcomes: tuple
    effects: np.ndarray  # (m, d_f, d_f)
    eta: float
    dx: float

    @property
    def n_outcomes(self) -> int:
        return self.effects.shape[0]

    def probabilities(self, rho) -> np.ndarray:
        return np.einsum("mij,ji->m", self.effects, np.asarray(rho)).real


def homodyne_measurement(m: int, eta: float, rng, d_f: int,
                         dx: float = 0.1, x_max: float = 5.0) -> HomodyneMeasurement:
    """Draw m quadrature points with theta ~ U[0, pi), x ~ U[-x_max, x_max]
    and build the corresponding binned measurement functionals
    p_j = trace(loss(rho, eta) |x><x|) dx."""
    if m < 1:
        raise ValueError("need at least one quadrature point")
    outcomes = []
    effects = np.empty((m, d_f, d_f), dtype=complex)
    for j in range(m):
        out = QuadratureOutcome(
            theta=float(rng.uniform(0.0, np.pi)),
            x=float(rng.uniform(-x_max, x_max)),
            x_max=x_max,
        )
        outcomes.append(out)
        effects[j] = dx * loss_channel_adjoint(quadrature_functional(out, d_f), eta)
    return HomodyneMeasurement(outcomes=tuple(outcomes), effects=effects,
                               eta=eta, dx=dx)


def homodyne_detector_model(meas: HomodyneMeasurement,
                            basis: qstate.OperatorBasis) -> qstate.DetectorModel:
    """Affine detector model of the homodyne effects (not a complete POVM)."""
    return qstate.povm_to_affine(meas.effects, basis)


@dataclass(frozen=True)
class WignerGrid:
    """Wigner function sampled on a rectangular phase-space grid."""

    x_axis: np.ndarray
    p_axis: np.ndarray
    values: np.ndarray  # (len(x_axis), len(p_axis))

    def integral(self) -> float:
        dx = self.x_axis[1] - self.x_axis[0]
        dp = self.p_axis[1] - self.p_axis[0]
        return float(self.values.sum() * dx * dp)

    def min(self) -> float:
        return float(self.values.min())

    def value_at(self, x: float, p: float) -> float:
        i = int(np.argmin(np.abs(self.x_axis - x)))
        j = int(np.argmin(np.abs(self.p_axis - p)))
        return float(self.values[i, j])


def _wigner_kernel(m: int, n: int, xg: np.ndarray, pg: np.ndarray) -> np.ndarray:
    # contribution of |m><n|; for m >= n the Laguerre form, else conjugate
    if m < n:
        return np.conj(_wigner_kernel(n, m, xg, pg))
    r2 = xg**2 + pg**2
    pref = np.exp(-r2) / np.pi * (-1.0) ** n
    pref = pref * np.sqrt(2.0 ** (m - n) * factorial(n) / factorial(m))
    return pref * (xg - 1j * pg) ** (m - n) * genlaguerre(n, m - n)(2.0 * r2)


def wigner(rho, x_axis=None, p_axis=None) -> WignerGrid:
    """Wigner function of a Fock-basis density matrix.

    Uses the associated-Laguerre kernel; W(0,0) equals the scaled parity
    sum (1/pi) sum_n (-1)^n rho_nn and the grid integral is 1 for states
    well contained in the grid.
    """
    rho = np.asarray(rho, dtype=complex)
    if x_axis is None:
        x_axis = np.linspace(-5.0, 5.0, 201)
    if p_axis is None:
        p_axis = x_axis
    x_axis = np.asarray(x_axis, dtype=float)
    p_axis = np.asarray(p_axis, dtype=float)
    xg, pg = np.meshgrid(x_axis, p_axis, indexing="ij")
    d = rho.shape[0]
    values = np.zeros(xg.shape, dtype=complex)
    for m in range(d):
        values += rho[m, m].real * _wigner_kernel(m, m, xg, pg)
        for n in range(m):
            # off-diagonal pairs contribute twice the real part
            values += 2.0 * np.real(rho[m, n] * _wigner_kernel(m, n, xg, pg))
    return WignerGrid(x_axis=x_axis, p_axis=p_axis, values=values.real)
