"""1-bit ADC banks with adaptive dithering and the averaging projection.

An ADC bank holds 1/a comparators per measurement feature. The observation
vector is stacked block-wise as ones(1/a) kron h_base(x): all features once,
then repeated, so the averaging projection a * ones(1/a)^T kron I collapses
the duplicates of each feature.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgumentError
from .ssmodel import StateSpaceModel


def quantize_1bit(y, tau):
    """Element-wise sign comparator: +1 where y > tau, -1 otherwise.

    Ties (y == tau) deterministically map to -1.
    """
    y = np.asarray(y, dtype=float)
    tau = np.asarray(tau, dtype=float)
    if y.shape != tau.shape:
        raise InvalidArgumentError("y and tau must have the same shape")
    if not (np.all(np.isfinite(y)) and np.all(np.isfinite(tau))):
        raise InvalidArgumentError("y and tau must be finite")
    return np.where(y > tau, 1.0, -1.0)


def dither_threshold(prediction):
    """Dither threshold: the one-step measurement prediction itself.

    Subtracting this threshold centers the quantizer input at zero
    conditional mean, which both minimizes the quantizer's information loss
    and keeps the statistical linearization in zero-mean form.
    """
    prediction = np.asarray(prediction, dtype=float)
    if not np.all(np.isfinite(prediction)):
        raise InvalidArgumentError("prediction must be finite")
    return prediction


@dataclass(frozen=True)
class ProjectionOperator:
    """Averaging projection A = a * ones(1/a)^T kron I_{an}."""

    A: np.ndarray
    a: float

    @property
    def reduced_dim(self):
        return self.A.shape[0]

    @property
    def full_dim(self):
        return self.A.shape[1]

    def __call__(self, r):
        return self.A @ np.asarray(r, dtype=float)


def build_projection(a, n):
    """Build the duplicate-ADC averaging projection for reduction ratio a.

    Requires 1/a and a*n to be integers; a=1 yields the identity.
    """
    inv_a = 1.0 / a
    if a <= 0 or a > 1:
        raise InvalidArgumentError("a must be in (0, 1]")
    if abs(inv_a - round(inv_a)) > 1e-9:
        raise InvalidArgumentError("1/a must be an integer")
    an = a * n
    if abs(an - round(an)) > 1e-9:
        raise InvalidArgumentError("a*n must be an integer")
    inv_a = int(round(inv_a))
    an = int(round(an))
    A = a * np.kron(np.ones((1, inv_a)), np.eye(an))
    return ProjectionOperator(A=A, a=float(a))


@dataclass
class AdcBank:
    """Bank of n 1-bit ADCs, 1/a of them per measurement feature.

    ``noise_variances`` holds the per-ADC measurement noise r_i^2; the
    threshold is per-filter-instance mutable state updated each step by the
    closed-loop dither rule.
    """

    adc_per_feature: int
    noise_variances: np.ndarray
    threshold: np.ndarray = field(default=None)

    def __post_init__(self):
        self.noise_variances = np.atleast_1d(
            np.asarray(self.noise_variances, dtype=float)
        )
        if self.adc_per_feature < 1:
            raise InvalidArgumentError("adc_per_feature must be >= 1")
        if np.any(self.noise_variances <= 0):
            raise InvalidArgumentError("all noise variances must be positive")
        if self.noise_variances.size % self.adc_per_feature != 0:
            raise InvalidArgumentError(
                "ADC count must be a multiple of adc_per_feature"
            )
        if self.threshold is None:
            self.threshold = np.zeros(self.n)

    @property
    def n(self):
        return self.noise_variances.size

    @property
    def base_features(self):
        return self.n // self.adc_per_feature

    @property
    def a(self):
        return 1.0 / self.adc_per_feature

    def projection(self):
        return build_projection(self.a, self.n)

    def convert(self, y):
        """Quantize a full measurement vector against the stored threshold."""
        return quantize_1bit(y, self.threshold)


def stack_measurements(base_model: StateSpaceModel, bank: AdcBank):
    """Expand a 1-ADC-per-feature model to the bank's duplicated observation.

    h(x) = ones(1/a) kron h_base(x); R becomes diag of the per-ADC variances.
    """
    if bank.base_features != base_model.meas_dim:
        raise InvalidArgumentError(
            "bank feature count does not match the base measurement dim"
        )
    if bank.adc_per_feature == 1:
        return base_model.replace(R=np.diag(bank.noise_variances))
    reps = bank.adc_per_feature
    h0, jh0 = base_model.h, base_model.jac_h
    ones = np.ones(reps)

    def h(x):
        return np.kron(ones, h0(x))

    def jac_h(x):
        return np.kron(ones[:, None], jh0(x))

    return base_model.replace(
        meas_dim=bank.n, h=h, jac_h=jac_h, R=np.diag(bank.noise_variances)
    )
