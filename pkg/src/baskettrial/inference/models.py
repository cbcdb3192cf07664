"""Model specifications and prior families.

Hyperparameters left as ``None`` are resolved from the design response
rates ``(q0, q1)`` when a model is fitted, see :func:`resolve`.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional, Union

import numpy as np
from scipy import special

from ..divergence import DistanceMeasure
from ..kernel import CorrelationKind
from ..stats import FLAT_PRIOR, BetaParams


def _positive(name, *values):
    for v in values:
        if not (v > 0 and np.isfinite(v)):
            raise ValueError(f"{name} must be positive and finite, got {v}")


@dataclass(frozen=True)
class InvGammaPrior:
    shape: float
    rate: float

    def __post_init__(self):
        _positive("inverse-gamma parameters", self.shape, self.rate)

    def logpdf(self, x):
        x = np.asarray(x, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            out = (self.shape * np.log(self.rate) - special.gammaln(self.shape)
                   - (self.shape + 1.0) * np.log(x) - self.rate / x)
        return np.where(x > 0, out, -np.inf)

    def initial(self) -> float:
        return 1.0


@dataclass(frozen=True)
class GammaPrior:
    shape: float
    rate: float = 1.0

    def __post_init__(self):
        _positive("gamma parameters", self.shape, self.rate)

    def logpdf(self, x):
        x = np.asarray(x, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            out = (self.shape * np.log(self.rate) - special.gammaln(self.shape)
                   + (self.shape - 1.0) * np.log(x) - self.rate * x)
        return np.where(x > 0, out, -np.inf)

    def initial(self) -> float:
        return self.shape / self.rate


@dataclass(frozen=True)
class UniformPrior:
    low: float
    high: float

    def __post_init__(self):
        if not (0 <= self.low < self.high and np.isfinite(self.high)):
            raise ValueError(f"need 0 <= low < high, got ({self.low}, {self.high})")

    def logpdf(self, x):
        x = np.asarray(x, dtype=float)
        inside = (x > self.low) & (x < self.high)
        return np.where(inside, -np.log(self.high - self.low), -np.inf)

    def initial(self) -> float:
        return 0.5 * (self.low + self.high)


ScalePrior = Union[InvGammaPrior, GammaPrior, UniformPrior]


@dataclass(frozen=True)
class IndependentSpec:
    """Flat beta prior per indication.

    ``exceedance="sampled"`` reports tail probabilities as the fraction of
    ``keep`` i.i.d. posterior draws above the threshold (what a sampler would
    give); ``"analytic"`` uses the incomplete beta function.
    """
    prior: BetaParams = FLAT_PRIOR
    exceedance: str = "sampled"
    name: str = field(default="independent", init=False)

    def __post_init__(self):
        if self.exceedance not in ("sampled", "analytic"):
            raise ValueError("exceedance must be 'sampled' or 'analytic'")


@dataclass(frozen=True)
class BhmSpec:
    """theta_i ~ N(theta0, sigma2), theta0 ~ N(mu_mean, mu_var), sigma2 ~ IG."""
    mu_mean: Optional[float] = None      # None: mean of logit(q0_i)
    mu_var: float = 1000.0
    sigma2_prior: InvGammaPrior = InvGammaPrior(0.001, 0.001)
    name: str = field(default="bhm", init=False)

    def __post_init__(self):
        _positive("mu_var", self.mu_var)


@dataclass(frozen=True)
class ExnexSpec:
    """One exchangeable component N(mu0, s0) plus per-indication NEX priors.

    ``s0`` (a variance) has a normal prior with mean ``s0_mean`` and variance
    ``s0_var`` truncated to ``(s0_lower, inf)``. The default ``s0_var = 0.01``
    reads the conventional "100" as a precision, as BUGS/JAGS do; the
    operating characteristics of the reference tables match this reading and
    not a variance of 100. ``ex_weight`` pins the prior
    EX probability; by default it is integrated over Dirichlet(lambda1, lambda2).
    """
    mu0_var: float = 5.0
    nex_means: Optional[tuple] = None    # None: logit(q0_i)
    nex_var: float = 1.0 / 0.15
    dirichlet: tuple = (1.0, 1.0)
    ex_weight: Optional[float] = None
    s0_mean: float = 0.0
    s0_var: float = 0.01
    s0_lower: float = 0.001
    name: str = field(default="exnex", init=False)

    def __post_init__(self):
        _positive("EXNEX variances", self.mu0_var, self.nex_var, self.s0_var, self.s0_lower)
        _positive("Dirichlet parameters", *self.dirichlet)
        if self.ex_weight is not None and not 0.0 <= self.ex_weight <= 1.0:
            raise ValueError("ex_weight must lie in [0, 1]")

    @property
    def prior_ex_prob(self) -> float:
        if self.ex_weight is not None:
            return float(self.ex_weight)
        l1, l2 = self.dirichlet
        return l1 / (l1 + l2)


@dataclass(frozen=True)
class LiuSpec:
    """Two-component normal mixture on the logit scale with fixed weight."""
    g: Optional[tuple] = None            # None: (logit mean q0, logit mean q1)
    tau2: tuple = (1.0 / 0.42, 1.0 / 0.57)
    sigma2_prior: InvGammaPrior = InvGammaPrior(0.1, 0.1)
    weight: float = 0.5
    name: str = field(default="liu", init=False)

    def __post_init__(self):
        _positive("component prior variances", *self.tau2)
        if not 0.0 < self.weight < 1.0:
            raise ValueError("mixture weight must lie in (0, 1)")


@dataclass(frozen=True)
class CbhmSpec:
    """Correlated hierarchical model over posterior distances.

    theta ~ MVN(theta0 * 1, sigma2 * R(phi) + tau2 * I), theta0 ~ N(mu0, sigma0_2).
    """
    measure: DistanceMeasure = DistanceMeasure.BHATTACHARYYA
    corr: CorrelationKind = CorrelationKind.EXPONENTIAL
    phi_prior: ScalePrior = GammaPrior(1.0, 1.0)
    sigma2_prior: ScalePrior = InvGammaPrior(0.01, 0.01)
    tau2_prior: ScalePrior = InvGammaPrior(0.01, 0.01)
    sigma0_prior: InvGammaPrior = InvGammaPrior(0.1, 0.1)
    mu0: Optional[float] = None          # None: logit of the mean of (q0 + q1) / 2
    tie_break: bool = True
    name: str = field(default="cbhm", init=False)

    def __post_init__(self):
        object.__setattr__(self, "measure", DistanceMeasure.parse(self.measure))
        object.__setattr__(self, "corr", CorrelationKind.parse(self.corr))

    def with_phi_shape(self, a: float) -> "CbhmSpec":
        return replace(self, phi_prior=GammaPrior(float(a), 1.0))


ModelSpec = Union[IndependentSpec, BhmSpec, ExnexSpec, LiuSpec, CbhmSpec]

# alternative CBHM prior sets for the sensitivity study; set 2 is the default
CBHM_PRIOR_SETS = {
    1: dict(sigma2_prior=InvGammaPrior(0.1, 0.1), tau2_prior=InvGammaPrior(0.1, 0.1),
            phi_prior=GammaPrior(1.0, 1.0)),
    2: dict(sigma2_prior=InvGammaPrior(0.01, 0.01), tau2_prior=InvGammaPrior(0.01, 0.01),
            phi_prior=GammaPrior(1.0, 1.0)),
    3: dict(sigma2_prior=InvGammaPrior(0.001, 0.001), tau2_prior=InvGammaPrior(0.001, 0.001),
            phi_prior=GammaPrior(1.0, 1.0)),
    4: dict(sigma2_prior=InvGammaPrior(0.01, 0.01), tau2_prior=InvGammaPrior(0.01, 0.01),
            phi_prior=GammaPrior(0.7, 1.0)),
}


def cbhm_prior_set(k: int, measure="b") -> CbhmSpec:
    if k not in CBHM_PRIOR_SETS:
        raise ValueError(f"prior set must be one of {sorted(CBHM_PRIOR_SETS)}")
    return CbhmSpec(measure=measure, **CBHM_PRIOR_SETS[k])


def cbhm_kl_sqexp() -> CbhmSpec:
    """KL distance with the squared-exponential kernel and uniform scale priors."""
    return CbhmSpec(measure=DistanceMeasure.SYMMETRIZED_KL,
                    corr=CorrelationKind.SQUARED_EXPONENTIAL,
                    phi_prior=UniformPrior(0.189, 0.5),
                    sigma2_prior=UniformPrior(2.0, 3.0),
                    tau2_prior=UniformPrior(2.0, 4.0))


MODEL_NAMES = ("independent", "bhm", "exnex", "liu", "cbhm")


def default_spec(name: str, **overrides) -> ModelSpec:
    key = name.strip().lower().replace("-", "_")
    aliases = {"independent": IndependentSpec, "ind": IndependentSpec,
               "bhm": BhmSpec, "exnex": ExnexSpec,
               "liu": LiuSpec, "liu_bhmm": LiuSpec, "bhmm": LiuSpec,
               "cbhm": CbhmSpec}
    if key not in aliases:
        raise ValueError(f"unknown model {name!r}; choose from {MODEL_NAMES}")
    return aliases[key](**overrides)


@dataclass(frozen=True)
class Resolved:
    """Hyperparameters after filling in rate-dependent defaults."""
    bhm_mu_mean: float
    nex_means: np.ndarray
    liu_g: tuple
    cbhm_mu0: float


def resolve(spec, q0, q1) -> Resolved:
    q0 = np.atleast_1d(np.asarray(q0, dtype=float))
    q1 = np.atleast_1d(np.asarray(q1, dtype=float))
    lq0 = special.logit(q0)
    mu_mean = getattr(spec, "mu_mean", None)
    nex = getattr(spec, "nex_means", None)
    g = getattr(spec, "g", None)
    mu0 = getattr(spec, "mu0", None)
    return Resolved(
        bhm_mu_mean=float(np.mean(lq0)) if mu_mean is None else float(mu_mean),
        nex_means=lq0 if nex is None else np.asarray(nex, dtype=float),
        liu_g=(float(special.logit(q0.mean())), float(special.logit(q1.mean())))
        if g is None else tuple(float(v) for v in g),
        cbhm_mu0=float(special.logit(np.mean((q0 + q1) / 2.0))) if mu0 is None else float(mu0),
    )
