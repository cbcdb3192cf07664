"""Run configuration: a YAML document validated with pydantic.

Unknown keys are rejected, and validation errors point at the offending
line of the file. ``effective_config`` gives the document with every default
filled in; running from that echo reproduces a run exactly.

Example (everything except ``method`` and ``I`` is optional)::

    method: cbhm
    I: 6

A fuller document::

    scenario:
      name: null
      truth: [0.2, 0.2, 0.2, 0.2, 0.2, 0.2]
      q0: 0.2
      q1: 0.4
    design: {n1: 14, n: 24, Qf: 0.05}
    liu: {gamma: 0.2, C: 0.5}
    methods:
      - {model: cbhm, label: CBHM-B, measure: b, prior_set: 2}
      - {model: bhm, Q: 0.88}
    mcmc: {burn_in: 5000, keep: 10000}
    simulation: {replicates: 1000, seed: 1, threads: 1}
    calibration: {alpha: 0.10, replicates: 2000, target: mean}
    output: {dir: out}
"""

from __future__ import annotations

from pathlib import Path
from typing import Annotated, List, Literal, Optional, Union

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .errors import ConfigError
from .harness import MethodConfig, ScenarioConfig
from .inference.mcmc import McmcConfig
from .inference.models import (CBHM_PRIOR_SETS, BhmSpec, CbhmSpec, ExnexSpec, GammaPrior,
                               IndependentSpec, InvGammaPrior, LiuSpec, UniformPrior)
from .stats import BetaParams


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class PriorConfig(_Strict):
    dist: Literal["invgamma", "gamma", "uniform"]
    a: float = Field(description="shape (gamma families) or lower bound (uniform)")
    b: float = Field(description="rate (gamma families) or upper bound (uniform)")

    def build(self):
        cls = {"invgamma": InvGammaPrior, "gamma": GammaPrior, "uniform": UniformPrior}[self.dist]
        try:
            return cls(self.a, self.b)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc


class _MethodBase(_Strict):
    label: Optional[str] = None
    Q: Optional[float] = Field(None, ge=0.0, le=1.0)


class IndependentMethod(_MethodBase):
    model: Literal["independent"]
    prior: List[float] = [1.0, 1.0]
    exceedance: Literal["sampled", "analytic"] = "sampled"

    def spec(self):
        return IndependentSpec(BetaParams(*self.prior), self.exceedance)


class BhmMethod(_MethodBase):
    model: Literal["bhm"]
    mu_mean: Optional[float] = None
    mu_var: float = Field(1000.0, gt=0)
    sigma2_prior: PriorConfig = PriorConfig(dist="invgamma", a=0.001, b=0.001)

    def spec(self):
        return BhmSpec(self.mu_mean, self.mu_var, self.sigma2_prior.build())


class ExnexMethod(_MethodBase):
    model: Literal["exnex"]
    mu0_var: float = Field(5.0, gt=0)
    nex_means: Optional[List[float]] = None
    nex_var: float = Field(1.0 / 0.15, gt=0)
    dirichlet: List[float] = [1.0, 1.0]
    ex_weight: Optional[float] = Field(None, ge=0.0, le=1.0)
    s0_mean: float = 0.0
    s0_var: float = Field(0.01, gt=0)
    s0_lower: float = Field(0.001, gt=0)

    def spec(self):
        return ExnexSpec(self.mu0_var, None if self.nex_means is None else tuple(self.nex_means),
                         self.nex_var, tuple(self.dirichlet), self.ex_weight, self.s0_mean,
                         self.s0_var, self.s0_lower)


class LiuMethod(_MethodBase):
    model: Literal["liu"]
    g: Optional[List[float]] = None
    tau2: List[float] = [1.0 / 0.42, 1.0 / 0.57]
    sigma2_prior: PriorConfig = PriorConfig(dist="invgamma", a=0.1, b=0.1)
    weight: float = Field(0.5, gt=0.0, lt=1.0)

    def spec(self):
        return LiuSpec(None if self.g is None else tuple(self.g), tuple(self.tau2),
                       self.sigma2_prior.build(), self.weight)


class CbhmMethod(_MethodBase):
    model: Literal["cbhm"]
    measure: Literal["b", "h", "kl"] = "b"
    corr: Literal["exp", "sqexp"] = "exp"
    prior_set: Optional[int] = Field(None, ge=1, le=4)
    phi_shape: Optional[float] = Field(None, gt=0, description="gamma shape of the range prior")
    phi_prior: Optional[PriorConfig] = None
    sigma2_prior: Optional[PriorConfig] = None
    tau2_prior: Optional[PriorConfig] = None
    sigma0_prior: PriorConfig = PriorConfig(dist="invgamma", a=0.1, b=0.1)
    mu0: Optional[float] = None
    tie_break: bool = True

    @model_validator(mode="after")
    def _fill_priors(self):
        """Resolve the prior set (default 2) into explicit priors."""
        base = CBHM_PRIOR_SETS[self.prior_set or 2]
        if self.measure == "kl" and self.corr == "sqexp" and self.prior_set is None:
            defaults = {"phi_prior": PriorConfig(dist="uniform", a=0.189, b=0.5),
                        "sigma2_prior": PriorConfig(dist="uniform", a=2.0, b=3.0),
                        "tau2_prior": PriorConfig(dist="uniform", a=2.0, b=4.0)}
        else:
            phi_a = base["phi_prior"].shape
            if self.prior_set is None and self.measure == "h":
                phi_a = 1.5
            defaults = {
                "phi_prior": PriorConfig(dist="gamma", a=phi_a, b=1.0),
                "sigma2_prior": PriorConfig(dist="invgamma", a=base["sigma2_prior"].shape,
                                            b=base["sigma2_prior"].rate),
                "tau2_prior": PriorConfig(dist="invgamma", a=base["tau2_prior"].shape,
                                          b=base["tau2_prior"].rate)}
        for key, val in defaults.items():
            if getattr(self, key) is None:
                object.__setattr__(self, key, val)
        if self.phi_shape is not None:
            if self.phi_prior.dist != "gamma":
                raise ValueError("phi_shape needs a gamma range prior")
            object.__setattr__(self, "phi_prior",
                               PriorConfig(dist="gamma", a=self.phi_shape, b=self.phi_prior.b))
        return self

    def spec(self):
        return CbhmSpec(self.measure, self.corr, self.phi_prior.build(),
                        self.sigma2_prior.build(), self.tau2_prior.build(),
                        self.sigma0_prior.build(), self.mu0, self.tie_break)


MethodEntry = Annotated[Union[IndependentMethod, BhmMethod, ExnexMethod, LiuMethod, CbhmMethod],
                        Field(discriminator="model")]


class ScenarioSection(_Strict):
    name: str = "scenario"
    I: Optional[int] = Field(None, ge=1)
    truth: Optional[Union[float, List[float]]] = None
    q0: Union[float, List[float]] = 0.2
    q1: Union[float, List[float]] = 0.4

    @model_validator(mode="after")
    def _rates(self):
        try:
            q0, q1 = np.broadcast_arrays(np.asarray(self.q0, float), np.asarray(self.q1, float))
        except ValueError:
            return self        # length mismatch is reported for the whole document
        if np.any(q0 <= 0) or np.any(q1 >= 1) or np.any(q0 >= q1):
            raise ValueError("need 0 < q0 < q1 < 1 for every indication")
        return self


class DesignSection(_Strict):
    n1: Union[int, List[int]] = 14
    n: Union[int, List[int]] = 24
    Qf: float = Field(0.05, ge=0.0, lt=1.0)


class LiuSection(_Strict):
    gamma: float = Field(0.2, gt=0.0, lt=1.0)
    C: float = Field(0.5, gt=0.0, lt=1.0)


class McmcSection(_Strict):
    burn_in: int = Field(5000, ge=0)
    keep: int = Field(10000, ge=1)
    adapt_window: int = Field(50, ge=1)
    target_accept: float = Field(0.44, gt=0.0, lt=1.0)
    target_accept_block: float = Field(0.23, gt=0.0, lt=1.0)
    jitter_schedule: List[float] = [1e-10, 1e-8, 1e-6]

    def build(self, seed: int = 0) -> McmcConfig:
        return McmcConfig(self.burn_in, self.keep, self.adapt_window, self.target_accept,
                          self.target_accept_block, tuple(self.jitter_schedule), seed)


class SimulationSection(_Strict):
    replicates: int = Field(1000, ge=1)
    seed: int = Field(20190101, ge=0)
    threads: int = Field(1, ge=1)
    batch_size: int = Field(2000, ge=1)


class CalibrationSection(_Strict):
    alpha: float = Field(0.10, gt=0.0, le=1.0)
    replicates: int = Field(2000, ge=1)
    target: Literal["mean", "max"] = "mean"
    seed: Optional[int] = None
    file: Optional[str] = None


class OutputSection(_Strict):
    dir: str = "out"
    long_format: bool = False


class RunConfig(_Strict):
    scenario: ScenarioSection = ScenarioSection()
    design: DesignSection = DesignSection()
    liu: LiuSection = LiuSection()
    methods: List[MethodEntry] = Field(default_factory=list)
    mcmc: McmcSection = McmcSection()
    simulation: SimulationSection = SimulationSection()
    calibration: CalibrationSection = CalibrationSection()
    output: OutputSection = OutputSection()
    # shorthands
    method: Optional[str] = None
    I: Optional[int] = Field(None, ge=1)

    @model_validator(mode="before")
    @classmethod
    def _shorthand(cls, data):
        if not isinstance(data, dict):
            return data
        data = dict(data)
        if data.get("method") is not None:
            if data.get("methods"):
                raise ValueError("give either 'method' or 'methods', not both")
            data["methods"] = [{"model": data.pop("method")}]
        data.pop("method", None)
        if data.get("I") is not None:
            scn = dict(data.get("scenario") or {})
            if scn.get("I") not in (None, data["I"]):
                raise ValueError("'I' conflicts with scenario.I")
            scn["I"] = data.pop("I")
            data["scenario"] = scn
        data.pop("I", None)
        for m in data.get("methods") or []:
            if isinstance(m, dict) and isinstance(m.get("model"), str):
                m["model"] = m["model"].lower().replace("-", "_")
                if m["model"] in ("liu_bhmm", "bhmm"):
                    m["model"] = "liu"
        return data

    @model_validator(mode="after")
    def _check(self):
        scn = self.scenario
        lengths = {len(v) for v in (scn.truth, scn.q0, scn.q1, self.design.n1, self.design.n)
                   if isinstance(v, list)}
        if scn.I is not None:
            lengths.add(scn.I)
        if len(lengths) > 1:
            raise ValueError(f"per-indication vectors disagree on the number of indications "
                             f"{sorted(lengths)}")
        I = lengths.pop() if lengths else 6
        q0 = np.broadcast_to(np.asarray(scn.q0, dtype=float), (I,))
        q1 = np.broadcast_to(np.asarray(scn.q1, dtype=float), (I,))
        if np.any(q0 <= 0) or np.any(q1 >= 1) or np.any(q0 >= q1):
            raise ValueError("need 0 < q0 < q1 < 1 for every indication")
        truth = q0 if scn.truth is None else np.broadcast_to(np.asarray(scn.truth, float), (I,))
        if np.any(truth <= 0) or np.any(truth >= 1):
            raise ValueError("true response rates must lie in (0, 1)")
        n1 = np.broadcast_to(np.asarray(self.design.n1), (I,))
        n = np.broadcast_to(np.asarray(self.design.n), (I,))
        if np.any(n1 <= 0) or np.any(n1 > n):
            raise ValueError("need 0 < n1 <= n")
        object.__setattr__(self.scenario, "I", I)
        if scn.truth is None:
            object.__setattr__(self.scenario, "truth", [float(v) for v in q0])
        labels = [self.label(m) for m in self.methods]
        if len(set(labels)) != len(labels):
            raise ValueError(f"duplicate method labels {labels}; set 'label' to disambiguate")
        return self

    @staticmethod
    def label(m) -> str:
        if m.label:
            return m.label
        if isinstance(m, CbhmMethod):
            return f"CBHM-{m.measure.upper()}"
        return {"independent": "Independent", "bhm": "BHM", "exnex": "EXNEX",
                "liu": "Liu"}[m.model]

    @property
    def truth(self) -> tuple:
        return tuple(np.broadcast_to(np.asarray(self.scenario.truth, float),
                                     (self.scenario.I,)).tolist())

    def method_configs(self, replicates_override=None):
        return tuple(MethodConfig(self.label(m), m.spec(), m.Q,
                                  "liu" if m.model == "liu" else "two-stage")
                     for m in self.methods)

    def scenario_config(self, replicates: Optional[int] = None, seed: Optional[int] = None,
                        threads: Optional[int] = None, truth=None) -> ScenarioConfig:
        sim = self.simulation
        return ScenarioConfig(
            truth=tuple(truth) if truth is not None else self.truth,
            methods=self.method_configs(),
            q0=_tuple_or_scalar(self.scenario.q0), q1=_tuple_or_scalar(self.scenario.q1),
            n1=_tuple_or_scalar(self.design.n1), n=_tuple_or_scalar(self.design.n),
            Qf=self.design.Qf, gamma=self.liu.gamma, C=self.liu.C,
            replicates=replicates or sim.replicates,
            mcmc=self.mcmc.build(),
            seed=sim.seed if seed is None else seed,
            name=self.scenario.name,
            threads=threads or sim.threads,
            batch_size=sim.batch_size)


def _tuple_or_scalar(v):
    return tuple(v) if isinstance(v, list) else v


def _locate(node, loc):
    """Line (1-based) of the YAML node at pydantic error location ``loc``."""
    line = None
    for key in loc:
        if node is None:
            break
        line = node.start_mark.line + 1
        if isinstance(node, yaml.MappingNode):
            nxt = None
            for k, v in node.value:
                if k.value == str(key):
                    nxt = v
                    line = k.start_mark.line + 1
                    break
            node = nxt
        elif isinstance(node, yaml.SequenceNode) and isinstance(key, int):
            node = node.value[key] if key < len(node.value) else None
        else:
            # union tags (e.g. the method model name) are not YAML keys
            continue
    if node is not None:
        line = node.start_mark.line + 1
    return line


def _format_errors(exc: ValidationError, root, source: str) -> str:
    lines = []
    for err in exc.errors():
        loc = [k for k in err["loc"]]
        line = _locate(root, loc) if root is not None else None
        where = ".".join(str(k) for k in loc) or "<document>"
        prefix = f"{source}:{line}" if line else source
        lines.append(f"{prefix}: {where}: {err['msg']}")
    return "\n".join(lines)


def parse_config_text(text: str, source: str = "<config>") -> RunConfig:
    try:
        root = yaml.compose(text)
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{source}: invalid YAML: {exc}") from exc
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"{source}: the document must be a mapping")
    try:
        return RunConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(_format_errors(exc, root, source)) from None
    except ConfigError as exc:
        raise ConfigError(f"{source}: {exc}") from None


def parse_config(path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    return parse_config_text(path.read_text(), str(path))


def effective_config(cfg: RunConfig) -> dict:
    """The configuration with all defaults resolved, ready to be dumped as YAML."""
    data = cfg.model_dump(mode="json", exclude={"method", "I"})
    return data


def dump_config(cfg: RunConfig) -> str:
    return yaml.safe_dump(effective_config(cfg), sort_keys=False)


def load_cutoffs(path) -> dict:
    """Read ``label: Q`` pairs written by the calibrate-q command."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"calibration file not found: {path}")
    data = yaml.safe_load(path.read_text()) or {}
    cut = data.get("cutoffs", data)
    if not isinstance(cut, dict):
        raise ConfigError(f"{path}: expected a mapping of method labels to cutoffs")
    out = {}
    for k, v in cut.items():
        q = v["Q"] if isinstance(v, dict) else v
        if not isinstance(q, (int, float)) or not 0 <= q <= 1:
            raise ConfigError(f"{path}: cutoff for {k!r} must be a number in [0, 1]")
        out[str(k)] = float(q)
    return out
