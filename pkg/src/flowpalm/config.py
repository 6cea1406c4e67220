"""Pipeline configuration: nested dataclasses <-> JSON, unknown keys rejected."""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

from .diffusion import SamplerConfig, make_linear_schedule
from .flow import FlowEstimatorParams
from .noise import TransportConfig
from .synthetic import SyntheticDeformationParams

CONFIG_ENV = "FLOWPALM_CONFIG"
RESOLUTION = 256


class ConfigError(ValueError):
    pass


@dataclass
class CorpusSection:
    n_identities: int = 10
    pairs_per_identity: int = 4
    max_displacement: float = 4.0
    smoothness: float = 32.0
    corrupt_fraction: float = 0.0
    texture_weight: float = 0.5

    def deformation(self) -> SyntheticDeformationParams:
        return SyntheticDeformationParams(self.max_displacement, self.smoothness)


@dataclass
class ThresholdSection:
    delta: float = 5.0
    tau_d: float = 0.01
    tau_c: float = 0.4


@dataclass
class LibrarySection:
    flow_source: str = "estimate"  # "estimate" or "truth" (ingest the corpus .flo files)


@dataclass
class SamplerSection:
    T: int = 250
    t_star_fraction: float = 0.5
    tau_u: float = 0.25
    eta: float = 0.0
    step_stride: int = 1
    rule: str = "posterior"
    beta_start: float = 1e-4
    beta_end: float = 0.02
    subpixel_factor: int = 4
    share_identity_noise: bool = True

    def sampler(self) -> SamplerConfig:
        return SamplerConfig(self.T, self.t_star_fraction, self.tau_u, self.eta, self.step_stride, self.rule)

    def schedule(self):
        return make_linear_schedule(self.T, self.beta_start, self.beta_end)

    def transport(self) -> TransportConfig:
        return TransportConfig(self.subpixel_factor)


@dataclass
class DenoiserSection:
    kind: str = "gaussian"  # "gaussian" or "external"
    data_std: float = 0.3
    smooth_sigma: float = 2.0
    uncond_mean: float = 0.0
    command: list = field(default_factory=list)


@dataclass
class SamplingSection:
    identities: int = 10
    samples_per_identity: int = 4


@dataclass
class EvaluateSection:
    reduce_dim: int = 32


@dataclass
class PipelineConfig:
    resolution: int = RESOLUTION
    seed: int = 0
    out: str = "flowpalm_out"
    workers: int = 1
    corpus: CorpusSection = field(default_factory=CorpusSection)
    estimator: FlowEstimatorParams = field(default_factory=FlowEstimatorParams)
    thresholds: ThresholdSection = field(default_factory=ThresholdSection)
    library: LibrarySection = field(default_factory=LibrarySection)
    sampler: SamplerSection = field(default_factory=SamplerSection)
    denoiser: DenoiserSection = field(default_factory=DenoiserSection)
    sampling: SamplingSection = field(default_factory=SamplingSection)
    evaluate: EvaluateSection = field(default_factory=EvaluateSection)

    def validate(self) -> "PipelineConfig":
        """Re-run every module-level invariant; raises ConfigError."""
        try:
            if self.resolution != RESOLUTION:
                raise ValueError(f"resolution is fixed at {RESOLUTION}")
            if self.workers < 1:
                raise ValueError("workers must be >= 1")
            c = self.corpus
            if c.n_identities < 1 or c.pairs_per_identity < 1:
                raise ValueError("corpus needs at least one identity and one pair")
            if not 0 <= c.corrupt_fraction <= 1 or not 0 <= c.texture_weight <= 1:
                raise ValueError("corrupt_fraction and texture_weight must lie in [0, 1]")
            c.deformation()
            FlowEstimatorParams(**dataclasses.asdict(self.estimator))
            th = self.thresholds
            if not th.delta > 0 or not 0 < th.tau_d <= 1 or not -1 < th.tau_c < 1:
                raise ValueError("thresholds need delta > 0, tau_d in (0, 1], tau_c in (-1, 1)")
            if self.library.flow_source not in ("estimate", "truth"):
                raise ValueError("library.flow_source must be 'estimate' or 'truth'")
            self.sampler.sampler()
            self.sampler.schedule()
            self.sampler.transport()
            d = self.denoiser
            if d.kind not in ("gaussian", "external"):
                raise ValueError("denoiser.kind must be 'gaussian' or 'external'")
            if d.kind == "gaussian" and not d.data_std > 0:
                raise ValueError("denoiser.data_std must be positive")
            if d.kind == "external" and not d.command:
                raise ValueError("an external denoiser needs a command")
            if self.sampling.identities < 1 or self.sampling.samples_per_identity < 1:
                raise ValueError("sampling counts must be >= 1")
            if self.evaluate.reduce_dim < 1:
                raise ValueError("evaluate.reduce_dim must be >= 1")
        except (ValueError, TypeError) as exc:
            raise ConfigError(str(exc)) from None
        return self


def _build(cls, data, path: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{path or 'config'} must be a JSON object")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(fields))
    if unknown:
        raise ConfigError(f"unknown key(s) in {path or 'config'}: {', '.join(unknown)}")
    kwargs = {}
    for name, value in data.items():
        sub = _section_type(cls, name)
        kwargs[name] = _build(sub, value, f"{path}.{name}".lstrip(".")) if sub else value
    try:
        return cls(**kwargs)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"{path or 'config'}: {exc}") from None


def _section_type(cls, name):
    default = next(f for f in dataclasses.fields(cls) if f.name == name).default_factory
    if default is not dataclasses.MISSING and dataclasses.is_dataclass(default):
        return default
    return None


def from_dict(data: dict) -> PipelineConfig:
    return _build(PipelineConfig, data, "").validate()


def to_dict(config: PipelineConfig) -> dict:
    return dataclasses.asdict(config)


def load_config(path=None) -> PipelineConfig:
    """Read ``path`` (or ``$FLOWPALM_CONFIG``); defaults when neither is given."""
    path = path or os.environ.get(CONFIG_ENV)
    if not path:
        return PipelineConfig().validate()
    try:
        data = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file {path} not found") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from None
    return from_dict(data)


# settings that affect where and how fast a run happens, never its bytes
RUNTIME_KEYS = ("out", "workers")


def dump_config(config: PipelineConfig, path, runtime: bool = True) -> None:
    data = to_dict(config)
    if not runtime:
        for key in RUNTIME_KEYS:
            data.pop(key)
    Path(path).write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")


def apply_override(config: PipelineConfig, assignment: str) -> PipelineConfig:
    """Apply ``section.key=value`` (value parsed as JSON, else kept as a string)."""
    key, sep, raw = assignment.partition("=")
    if not sep:
        raise ConfigError(f"override {assignment!r} is not of the form key=value")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    data = to_dict(config)
    node = data
    *parents, leaf = key.split(".")
    for p in parents:
        if not isinstance(node.get(p), dict):
            raise ConfigError(f"unknown config section {p!r} in {key!r}")
        node = node[p]
    if leaf not in node:
        raise ConfigError(f"unknown config key {key!r}")
    node[leaf] = value
    return from_dict(data)
