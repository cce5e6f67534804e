"""Experiment configuration as flat ``section.key = value`` text.

Rendering always writes every key, so a saved config fully describes a run.
Floats are written with ``repr`` and parse back to the identical value.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from .metrics import Metric, huber_c
from .schedules import Curriculum, NoiseIndexSampler, WeightingFn
from .synthetic import SyntheticDistribution, delta, gaussian, gaussian_mixture


class ConfigError(ValueError):
    pass


@dataclass
class DataSection:
    kind: str = "gaussian_mixture"
    weights: tuple[float, ...] = (0.25, 0.25, 0.25, 0.25)
    means: tuple[tuple[float, ...], ...] = ((1.0, 1.0), (-1.0, 1.0), (-1.0, -1.0), (1.0, -1.0))
    stddevs: tuple[float, ...] = (0.1, 0.1, 0.1, 0.1)


@dataclass
class GridSection:
    sigma_min: float = 0.002
    sigma_max: float = 80.0
    rho: float = 7.0
    sigma_data: float = 0.5


@dataclass
class CurriculumSection:
    shape: str = "exponential"
    s0: int = 10
    s1: int = 1280


@dataclass
class SamplerSection:
    kind: str = "lognormal"
    p_mean: float = -1.1
    p_std: float = 2.0


@dataclass
class LossSection:
    objective: str = "ct"
    metric: str = "pseudo_huber"
    c: float | None = None
    weighting: str = "inverse_gap"


@dataclass
class TeacherSection:
    rule: str = "zero_ema"
    mu0: float = 0.9


@dataclass
class NetSection:
    hidden: tuple[int, ...] = (128, 128, 128)
    activation: str = "silu"
    dropout: float = 0.0
    embedding: str = "fourier"
    embedding_dim: int = 32
    fourier_scale: float = 0.02


@dataclass
class TrainSection:
    steps: int = 20000
    batch_size: int = 256
    lr: float = 1e-4
    student_ema: float = 0.9999
    seed: int = 0


@dataclass
class EvalSection:
    samples: int = 10000
    projections: int = 128
    use_ema: bool = True
    two_step_sigma: float = 0.821


@dataclass
class OutputSection:
    dir: str = "runs/default"


@dataclass
class ExperimentConfig:
    data: DataSection = field(default_factory=DataSection)
    grid: GridSection = field(default_factory=GridSection)
    curriculum: CurriculumSection = field(default_factory=CurriculumSection)
    sampler: SamplerSection = field(default_factory=SamplerSection)
    loss: LossSection = field(default_factory=LossSection)
    teacher: TeacherSection = field(default_factory=TeacherSection)
    net: NetSection = field(default_factory=NetSection)
    train: TrainSection = field(default_factory=TrainSection)
    eval: EvalSection = field(default_factory=EvalSection)
    output: OutputSection = field(default_factory=OutputSection)

    def __post_init__(self):
        self.validate()

    def validate(self):
        try:
            self.distribution()
            self.curriculum_obj()
            self.sampler_obj()
            self.weighting_obj()
            self.metric_obj()
        except (ValueError, TypeError) as exc:
            raise ConfigError(str(exc)) from exc
        if self.loss.objective not in ("ct", "cm_exact_score"):
            raise ConfigError(f"unknown objective {self.loss.objective!r}")
        if self.teacher.rule not in ("zero_ema", "ema"):
            raise ConfigError(f"unknown teacher rule {self.teacher.rule!r}")
        if self.teacher.rule == "ema" and not 0.0 <= self.teacher.mu0 < 1.0:
            raise ConfigError("teacher.mu0 must be in [0, 1)")
        if not 0.0 <= self.train.student_ema < 1.0:
            raise ConfigError("train.student_ema must be in [0, 1)")
        if self.train.steps < 0 or self.train.batch_size < 1:
            raise ConfigError("train.steps must be >= 0 and train.batch_size >= 1")
        if not 0 < self.grid.sigma_min < self.grid.sigma_max:
            raise ConfigError("need 0 < grid.sigma_min < grid.sigma_max")

    @property
    def dim(self):
        return len(self.data.means[0])

    def distribution(self) -> SyntheticDistribution:
        d = self.data
        if d.kind == "delta":
            return delta(d.means[0])
        if d.kind == "gaussian":
            return gaussian(d.means[0], d.stddevs[0])
        if d.kind == "gaussian_mixture":
            return gaussian_mixture(d.weights, d.means, d.stddevs)
        raise ConfigError(f"unknown data.kind {d.kind!r}")

    def curriculum_obj(self, steps=None) -> Curriculum:
        c = self.curriculum
        return Curriculum(c.shape, c.s0, c.s1, max(1, self.train.steps if steps is None else steps))

    def sampler_obj(self):
        s = self.sampler
        return NoiseIndexSampler(s.kind, s.p_mean, s.p_std)

    def weighting_obj(self):
        return WeightingFn(self.loss.weighting)

    def metric_obj(self):
        c = huber_c(self.dim) if self.loss.c is None else self.loss.c
        return Metric(self.loss.metric, c)


SECTIONS = [f.name for f in dataclasses.fields(ExperimentConfig)]


def _fmt_scalar(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    return repr(v) if isinstance(v, float) else str(v)


def _render_value(v):
    if v is None:
        return "auto"
    if isinstance(v, tuple):
        if v and isinstance(v[0], tuple):
            return "; ".join(", ".join(_fmt_scalar(x) for x in row) for row in v)
        return ", ".join(_fmt_scalar(x) for x in v)
    return _fmt_scalar(v)


def _parse_bool(text):
    low = text.lower()
    if low in ("true", "yes", "1"):
        return True
    if low in ("false", "no", "0"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_value(type_str, text):
    text = text.strip()
    if type_str == "float | None":
        return None if text == "auto" else float(text)
    if type_str == "tuple[tuple[float, ...], ...]":
        return tuple(tuple(float(x) for x in row.split(",")) for row in text.split(";"))
    if type_str.startswith("tuple["):
        elem = int if "int" in type_str else float
        return tuple(elem(x) for x in text.split(","))
    return {"int": int, "float": float, "str": str, "bool": _parse_bool}[type_str](text)


def render(cfg: ExperimentConfig) -> str:
    lines = []
    for section in SECTIONS:
        sec = getattr(cfg, section)
        for f in dataclasses.fields(sec):
            lines.append(f"{section}.{f.name} = {_render_value(getattr(sec, f.name))}")
        lines.append("")
    return "\n".join(lines)


def parse(text: str, base: ExperimentConfig | None = None) -> ExperimentConfig:
    """Parse config text; keys not given keep the value from ``base`` (defaults if None)."""
    sections = {name: dataclasses.asdict(getattr(base or ExperimentConfig(), name)) for name in SECTIONS}
    types = {name: {f.name: f.type for f in dataclasses.fields(_section_type(name))} for name in SECTIONS}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'section.key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        section, _, name = key.partition(".")
        if section not in types or name not in types[section]:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        try:
            sections[section][name] = _parse_value(types[section][name], value)
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key}: {exc}") from exc
    built = {}
    for name in SECTIONS:
        values = sections[name]
        for k, v in values.items():
            if isinstance(v, list):
                values[k] = tuple(tuple(x) if isinstance(x, list) else x for x in v)
        built[name] = _section_type(name)(**values)
    return ExperimentConfig(**built)


def _section_type(name):
    return {f.name: f.default_factory for f in dataclasses.fields(ExperimentConfig)}[name]


def load(path) -> ExperimentConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    return parse(path.read_text())


def save(cfg: ExperimentConfig, path):
    Path(path).write_text(render(cfg))
