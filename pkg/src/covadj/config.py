"""Scenario configuration files and the shipped presets."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import jsonschema
import yaml

from .dgm import CovariateSpec, DgmSpec, TruncNormSpec
from .errors import ConfigError
from .inference.fit import SamplerConfig
from .inference.models import ModelSpec, model_from_formula
from .marginalize import ESTIMANDS, NULL_VALUE
from .trial import DesignSpec, InterimSchedule

_TRUNC_KEYS = ("min", "q1", "q2", "q3", "max", "mu", "sigma", "xi", "tau", "mean_tol", "sd_tol")


@dataclass(frozen=True)
class CalibrationSettings:
    n_datasets: int = 5000
    n_per: int = 5000
    horizon: float = 75.0


@dataclass(frozen=True)
class ScenarioConfig:
    id: str
    dgm: DgmSpec
    effects: tuple[tuple[float, float], ...]
    models: tuple[ModelSpec, ...]
    design: DesignSpec
    replicates: int = 1000
    seed: int = 0
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    calibration: CalibrationSettings = field(default_factory=CalibrationSettings)
    source_bytes: bytes = field(default=b"", repr=False)

    @property
    def endpoint(self) -> str:
        return self.dgm.endpoint

    @property
    def n_max(self) -> int:
        return self.design.n_max

    @property
    def estimand(self) -> str:
        return ESTIMANDS[self.endpoint]

    @property
    def gammas(self) -> tuple[float, ...]:
        return tuple(g for g, _ in self.effects)

    @property
    def config_hash(self) -> str:
        return hashlib.sha256(self.source_bytes).hexdigest()


# ---------------------------------------------------------------------------
# loading


def preset_names() -> list[str]:
    root = resources.files("covadj") / "presets"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".yaml"))


def _schema() -> dict:
    return json.loads((resources.files("covadj") / "schema.json").read_text())


def _line_of(node, path) -> int | None:
    """1-based source line of the YAML node at ``path`` (keys and list indices)."""
    line = node.start_mark.line + 1
    for key in path:
        if isinstance(node, yaml.MappingNode):
            nxt = None
            for k, v in node.value:
                if k.value == key:
                    nxt = (k, v)
                    break
            if nxt is None:
                return line
            line = nxt[0].start_mark.line + 1
            node = nxt[1]
        elif isinstance(node, yaml.SequenceNode) and isinstance(key, int) and key < len(node.value):
            node = node.value[key]
            line = node.start_mark.line + 1
        else:
            return line
    return line


def _error_location(err: jsonschema.ValidationError, root) -> tuple[str, int | None]:
    path = list(err.absolute_path)
    if err.validator == "additionalProperties" and isinstance(err.instance, dict):
        allowed = set(err.schema.get("properties", {}))
        extra = [k for k in err.instance if k not in allowed]
        if extra:
            path = path + [extra[0]]
    key = ".".join(str(p) for p in path) or "<root>"
    return key, _line_of(root, path) if root is not None else None


def load_text(text: str, source: str = "<string>") -> dict:
    try:
        root = yaml.compose(text)
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{source}: invalid YAML: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"{source}: top level must be a mapping")
    validator = jsonschema.Draft202012Validator(_schema())
    errors = sorted(validator.iter_errors(raw), key=lambda e: list(map(str, e.absolute_path)))
    if errors:
        err = min(errors, key=lambda e: len(list(e.absolute_path)))
        key, line = _error_location(err, root)
        where = f" (line {line})" if line else ""
        raise ConfigError(f"{source}: key '{key}'{where}: {err.message}")
    return raw


def resolve(path_or_preset: str | Path) -> tuple[str, bytes]:
    p = Path(path_or_preset)
    if p.exists():
        return str(p), p.read_bytes()
    name = str(path_or_preset)
    res = resources.files("covadj") / "presets" / f"{name}.yaml"
    if res.is_file():
        return f"preset:{name}", res.read_bytes()
    raise ConfigError(f"no config file or preset named {name!r}; presets: {preset_names()}")


def parse_config(path_or_preset: str | Path) -> ScenarioConfig:
    """Load, validate and build a scenario from a YAML file or a preset id."""
    source, data = resolve(path_or_preset)
    raw = load_text(data.decode("utf-8"), source)
    try:
        return build(raw, data)
    except ConfigError as exc:
        raise ConfigError(f"{source}: {exc}") from exc
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{source}: {exc}") from exc


def _covariate(c: dict) -> CovariateSpec:
    trunc = None
    if c["dist"] == "truncnorm":
        missing = [k for k in ("min", "q1", "q3", "max", "mu", "sigma") if k not in c]
        if missing:
            raise ConfigError(f"covariate {c['name']}: truncnorm needs {missing}")
        trunc = TruncNormSpec(**{k: c[k] for k in _TRUNC_KEYS if k in c})
    elif any(k in c for k in _TRUNC_KEYS):
        raise ConfigError(f"covariate {c['name']}: truncation keys given for dist {c['dist']}")
    if c["dist"] == "bernoulli" and "p" not in c:
        raise ConfigError(f"covariate {c['name']}: bernoulli needs p")
    return CovariateSpec(c["name"], c["dist"], p=c.get("p"), trunc=trunc,
                         role=c.get("role", "prognostic"))


def build(raw: dict, source_bytes: bytes = b"") -> ScenarioConfig:
    endpoint = raw["endpoint"]
    n_max = raw["n_max"]
    d = raw["dgm"]
    dgm = DgmSpec(endpoint=endpoint,
                  covariates=tuple(_covariate(c) for c in d["covariates"]),
                  terms=tuple(d["terms"]), beta=tuple(float(b) for b in d["beta"]),
                  beta0=float(d.get("beta0", 0.0)), p_ctr=d.get("p_ctr"), lam=d.get("lam"),
                  sigma=d.get("sigma"), n_max=n_max, oversample=d.get("oversample", 250))
    models = []
    for m in raw["models"]:
        if isinstance(m, str):
            models.append(model_from_formula(m, dgm))
        else:
            strength = m.get("strength", "default")
            center = tuple((t, float(b)) for t, b in zip(dgm.terms, dgm.beta))
            models.append(ModelSpec(m["name"], endpoint, tuple(m["terms"]), strength,
                                    center if strength != "default" else ()))
    names = [m.name for m in models]
    if len(set(names)) != len(names):
        raise ConfigError("duplicate model names")

    des = raw["design"]
    design = DesignSpec(schedule=InterimSchedule(des["schedule"]["mode"], des["schedule"]["step"]),
                        n_max=n_max, u=des.get("u", 0.99),
                        gamma0=NULL_VALUE[ESTIMANDS[endpoint]],
                        direction=des.get("direction", "less"),
                        horizon=des.get("horizon", 75.0), enroll_end=des.get("enroll_end", 50.0))
    if endpoint == "tte" and design.schedule.mode != "per_events":
        raise ConfigError("time-to-event scenarios need schedule mode per_events")
    if endpoint == "continuous" and design.schedule.mode != "per_enrollment":
        raise ConfigError("continuous scenarios need schedule mode per_enrollment")
    effects = tuple((float(e["gamma"]), float(e["phi"])) for e in raw["effects"])
    return ScenarioConfig(
        id=raw["id"], dgm=dgm, effects=effects, models=tuple(models), design=design,
        replicates=raw.get("replicates", 1000), seed=raw.get("seed", 0),
        sampler=SamplerConfig(**raw.get("sampler", {})),
        calibration=CalibrationSettings(**raw.get("calibration", {})),
        source_bytes=source_bytes)
