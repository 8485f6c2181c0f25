"""Run configuration and provenance manifests.

A config is one JSON document::

    {
      "seed": 1,
      "params": {... CascadeParams fields ...},
      "tomography": {"window_width": 100, "window_step": 100, "repetitions": 1000,
                     "background_model": "none", "histogram_source": "expected", "workers": null},
      "analysis": {"peak_width": 200, "lifetime_series": "all", "lifetime_fit_start": null},
      "output_dir": "out"
    }

Times are in ps, rates in 1/s, frequencies in MHz.
"""

import dataclasses
import hashlib
import json
import time
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from . import __version__
from .cascade import CascadeParams, accidental_background
from .errors import ParameterError, ValidationError
from .io import dump_json, file_digest, load_json

BACKGROUND_MODELS = ("none", "accidental", "pre-pulse")
HISTOGRAM_SOURCES = ("expected", "sampled")
LIFETIME_SERIES = ("hh_vv", "all")


class ConfigError(ValidationError):
    """Config document has a missing, unknown or out-of-range field."""


@dataclass(frozen=True)
class TomographySettings:
    window_width: float = 100.0
    window_step: float = 100.0
    repetitions: int = 1000
    background_model: str = "none"
    histogram_source: str = "expected"
    workers: int = None

    def __post_init__(self):
        if not self.window_width > 0:
            raise ConfigError("tomography.window_width: must be > 0")
        if not self.window_step > 0:
            raise ConfigError("tomography.window_step: must be > 0")
        if int(self.repetitions) != self.repetitions or self.repetitions < 0 or self.repetitions == 1:
            raise ConfigError("tomography.repetitions: must be 0 (no errors) or an integer >= 2")
        if self.background_model not in BACKGROUND_MODELS:
            raise ConfigError(f"tomography.background_model: must be one of {BACKGROUND_MODELS}")
        if self.histogram_source not in HISTOGRAM_SOURCES:
            raise ConfigError(f"tomography.histogram_source: must be one of {HISTOGRAM_SOURCES}")
        if self.workers is not None and (int(self.workers) != self.workers or self.workers < 1):
            raise ConfigError("tomography.workers: must be a positive integer or null")


@dataclass(frozen=True)
class AnalysisSettings:
    peak_width: float = 200.0
    lifetime_series: str = "all"
    lifetime_fit_start: float = None

    def __post_init__(self):
        if not self.peak_width > 0:
            raise ConfigError("analysis.peak_width: must be > 0")
        if self.lifetime_series not in LIFETIME_SERIES:
            raise ConfigError(f"analysis.lifetime_series: must be one of {LIFETIME_SERIES}")


@dataclass(frozen=True)
class RunConfig:
    params: CascadeParams
    seed: int
    tomography: TomographySettings = field(default_factory=TomographySettings)
    analysis: AnalysisSettings = field(default_factory=AnalysisSettings)
    output_dir: str = "out"

    def __post_init__(self):
        if isinstance(self.seed, bool) or not isinstance(self.seed, int) or self.seed < 0:
            raise ConfigError("seed: must be a non-negative integer")

    @classmethod
    def from_dict(cls, doc):
        if not isinstance(doc, dict):
            raise ConfigError("config must be a JSON object")
        known = {"seed", "params", "tomography", "analysis", "output_dir"}
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown top-level field(s): {', '.join(sorted(unknown))}")
        if "seed" not in doc:
            raise ConfigError("seed: required (no nondeterministic default)")
        try:
            params = CascadeParams.from_dict(doc.get("params", {}))
        except (ParameterError, TypeError) as exc:
            raise ConfigError(f"params: {exc}") from None
        tomo = _section(TomographySettings, doc.get("tomography", {}), "tomography")
        ana = _section(AnalysisSettings, doc.get("analysis", {}), "analysis")
        return cls(params, doc["seed"], tomo, ana, str(doc.get("output_dir", "out")))

    def to_dict(self):
        return {
            "seed": self.seed,
            "params": self.params.to_dict(),
            "tomography": dataclasses.asdict(self.tomography),
            "analysis": dataclasses.asdict(self.analysis),
            "output_dir": self.output_dir,
        }

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    def with_params(self, **overrides):
        known = {f.name for f in dataclasses.fields(CascadeParams)}
        unknown = set(overrides) - known
        if unknown:
            raise ConfigError(f"unknown override key(s): {', '.join(sorted(unknown))}")
        try:
            return self.replace(params=self.params.replace(**overrides))
        except ParameterError as exc:
            raise ConfigError(f"params: {exc}") from None

    def settings(self):
        """Flat settings dict consumed by :func:`qdcascade.analysis.analyse_histograms`."""
        return {
            "window_width": self.tomography.window_width,
            "window_step": self.tomography.window_step,
            "repetitions": self.tomography.repetitions,
            "seed": self.seed,
            "workers": self.tomography.workers,
            "peak_width": self.analysis.peak_width,
            "lifetime_series": self.analysis.lifetime_series,
            "lifetime_fit_start": self.analysis.lifetime_fit_start,
        }

    def config_hash(self):
        return config_hash(self.to_dict())


def _section(cls, data, name):
    if not isinstance(data, dict):
        raise ConfigError(f"{name}: must be an object")
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"{name}: unknown field(s) {', '.join(sorted(unknown))}")
    try:
        return cls(**data)
    except TypeError as exc:
        raise ConfigError(f"{name}: {exc}") from None


def config_hash(doc):
    """SHA-256 of the canonical JSON form; independent of key order."""
    text = json.dumps(doc, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def load_config(path):
    try:
        doc = load_json(path)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    return RunConfig.from_dict(doc)


def preset_names():
    return sorted(p.name[:-5] for p in resources.files("qdcascade.presets").iterdir() if p.name.endswith(".json"))


def load_preset(name):
    """Bundled configs: ``apd``, ``snspd``, ``snspd_g2_0`` and the ``detector_sweep`` variants."""
    res = resources.files("qdcascade.presets").joinpath(f"{name}.json")
    if not res.is_file():
        raise ConfigError(f"unknown preset {name!r}; have {preset_names()}")
    return json.loads(res.read_text(encoding="utf-8"))


def background_for(config, hist):
    """Flat per-bin background used in the likelihood, per the configured model."""
    model = config.tomography.background_model
    if model == "none":
        return 0.0
    if model == "accidental":
        return accidental_background(hist.params if hist.params is not None else config.params)
    from .analysis import pre_pulse_background

    return pre_pulse_background(hist, config.params.irf_fwhm)


class Manifest:
    """Provenance record for one CLI command."""

    def __init__(self, command, config):
        self.command = command
        self.config = config
        self.inputs = []
        self.outputs = []
        self.notes = {}
        self._t0 = time.perf_counter()

    def add_input(self, path):
        self.inputs.append(Path(path))

    def add_outputs(self, paths):
        self.outputs.extend(Path(p) for p in paths)

    def document(self, root):
        root = Path(root)

        def rel(p):
            try:
                return str(p.resolve().relative_to(root.resolve()))
            except ValueError:
                return str(p)

        return {
            "command": self.command,
            "artifact_version": __version__,
            "config_hash": self.config.config_hash(),
            "config": self.config.to_dict(),
            "inputs": [{"path": str(p), "sha256": file_digest(p)} for p in self.inputs],
            "outputs": [{"path": rel(p), "sha256": file_digest(p)} for p in self.outputs],
            "notes": self.notes,
            "wall_clock_seconds": time.perf_counter() - self._t0,
        }

    def write(self, root):
        path = Path(root) / f"manifest_{self.command}.json"
        return dump_json(self.document(root), path)
