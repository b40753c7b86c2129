"""
Run configuration.

A run is described by a TOML document with one table per section
(experiment, grid, physics, recipe, stepping, quadrature, tolerances,
weak_strong, greens, output). Values are layered, later layers winning:

    section defaults (settings.VISCOLAB_*) < preset < config file
        < VISCOLAB_<SECTION>__<KEY> environment variables < command-line flags

and the merged sections are validated by the forms in lab.forms.
"""

import logging
import os
import tomllib
from dataclasses import dataclass, field
from pathlib import Path

from django.conf import settings

from lab.exceptions import ConfigError
from lab.forms import SECTION_FORMS
from lab.initial_data import DataRecipe, RecipeKind
from lab.persistence import config_hash
from lab.spectral import Grid

logger = logging.getLogger(__name__)

PRESET_DIR = Path(__file__).resolve().parent / "presets"
ENV_PREFIX = "VISCOLAB_"
RECIPE_KEYS = ("kind", "delta", "seed", "modes", "c0", "zeta", "shape", "flow_time", "ode_tol", "strain_fraction")


def available_presets():
    return sorted(path.stem for path in PRESET_DIR.glob("*.toml"))


def read_toml(path):
    path = Path(path)
    try:
        with open(path, "rb") as handle:
            return tomllib.load(handle)
    except FileNotFoundError:
        raise ConfigError(f"config file {path} does not exist")
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid TOML: {exc}")


def read_preset(name):
    path = PRESET_DIR / f"{name}.toml"
    if not path.exists():
        raise ConfigError(f"unknown preset '{name}', available: {', '.join(available_presets())}")
    return read_toml(path)


def env_overrides(environ=None):
    """Collect VISCOLAB_<SECTION>__<KEY> variables into {section: {key: value}}."""
    environ = os.environ if environ is None else environ
    overrides = {}
    for name, value in environ.items():
        if not name.startswith(ENV_PREFIX) or "__" not in name:
            continue
        section, _, key = name[len(ENV_PREFIX) :].partition("__")
        section = section.lower()
        if section not in SECTION_FORMS:
            continue
        names = {field.lower(): field for field in SECTION_FORMS[section].base_fields}
        overrides.setdefault(section, {})[names.get(key.lower(), key.lower())] = value
    return overrides


def merge(base, *layers):
    merged = {section: dict(values) for section, values in base.items()}
    for layer in layers:
        for section, values in (layer or {}).items():
            if not isinstance(values, dict):
                raise ConfigError(f"'{section}' must be a table", {section: ["not a table"]})
            merged.setdefault(section, {}).update(values)
    return merged


def validate(data):
    """Validate every section and return the cleaned {section: values} mapping."""
    unknown_sections = set(data) - set(SECTION_FORMS)
    if unknown_sections:
        raise ConfigError(
            f"unknown config sections: {', '.join(sorted(unknown_sections))}",
            {name: ["unknown section"] for name in unknown_sections},
        )
    cleaned, errors = {}, {}
    for name, form_class in SECTION_FORMS.items():
        values = {**form_class.defaults(), **data.get(name, {})}
        unknown = set(values) - set(form_class.base_fields)
        if unknown:
            errors[name] = [f"unknown key '{key}'" for key in sorted(unknown)]
            continue
        form = form_class(data=values)
        if form.is_valid():
            cleaned[name] = form.cleaned_data
        else:
            errors[name] = [f"{key}: {' '.join(messages)}" for key, messages in form.errors.items()]
    if errors:
        details = "; ".join(f"[{name}] {', '.join(messages)}" for name, messages in errors.items())
        raise ConfigError(f"invalid configuration: {details}", errors)
    return cleaned


@dataclass
class RunConfig:
    """Validated configuration of one run. Sections are plain dicts of cleaned values."""

    sections: dict = field(default_factory=dict)

    def __getattr__(self, name):
        sections = self.__dict__.get("sections", {})
        if name in sections:
            return sections[name]
        raise AttributeError(name)

    @property
    def kind(self):
        return self.sections["experiment"]["kind"]

    @property
    def seed(self):
        return self.sections["recipe"]["seed"]

    def make_grid(self):
        grid = self.sections["grid"]
        return Grid(grid["dim"], grid["N"], grid["L"])

    def data_recipe(self):
        recipe = self.sections["recipe"]
        extra = {key: recipe[key] for key in ("interp_tol", "xi_floor", "floor_slack")}
        return DataRecipe(**{key: recipe[key] for key in RECIPE_KEYS}, extra=extra)

    def output_directory(self, override=None):
        if override:
            return Path(override)
        if self.sections["output"]["directory"]:
            return Path(self.sections["output"]["directory"])
        root = Path(getattr(settings, "VISCOLAB_OUTPUT_ROOT", "runs"))
        return root / f"{self.kind}-{self.config_hash()[:12]}"

    def config_hash(self):
        return config_hash(self.to_dict())

    def to_dict(self):
        return {section: dict(values) for section, values in self.sections.items()}

    @classmethod
    def from_dict(cls, data):
        return cls(validate(data))


def load_config(path=None, preset=None, kind=None, overrides=None, environ=None):
    """
    Build a RunConfig from a preset and/or a file plus environment and explicit
    overrides ({section: {key: value}}). `kind` is the experiment the caller runs;
    a config naming a different experiment is rejected.
    """
    layers = []
    if preset:
        layers.append(read_preset(preset))
    if path:
        layers.append(read_toml(path))
    layers.append(env_overrides(environ))
    layers.append(overrides)
    data = merge({}, *layers)

    if kind is not None:
        declared = data.get("experiment", {}).get("kind")
        if declared and declared != kind:
            raise ConfigError(f"config describes a '{declared}' experiment, not '{kind}'")
        data.setdefault("experiment", {})["kind"] = kind
    config = RunConfig.from_dict(data)
    if config.kind == "linear_decay" and config.recipe["kind"] != RecipeKind.SPECTRAL_PROFILE:
        raise ConfigError("linear decay runs need a spectral_profile recipe")
    logger.debug(f"loaded {config.kind} config, hash {config.config_hash()[:12]}")
    return config
