"""
Run descriptions: a JSON object {"command", "model", "parameters", "checks"}
parsed into RunConfig. Unknown fields are rejected at every level.
"""
import os
import json
import logging

from typing import Dict, List, Optional

from cobound.errors import ConfigError, DomainError
from cobound.process_models import (
    CoordinateLaw,
    ExactProcessModel,
    FunctionalSchedule,
    LinearFunctional,
    SamplerModel,
    StationaryShiftModel,
)

logger = logging.getLogger("config")

MONTE_CARLO_COMMANDS = ("deviations", "limits", "tightness")
COMMANDS = ("decompose", "verify", "stationary", "orlicz") + MONTE_CARLO_COMMANDS

TOP_LEVEL = ("command", "model", "parameters", "checks")
MODEL_FIELDS = ("law", "window", "functionals", "seed")
LAW_FIELDS = ("alphabet", "probabilities", "kind", "transition", "centered")
FUNCTIONAL_FIELDS = ("i", "coeffs")

COMMON_PARAMETERS = ("out",)

PARAMETERS = {
    "decompose": ("k_range", "I_max"),
    "verify": ("k_range", "I_max", "j_max"),
    "stationary": ("I_max", "n_max", "p", "i_max"),
    "orlicz": ("K_max", "N_max", "n", "lambda", "M", "k_cap", "variant", "scales", "tol"),
    "deviations": ("k_range", "I_max", "n_list", "x_list", "replicas", "lambda", "eps"),
    "limits": (
        "k_range",
        "I_max",
        "n_list",
        "eps",
        "replicas",
        "ks_n",
        "ip_n",
        "lil_n",
        "x_grid",
        "z",
    ),
    "tightness": ("n_list", "replicas", "q"),
}

CHECKS = {
    "decompose": ("residual", "exact"),
    "verify": ("residual", "vanishes_beyond"),
    "stationary": ("residual", "l2_constant_from"),
    "orlicz": (
        "block_mass_tol",
        "block_mass_n",
        "projection_tol",
        "norm_lower_bound",
        "exp_moment_tol",
        "linf",
    ),
    "deviations": ("azuma", "binomial_oracle"),
    "limits": (
        "expected",
        "moments_tol",
        "g1_consistency",
        "ks_threshold",
        "ip_monotone",
        "ip_bound",
        "martingale_part_degenerate",
        "tail_domination",
    ),
    "tightness": ("max_quantile", "bounded"),
}

# value kind of every known parameter
PARAMETER_KINDS = {
    "out": "text",
    "variant": "text",
    "k_range": "range",
    "I_max": "int",
    "j_max": "int",
    "n_max": "int",
    "i_max": "int",
    "K_max": "int",
    "N_max": "int",
    "n": "int",
    "k_cap": "int",
    "replicas": "int",
    "p": "number",
    "lambda": "number",
    "M": "number",
    "tol": "number",
    "eps": "number",
    "q": "number",
    "n_list": "ints",
    "ks_n": "ints",
    "ip_n": "ints",
    "lil_n": "ints",
    "x_list": "numbers",
    "x_grid": "numbers",
    "scales": "numbers",
    "z": "law",
}


def _is_int(value):
    return isinstance(value, int) and not isinstance(value, bool)


def _is_number(value):
    return isinstance(value, (int, float)) and not isinstance(value, bool)


def _numbers(value, check):
    return isinstance(value, list) and all(check(v) for v in value)


KIND_CHECKS = {
    "text": (lambda v: isinstance(v, str), "a string"),
    "int": (_is_int, "an integer"),
    "number": (_is_number, "a number"),
    "ints": (lambda v: _numbers(v, _is_int), "a list of integers"),
    "numbers": (lambda v: _numbers(v, _is_number), "a list of numbers"),
    "range": (lambda v: _numbers(v, _is_int) and len(v) == 2, "a pair of integers"),
    "law": (
        lambda v: isinstance(v, dict)
        and set(v) == {"values", "probabilities"}
        and _numbers(v["values"], _is_number)
        and _numbers(v["probabilities"], _is_number),
        'an object {"values": [numbers], "probabilities": [numbers]}',
    ),
}


def _check_parameter_types(parameters):
    for (name, value) in parameters.items():
        (check, expected) = KIND_CHECKS[PARAMETER_KINDS[name]]
        if not check(value):
            raise ConfigError(f"parameters.{name} must be {expected}, got {value!r}")


def _reject_unknown(data, allowed, where):
    if not isinstance(data, dict):
        raise ConfigError(f"{where} must be a JSON object")
    unknown = sorted(set(data) - set(allowed))
    if unknown:
        raise ConfigError(f"unknown field(s) in {where}: {', '.join(unknown)}")


class ModelConfig:
    def __init__(self, data: Dict):
        _reject_unknown(data, MODEL_FIELDS, "model")
        for field in ("law", "window", "functionals"):
            if field not in data:
                raise ConfigError(f"model is missing '{field}'")

        law = data["law"]
        _reject_unknown(law, LAW_FIELDS, "model.law")
        if "alphabet" not in law:
            raise ConfigError("model.law is missing 'alphabet'")

        window = data["window"]
        if (
            not isinstance(window, list)
            or len(window) != 2
            or not all(isinstance(v, int) for v in window)
        ):
            raise ConfigError("model.window must be two integers [lo, hi]")

        functionals = data["functionals"]
        if not isinstance(functionals, list) or not functionals:
            raise ConfigError("model.functionals must be a non-empty list")
        for entry in functionals:
            _reject_unknown(entry, FUNCTIONAL_FIELDS, "model.functionals[]")
            if not isinstance(entry.get("i"), int) or not isinstance(
                entry.get("coeffs"), dict
            ):
                raise ConfigError(
                    "each functional needs an integer 'i' and a 'coeffs' object"
                )

        seed = data.get("seed")
        if seed is not None and (not isinstance(seed, int) or not 0 <= seed < 2**64):
            raise ConfigError("model.seed must be an unsigned 64-bit integer")

        self.data = data
        self.window = (window[0], window[1])
        self.seed = seed

    def law(self) -> CoordinateLaw:
        law = self.data["law"]
        try:
            return CoordinateLaw(
                law["alphabet"],
                law.get("probabilities"),
                kind=law.get("kind", "iid"),
                transition=law.get("transition"),
                centered=law.get("centered", False),
            )
        except (TypeError, ValueError) as e:
            raise ConfigError(f"model.law: {e}")

    def schedule(self) -> FunctionalSchedule:
        entries = {}
        for entry in self.data["functionals"]:
            i = entry["i"]
            if i in entries:
                raise ConfigError(f"functional for index {i} given twice")
            try:
                entries[i] = LinearFunctional(
                    {int(o): c for (o, c) in entry["coeffs"].items()}
                )
            except (TypeError, ValueError):
                raise ConfigError(
                    f"functional {i}: keys must be integer offsets and values numbers"
                )
        return FunctionalSchedule(entries)

    def exact_model(self) -> ExactProcessModel:
        return ExactProcessModel(self.law(), self.window, self.schedule())

    def stationary_model(self) -> StationaryShiftModel:
        schedule = self.schedule()
        if schedule.period != 1:
            raise ConfigError("a stationary model takes exactly one functional")
        return StationaryShiftModel(self.law(), self.window, schedule.entries[0])

    def sampler(self) -> SamplerModel:
        if self.seed is None:
            raise ConfigError("model.seed is required for Monte Carlo commands")
        return SamplerModel(self.law(), self.schedule(), self.seed)


class RunConfig:
    def __init__(self, data: Dict, path: Optional[str] = None):
        _reject_unknown(data, TOP_LEVEL, "config")
        command = data.get("command")
        if command not in COMMANDS:
            raise ConfigError(
                f"command must be one of {', '.join(COMMANDS)}, got {command!r}"
            )

        parameters = data.get("parameters", {})
        _reject_unknown(
            parameters, PARAMETERS[command] + COMMON_PARAMETERS, "parameters"
        )
        _check_parameter_types(parameters)
        checks = data.get("checks", {})
        _reject_unknown(checks, CHECKS[command], "checks")

        model = None
        if command != "orlicz":
            if "model" not in data:
                raise ConfigError(f"command {command} needs a model")
            model = ModelConfig(data["model"])
            if command in MONTE_CARLO_COMMANDS and model.seed is None:
                raise ConfigError(f"command {command} needs model.seed")
        elif "model" in data:
            raise ConfigError("the orlicz command takes no model")

        self.data = data
        self.command = command
        self.model = model
        self.parameters = parameters
        self.checks = checks
        self.path = path
        self.base_dir = os.path.dirname(os.path.abspath(path)) if path else os.getcwd()

    def get(self, name, default=None):
        return self.parameters.get(name, default)

    def resolve(self, path) -> str:
        if os.path.isabs(path):
            return path
        return os.path.join(self.base_dir, path)

    @property
    def name(self):
        if self.path is None:
            return self.command
        return os.path.splitext(os.path.basename(self.path))[0]


def parse(data: Dict, path=None) -> RunConfig:
    try:
        return RunConfig(data, path)
    except DomainError as e:
        raise ConfigError(str(e))


def load(path) -> RunConfig:
    try:
        with open(path) as f:
            data = json.load(f)
    except FileNotFoundError:
        raise ConfigError(f"config {path} does not exist")
    except json.JSONDecodeError as e:
        raise ConfigError(f"config {path} is not valid JSON: {e}")
    config = parse(data, path)
    logger.info("loaded %s config from %s", config.command, path)
    return config


def discover(config_dir) -> List[str]:
    if not os.path.isdir(config_dir):
        raise ConfigError(f"{config_dir} is not a directory")
    return sorted(
        os.path.join(config_dir, name)
        for name in os.listdir(config_dir)
        if name.endswith(".json")
    )
