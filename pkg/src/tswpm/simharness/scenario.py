"""Scenario documents: JSON loading, schema validation and defaults."""

import json
import logging
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from ..channel import LinkBudget
from ..errors import InvalidInput, LocalizationError, ParseError, ValidationError
from ..geometry import AnchorSet
from ..solvers import SolverConfig

log = logging.getLogger(__name__)

SOLVER_NAMES = ("tswpm", "wnls", "wnls_reg", "nls", "ippm")
# regularization used by the "wnls_reg" solver
WNLS_REG_LAMBDA = 1e-6

DEFAULTS = {
    "name": "scenario",
    "geometry_tag": "custom",
    "height_difference": 0.0,
    "n_ues": 1,
    "link_budget": {
        "carrier_frequency": 3.5e9,
        "bandwidth": 5e6,
        "noise_figure": 9.0,
        "shadow_std": 8.0,
        "scs": 15e3,
        "n_subcarriers": 300,
    },
    "channel": {"mode": "multipath", "delay_spread": 100e-9, "max_taps": 12},
    "coop": {"enabled": False, "n_coop": 0, "anchors_visible_per_ue": 2},
    "solvers": ["tswpm", "wnls", "nls", "ippm"],
    "solver_config": {
        "epsilon": 1e-7,
        "consecutive_hits": 10,
        "max_iterations": 100,
        "regularization": 0.0,
        "coop_anchor_scaling": "alg1_consistent",
    },
    "master_seed": 0,
}


@dataclass(frozen=True)
class UeArea:
    x_min: float
    y_min: float
    x_max: float
    y_max: float

    @property
    def corners(self):
        return np.array([self.x_min, self.y_min]), np.array([self.x_max, self.y_max])


@dataclass(frozen=True)
class CoopConfig:
    enabled: bool = False
    n_coop: int = 0
    anchors_visible_per_ue: int = 2


@dataclass(frozen=True)
class Scenario:
    """Everything a Monte Carlo run needs. UEs are dropped inside ``ue_area``,
    which is also the building outline used for indoor distances."""

    anchors: AnchorSet
    ue_area: UeArea
    budget: LinkBudget
    trials: int
    name: str = "scenario"
    geometry_tag: str = "custom"
    height_difference: float = 0.0
    n_ues: int = 1
    channel_mode: str = "multipath"
    delay_spread: float = 100e-9
    max_taps: int = 12
    coop: CoopConfig = field(default_factory=CoopConfig)
    solvers: tuple = ("tswpm", "wnls", "nls", "ippm")
    solver_config: SolverConfig = field(default_factory=SolverConfig)
    master_seed: int = 0

    def to_dict(self):
        """JSON-ready document that :func:`parse_scenario` maps back to this scenario."""
        b = self.budget
        cfg = self.solver_config
        return {
            "name": self.name,
            "geometry_tag": self.geometry_tag,
            "anchors": self.anchors.positions.tolist(),
            "ue_area": {
                "x_min": self.ue_area.x_min,
                "y_min": self.ue_area.y_min,
                "x_max": self.ue_area.x_max,
                "y_max": self.ue_area.y_max,
            },
            "height_difference": self.height_difference,
            "n_ues": self.n_ues,
            "link_budget": {
                "tx_power": b.tx_power,
                "carrier_frequency": b.carrier_frequency,
                "bandwidth": b.bandwidth,
                "noise_figure": b.noise_figure,
                "shadow_std": b.shadow_std,
                "scs": b.scs,
                "n_subcarriers": b.n_subcarriers,
            },
            "channel": {
                "mode": self.channel_mode,
                "delay_spread": self.delay_spread,
                "max_taps": self.max_taps,
            },
            "coop": {
                "enabled": self.coop.enabled,
                "n_coop": self.coop.n_coop,
                "anchors_visible_per_ue": self.coop.anchors_visible_per_ue,
            },
            "solvers": list(self.solvers),
            "solver_config": {
                "epsilon": cfg.epsilon,
                "consecutive_hits": cfg.consecutive_hits,
                "max_iterations": cfg.max_iterations,
                "regularization": cfg.regularization,
                "coop_anchor_scaling": cfg.coop_anchor_scaling,
            },
            "trials": self.trials,
            "master_seed": self.master_seed,
        }

    def with_overrides(self, trials=None, seed=None, solvers=None, channel=None, tx_power=None):
        changes = {}
        if trials is not None:
            changes["trials"] = trials
        if seed is not None:
            changes["master_seed"] = seed
        if solvers is not None:
            changes["solvers"] = tuple(solvers)
        if channel is not None:
            changes["channel_mode"] = channel
        if tx_power is not None:
            changes["budget"] = replace(self.budget, tx_power=tx_power)
        doc = replace(self, **changes).to_dict()
        return parse_scenario(doc, log_defaults=False)


def scenario_schema():
    text = resources.files("tswpm.simharness").joinpath("scenario.schema.json").read_text()
    return json.loads(text)


def _error_field(err):
    path = [str(p) for p in err.absolute_path]
    if err.validator == "required":
        missing = err.message.split("'")[1]
        path.append(missing)
    elif err.validator == "additionalProperties":
        extra = err.message.split("'")[1] if "'" in err.message else None
        if extra:
            path.append(extra)
    return ".".join(path) or "<root>"


def _merge_defaults(doc, defaults, prefix, log_defaults):
    out = dict(doc)
    for key, value in defaults.items():
        name = f"{prefix}{key}"
        if key not in out:
            out[key] = json.loads(json.dumps(value))
            if log_defaults:
                log.info("default applied: %s = %r", name, value)
        elif isinstance(value, dict) and isinstance(out[key], dict):
            out[key] = _merge_defaults(out[key], value, f"{name}.", log_defaults)
    return out


def parse_scenario(doc, log_defaults=True):
    """Validate a scenario document (already decoded from JSON) and build a Scenario.

    A run manifest written by the harness is accepted too; its embedded
    scenario is used.
    """
    if isinstance(doc, dict) and "manifest_version" in doc and "scenario" in doc:
        doc = doc["scenario"]
    validator = jsonschema.Draft202012Validator(scenario_schema())
    errors = sorted(validator.iter_errors(doc), key=lambda e: list(e.absolute_path))
    if errors:
        err = errors[0]
        raise ValidationError(err.message, field=_error_field(err))
    doc = _merge_defaults(doc, DEFAULTS, "", log_defaults)

    area = UeArea(**{k: float(v) for k, v in doc["ue_area"].items()})
    if not (area.x_max > area.x_min and area.y_max > area.y_min):
        raise ValidationError("area must have positive width and height", field="ue_area")
    try:
        anchors = AnchorSet(np.array(doc["anchors"], dtype=float))
    except InvalidInput as exc:
        raise ValidationError(str(exc), field="anchors") from exc
    lb = doc["link_budget"]
    try:
        budget = LinkBudget(
            tx_power=float(lb["tx_power"]),
            carrier_frequency=float(lb["carrier_frequency"]),
            bandwidth=float(lb["bandwidth"]),
            noise_figure=float(lb["noise_figure"]),
            shadow_std=float(lb["shadow_std"]),
            scs=float(lb["scs"]),
            n_subcarriers=int(lb["n_subcarriers"]),
        )
    except InvalidInput as exc:
        raise ValidationError(str(exc), field="link_budget") from exc
    sc = doc["solver_config"]
    try:
        cfg = SolverConfig(
            epsilon=float(sc["epsilon"]),
            consecutive_hits=int(sc["consecutive_hits"]),
            max_iterations=int(sc["max_iterations"]),
            regularization=float(sc["regularization"]),
            coop_anchor_scaling=sc["coop_anchor_scaling"],
        )
    except InvalidInput as exc:
        raise ValidationError(str(exc), field="solver_config") from exc
    coop = CoopConfig(**doc["coop"])
    n_anchors = len(anchors)
    if coop.enabled:
        if coop.anchors_visible_per_ue > n_anchors:
            raise ValidationError(
                "more visible anchors requested than exist", field="coop.anchors_visible_per_ue"
            )
        if coop.n_coop > doc["n_ues"] - 1:
            raise ValidationError("n_coop must be below n_ues", field="coop.n_coop")
        if coop.anchors_visible_per_ue + coop.n_coop < 3:
            raise ValidationError("each UE needs at least three constraints", field="coop.n_coop")
        unsupported = set(doc["solvers"]) - {"tswpm", "wnls", "wnls_reg"}
        if unsupported:
            raise ValidationError(
                f"solvers {sorted(unsupported)} have no cooperative variant", field="solvers"
            )
    elif n_anchors < 3:
        raise ValidationError("TDOA localization needs at least three anchors", field="anchors")
    return Scenario(
        anchors=anchors,
        ue_area=area,
        budget=budget,
        trials=int(doc["trials"]),
        name=doc["name"],
        geometry_tag=doc["geometry_tag"],
        height_difference=float(doc["height_difference"]),
        n_ues=int(doc["n_ues"]),
        channel_mode=doc["channel"]["mode"],
        delay_spread=float(doc["channel"]["delay_spread"]),
        max_taps=int(doc["channel"]["max_taps"]),
        coop=coop,
        solvers=tuple(doc["solvers"]),
        solver_config=cfg,
        master_seed=int(doc["master_seed"]),
    )


def load_scenario(path):
    """Read, validate and default-fill a scenario (or run manifest) JSON file."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ParseError(f"cannot read {path}: {exc}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, line=exc.lineno) from exc
    return parse_scenario(doc)


def shipped_scenario(name):
    """Path to one of the scenario files bundled with the package."""
    ref = resources.files("tswpm.scenarios").joinpath(f"{name}.json")
    if not ref.is_file():
        raise LocalizationError(f"no shipped scenario named {name!r}")
    return Path(str(ref))
