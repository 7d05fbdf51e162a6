"""
Input validation utilities
Turns space, measure, tree and config references into validated domain objects
"""

import json
import logging
from pathlib import Path
from typing import Any

import numpy as np
from pydantic import ValidationError

from backend.core.errors import config_error, io_failure
from backend.services.metric_core import (
    DoublingMeasure,
    FiniteMetricSpace,
    grid_net,
    random_euclidean_space,
    random_tree_metric,
    space_from_coords,
    uniform_measure,
    uniform_net,
    validate_space,
)
from backend.services.haar_weights import Weight, make_weight, power_weight_family
from backend.services.random_lattice import CubeTree, dyadic_tree, sample_from_payload

logger = logging.getLogger(__name__)


def parse_spec(spec: str, field: str = "space") -> tuple[str, dict[str, str]]:
    """
    'kind:key=value:key=value' -> (kind, options).
    'file:<path>' keeps the whole remainder as the path; a bare '*.json' path reads the same way.
    """
    spec = spec.strip()
    if spec.endswith(".json") and not spec.startswith("file:"):
        return "file", {"path": spec}
    kind, _, rest = spec.partition(":")
    if kind == "file":
        if not rest:
            raise config_error(f"'{spec}' names no file", field)
        return kind, {"path": rest}
    options: dict[str, str] = {}
    for part in filter(None, rest.split(":")):
        key, sep, value = part.partition("=")
        if not sep:
            raise config_error(f"Malformed option '{part}' in '{spec}'", field)
        options[key] = value
    return kind, options


def _int_option(options: dict[str, str], key: str, spec: str, field: str, default: int | None = None) -> int:
    if key not in options:
        if default is None:
            raise config_error(f"'{spec}' is missing '{key}'", field)
        return default
    try:
        return int(options[key])
    except ValueError as e:
        raise config_error(f"'{key}' in '{spec}' must be an integer", field) from e


def read_json(path: str | Path) -> Any:
    path = Path(path)
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except OSError as e:
        raise io_failure(f"Cannot read {path}", str(path), e) from e
    except json.JSONDecodeError as e:
        raise config_error(f"{path} is not valid JSON: {e}", str(path)) from e


def space_from_payload(payload: dict, name: str = "") -> FiniteMetricSpace:
    """
    {"distance_matrix": [[...]]} or {"coords": [[...]], "metric": "euclidean"},
    each with an optional "rescale" flag (default true).
    """
    if not isinstance(payload, dict):
        raise config_error("space file must hold a JSON object", "space")
    rescale = bool(payload.get("rescale", True))
    if "distance_matrix" in payload:
        space, report = validate_space(
            np.asarray(payload["distance_matrix"], dtype=float),
            coords=payload.get("coords"),
            rescale=rescale,
            name=name,
        )
        logger.debug(f"Loaded space '{name}': {report.model_dump()}")
        return space
    if "coords" in payload:
        metric = payload.get("metric", "euclidean")
        try:
            return space_from_coords(np.asarray(payload["coords"], dtype=float), metric, rescale=rescale, name=name)
        except ValueError as e:
            raise config_error(f"Bad coordinates or metric '{metric}': {e}", "space") from e
    raise config_error("space file needs 'distance_matrix' or 'coords'", "space")


def load_space(spec: str) -> FiniteMetricSpace:
    """net1d:n=64 | net2d:side=8 | tree:n=50:seed=3 | random:n=5:seed=1[:dim=2] | file:<path>"""
    kind, options = parse_spec(spec)
    if kind == "net1d":
        return uniform_net(_int_option(options, "n", spec, "space"))
    if kind == "net2d":
        return grid_net(_int_option(options, "side", spec, "space"))
    if kind == "tree":
        return random_tree_metric(_int_option(options, "n", spec, "space"), _int_option(options, "seed", spec, "space", 0))
    if kind == "random":
        return random_euclidean_space(
            _int_option(options, "n", spec, "space"),
            _int_option(options, "seed", spec, "space", 0),
            dim=_int_option(options, "dim", spec, "space", 2),
        )
    if kind == "file":
        path = Path(options["path"])
        return space_from_payload(read_json(path), name=path.stem)
    raise config_error(f"Unknown space kind '{kind}' in '{spec}'", "space")


def load_measure(space: FiniteMetricSpace, spec: str | None = None) -> DoublingMeasure:
    """uniform (default) | file:<path> holding a list of point masses or {"mass": [...]}"""
    if spec is None or spec == "uniform":
        return uniform_measure(space.n)
    kind, options = parse_spec(spec, "measure")
    if kind != "file":
        raise config_error(f"Unknown measure '{spec}'", "measure")
    payload = read_json(options["path"])
    mass = payload["mass"] if isinstance(payload, dict) else payload
    try:
        measure = DoublingMeasure(mass=mass)
    except ValidationError as e:
        raise config_error(f"Invalid point masses in {options['path']}: {e.errors()[0]['msg']}", "measure") from e
    if measure.mass.size != space.n:
        raise config_error(f"measure has {measure.mass.size} masses for {space.n} points", "measure")
    return measure


def load_weights(space: FiniteMetricSpace, measure: DoublingMeasure, spec: str) -> list[Weight]:
    """
    power:beta=a..b[:count=k][:center=c] generates a power family;
    file:<path> (or a bare *.json) holds {"w": [...]} or {"weights": [{"w": [...], "label": ...}, ...]}.
    """
    if spec.strip().startswith("power:"):
        return power_weight_family(space, measure, spec=spec)
    kind, options = parse_spec(spec, "weight")
    if kind != "file":
        raise config_error(f"Unknown weight spec '{spec}'", "weight")
    payload = read_json(options["path"])
    if isinstance(payload, dict) and "w" in payload:
        entries = [payload]
    elif isinstance(payload, dict) and isinstance(payload.get("weights"), list):
        entries = payload["weights"]
    else:
        raise config_error(f"{options['path']} needs 'w' or a 'weights' list", "weight")
    stem = Path(options["path"]).stem
    return [
        make_weight(entry.get("w"), space, measure, label=str(entry.get("label", f"{stem}[{i}]")))
        for i, entry in enumerate(entries)
    ]


def load_tree(spec: str) -> tuple[CubeTree, FiniteMetricSpace]:
    """
    dyadic:levels=9[:branching=2] builds the b-adic tree on a uniform net;
    file:<path> reads a saved lattice sample whose "space" key names its space.
    """
    kind, options = parse_spec(spec, "tree")
    if kind == "dyadic":
        return dyadic_tree(
            _int_option(options, "levels", spec, "tree"),
            _int_option(options, "branching", spec, "tree", 2),
        )
    if kind == "file":
        payload = read_json(options["path"])
        if "space" not in payload:
            raise config_error(f"{options['path']} does not record its space", "tree")
        space = load_space(payload["space"])
        sample = sample_from_payload(payload)
        if sample.labels.shape[1] != space.n:
            raise config_error(f"sample labels cover {sample.labels.shape[1]} points, space has {space.n}", "tree")
        return CubeTree.from_sample(sample), space
    raise config_error(f"Unknown tree kind '{kind}' in '{spec}'", "tree")


def format_validation_error(e: ValidationError) -> tuple[str, str]:
    """First pydantic error as (message, dotted field path)"""
    first = e.errors()[0]
    path = ".".join(str(part) for part in first["loc"])
    return f"{first['msg']} ({e.error_count()} error(s))", path
