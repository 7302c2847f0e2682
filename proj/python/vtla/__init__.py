"""Python bindings for the peg-in-hole benchmark core."""

import json as _json

from ._vtla import (
    PolicyModel,
    containment_margin,
    default_peg_size,
    detokenize_action,
    dpo_loss_from_margin,
    fits_inside,
    format_action_text,
    generate_dataset,
    goal_convergence_rate,
    instruction_text,
    is_in_distribution,
    l1_per_axis,
    max_admissible_offset,
    render_observation,
    run_cli,
    shapes,
    tokenize_action,
)
from ._vtla import _read_manifest_json
from ._vtla import insertion_benchmark as _insertion_benchmark


def read_manifest(path):
    """Samples of a manifest.jsonl as dicts."""
    return [_json.loads(s) for s in _read_manifest_json(str(path))]


def insertion_benchmark(policy, grid="square@2.0", trials=10, seed=0, method="python"):
    """Run the insertion benchmark.

    `policy` is "oracle", "random", "zero", a PolicyModel, or a callable
    taking (observation dict, shape name) and returning (x, y, rz).
    """
    return _json.loads(_insertion_benchmark(policy, grid, trials, seed, method))


__all__ = [
    "PolicyModel",
    "containment_margin",
    "default_peg_size",
    "detokenize_action",
    "dpo_loss_from_margin",
    "fits_inside",
    "format_action_text",
    "generate_dataset",
    "goal_convergence_rate",
    "insertion_benchmark",
    "instruction_text",
    "is_in_distribution",
    "l1_per_axis",
    "max_admissible_offset",
    "read_manifest",
    "render_observation",
    "run_cli",
    "shapes",
    "tokenize_action",
]
