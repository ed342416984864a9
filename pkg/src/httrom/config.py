"""Run configuration: JSON schema, validation, and object builders.

A configuration file is a single JSON object::

    {
      "problem": {"name": "heat", "shape": [24, 12], "n_snapshots": 50},
      "grid": {"counts": [8, 5, 5, 5]},
      "completion": {"eps": 1e-4, "eps_q": 1e-5, "n_max": 8,
                     "initial_train": 60, "increments": 30, "test_size": 25,
                     "selection": "uniform", "max_rank": 25},
      "rom": {"ell": 10, "interp_order": 2, "test_size": 16},
      "seed": 7
    }

``problem.name`` is ``heat``, ``advdiff`` or ``synthetic``.  The synthetic
problem is an exact random decomposition used as a slice oracle
(``slice_shape``, ``param_sizes``, ``c_ranks``, ``d_ranks`` keys); it has no
dynamical system, so only the ``complete`` command accepts it.  Every piece
of randomness derives from the root ``seed``.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .adaptive import AdaptiveConfig, SliceOracle, all_indices
from .completion import CompletionOptions
from .errors import ConfigError
from .fom import FOMProblem, ParameterBox, ParameterGrid, advdiff_box, advdiff_fom, heat_fom, slice_oracle
from .htt import htt_slice, random_htt

__all__ = ["RunConfig", "load_config", "build_setup", "RunSetup"]

_PROBLEMS = ("heat", "advdiff", "synthetic")


@dataclass
class RunConfig:
    problem: dict
    completion: dict
    grid: dict = field(default_factory=dict)
    rom: dict = field(default_factory=dict)
    seed: int = 0
    htt_path: str | None = None

    @classmethod
    def from_dict(cls, raw: dict) -> "RunConfig":
        if not isinstance(raw, dict):
            raise ConfigError("configuration must be a JSON object")
        unknown = set(raw) - {"problem", "grid", "completion", "rom", "seed", "htt_path"}
        if unknown:
            raise ConfigError(f"unknown configuration keys: {sorted(unknown)}")
        for key in ("problem", "completion"):
            if key not in raw:
                raise ConfigError(f"missing required configuration block {key!r}")
        cfg = cls(
            problem=dict(raw["problem"]),
            completion=dict(raw["completion"]),
            grid=dict(raw.get("grid", {})),
            rom=dict(raw.get("rom", {})),
            seed=int(raw.get("seed", 0)),
            htt_path=raw.get("htt_path"),
        )
        name = cfg.problem.get("name")
        if name not in _PROBLEMS:
            raise ConfigError(f"problem.name must be one of {_PROBLEMS}, got {name!r}")
        if "eps" not in cfg.completion:
            raise ConfigError("completion.eps is required")
        return cfg


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read configuration {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"malformed JSON in {path}: {exc}") from exc
    return RunConfig.from_dict(raw)


@dataclass
class RunSetup:
    """Validated objects a command works with."""

    config: RunConfig
    oracle: SliceOracle
    grid: ParameterGrid
    problem: FOMProblem | None
    adaptive: AdaptiveConfig
    options: CompletionOptions


def build_setup(cfg: RunConfig, seed_override: int | None = None) -> RunSetup:
    """Instantiate and cross-validate every object the run needs."""
    seed = int(seed_override) if seed_override is not None else cfg.seed
    try:
        problem, grid, oracle = _build_problem(cfg, seed)
        options = _completion_options(cfg, seed)
        adaptive = _adaptive_config(cfg, oracle, seed)
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from exc
    return RunSetup(
        config=cfg,
        oracle=oracle,
        grid=grid,
        problem=problem,
        adaptive=adaptive,
        options=options,
    )


def _build_problem(cfg: RunConfig, seed: int):
    block = cfg.problem
    name = block["name"]
    if name == "synthetic":
        slice_shape = tuple(int(v) for v in block.get("slice_shape", (6, 5)))
        param_sizes = tuple(int(v) for v in block.get("param_sizes", (5, 5, 5)))
        c_ranks = tuple(int(v) for v in block.get("c_ranks", (3, 2)))
        d_ranks = block.get("d_ranks", 2)
        gen_seed = int(block.get("generator_seed", seed))
        h = random_htt(slice_shape, param_sizes, c_ranks, d_ranks, seed=gen_seed)
        oracle = SliceOracle(
            slice_shape=slice_shape,
            param_sizes=param_sizes,
            retrieve=lambda j: htt_slice(h, j),
        )
        grid = ParameterGrid.uniform(
            ParameterBox((0.0,) * len(param_sizes), (1.0,) * len(param_sizes)),
            param_sizes,
        )
        return None, grid, oracle
    counts = cfg.grid.get("counts")
    if counts is None:
        raise ConfigError("grid.counts is required for FOM-backed problems")
    if name == "heat":
        shape = block.get("shape", [24, 12])
        problem = heat_fom(
            tuple(int(v) for v in shape) if not np.isscalar(shape) else int(shape),
            dt=block.get("dt"),
            n_snapshots=int(block.get("n_snapshots", 100)),
        )
    else:
        problem = advdiff_fom(
            int(block.get("grid_n", 32)),
            dt=float(block.get("dt", 1.0 / 200.0)),
            n_snapshots=int(block.get("n_snapshots", 50)),
            d_active=int(block.get("d_active", 6)),
        )
    if len(counts) != problem.box.dim:
        raise ConfigError(
            f"grid.counts has {len(counts)} entries, problem has {problem.box.dim} parameters"
        )
    grid = ParameterGrid.uniform(problem.box, [int(c) for c in counts])
    return problem, grid, slice_oracle(problem, grid)


def _completion_options(cfg: RunConfig, seed: int) -> CompletionOptions:
    block = cfg.completion
    return CompletionOptions(
        eps_q=float(block.get("eps_q", 1e-6)),
        max_rank=int(block.get("max_rank", 20)),
        max_sweeps_per_rank=int(block.get("max_sweeps_per_rank", 4)),
        rank_stagnation_factor=float(block.get("rank_stagnation_factor", 0.05)),
        seed=seed,
        regularization=block.get("regularization"),
        holdout_fraction=float(block.get("holdout_fraction", 0.1)),
    )


def _adaptive_config(cfg: RunConfig, oracle: SliceOracle, seed: int) -> AdaptiveConfig:
    block = cfg.completion
    pool = all_indices(oracle.param_sizes)
    total = pool.shape[0]
    test_size = int(block.get("test_size", max(10, total // 20)))
    train_size = int(block.get("initial_train", max(10, total // 10)))
    if test_size + train_size > total:
        raise ConfigError(
            f"test ({test_size}) plus initial train ({train_size}) exceeds grid size {total}"
        )
    rng_test = np.random.default_rng(np.random.SeedSequence([seed, 1]))
    rng_train = np.random.default_rng(np.random.SeedSequence([seed, 2]))
    test_rows = rng_test.choice(total, size=test_size, replace=False)
    remaining = np.setdiff1d(np.arange(total), test_rows)
    train_rows = remaining[
        rng_train.choice(remaining.size, size=train_size, replace=False)
    ]
    eps_c = block.get("eps_c")
    return AdaptiveConfig(
        eps=float(block["eps"]),
        test_set=pool[test_rows],
        initial_train=pool[train_rows],
        n_max=int(block.get("n_max", 10)),
        increments=block.get("increments", 20),
        selection=str(block.get("selection", "uniform")),
        seed=seed,
        allow_test_overlap=bool(block.get("allow_test_overlap", False)),
        eps_c=None if eps_c is None else float(eps_c),
    )


def rom_block(cfg: RunConfig) -> dict:
    block = dict(cfg.rom)
    block.setdefault("ell", None)
    block.setdefault("interp_order", 2)
    block.setdefault("test_size", 10)
    return block


def parse_alpha(cfg: RunConfig) -> np.ndarray:
    alpha = cfg.problem.get("alpha")
    if alpha is None:
        raise ConfigError("problem.alpha is required for fom-run")
    return np.asarray([float(v) for v in alpha])
