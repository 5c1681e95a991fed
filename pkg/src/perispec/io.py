"""Grid files, run configuration and mean handling.

Grid file format (whitespace-delimited text)::

    d z1 ... zd
    v v v ...        # one line per index of the leading axes, last axis across
    ...

Missing cells hold the token ``NA``. Values are written with ``repr`` so a
file written by this module reads back to identical floats.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .errors import InvalidArgumentError

log = logging.getLogger(__name__)

NA = "NA"


def format_grid(values: np.ndarray, mask: np.ndarray | None = None) -> str:
    """Render a grid; cells where ``mask`` is False (or values are NaN) become ``NA``."""
    values = np.asarray(values, dtype=float)
    if mask is None:
        mask = ~np.isnan(values)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != values.shape:
        raise InvalidArgumentError("mask and values differ in shape")
    shape = values.shape
    lines = [" ".join(str(v) for v in (len(shape),) + shape)]
    width = shape[-1]
    flat_v = values.reshape(-1, width)
    flat_m = mask.reshape(-1, width)
    for row_v, row_m in zip(flat_v, flat_m):
        lines.append(" ".join(repr(float(v)) if ok else NA for v, ok in zip(row_v, row_m)))
    return "\n".join(lines) + "\n"


def parse_grid(text: str) -> tuple[np.ndarray, np.ndarray]:
    """Parse grid text into ``(values, observed)``; values are NaN where ``NA``."""
    tokens = text.replace(",", " ").split()
    if not tokens:
        raise InvalidArgumentError("empty grid file")
    try:
        d = int(tokens[0])
        shape = tuple(int(t) for t in tokens[1 : 1 + d])
    except ValueError as exc:
        raise InvalidArgumentError(f"bad grid header: {exc}") from exc
    if d < 1 or len(shape) != d or any(n < 1 for n in shape):
        raise InvalidArgumentError("bad grid header")
    payload = tokens[1 + d :]
    size = math.prod(shape)
    if len(payload) != size:
        raise InvalidArgumentError(f"expected {size} values, found {len(payload)}")
    values = np.empty(size)
    observed = np.ones(size, dtype=bool)
    for i, tok in enumerate(payload):
        if tok.upper() == NA:
            values[i] = np.nan
            observed[i] = False
            continue
        try:
            v = float(tok)
        except ValueError as exc:
            raise InvalidArgumentError(f"cannot parse value {tok!r}") from exc
        if not math.isfinite(v):
            raise InvalidArgumentError(f"non-finite value {tok!r}")
        values[i] = v
    return values.reshape(shape), observed.reshape(shape)


def read_grid(path) -> tuple[np.ndarray, np.ndarray]:
    return parse_grid(Path(path).read_text())


def write_grid(path, values, mask=None) -> None:
    Path(path).write_text(format_grid(values, mask))


def read_mask(path) -> np.ndarray:
    """Read a separate observed-mask grid (nonzero / TRUE = observed)."""
    text = Path(path).read_text()
    text = text.replace("TRUE", "1").replace("FALSE", "0").replace("True", "1").replace("False", "0")
    values, ok = parse_grid(text)
    if not ok.all():
        raise InvalidArgumentError("mask file may not contain NA")
    return values != 0


@dataclass
class RunConfig:
    """Estimation settings, named after the reference software's arguments."""

    embed_fac: float = 1.2
    burn_iters: int = 30
    kern_parm: float = 0.05
    par_spec_fun: str = "none"
    precond_method: str = "fft"
    neighbors: int = 30
    epsilon: float = 0.05
    L: int = 1
    seed: int = 0
    max_iterations: int = 1000
    mean: str = "none"
    pcg_tol: float = 1e-6
    pcg_max_iter: int = 1000

    def __post_init__(self):
        self.par_spec_fun = {"false": "none", "spec_ar1": "ar1"}.get(str(self.par_spec_fun).lower(), str(self.par_spec_fun).lower())
        self.precond_method = str(self.precond_method).lower()
        if self.par_spec_fun not in ("none", "ar1"):
            raise InvalidArgumentError(f"par_spec_fun must be none or ar1, got {self.par_spec_fun!r}")
        if self.precond_method not in ("fft", "vecchia"):
            raise InvalidArgumentError(f"precond_method must be fft or vecchia, got {self.precond_method!r}")
        if self.mean not in ("none", "constant", "linear"):
            raise InvalidArgumentError(f"mean must be none, constant or linear, got {self.mean!r}")

    def to_estimator(self, threads: int = 1):
        from .estimator import EstimatorConfig
        from .imputation import Preconditioner
        from .solver import PcgConfig

        return EstimatorConfig(
            L=self.L,
            burn_in=self.burn_iters,
            epsilon=self.epsilon,
            delta=self.kern_parm,
            tau=self.embed_fac,
            filter=self.par_spec_fun,
            precond=Preconditioner(self.precond_method, self.neighbors),
            max_iterations=self.max_iterations,
            pcg=PcgConfig(self.pcg_tol, self.pcg_max_iter),
            seed=self.seed,
            threads=threads,
        )


def read_config_file(path) -> dict:
    """Parse ``key=value`` lines; ``#`` starts a comment. Values stay strings."""
    out = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InvalidArgumentError(f"{path}:{lineno}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        if key == "m":
            key = "neighbors"
        out[key] = value
    return out


def coerce_config(raw: dict) -> RunConfig:
    """Build a RunConfig from string values, converting to each field's type."""
    kinds = {f.name: f.type for f in fields(RunConfig)}
    kw = {}
    for key, value in raw.items():
        if key not in kinds:
            raise InvalidArgumentError(f"unknown config key {key!r}")
        kind = kinds[key]
        try:
            if kind in ("float", float):
                kw[key] = float(value)
            elif kind in ("int", int):
                kw[key] = int(value)
            else:
                kw[key] = str(value)
        except ValueError as exc:
            raise InvalidArgumentError(f"bad value for {key}: {value!r}") from exc
    return RunConfig(**kw)


@dataclass(frozen=True)
class MeanModel:
    """Fitted mean surface: ``coef[0] + sum_j coef[j+1] * x_j``."""

    mode: str
    coef: np.ndarray

    def evaluate(self, shape) -> np.ndarray:
        out = np.full(shape, float(self.coef[0]) if self.coef.size else 0.0)
        for j in range(1, self.coef.size):
            axis_shape = [1] * len(shape)
            axis_shape[j - 1] = shape[j - 1]
            out = out + self.coef[j] * np.arange(shape[j - 1]).reshape(axis_shape)
        return out


def mean_handling(values_on_y, mask_on_y, mode: str = "none"):
    """Remove a mean (none, constant or OLS linear trend) fitted to observed cells.

    Returns ``(centered, model)`` where ``centered`` has the mean surface
    subtracted everywhere.
    """
    values_on_y = np.asarray(values_on_y, dtype=float)
    mask_on_y = np.asarray(mask_on_y, dtype=bool)
    obs = values_on_y[mask_on_y]
    if mode == "none":
        return values_on_y.copy(), MeanModel("none", np.zeros(1))
    if obs.size == 0:
        raise InvalidArgumentError("no observed cells")
    if mode == "linear":
        coords = np.argwhere(mask_on_y).astype(float)
        design = np.column_stack([np.ones(obs.size), coords])
        if np.linalg.matrix_rank(design) < design.shape[1]:
            log.warning("linear trend design is rank deficient; using a constant mean")
            mode = "constant"
        else:
            coef, *_ = np.linalg.lstsq(design, obs, rcond=None)
            model = MeanModel("linear", coef)
            return values_on_y - model.evaluate(values_on_y.shape), model
    if mode == "constant":
        model = MeanModel("constant", np.array([obs.mean()]))
        return values_on_y - model.coef[0], model
    raise InvalidArgumentError(f"unknown mean mode {mode!r}")
