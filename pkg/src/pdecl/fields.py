"""Random PDE parameter fields and on-disk datasets of them."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, FormatError, InputError
from .io import atomic_write_bytes, read_container, write_container
from .operators import ParameterField

PROBLEMS = ("convection", "darcy", "burgers")
SPLITS = ("train", "test")
TEST_SEED_OFFSET = 10 ** 6
DEFAULT_GRIDS = {"convection": (100,), "darcy": (61, 61), "burgers": (128,)}
DARCY_HIGH, DARCY_LOW = 12.0, 3.0
BURGERS_AMPLITUDE = 25.0

_FIELD_MAGIC = b"PDECLFLD"
_FIELD_VERSION = 1
MANIFEST = "manifest.json"


@dataclass
class GrfSpec:
    """Gaussian random field settings.

    ``length_scale`` is used by the squared-exponential 1D sampler;
    ``tau`` and ``alpha`` give the spectral density ``(pi^2 |k|^2 + tau^2)^-alpha``
    of the 2D sampler.
    """

    dimension: int
    grid_shape: tuple
    length_scale: float = 0.2
    seed: int = 0
    tau: float = 3.0
    alpha: float = 2.0

    def __post_init__(self):
        self.grid_shape = tuple(int(s) for s in np.atleast_1d(self.grid_shape))
        if self.dimension not in (1, 2) or len(self.grid_shape) != self.dimension:
            raise InputError("grid_shape must have one entry per dimension (1 or 2)")
        if min(self.grid_shape) < 4:
            raise InputError("grid_shape must be at least 4 per axis")
        if not self.length_scale > 0:
            raise InputError("length_scale must be positive")


def sample_grf_1d(spec: GrfSpec, jitter: float = 1e-10) -> ParameterField:
    """Zero-mean unit-variance field on [0, 1] with covariance ``exp(-dx^2 / (2 l^2))``."""
    if spec.dimension != 1:
        raise InputError("sample_grf_1d needs a 1D spec")
    x = np.linspace(0.0, 1.0, spec.grid_shape[0])
    cov = np.exp(-0.5 * np.subtract.outer(x, x) ** 2 / spec.length_scale ** 2)
    cov[np.diag_indices_from(cov)] += jitter
    try:
        L = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        raise ConfigurationError("covariance is not positive definite after jitter") from None
    z = np.random.default_rng(spec.seed).standard_normal(x.size)
    return ParameterField("latent", (x,), L @ z, seed=spec.seed)


def make_beta(v: ParameterField) -> ParameterField:
    """Shift a field so that its minimum is exactly 1."""
    vals = v.values - v.values.min() + 1.0
    # guard against rounding in the subtraction
    vals[np.argmin(v.values)] = 1.0
    return ParameterField("wavespeed", v.grid, vals, v.interpolation, v.periodic, v.seed)


def darcy_latent_field(spec: GrfSpec) -> np.ndarray:
    """Gaussian field on the nodes of [0,1]^2 from a cosine series.

    Mode ``(k1, k2)`` has variance ``(pi^2 (k1^2 + k2^2) + tau^2)^-alpha``;
    the constant mode is dropped so the field has zero mean pointwise and
    the two material phases are symmetric.
    """
    if spec.dimension != 2:
        raise InputError("Darcy coefficients need a 2D spec")
    nx, ny = spec.grid_shape
    kx, ky = np.arange(nx), np.arange(ny)
    var = (np.pi ** 2 * (kx[:, None] ** 2 + ky[None, :] ** 2) + spec.tau ** 2) ** (-spec.alpha)
    var[0, 0] = 0.0
    coef = np.sqrt(var) * np.random.default_rng(spec.seed).standard_normal((nx, ny))
    Cx = np.cos(np.pi * np.outer(np.linspace(0.0, 1.0, nx), kx))
    Cy = np.cos(np.pi * np.outer(np.linspace(0.0, 1.0, ny), ky))
    return Cx @ coef @ Cy.T


def sample_darcy_coefficients(spec: GrfSpec, high: float = DARCY_HIGH, low: float = DARCY_LOW,
                              latent: np.ndarray | None = None) -> ParameterField:
    """Two-material coefficient: ``high`` where the latent field is >= 0, else ``low``."""
    if not high > low > 0:
        raise InputError("need high > low > 0")
    g = darcy_latent_field(spec) if latent is None else np.asarray(latent, dtype=np.float64)
    axes = tuple(np.linspace(0.0, 1.0, n) for n in spec.grid_shape)
    return ParameterField("diffusion", axes, np.where(g >= 0.0, high, low), "nearest", seed=spec.seed)


def sample_burgers_ic(spec: GrfSpec, amplitude: float = BURGERS_AMPLITUDE) -> ParameterField:
    """Periodic field on the nodes ``i / n`` with mode standard deviation
    ``amplitude / (4 pi^2 k^2 + 25)`` for ``1 <= k < n / 2``."""
    if spec.dimension != 1:
        raise InputError("Burgers initial conditions need a 1D spec")
    n = spec.grid_shape[0]
    x = np.arange(n) / n
    k = np.arange(1, (n + 1) // 2)
    std = amplitude / (4 * np.pi ** 2 * k ** 2 + 25.0)
    rng = np.random.default_rng(spec.seed)
    a, b = rng.standard_normal(k.size), rng.standard_normal(k.size)
    phase = 2 * np.pi * np.outer(x, k)
    vals = np.cos(phase) @ (std * a) + np.sin(phase) @ (std * b)
    return ParameterField("initial_condition", (x,), vals, "linear", True, spec.seed)


def generate_field(problem: str, seed: int, grid_shape=None) -> ParameterField:
    """One parameter field for ``problem`` from its default generator."""
    if problem not in PROBLEMS:
        raise InputError(f"unknown problem {problem!r}; valid: {', '.join(PROBLEMS)}")
    grid_shape = tuple(grid_shape) if grid_shape is not None else DEFAULT_GRIDS[problem]
    if problem == "convection":
        return make_beta(sample_grf_1d(GrfSpec(1, grid_shape, 0.2, seed))).check()
    if problem == "darcy":
        return sample_darcy_coefficients(GrfSpec(2, grid_shape, seed=seed)).check()
    return sample_burgers_ic(GrfSpec(1, grid_shape, seed=seed))


# ----------------------------------------------------------------------------

@dataclass
class Dataset:
    problem: str
    parameter_fields: list
    split: str
    seeds: list = field(default_factory=list)

    def __post_init__(self):
        if self.problem not in PROBLEMS:
            raise InputError(f"unknown problem {self.problem!r}")
        if self.split not in SPLITS:
            raise InputError(f"unknown split {self.split!r}")
        if len(self.seeds) != len(self.parameter_fields):
            raise InputError("one seed per instance is required")
        if len(set(self.seeds)) != len(self.seeds):
            raise InputError("instance seeds must be distinct")

    def __len__(self) -> int:
        return len(self.parameter_fields)

    def __getitem__(self, i) -> ParameterField:
        return self.parameter_fields[i]


def instance_seeds(size: int, base_seed: int, split: str) -> list:
    if split not in SPLITS:
        raise InputError(f"unknown split {split!r}")
    if not 1 <= size <= TEST_SEED_OFFSET:
        raise InputError(f"size must be between 1 and {TEST_SEED_OFFSET}")
    offset = 0 if split == "train" else TEST_SEED_OFFSET
    return [base_seed + offset + i for i in range(size)]


def build_dataset(problem: str, size: int, base_seed: int = 0, split: str = "train",
                  grid_shape=None) -> Dataset:
    """``size`` fields with seeds ``base_seed + i`` (test seeds are offset by 10^6)."""
    seeds = instance_seeds(size, base_seed, split)
    return Dataset(problem, [generate_field(problem, s, grid_shape) for s in seeds], split, seeds)


# ----------------------------------------------------------------------------
# files

def save_field(path, problem: str, pf: ParameterField, split: str) -> None:
    header = {"kind": "parameter_field", "problem": problem, "field_kind": pf.kind,
              "grid_shape": list(pf.shape), "seed": pf.seed, "split": split,
              "interpolation": pf.interpolation, "periodic": pf.periodic}
    arrays = {f"axis{i}": g for i, g in enumerate(pf.grid)}
    arrays["values"] = pf.values
    write_container(path, _FIELD_MAGIC, _FIELD_VERSION, header, arrays)


def load_field(path):
    """Returns (problem, split, ParameterField)."""
    header, arrays = read_container(path, _FIELD_MAGIC, _FIELD_VERSION)
    if header.get("kind") != "parameter_field":
        raise FormatError(f"{path}: not a parameter-field file")
    grid = tuple(arrays[f"axis{i}"] for i in range(len(header["grid_shape"])))
    pf = ParameterField(header["field_kind"], grid, arrays["values"], header["interpolation"],
                        header["periodic"], header["seed"])
    return header["problem"], header["split"], pf


def write_dataset(datasets, directory) -> Path:
    """Write one file per instance and a manifest covering every split given.

    Files are named ``<split>_<index>.fld``. On failure, files written by
    this call are removed.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    if isinstance(datasets, Dataset):
        datasets = [datasets]
    problems = {d.problem for d in datasets}
    if len(problems) != 1:
        raise InputError("all splits must belong to one problem")
    written, entries = [], []
    try:
        for ds in datasets:
            for i, (pf, seed) in enumerate(zip(ds.parameter_fields, ds.seeds)):
                name = f"{ds.split}_{i:05d}.fld"
                save_field(directory / name, ds.problem, pf, ds.split)
                written.append(directory / name)
                entries.append({"file": name, "seed": int(seed), "split": ds.split,
                                "grid_shape": list(pf.shape)})
        manifest = {"format_version": _FIELD_VERSION, "problem": problems.pop(), "instances": entries}
        atomic_write_bytes(directory / MANIFEST, (json.dumps(manifest, indent=1, sort_keys=True) + "\n").encode())
    except BaseException:
        for p in written:
            p.unlink(missing_ok=True)
        raise
    return directory / MANIFEST


def read_dataset(directory, split: str) -> Dataset:
    directory = Path(directory)
    try:
        manifest = json.loads((directory / MANIFEST).read_text())
    except FileNotFoundError:
        raise InputError(f"no dataset manifest in {directory}") from None
    except json.JSONDecodeError as exc:
        raise FormatError(f"corrupt manifest: {exc}") from None
    if manifest.get("format_version") != _FIELD_VERSION:
        raise FormatError(f"manifest format version {manifest.get('format_version')}, expected {_FIELD_VERSION}")
    fields_, seeds = [], []
    for entry in manifest["instances"]:
        if entry["split"] != split:
            continue
        problem, _, pf = load_field(directory / entry["file"])
        if problem != manifest["problem"]:
            raise FormatError(f"{entry['file']}: problem {problem!r} does not match the manifest")
        fields_.append(pf)
        seeds.append(entry["seed"])
    if not fields_:
        raise InputError(f"dataset in {directory} has no {split!r} instances")
    return Dataset(manifest["problem"], fields_, split, seeds)
