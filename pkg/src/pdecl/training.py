"""Bilevel training, the penalty baseline, checkpoints and evaluation."""
from __future__ import annotations

import dataclasses
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import io as pio
from .errors import ConfigurationError, FormatError, InputError, PdeclError, SolverError
from .layer import SolutionField, infer
from .network import NetworkParams, init_params
from .oracles import GridSolution, ORACLE_VERSION, residual_on_grid
from .problems import Problem, make_problem

log = logging.getLogger(__name__)

MODES = ("hard", "soft", "oracle")
_CKPT_MAGIC = b"PDECLCKP"
_CKPT_VERSION = 1


@dataclass
class TrainConfig:
    problem: str = "convection"
    mode: str = "hard"
    N: int = 100
    hidden: tuple = (128, 128, 128, 128)
    activation: str = "tanh"
    first_scale: float = 1.0
    n_fit: int = 200
    n_loss: int = 100
    n_icbc: int = 50
    n_features: int | None = None
    fit_mode: str | None = None
    icbc_weight: float | None = None
    batch_size: int = 1
    steps: int = 1000
    learning_rate: float = 1e-3
    optimizer: str = "adam"
    adam_betas: tuple = (0.9, 0.999)
    adam_eps: float = 1e-8
    tol: float = 1e-8
    damping: float = 0.0
    seed: int = 0
    train_grid: tuple | None = None
    eval_grid: tuple = (50, 50)
    eval_every: int = 0
    eval_instances: int = 0
    infer_points: int | None = None
    max_consecutive_failures: int = 3
    ema_decay: float = 0.0
    lr_schedule: str = "constant"

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        self.adam_betas = tuple(float(b) for b in self.adam_betas)
        self.eval_grid = tuple(int(g) for g in self.eval_grid)
        if self.train_grid is not None:
            self.train_grid = tuple(int(g) for g in self.train_grid)
        if self.mode not in ("hard", "soft"):
            raise ConfigurationError(f"mode must be 'hard' or 'soft', got {self.mode!r}")
        if self.optimizer != "adam":
            raise ConfigurationError(f"unsupported optimizer {self.optimizer!r}")
        if min(self.N, self.n_fit, self.n_loss, self.batch_size) < 1:
            raise ConfigurationError("N, n_fit, n_loss and batch_size must be at least 1")
        if not self.learning_rate >= 0:
            raise ConfigurationError("learning_rate must be non-negative")
        if self.steps < 0 or self.eval_every < 0:
            raise ConfigurationError("steps and eval_every must be non-negative")
        if self.lr_schedule not in ("constant", "cosine"):
            raise ConfigurationError(f"lr_schedule must be 'constant' or 'cosine', got {self.lr_schedule!r}")
        if not 0.0 <= self.ema_decay < 1.0:
            raise ConfigurationError("ema_decay must be in [0, 1)")
        if len(self.adam_betas) != 2 or not all(0 <= b < 1 for b in self.adam_betas):
            raise ConfigurationError("adam_betas must be two numbers in [0, 1)")

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - names)
        if unknown:
            raise ConfigurationError(f"unknown config key(s): {', '.join(unknown)}")
        return cls(**data)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
        return d

    def make_problem(self) -> Problem:
        kwargs = {"fit_mode": self.fit_mode, "n_icbc": self.n_icbc}
        if self.n_features is not None:
            kwargs["n_features"] = self.n_features
        if self.icbc_weight is not None:
            kwargs["icbc_weight"] = self.icbc_weight
        return make_problem(self.problem, **kwargs)

    @property
    def infer_size(self) -> int:
        return self.infer_points if self.infer_points is not None else self.n_fit


# ----------------------------------------------------------------------------

def learning_rate_at(config: TrainConfig, step: int) -> float:
    """Learning rate for 0-based ``step``; cosine decays to 0 at ``config.steps``."""
    if config.lr_schedule == "constant" or config.steps == 0:
        return config.learning_rate
    return 0.5 * config.learning_rate * (1.0 + np.cos(np.pi * step / config.steps))


class Adam:
    """Adam on a flat parameter vector."""

    def __init__(self, size: int, lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8):
        self.lr, self.betas, self.eps = lr, tuple(betas), eps
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0

    def step(self, x: np.ndarray, grad: np.ndarray) -> np.ndarray:
        b1, b2 = self.betas
        self.t += 1
        self.m = b1 * self.m + (1 - b1) * grad
        self.v = b2 * self.v + (1 - b2) * grad * grad
        mhat = self.m / (1 - b1 ** self.t)
        vhat = self.v / (1 - b2 ** self.t)
        return x - self.lr * mhat / (np.sqrt(vhat) + self.eps)


@dataclass
class Model:
    """A trained basis (hard), a basis plus linear head (soft), or a
    pass-through of reference solutions (oracle)."""

    mode: str
    problem: Problem
    params: NetworkParams | None = None
    head: np.ndarray | None = None
    config: TrainConfig | None = None

    def flat(self) -> np.ndarray:
        x = self.params.flat()
        return x if self.head is None else np.concatenate([x, self.head])

    def with_flat(self, x) -> "Model":
        n = self.params.n_params
        head = None if self.head is None else np.array(x[n:])
        return dataclasses.replace(self, params=self.params.with_flat(x[:n]), head=head)


def new_model(config: TrainConfig) -> Model:
    problem = config.make_problem()
    sizes = [problem.n_inputs, *config.hidden, config.N]
    params = init_params(sizes, seed=config.seed, activation=config.activation,
                         first_scale=config.first_scale)
    head = None
    if config.mode == "soft":
        head = np.full(config.N + 1, 1.0 / config.N)
        head[-1] = 0.0
    return Model(config.mode, problem, params, head, config)


def step_seed(seed: int, step: int) -> int:
    return int(np.random.SeedSequence([seed, step]).generate_state(1, np.uint32)[0])


def _instance_seed(seed: int, k: int) -> list:
    return [seed, k]


# ----------------------------------------------------------------------------

@dataclass
class StepInfo:
    loss: float
    fit_residual: float = 0.0
    failures: int = 0


def _batch_step(model: Model, phi_batch, config: TrainConfig, seed: int, optimizer: Adam | None, kind: str):
    problem = model.problem
    grads, losses, fit_res, failures = [], [], [], 0
    for k, phi in enumerate(phi_batch):
        plan = problem.plan(config.n_fit, config.n_loss, _instance_seed(seed, k))
        try:
            if kind == "hard":
                res = problem.hard_loss(model.params, phi, plan, config.tol, config.damping)
                g = res.grad.flat()
                fit_res.append(res.fit_residual)
            else:
                res = problem.soft_loss(model.params, model.head, phi, plan)
                g = np.concatenate([res.grad.flat(), res.head_grad])
            if not (np.isfinite(res.loss) and np.all(np.isfinite(g))):
                raise SolverError("non-finite loss or gradient")
        except (PdeclError, np.linalg.LinAlgError, FloatingPointError) as exc:
            failures += 1
            log.warning("step seed %d, instance %d skipped: %s", seed, k, exc)
            continue
        grads.append(g)
        losses.append(res.loss)
    if not grads:
        raise SolverError(f"every instance in the batch failed (step seed {seed})")
    g = np.mean(grads, axis=0)
    x = model.flat()
    if optimizer is None:
        optimizer = Adam(x.size, config.learning_rate, config.adam_betas, config.adam_eps)
    new = model.with_flat(optimizer.step(x, g)) if config.learning_rate > 0 else model
    info = StepInfo(float(np.mean(losses)), float(max(fit_res)) if fit_res else 0.0, failures)
    return new, info


def hard_train_step(model: Model, phi_batch, config: TrainConfig, step_seed: int,
                    optimizer: Adam | None = None):
    """One Adam step on the mean held-out residual at the fitted weights.

    Returns (updated model, StepInfo).
    """
    if model.mode != "hard":
        raise ConfigurationError("hard_train_step needs a hard-mode model")
    return _batch_step(model, phi_batch, config, step_seed, optimizer, "hard")


def soft_train_step(model: Model, phi_batch, config: TrainConfig, step_seed: int,
                    optimizer: Adam | None = None):
    """One Adam step on the penalty loss of the baseline."""
    if model.mode != "soft":
        raise ConfigurationError("soft_train_step needs a soft-mode model")
    return _batch_step(model, phi_batch, config, step_seed, optimizer, "soft")


# ----------------------------------------------------------------------------

@dataclass
class Metrics:
    relative_l2_mean: float
    relative_l2_std: float
    residual_loss_mean: float
    residual_loss_std: float
    per_instance: list
    step: int = 0
    wall_time: float = 0.0

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class TrainHistory:
    records: list = field(default_factory=list)

    def append(self, record: dict) -> None:
        if self.records and record["step"] <= self.records[-1]["step"]:
            raise InputError("history steps must be strictly increasing")
        self.records.append(record)

    def losses(self) -> list:
        return [r["loss"] for r in self.records]

    def __len__(self) -> int:
        return len(self.records)


def relative_l2(pred, target) -> float:
    pred, target = np.ravel(pred), np.ravel(target)
    denom = np.linalg.norm(target)
    if denom == 0:
        raise InputError("target solution is identically zero")
    return float(np.linalg.norm(pred - target) / denom)


def predict_grid(model: Model, phi, axes: tuple, seed: int = 0, oracle: GridSolution | None = None,
                 subset_size: int | None = None) -> GridSolution:
    """Model solution on a tensor grid (hard models fit on a random subset)."""
    problem = model.problem
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([m.ravel() for m in mesh], axis=1)
    shape = tuple(len(a) for a in axes)
    if model.mode == "oracle":
        if oracle is None:
            raise InputError("pass-through model needs the reference solution")
        return GridSolution(oracle.values, oracle.axes, problem.name, "model")
    if model.mode == "soft":
        vals = problem.predict(model.params, model.head[:-1], phi, pts, bias=model.head[-1])
    else:
        cfg = model.config
        n = subset_size or (cfg.infer_size if cfg else 200)
        fld = SolutionField(model.params, None, problem, phi, problem.mollified)
        tol = cfg.tol if cfg else 1e-8
        damping = cfg.damping if cfg else 0.0
        vals, _ = infer(fld, pts, min(n, pts.shape[0]), seed, tol=tol, damping=damping)
    return GridSolution(vals.reshape(shape), axes, problem.name, "model")


def evaluate(model: Model, test_dataset, oracle_solutions, subset_size: int | None = None,
             seed: int = 0, step: int = 0) -> tuple:
    """Relative L2 and grid residual of the model on each test instance.

    Returns (Metrics, list of predicted GridSolutions).
    """
    t0 = time.perf_counter()
    rel, resid, per, preds = [], [], [], []
    for i, phi in enumerate(test_dataset.parameter_fields):
        oracle = oracle_solutions[i] if i < len(oracle_solutions) else None
        inst_seed = test_dataset.seeds[i]
        if oracle is None:
            raise InputError(f"no reference solution for test instance {i} (seed {inst_seed})")
        pred = predict_grid(model, phi, oracle.axes, seed=seed + i, oracle=oracle, subset_size=subset_size)
        e = relative_l2(pred.values, oracle.values)
        r = residual_on_grid(pred, model.problem.name, phi)
        rel.append(e)
        resid.append(r)
        preds.append(pred)
        per.append({"index": i, "seed": int(inst_seed), "relative_l2": e, "residual_loss": r})
    m = Metrics(float(np.mean(rel)), float(np.std(rel)), float(np.mean(resid)), float(np.std(resid)),
                per, step, time.perf_counter() - t0)
    return m, preds


def oracle_cache_path(cache_dir, problem: str, seed: int, grid_shape) -> Path:
    shape = "x".join(str(int(g)) for g in grid_shape)
    return Path(cache_dir) / f"oracle_{problem}_{seed}_{shape}_v{ORACLE_VERSION}.grd"


def reference_solutions(problem: Problem, dataset, grid_shape, cache_dir=None) -> list:
    """Reference grids for a dataset, read from or written to ``cache_dir``."""
    out = []
    for phi, seed in zip(dataset.parameter_fields, dataset.seeds):
        path = oracle_cache_path(cache_dir, problem.name, seed, grid_shape) if cache_dir else None
        if path is not None and path.exists():
            sol = GridSolution.load(path)
        else:
            sol = problem.oracle(phi, grid_shape)
            if path is not None:
                sol.save(path)
        out.append(sol)
    return out


# ----------------------------------------------------------------------------
# checkpoints

@dataclass
class Checkpoint:
    """Training state. ``average`` is the exponential moving average of the
    flat parameters before debiasing by ``average_norm`` = 1 - decay^updates."""

    model: Model
    step: int = 0
    optimizer: Adam | None = None
    average: np.ndarray | None = None
    average_norm: float = 0.0

    def eval_model(self) -> Model:
        """The averaged parameters when tracked, else the current ones."""
        if self.average is None or self.average_norm <= 0.0:
            return self.model
        return self.model.with_flat(self.average / self.average_norm)


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    model = ckpt.model
    header = {"kind": "checkpoint", "mode": model.mode, "step": int(ckpt.step),
              "problem": model.problem.config(),
              "config": None if model.config is None else model.config.to_dict()}
    arrays = {}
    if model.params is not None:
        p = model.params
        header.update(layer_sizes=list(p.layer_sizes), activation=p.activation, seed=p.seed)
        for i, (W, b) in enumerate(zip(p.weights, p.biases)):
            arrays[f"W{i}"] = W
            arrays[f"b{i}"] = b
    if model.head is not None:
        arrays["head"] = model.head
    if ckpt.optimizer is not None:
        header["adam_t"] = ckpt.optimizer.t
        arrays["adam_m"] = ckpt.optimizer.m
        arrays["adam_v"] = ckpt.optimizer.v
    if ckpt.average is not None:
        header["average_norm"] = float(ckpt.average_norm)
        arrays["average"] = ckpt.average
    pio.write_container(path, _CKPT_MAGIC, _CKPT_VERSION, header, arrays)


def load_checkpoint(path) -> Checkpoint:
    header, arrays = pio.read_container(path, _CKPT_MAGIC, _CKPT_VERSION)
    if header.get("kind") != "checkpoint":
        raise FormatError(f"{path}: not a checkpoint")
    try:
        problem = make_problem(header["problem"]["problem"], **header["problem"])
        config = None if header["config"] is None else TrainConfig.from_dict(header["config"])
        params = None
        if "layer_sizes" in header:
            n = len(header["layer_sizes"]) - 1
            params = NetworkParams(tuple(header["layer_sizes"]), [arrays[f"W{i}"] for i in range(n)],
                                   [arrays[f"b{i}"] for i in range(n)], header["activation"], header["seed"])
    except (KeyError, TypeError) as exc:
        raise FormatError(f"{path}: incomplete checkpoint ({exc})") from None
    model = Model(header["mode"], problem, params, arrays.get("head"), config)
    opt = None
    if "adam_m" in arrays and config is not None:
        opt = Adam(arrays["adam_m"].size, config.learning_rate, config.adam_betas, config.adam_eps)
        opt.m, opt.v, opt.t = arrays["adam_m"], arrays["adam_v"], int(header["adam_t"])
    average = arrays.get("average")
    if average is not None and average.size != model.flat().size:
        raise FormatError(f"{path}: parameter average has the wrong length")
    return Checkpoint(model, int(header["step"]), opt, average, float(header.get("average_norm", 0.0)))


# ----------------------------------------------------------------------------

def batch_indices(n_instances: int, batch_size: int, seed: int, step: int) -> list:
    """Instances for ``step``: consecutive slices of a per-epoch shuffle."""
    out = []
    for j in range(batch_size):
        pos = step * batch_size + j
        epoch, k = divmod(pos, n_instances)
        perm = np.random.default_rng([seed, 7919, epoch]).permutation(n_instances)
        out.append(int(perm[k]))
    return out


def train(config: TrainConfig, dataset, test_dataset=None, oracle_solutions=None,
          checkpoint_path=None, history_path=None, resume: Checkpoint | None = None,
          stop_after: int | None = None):
    """Run ``config.steps`` optimizer steps over shuffled parameter fields.

    Every ``eval_every`` steps the model is evaluated on ``test_dataset``
    (first ``eval_instances`` entries when positive) and, if a path is given,
    checkpointed. ``resume`` continues from a saved step with its optimizer
    state; ``stop_after`` ends the run early (for interruption tests).
    Returns (Checkpoint, TrainHistory).
    """
    if dataset.split != "train":
        raise InputError("training needs the train split")
    if len(dataset) == 0:
        raise InputError("empty training set")
    avg, avg_norm = None, 0.0
    if resume is not None:
        model, start, opt = resume.model, resume.step, resume.optimizer
        avg, avg_norm = resume.average, resume.average_norm
        if model.mode != config.mode:
            raise ConfigurationError("checkpoint mode does not match the config")
    else:
        model, start, opt = new_model(config), 0, None
    decay = config.ema_decay
    if decay > 0.0 and avg is None:
        avg = np.zeros(model.flat().size)
    if opt is None:
        opt = Adam(model.flat().size, config.learning_rate, config.adam_betas, config.adam_eps)
    history = TrainHistory()
    if history_path is not None and not Path(history_path).exists():
        pio.write_records(history_path, [])
    step_fn = hard_train_step if config.mode == "hard" else soft_train_step
    eval_set, eval_refs = _eval_subset(test_dataset, oracle_solutions, config.eval_instances)
    consecutive = 0
    end = config.steps if stop_after is None else min(config.steps, stop_after)
    t0 = time.perf_counter()
    for step in range(start, end):
        idx = batch_indices(len(dataset), config.batch_size, config.seed, step)
        batch = [dataset.parameter_fields[i] for i in idx]
        opt.lr = learning_rate_at(config, step)
        try:
            model, info = step_fn(model, batch, config, step_seed(config.seed, step), opt)
            consecutive = 0
        except SolverError as exc:
            consecutive += 1
            log.warning("step %d failed: %s", step, exc)
            if consecutive >= config.max_consecutive_failures:
                raise
            continue
        if decay > 0.0:
            avg = decay * avg + (1.0 - decay) * model.flat()
            avg_norm = decay * avg_norm + (1.0 - decay)
        record = {"step": step + 1, "loss": info.loss, "fit_residual": info.fit_residual,
                  "failures": info.failures, "instances": idx}
        if config.eval_every and (step + 1) % config.eval_every == 0:
            current = Checkpoint(model, step + 1, opt, avg, avg_norm)
            if eval_set is not None:
                metrics, _ = evaluate(current.eval_model(), eval_set, eval_refs, seed=config.seed, step=step + 1)
                record["metrics"] = metrics.to_dict()
            if checkpoint_path is not None:
                save_checkpoint(checkpoint_path, current)
        record["elapsed"] = time.perf_counter() - t0
        history.append(record)
        if history_path is not None:
            pio.write_records(history_path, [_stable(record)], append=True)
    ckpt = Checkpoint(model, max(end, start), opt, avg, avg_norm)
    if checkpoint_path is not None:
        save_checkpoint(checkpoint_path, ckpt)
    return ckpt, history


def _stable(record: dict) -> dict:
    """Copy of a history record without wall-clock fields."""
    out = {k: v for k, v in record.items() if k != "elapsed"}
    if "metrics" in out:
        out["metrics"] = {k: v for k, v in out["metrics"].items() if k != "wall_time"}
    return out


def _eval_subset(test_dataset, refs, count):
    if test_dataset is None or refs is None:
        return None, None
    if count and count < len(test_dataset):
        from .fields import Dataset
        sub = Dataset(test_dataset.problem, test_dataset.parameter_fields[:count], test_dataset.split,
                      test_dataset.seeds[:count])
        return sub, refs[:count]
    return test_dataset, refs
