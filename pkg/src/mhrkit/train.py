"""MSE training with Adam and stepped learning-rate decay, the repeated
split-and-retrain evaluation protocol, and regression metrics.

Targets are standardized for optimization and de-standardized for reporting;
every metric in an EvalReport is in physical units (Hz for frequencies, mm
for the anchor radius).
"""

from __future__ import annotations

import sys
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import tensor as T
from .data import Dataset, NormStats, derive_seed, split
from .model import Model, ModelConfig, build_model
from .tensor import Tensor


class DivergenceError(RuntimeError):
    """Training loss became non-finite."""


@dataclass
class TrainSpec:
    epochs: int = 3000
    batch_size: int = 0  # 0 = full batch
    lr0: float = 1e-3
    decay: float = 0.5
    decay_interval: int = 1000
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if self.lr0 <= 0:
            raise ValueError(f"lr0 must be positive, got {self.lr0}")
        if not 0.0 < self.decay <= 1.0:
            raise ValueError(f"decay must be in (0, 1], got {self.decay}")
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")

    def lr_at(self, epoch: int) -> float:
        return self.lr0 * self.decay ** (epoch // self.decay_interval)


def mse_loss(pred: Tensor, target: Tensor) -> Tensor:
    """Mean over all elements of the squared error."""
    if pred.shape != target.shape:
        raise T.ShapeError(
            f"mse_loss shape mismatch: {list(pred.shape)} vs {list(target.shape)}"
        )
    diff = T.sub(pred, target)
    return T.mean_all(T.mul(diff, diff))


def metrics(pred: np.ndarray, target: np.ndarray) -> dict:
    """RMSE (pooled), R2 (uniform average over outputs), relative errors.

    R2 per output column is 1 - SS_res/SS_tot; a zero-variance column has no
    defined R2 and yields None for the average.
    """
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.size == 0 or pred.shape != target.shape:
        raise ValueError(f"metrics needs matching non-empty arrays, got "
                         f"{list(pred.shape)} vs {list(target.shape)}")
    pred2 = pred.reshape(len(pred), -1)
    target2 = target.reshape(len(target), -1)
    err = pred2 - target2

    rmse = float(np.sqrt(np.mean(err ** 2)))
    per_output_rmse = np.sqrt(np.mean(err ** 2, axis=0))

    ss_res = np.sum(err ** 2, axis=0)
    ss_tot = np.sum((target2 - target2.mean(axis=0)) ** 2, axis=0)
    if np.any(ss_tot == 0.0):
        r2 = None
    else:
        r2 = float(np.mean(1.0 - ss_res / ss_tot))

    with np.errstate(divide="ignore", invalid="ignore"):
        rel = np.abs(err) / np.abs(target2)

    return {
        "rmse": rmse,
        "r2": r2,
        "per_output_rmse": per_output_rmse,
        "relative_error": rel,
    }


class Adam:
    """Standard Adam with bias correction over a named parameter dict."""

    def __init__(self, params: dict[str, Tensor], spec: TrainSpec):
        self.params = params
        self.spec = spec
        self.step_count = 0
        self.m = {path: np.zeros_like(p.array) for path, p in params.items()}
        self.v = {path: np.zeros_like(p.array) for path, p in params.items()}

    def step(self, lr: float) -> None:
        s = self.spec
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - s.beta1 ** t
        bc2 = 1.0 - s.beta2 ** t
        for path, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            m = self.m[path]
            v = self.v[path]
            m *= s.beta1
            m += (1.0 - s.beta1) * g
            v *= s.beta2
            v += (1.0 - s.beta2) * g * g
            p.array -= lr * (m / bc1) / (np.sqrt(v / bc2) + s.eps)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None


@dataclass
class EvalReport:
    rmse_train: float
    rmse_test: float
    r2_train: float | None
    r2_test: float | None
    per_output_rmse_train: np.ndarray
    per_output_rmse_test: np.ndarray
    train_seconds: float

    def to_kv(self) -> str:
        lines = [
            f"rmse_train={self.rmse_train:.10g}",
            f"rmse_test={self.rmse_test:.10g}",
            f"r2_train={'undefined' if self.r2_train is None else format(self.r2_train, '.10g')}",
            f"r2_test={'undefined' if self.r2_test is None else format(self.r2_test, '.10g')}",
            "per_output_rmse_test=" + ",".join(format(v, ".10g") for v in self.per_output_rmse_test),
            f"train_seconds={self.train_seconds:.3f}",
        ]
        return "\n".join(lines)


@dataclass
class TrainedModel:
    """A trained network bundled with its normalization statistics."""

    model: Model
    stats: NormStats

    @property
    def task(self) -> str:
        return self.model.config.task

    @property
    def config(self) -> ModelConfig:
        return self.model.config

    def predict_physical(self, raw_inputs: np.ndarray) -> np.ndarray:
        """Predict in physical units from raw (H, r, T) rows."""
        x = self.stats.normalize_inputs(np.atleast_2d(raw_inputs))
        return self.stats.denormalize_targets(self.model.predict(x))


def _epoch_batches(n: int, batch_size: int, rng: np.random.Generator):
    if batch_size <= 0 or batch_size >= n:
        yield np.arange(n)
        return
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]


def train(cfg: ModelConfig, spec: TrainSpec, train_set: Dataset, test_set: Dataset,
          quiet: bool = False, log_stream=None) -> tuple[TrainedModel, EvalReport]:
    """Train one model; returns it with an eval report on both splits.

    Dropout is active during optimization and disabled for every reported
    prediction. Loss becoming non-finite aborts with the epoch and learning
    rate in the diagnostic.
    """
    log_stream = log_stream if log_stream is not None else sys.stderr
    stats = NormStats.fit(train_set, cfg.task)
    x_train = stats.normalize_inputs(train_set.inputs())
    y_train = stats.normalize_targets(train_set.targets(cfg.task))

    model = build_model(cfg)
    params = model.unique_parameters()
    adam = Adam(params, spec)
    drop_rng = np.random.default_rng(derive_seed(spec.seed, "dropout"))
    batch_rng = np.random.default_rng(derive_seed(spec.seed, "batches"))

    started = time.perf_counter()
    for epoch in range(spec.epochs):
        lr = spec.lr_at(epoch)
        epoch_loss = 0.0
        n_batches = 0
        for idx in _epoch_batches(len(x_train), spec.batch_size, batch_rng):
            try:
                with T.Graph() as g:
                    pred = model.forward(x_train[idx], train=True, rng=drop_rng)
                    loss = mse_loss(pred, Tensor(y_train[idx]))
                    loss_value = loss.item()
                    if not np.isfinite(loss_value):
                        raise FloatingPointError("loss is not finite")
                    adam.zero_grad()
                    g.backward(loss)
                adam.step(lr)
            except FloatingPointError as exc:
                raise DivergenceError(
                    f"training diverged at epoch {epoch} (lr={lr:.3g}): {exc}"
                ) from exc
            epoch_loss += loss_value
            n_batches += 1
        if not quiet and (epoch % spec.decay_interval == 0 or epoch == spec.epochs - 1):
            print(f"epoch={epoch} lr={lr:.3g} train_loss={epoch_loss / n_batches:.6g}",
                  file=log_stream)
    seconds = time.perf_counter() - started

    trained = TrainedModel(model, stats)
    report = evaluate(trained, train_set, test_set, seconds)
    return trained, report


def evaluate(trained: TrainedModel, train_set: Dataset, test_set: Dataset,
             train_seconds: float = 0.0) -> EvalReport:
    """Physical-unit metrics with dropout disabled."""
    task = trained.task
    m_train = metrics(trained.predict_physical(train_set.inputs()), train_set.targets(task))
    m_test = metrics(trained.predict_physical(test_set.inputs()), test_set.targets(task))
    return EvalReport(
        rmse_train=m_train["rmse"],
        rmse_test=m_test["rmse"],
        r2_train=m_train["r2"],
        r2_test=m_test["r2"],
        per_output_rmse_train=m_train["per_output_rmse"],
        per_output_rmse_test=m_test["per_output_rmse"],
        train_seconds=train_seconds,
    )


@dataclass
class AveragedReport:
    """Mean metrics over repeated re-split-and-retrain runs."""

    runs: list[EvalReport] = field(default_factory=list)
    failed_runs: list[int] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)
    mean_rmse_train: float = float("nan")
    mean_rmse_test: float = float("nan")
    mean_r2_train: float | None = None
    mean_r2_test: float | None = None
    cov_rmse_test: float = 0.0
    high_variance: bool = False

    def to_kv(self) -> str:
        lines = [
            f"runs={len(self.runs)}",
            f"failed_runs={len(self.failed_runs)}",
            f"mean_rmse_train={self.mean_rmse_train:.10g}",
            f"mean_rmse_test={self.mean_rmse_test:.10g}",
            f"mean_r2_train={'undefined' if self.mean_r2_train is None else format(self.mean_r2_train, '.10g')}",
            f"mean_r2_test={'undefined' if self.mean_r2_test is None else format(self.mean_r2_test, '.10g')}",
            f"cov_rmse_test={self.cov_rmse_test:.10g}",
            f"high_variance={int(self.high_variance)}",
        ]
        for i, run in enumerate(self.runs):
            lines.append(f"run{i}_rmse_train={run.rmse_train:.10g}")
            lines.append(f"run{i}_rmse_test={run.rmse_test:.10g}")
        for w in self.warnings:
            lines.append(f"warning={w}")
        return "\n".join(lines)


HIGH_VARIANCE_COV = 0.5


def evaluate_averaged(cfg: ModelConfig, spec: TrainSpec, dataset: Dataset,
                      runs: int = 3, quiet: bool = True) -> AveragedReport:
    """Re-split and retrain ``runs`` times with derived seeds, average RMSE/R2.

    Run k uses split seed, model seed and train seed all offset by k, so runs
    differ in both the data partition and the initialization. A diverged run
    is recorded as failed and excluded from the means.
    """
    if runs < 1:
        raise ValueError(f"runs must be >= 1, got {runs}")
    report = AveragedReport()
    for k in range(runs):
        train_set, test_set = split(dataset, seed=spec.seed + k)
        run_cfg = replace(cfg, seed=cfg.seed + k)
        run_spec = replace(spec, seed=spec.seed + k)
        try:
            _, run_report = train(run_cfg, run_spec, train_set, test_set, quiet=quiet)
        except DivergenceError as exc:
            report.failed_runs.append(k)
            report.warnings.append(f"run {k} failed: {exc}")
            continue
        report.runs.append(run_report)

    if report.runs:
        test_rmses = np.array([r.rmse_test for r in report.runs])
        report.mean_rmse_train = float(np.mean([r.rmse_train for r in report.runs]))
        report.mean_rmse_test = float(np.mean(test_rmses))
        r2s_train = [r.r2_train for r in report.runs]
        r2s_test = [r.r2_test for r in report.runs]
        if None not in r2s_train:
            report.mean_r2_train = float(np.mean(r2s_train))
        if None not in r2s_test:
            report.mean_r2_test = float(np.mean(r2s_test))
        if report.mean_rmse_test > 0:
            report.cov_rmse_test = float(np.std(test_rmses) / report.mean_rmse_test)
            report.high_variance = report.cov_rmse_test > HIGH_VARIANCE_COV
    if report.failed_runs:
        report.warnings.append(
            f"mean over {len(report.runs)} completed runs; "
            f"{len(report.failed_runs)} diverged"
        )
    return report
