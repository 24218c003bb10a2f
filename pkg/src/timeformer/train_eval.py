"""Training loop, metrics, experiment runners and the attention benchmark."""

from __future__ import annotations

import dataclasses
import hashlib
import logging
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import tensor as T
from .attention import MoSAConfig, aggregate, mosa_weights
from .data import SeriesDataset, gather_windows, window_starts
from .errors import ConfigurationError, DimensionError, ReportError, TrainingError
from .model import Forecaster, ModelConfig, build_variant
from .nn import Adam, clip_grad_norm, make_rng
from .reports import Report, config_hash

logger = logging.getLogger(__name__)

STANDARD_HORIZONS = (24, 48, 96, 192, 336, 720)
GAMMA_GRID = (0.0, 0.01, 0.05, 0.1, 0.5, 1.0, 5.0)
ABLATION_VARIANTS = ("full", "no_segmentation", "standard_attention")
DIVERGENCE_LIMIT = 1e6


def mse(pred, truth) -> float:
    pred, truth = np.asarray(pred, dtype=np.float64), np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise DimensionError(f"prediction shape {pred.shape} != target shape {truth.shape}")
    return float(np.mean((pred - truth) ** 2))


def mae(pred, truth) -> float:
    pred, truth = np.asarray(pred, dtype=np.float64), np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise DimensionError(f"prediction shape {pred.shape} != target shape {truth.shape}")
    return float(np.mean(np.abs(pred - truth)))


def last_value_forecast(inputs: np.ndarray, horizon: int) -> np.ndarray:
    """Repeat the final observed row ``horizon`` times: ``[B, L_h, N] -> [B, L_f, N]``."""
    return np.repeat(inputs[:, -1:, :], horizon, axis=1)


@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 32
    lr: float = 0.005
    seed: int = 0
    early_stop_patience: Optional[int] = None
    repeats: int = 5
    lr_plateau_patience: Optional[int] = None
    max_batches_per_epoch: Optional[int] = None
    grad_clip: Optional[float] = None
    eval_batch_size: int = 256

    def __post_init__(self):
        if self.lr <= 0:
            raise ConfigurationError(f"lr must be > 0, got {self.lr}")
        if self.epochs < 1:
            raise ConfigurationError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1 or self.repeats < 1:
            raise ConfigurationError("batch_size and repeats must be >= 1")


@dataclass
class History:
    train_loss: list = field(default_factory=list)
    val_mse: list = field(default_factory=list)
    best_epoch: int = -1
    steps: int = 0
    window_digest: str = ""


def _epoch_seed(seed: int, epoch: int) -> int:
    return int(np.random.SeedSequence([int(seed), int(epoch)]).generate_state(1)[0])


def predict(model: Forecaster, values: np.ndarray, starts: np.ndarray, batch_size: int = 256):
    """Eval-mode forecasts and targets for windows starting at ``starts``."""
    lookback, horizon = model.config.lookback, model.config.horizon
    preds, targets, inputs = [], [], []
    for lo in range(0, len(starts), batch_size):
        x, y = gather_windows(values, starts[lo:lo + batch_size], lookback, horizon)
        preds.append(model.forecast(x))
        targets.append(y)
        inputs.append(x)
    if not preds:
        raise ReportError("no windows to evaluate")
    return np.concatenate(preds), np.concatenate(targets), np.concatenate(inputs)


def train(model: Forecaster, dataset: SeriesDataset, config: TrainConfig,
          on_epoch: Optional[Callable[[int, float, float], None]] = None):
    """Fit ``model`` with Adam on MSE; keeps the parameters of the best validation epoch."""
    lookback, horizon = model.config.lookback, model.config.horizon
    values = dataset.model_values
    if values.shape[1] == 0:
        raise DimensionError("dataset has no channels")
    train_range, val_range, _ = dataset.ranges()
    opt = Adam(model.parameters(), lr=config.lr)
    history = History()
    digest = hashlib.sha256()
    val_starts = window_starts(val_range, lookback, horizon) if len(val_range) else np.zeros(0, dtype=np.int64)
    best_state, best_val = None, math.inf
    stale = plateau = 0

    for epoch in range(config.epochs):
        starts = window_starts(train_range, lookback, horizon, seed=_epoch_seed(config.seed, epoch))
        if len(starts) == 0:
            raise TrainingError("train split has no complete windows", epoch=epoch)
        digest.update(starts.tobytes())
        model.train()
        losses = []
        for b, lo in enumerate(range(0, len(starts), config.batch_size)):
            if config.max_batches_per_epoch is not None and b >= config.max_batches_per_epoch:
                break
            x, y = gather_windows(values, starts[lo:lo + config.batch_size], lookback, horizon)
            diff = T.sub(model(x), y)
            loss = T.mean(T.mul(diff, diff))
            value = loss.item()
            if not math.isfinite(value) or value > DIVERGENCE_LIMIT:
                raise TrainingError(f"training diverged at epoch {epoch}, step {history.steps}: loss={value}",
                                    epoch=epoch, step=history.steps)
            loss.backward()
            if config.grad_clip is not None:
                clip_grad_norm(opt.params, config.grad_clip)
            opt.step()
            history.steps += 1
            losses.append(value)
        history.train_loss.append(float(np.mean(losses)))

        if len(val_starts):
            pred, truth, _ = predict(model, values, val_starts, config.eval_batch_size)
            val = mse(pred, truth)
        else:
            val = history.train_loss[-1]
        history.val_mse.append(val)
        if on_epoch is not None:
            on_epoch(epoch, history.train_loss[-1], val)
        logger.debug("epoch %d train=%.6f val=%.6f", epoch, history.train_loss[-1], val)

        if val < best_val:
            best_val, best_state, history.best_epoch = val, model.state_dict(), epoch
            stale = plateau = 0
        else:
            stale += 1
            plateau += 1
            if config.lr_plateau_patience and plateau >= config.lr_plateau_patience:
                opt.lr *= 0.5
                plateau = 0
            if config.early_stop_patience and stale >= config.early_stop_patience:
                break

    if best_state is not None:
        model.load_state_dict(best_state)
    history.window_digest = digest.hexdigest()[:16]
    model.eval()
    return model, history


def evaluate(model: Forecaster, dataset: SeriesDataset, split: str = "test", denormalized: bool = False,
             batch_size: int = 256) -> dict:
    """MSE/MAE over every window of ``split`` plus the last-value baseline."""
    starts = window_starts(dataset.split_range(split), model.config.lookback, model.config.horizon)
    if len(starts) == 0:
        raise ReportError(f"{split} split has no complete windows for lookback "
                          f"{model.config.lookback} + horizon {model.config.horizon}")
    pred, truth, inputs = predict(model, dataset.model_values, starts, batch_size)
    naive = last_value_forecast(inputs, model.config.horizon)
    result = {"mse": mse(pred, truth), "mae": mae(pred, truth),
              "naive_mse": mse(naive, truth), "naive_mae": mae(naive, truth), "windows": int(len(starts))}
    if denormalized and dataset.norm_mean is not None:
        m, s = dataset.norm_mean, dataset.norm_std
        rp, rt, rn = pred * s + m, truth * s + m, naive * s + m
        result.update(raw_mse=mse(rp, rt), raw_mae=mae(rp, rt), raw_naive_mse=mse(rn, rt), raw_naive_mae=mae(rn, rt))
    return result


@dataclass
class HorizonResult:
    horizon: int
    mse_repeats: list
    mae_repeats: list
    naive_mse: float
    naive_mae: float
    extra: dict = field(default_factory=dict)

    @property
    def mse(self) -> float:
        return float(np.mean(self.mse_repeats))

    @property
    def mae(self) -> float:
        return float(np.mean(self.mae_repeats))


@dataclass
class ForecastReport:
    results: list
    model_config: dict
    train_config: dict
    seeds: list
    dataset: str
    wall_clock_seconds: float = 0.0

    def to_report(self, title: str = "forecast") -> Report:
        rows = []
        for r in self.results:
            row = {"horizon": r.horizon, "mse": r.mse, "mae": r.mae}
            for i, (a, b) in enumerate(zip(r.mse_repeats, r.mae_repeats)):
                row[f"mse_r{i}"] = a
                row[f"mae_r{i}"] = b
            row.update(naive_mse=r.naive_mse, naive_mae=r.naive_mae)
            row.update(r.extra)
            rows.append(row)
        meta = {"dataset": self.dataset, "seeds": self.seeds, "model": self.model_config, "train": self.train_config}
        return Report(title, rows, meta, timing={"wall_clock_seconds": self.wall_clock_seconds})


def _seeds(train_config: TrainConfig) -> list[int]:
    return [train_config.seed + i for i in range(train_config.repeats)]


def fit_and_score(dataset: SeriesDataset, model_config: ModelConfig, train_config: TrainConfig, seed: int,
                  denormalized: bool = False):
    """One repeat: build with ``seed``, train with ``seed``, evaluate on test."""
    model = build_variant(model_config, seed=seed)
    model, history = train(model, dataset, dataclasses.replace(train_config, seed=seed))
    scores = evaluate(model, dataset, "test", denormalized=denormalized)
    return model, history, scores


def run_experiment(dataset: SeriesDataset, model_config: ModelConfig, train_config: TrainConfig,
                   horizons: Sequence[int], denormalized: bool = False, keep_models: bool = False):
    """Train ``repeats`` models per horizon; returns ``(ForecastReport, models)``."""
    t0 = time.perf_counter()
    seeds = _seeds(train_config)
    results, models = [], {}
    for h in horizons:
        cfg = dataclasses.replace(model_config, horizon=int(h))
        mses, maes, extra = [], [], {}
        naive = None
        for seed in seeds:
            model, _, scores = fit_and_score(dataset, cfg, train_config, seed, denormalized)
            mses.append(scores["mse"])
            maes.append(scores["mae"])
            naive = scores
            if keep_models:
                models[(int(h), seed)] = model
        if denormalized and "raw_mse" in naive:
            extra = {"raw_naive_mse": naive["raw_naive_mse"], "raw_naive_mae": naive["raw_naive_mae"]}
        results.append(HorizonResult(int(h), mses, maes, naive["naive_mse"], naive["naive_mae"], extra))
    report = ForecastReport(results, cfg_dict(model_config), cfg_dict(train_config), seeds, dataset.source,
                            time.perf_counter() - t0)
    return report, models


def cfg_dict(cfg) -> dict:
    return dataclasses.asdict(cfg)


def max_workers() -> int:
    try:
        return max(1, int(os.environ.get("MOSA_THREADS", "1")))
    except ValueError:
        return 1


def _compare(dataset: SeriesDataset, configs: list, labels: list, label_name: str, train_config: TrainConfig,
             title: str, notes: Sequence[str] = ()) -> Report:
    """Train every (config, seed) point, possibly on worker threads, and tabulate means."""
    t0 = time.perf_counter()
    seeds = _seeds(train_config)
    points = [(i, seed) for i in range(len(configs)) for seed in seeds]

    def work(point):
        i, seed = point
        _, history, scores = fit_and_score(dataset, configs[i], train_config, seed)
        return scores, history.window_digest

    with ThreadPoolExecutor(max_workers=max_workers()) as pool:
        outcomes = list(pool.map(work, points))
    rows = []
    for i, label in enumerate(labels):
        picked = [outcomes[j] for j, (ci, _) in enumerate(points) if ci == i]
        mses = [s["mse"] for s, _ in picked]
        maes = [s["mae"] for s, _ in picked]
        rows.append({label_name: label, "horizon": configs[i].horizon, "mse": float(np.mean(mses)),
                     "mae": float(np.mean(maes)), "mse_repeats": mses, "mae_repeats": maes,
                     "naive_mse": picked[0][0]["naive_mse"], "windows_digest": picked[0][1]})
    meta = {"dataset": dataset.source, "seeds": seeds, "train": cfg_dict(train_config),
            "models": [cfg_dict(c) for c in configs]}
    return Report(title, rows, meta, notes=list(notes), timing={"wall_clock_seconds": time.perf_counter() - t0})


def run_ablation(dataset: SeriesDataset, base_config: ModelConfig, train_config: TrainConfig,
                 horizons: Optional[Sequence[int]] = None) -> Report:
    horizons = horizons or [base_config.horizon]
    configs, labels = [], []
    for variant in ABLATION_VARIANTS:
        for h in horizons:
            configs.append(dataclasses.replace(base_config, variant=variant, horizon=int(h)))
            labels.append(variant)
    notes = ["reference ordering (ETTh1 average MSE): full 0.394 < standard_attention 0.411 < no_segmentation 0.426"]
    return _compare(dataset, configs, labels, "variant", train_config, "ablation", notes)


def sweep_gamma(dataset: SeriesDataset, base_config: ModelConfig, train_config: TrainConfig,
                gammas: Sequence[float] = GAMMA_GRID) -> Report:
    configs = [dataclasses.replace(base_config, gamma=float(g)) for g in gammas]
    notes = ["reference optimum: gamma=0.1 on ETTh1 and ETTm1, gamma=0.05 on Weather"]
    return _compare(dataset, configs, [float(g) for g in gammas], "gamma", train_config, "sweep-gamma", notes)


def sweep_scales(dataset: SeriesDataset, base_config: ModelConfig, train_config: TrainConfig,
                 scale_values: Sequence[int] = (1, 2, 3, 4)) -> Report:
    configs = [dataclasses.replace(base_config, num_scales=int(s)) for s in scale_values]
    notes = ["reference optimum: S=1 on ETTh1, S=3 on ETTm1, S=4 on Weather"]
    return _compare(dataset, configs, [int(s) for s in scale_values], "scales", train_config, "sweep-scales", notes)


def _attention_forward(q: T.Tensor, k: T.Tensor, v: T.Tensor, config: MoSAConfig) -> T.Tensor:
    return aggregate(mosa_weights(q, k, config), v)


def benchmark_attention(t_values: Sequence[int] = (16, 64, 256, 1024), d: int = 64, batch: int = 8,
                        repeats: int = 10, gamma: float = 0.1, seed: int = 0) -> Report:
    """Best-of-``repeats`` forward time of SA and MoSA on ``[batch, T, d]`` inputs.

    Only the attention core is timed (scores, softmax, modulation, weighted
    sum); the projections are identical for both mechanisms. The two
    mechanisms alternate inside each repeat so drift in machine load hits both.
    """
    rng = make_rng(seed)
    mechanisms = {"SA": MoSAConfig.standard(d, 1), "MoSA": MoSAConfig(model_dim=d, num_heads=1, gamma=gamma)}
    rows = []
    timings: dict = {name: [] for name in mechanisms}
    for length in t_values:
        q, k, v = (T.Tensor(rng.standard_normal((batch, length, d))) for _ in range(3))
        best = dict.fromkeys(mechanisms, math.inf)
        with T.no_grad():
            for cfg in mechanisms.values():
                _attention_forward(q, k, v, cfg)  # warm caches
            for _ in range(repeats):
                for name, cfg in mechanisms.items():
                    t0 = time.perf_counter()
                    _attention_forward(q, k, v, cfg)
                    best[name] = min(best[name], time.perf_counter() - t0)
        for name in mechanisms:
            timings[name].append(best[name])
            rows.append({"mechanism": name, "T": int(length), "d": d, "batch": batch, "seconds": best[name]})
    slope = loglog_slope(t_values, timings["SA"])
    ratio = timings["MoSA"][-1] / timings["SA"][-1]
    notes = [f"SA log-log slope in T: {slope:.3f}", f"MoSA/SA time ratio at T={t_values[-1]}: {ratio:.3f}"]
    return Report("bench", rows, {"d": d, "batch": batch, "repeats": repeats, "gamma": gamma, "seed": seed},
                  notes=notes, summary={"sa_slope": slope, "mosa_ratio": ratio})


def loglog_slope(xs, ys) -> float:
    lx, ly = np.log(np.asarray(xs, dtype=float)), np.log(np.asarray(ys, dtype=float))
    return float(np.polyfit(lx, ly, 1)[0])


__all__ = [
    "mse", "mae", "TrainConfig", "History", "train", "evaluate", "ForecastReport", "HorizonResult",
    "run_experiment", "run_ablation", "sweep_gamma", "sweep_scales", "benchmark_attention",
    "last_value_forecast", "config_hash",
]
