"""Window datasets, SGD training loops, conformal calibration, and inference.

Training runs in standardized feature space. Forecast emission inverts the
per-edge standardization; localization targets are z-scored per dimension
with event time expressed relative to the window end.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError, DataError, NumericalError
from ..features import FeatureTensor, time_bin, unstandardize_values
from ..network import TransitionPair
from ..util import ceil_quantile, sub_rng
from .autodiff import Tensor
from .losses import bounds_mse, interval_loss
from .model import (CalibrationTable, Forecaster, LocalizationCalibration,
                    Localizer, ModelHyper, TARGETS)

SPLIT_NAMES = ("train", "calib", "test")


@dataclass(frozen=True)
class SplitOrigins:
    train: list[int]
    calib: list[int]
    test: list[int]

    def of(self, name: str) -> list[int]:
        return getattr(self, name)


def window_origins(n_bins: int, lookback: int, horizons: int) -> list[int]:
    """Forecast origins tau with a full lookback behind and horizons ahead."""
    first = lookback - 1
    last = n_bins - horizons - 1
    if last < first:
        raise DataError(f"series of {n_bins} bins too short for lookback "
                        f"{lookback} + horizons {horizons}")
    return list(range(first, last + 1))


def chronological_split(origins: list[int], fractions: tuple[float, float, float],
                        gap: int) -> SplitOrigins:
    """Contiguous train/calib/test blocks with `gap` origins dropped between."""
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ConfigError(f"split fractions must sum to 1, got {fractions}")
    n = len(origins)
    n_train = int(round(fractions[0] * n))
    n_calib = int(round(fractions[1] * n))
    train = origins[:n_train]
    calib = origins[min(n, n_train + gap):n_train + gap + n_calib]
    test = origins[min(n, n_train + gap + n_calib + gap):]
    if not train or not calib or not test:
        raise DataError(f"split of {n} origins left an empty section "
                        f"(train={len(train)}, calib={len(calib)}, test={len(test)})")
    return SplitOrigins(train=train, calib=calib, test=test)


def window_at(values: np.ndarray, tau: int, lookback: int) -> np.ndarray:
    """(L, E, 5) slice ending at bin tau inclusive."""
    return np.transpose(values[:, tau - lookback + 1:tau + 1, :], (1, 0, 2))


def targets_at(values: np.ndarray, tau: int, horizons: int,
               spike_weight: float) -> tuple[np.ndarray, np.ndarray]:
    """Per-horizon targets (E, 2) and spike-emphasized weights (E, 2)."""
    z = np.stack([values[:, tau + h, 0:2] for h in range(1, horizons + 1)])
    spikes = np.stack([values[:, tau + h, 4] for h in range(1, horizons + 1)])
    w = 1.0 + (spike_weight - 1.0) * spikes
    return z, np.repeat(w[:, :, None], len(TARGETS), axis=2)


def clipped_sgd_step(params: list[Tensor], lr: float, clip: float) -> None:
    total = 0.0
    for p in params:
        if p.grad is not None:
            total += float((p.grad * p.grad).sum())
    norm = math.sqrt(total)
    scale = lr if norm <= clip or norm == 0 else lr * clip / norm
    for p in params:
        if p.grad is not None:
            p.data = p.data - scale * p.grad


def _check_finite(loss_value: float, context: str) -> None:
    if not math.isfinite(loss_value):
        raise NumericalError(f"non-finite loss during {context}: {loss_value}")


def train_forecaster(tensor_std: FeatureTensor, transitions: TransitionPair,
                     hyper: ModelHyper, seed: int,
                     splits: SplitOrigins) -> tuple[Forecaster, list[float]]:
    """SGD over chronological training windows; returns model and loss curve."""
    if not tensor_std.standardized:
        raise DataError("train expects a standardized tensor")
    values = tensor_std.values
    model = Forecaster(sub_rng(seed, "init"), tensor_std.n_edges, hyper)
    model.set_transitions(transitions)
    params = model.params()
    shuffle_rng = sub_rng(seed, "batching")
    curve: list[float] = []
    for epoch in range(hyper.epochs):
        order = np.array(splits.train)
        shuffle_rng.shuffle(order)
        epoch_losses: list[float] = []
        for start in range(0, len(order), hyper.batch):
            batch = order[start:start + hyper.batch]
            for p in params:
                p.zero_grad()
            batch_loss: Tensor | None = None
            for tau in batch:
                sample = _sample_loss(model, values, int(tau), hyper)
                batch_loss = sample if batch_loss is None else batch_loss + sample
            batch_loss = batch_loss.scale(1.0 / len(batch))
            value = float(batch_loss.data)
            _check_finite(value, f"forecaster epoch {epoch}")
            epoch_losses.append(value)
            batch_loss.backward()
            clipped_sgd_step(params, hyper.lr, hyper.grad_clip)
        curve.append(float(np.mean(epoch_losses)))
    return model, curve


def _sample_loss(model: Forecaster, values: np.ndarray, tau: int,
                 hyper: ModelHyper) -> Tensor:
    window = window_at(values, tau, hyper.lookback)
    z, w = targets_at(values, tau, hyper.horizons, hyper.spike_weight)
    bounds = model.forward(window)
    loss: Tensor | None = None
    for h, (low, high) in enumerate(bounds):
        step = interval_loss(low, high, z[h], w[h], hyper.beta)
        loss = step if loss is None else loss + step
    return loss.scale(1.0 / hyper.horizons)


def forecaster_bounds(model: Forecaster, values: np.ndarray, tau: int,
                      hyper: ModelHyper) -> tuple[np.ndarray, np.ndarray]:
    """Un-padded standardized bounds at origin tau: arrays (H, E, 2)."""
    bounds = model.forward(window_at(values, tau, hyper.lookback))
    low = np.stack([b[0].data for b in bounds])
    high = np.stack([b[1].data for b in bounds])
    return low, high


def conformal_calibrate(model: Forecaster, tensor_std: FeatureTensor,
                        calib_origins: list[int], hyper: ModelHyper,
                        min_per_edge: int = 5) -> CalibrationTable:
    """Per-edge interval padding from held-out violation residuals.

    delta[q, h, e] is the alpha ceiling-quantile of max(low-z, z-high, 0) on
    the calibration set; edges with fewer than `min_per_edge` residuals fall
    back to the pooled quantile for that target and horizon.
    """
    if not calib_origins:
        raise DataError("calibration set is empty")
    values = tensor_std.values
    n_e = tensor_std.n_edges
    H = hyper.horizons
    residuals = np.zeros((len(calib_origins), H, n_e, len(TARGETS)))
    for i, tau in enumerate(calib_origins):
        low, high = forecaster_bounds(model, values, int(tau), hyper)
        z, _ = targets_at(values, int(tau), H, hyper.spike_weight)
        residuals[i] = np.maximum(np.maximum(low - z, z - high), 0.0)
    delta = np.zeros((len(TARGETS), H, n_e))
    fallback = len(calib_origins) < min_per_edge
    for q in range(len(TARGETS)):
        for h in range(H):
            if fallback:
                pooled = ceil_quantile(residuals[:, h, :, q], hyper.alpha)
                delta[q, h, :] = pooled
            else:
                for e in range(n_e):
                    delta[q, h, e] = ceil_quantile(residuals[:, h, e, q], hyper.alpha)
    return CalibrationTable(alpha=hyper.alpha, delta=delta, fallback_used=fallback)


@dataclass
class IntervalForecast:
    """Calibrated bounds in raw units: arrays (horizons, edges, targets)."""
    edge_ids: list[str]
    targets: tuple[str, ...]
    low: np.ndarray
    high: np.ndarray


def forecast(model: Forecaster, tensor_std: FeatureTensor, tau: int,
             calibration: CalibrationTable, hyper: ModelHyper) -> IntervalForecast:
    """Padded bounds at origin tau, inverse-standardized to raw units."""
    if tau < hyper.lookback - 1:
        raise DataError(f"origin {tau} leaves less than lookback={hyper.lookback} bins")
    low_std, high_std = forecaster_bounds(model, tensor_std.values, tau, hyper)
    H, n_e, n_q = low_std.shape
    low = np.zeros_like(low_std)
    high = np.zeros_like(high_std)
    for q in range(n_q):
        for h in range(H):
            pad = calibration.pad(q, h)
            lo = low_std[h, :, q] - pad
            hi = high_std[h, :, q] + pad
            for e in range(n_e):
                low[h, e, q] = unstandardize_values(tensor_std, e, q, lo[e])
                high[h, e, q] = unstandardize_values(tensor_std, e, q, hi[e])
    return IntervalForecast(edge_ids=list(tensor_std.edge_ids), targets=TARGETS,
                            low=low, high=high)


# -- event localization ------------------------------------------------------------

@dataclass(frozen=True)
class LocalizationExample:
    tau: int                    # window origin (bin index)
    truth: tuple[float, float, float]   # x, y, t_rel (seconds past window end)


def localization_examples(collisions, tensor: FeatureTensor, lookback: int,
                          offsets: int) -> list[LocalizationExample]:
    """Windows ending shortly before each collision, time target relative."""
    examples = []
    for rec in collisions:
        bin_c = min(time_bin(rec.t, tensor.bin_s), tensor.n_bins - 1)
        for off in range(1, offsets + 1):
            tau = bin_c - off
            if tau < lookback - 1:
                continue
            t_rel = rec.t - (tau + 1) * tensor.bin_s
            examples.append(LocalizationExample(tau=tau, truth=(rec.x, rec.y, t_rel)))
    return examples


def localization_target_stats(examples: list[LocalizationExample]) -> tuple[np.ndarray,
                                                                            np.ndarray]:
    truths = np.array([e.truth for e in examples])
    mu = truths.mean(axis=0)
    sigma = truths.std(axis=0)
    sigma[sigma == 0] = 1.0
    return mu, sigma


def train_localizer(tensor_std: FeatureTensor, examples: list[LocalizationExample],
                    hyper: ModelHyper, seed: int,
                    target_mu: np.ndarray, target_sigma: np.ndarray
                    ) -> tuple[Localizer, list[float]]:
    if not examples:
        raise DataError("no localization examples; did the scenario record collisions?")
    model = Localizer(sub_rng(seed, "loc-init"), tensor_std.n_edges, hyper)
    params = model.params()
    shuffle_rng = sub_rng(seed, "loc-batching")
    values = tensor_std.values
    curve: list[float] = []
    for epoch in range(hyper.epochs):
        idx = np.arange(len(examples))
        shuffle_rng.shuffle(idx)
        epoch_losses = []
        for start in range(0, len(idx), hyper.batch):
            chunk = idx[start:start + hyper.batch]
            for p in params:
                p.zero_grad()
            batch_loss: Tensor | None = None
            for i in chunk:
                ex = examples[int(i)]
                window = window_at(values, ex.tau, hyper.lookback)
                z = (np.array(ex.truth) - target_mu) / target_sigma
                low, high = model.forward(window)
                sample = bounds_mse(low, high, z.reshape(1, 3))
                batch_loss = sample if batch_loss is None else batch_loss + sample
            batch_loss = batch_loss.scale(1.0 / len(chunk))
            value = float(batch_loss.data)
            _check_finite(value, f"localizer epoch {epoch}")
            epoch_losses.append(value)
            batch_loss.backward()
            clipped_sgd_step(params, hyper.lr, hyper.grad_clip)
        curve.append(float(np.mean(epoch_losses)))
    return model, curve


def localizer_bounds_raw(model: Localizer, tensor_std: FeatureTensor, tau: int,
                         hyper: ModelHyper, target_mu: np.ndarray,
                         target_sigma: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    window = window_at(tensor_std.values, tau, hyper.lookback)
    low, high = model.forward(window)
    return (low.data.ravel() * target_sigma + target_mu,
            high.data.ravel() * target_sigma + target_mu)


def calibrate_localizer(model: Localizer, tensor_std: FeatureTensor,
                        examples: list[LocalizationExample], hyper: ModelHyper,
                        target_mu: np.ndarray, target_sigma: np.ndarray
                        ) -> LocalizationCalibration:
    """Per-dimension padding at the configured residual quantile (raw units)."""
    if not examples:
        raise DataError("no calibration examples for localization")
    residuals = np.zeros((len(examples), 3))
    for i, ex in enumerate(examples):
        low, high = localizer_bounds_raw(model, tensor_std, ex.tau, hyper,
                                         target_mu, target_sigma)
        truth = np.array(ex.truth)
        residuals[i] = np.maximum(np.maximum(low - truth, truth - high), 0.0)
    padding = np.array([ceil_quantile(residuals[:, d], hyper.loc_quantile)
                        for d in range(3)])
    return LocalizationCalibration(quantile=hyper.loc_quantile, padding=padding,
                                   target_mu=target_mu.copy(),
                                   target_sigma=target_sigma.copy())


@dataclass(frozen=True)
class EventIntervals:
    """Ordered (low, high) bounds in metres, metres, absolute seconds."""
    x: tuple[float, float]
    y: tuple[float, float]
    t: tuple[float, float]


def localize(model: Localizer, tensor_std: FeatureTensor, tau: int,
             calibration: LocalizationCalibration, hyper: ModelHyper) -> EventIntervals:
    if tau < hyper.lookback - 1:
        raise DataError(f"origin {tau} leaves less than lookback={hyper.lookback} bins")
    low, high = localizer_bounds_raw(model, tensor_std, tau, hyper,
                                     calibration.target_mu, calibration.target_sigma)
    low = low - calibration.padding
    high = high + calibration.padding
    window_end = (tau + 1) * tensor_std.bin_s
    return EventIntervals(x=(float(low[0]), float(high[0])),
                          y=(float(low[1]), float(high[1])),
                          t=(float(window_end + low[2]), float(window_end + high[2])))
