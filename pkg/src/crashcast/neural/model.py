"""Forecaster and localizer assemblies plus JSON checkpoint serialization.

The forecaster fuses a sequence encoding of the flattened window with a
pooled diffusion-recurrent encoding of the same window and emits, per
forecast step, ordered (low, high) bounds for both targets on every edge.
The localizer maps the window encoding to six bounds for (x, y, t).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import DataError
from ..network import TransitionPair
from .autodiff import Tensor, concat, tensor
from .layers import BiLstmEncoder, DcGruCell, FusionHead, Linear, order_bounds, pool_states

N_CHANNELS = 5
TARGETS = ("tti", "ce")
CHECKPOINT_FORMAT = "crashcast-checkpoint/1"


@dataclass(frozen=True)
class ModelHyper:
    lookback: int = 12
    horizons: int = 3
    diffusion_steps: int = 2
    d_lstm: int = 32
    d_dcgru: int = 32
    d_hidden: int = 64
    beta: float = 0.05
    spike_weight: float = 5.0
    alpha: float = 0.9
    loc_quantile: float = 0.9
    lr: float = 0.01
    epochs: int = 40
    batch: int = 16
    grad_clip: float = 5.0
    pool: str = "mean"
    loc_offsets: int = 6

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    @classmethod
    def from_dict(cls, doc: dict) -> "ModelHyper":
        known = {k: v for k, v in doc.items() if k in cls.__dataclass_fields__}
        return cls(**known)


class Forecaster:
    def __init__(self, rng: np.random.Generator, n_edges: int, hyper: ModelHyper):
        self.n_edges = n_edges
        self.hyper = hyper
        self.bilstm = BiLstmEncoder(rng, n_edges * N_CHANNELS, hyper.d_lstm)
        self.dcgru = DcGruCell(rng, hyper.diffusion_steps, N_CHANNELS, hyper.d_dcgru)
        d_fusion = 2 * hyper.d_lstm + hyper.d_dcgru
        self.fusion = FusionHead(rng, d_fusion, hyper.d_hidden, hyper.horizons,
                                 n_edges * len(TARGETS) * 2)
        self._S_f: Tensor | None = None
        self._S_b: Tensor | None = None

    def set_transitions(self, pair: TransitionPair) -> None:
        if pair.fwd.shape != (self.n_edges, self.n_edges):
            raise DataError(f"transition matrices are {pair.fwd.shape}, "
                            f"model expects {self.n_edges} edges")
        self._S_f = tensor(pair.fwd)
        self._S_b = tensor(pair.bwd)

    def forward(self, window: np.ndarray) -> list[tuple[Tensor, Tensor]]:
        """window: (L, E, 5) standardized. Returns per step (low, high), each (E, 2)."""
        if self._S_f is None:
            raise DataError("transitions not set; call set_transitions() first")
        L, E, C = window.shape
        if E != self.n_edges or C != N_CHANNELS:
            raise DataError(f"window shape {window.shape} does not match model")
        enc = self.bilstm(window.reshape(L, E * C))
        h = tensor(np.zeros((E, self.hyper.d_dcgru)))
        states = []
        for k in range(L):
            h = self.dcgru.step(h, tensor(window[k]), self._S_f, self._S_b)
            states.append(h)
        g = pool_states(states, self.hyper.pool)
        outs = self.fusion(concat([enc, g], axis=1))
        bounds = []
        for raw in outs:
            grid = raw.reshape(E, len(TARGETS), 2)
            low, high = order_bounds(grid[:, :, 0], grid[:, :, 1])
            bounds.append((low, high))
        return bounds

    def params(self) -> list[Tensor]:
        return self.bilstm.params() + self.dcgru.params() + self.fusion.params()


class Localizer:
    def __init__(self, rng: np.random.Generator, n_edges: int, hyper: ModelHyper):
        self.n_edges = n_edges
        self.hyper = hyper
        self.bilstm = BiLstmEncoder(rng, n_edges * N_CHANNELS, hyper.d_lstm)
        self.head = Linear(rng, 2 * hyper.d_lstm, 6)

    def forward(self, window: np.ndarray) -> tuple[Tensor, Tensor]:
        """Returns ordered ((1,3) low, (1,3) high) bounds for (x, y, t)."""
        L, E, C = window.shape
        if E != self.n_edges or C != N_CHANNELS:
            raise DataError(f"window shape {window.shape} does not match model")
        raw = self.head(self.bilstm(window.reshape(L, E * C)))
        return order_bounds(raw[:, 0:3], raw[:, 3:6])

    def params(self) -> list[Tensor]:
        return self.bilstm.params() + self.head.params()


@dataclass
class CalibrationTable:
    """Per-edge interval padding per target and horizon, all >= 0."""
    alpha: float
    delta: np.ndarray           # (targets, horizons, edges)
    fallback_used: bool = False

    def pad(self, target_idx: int, horizon_idx: int) -> np.ndarray:
        return self.delta[target_idx, horizon_idx]


@dataclass
class LocalizationCalibration:
    quantile: float
    padding: np.ndarray         # (3,) metres, metres, seconds
    target_mu: np.ndarray       # (3,) standardization of training targets
    target_sigma: np.ndarray


@dataclass
class Checkpoint:
    hyper: ModelHyper
    edge_ids: list[str]
    bin_s: float
    feature_mu: np.ndarray
    feature_sigma: np.ndarray
    forecaster: Forecaster
    localizer: Localizer | None
    calibration: CalibrationTable
    localization: LocalizationCalibration | None
    config_hash: str = ""
    extras: dict = field(default_factory=dict)


def _params_to_lists(params: list[Tensor]) -> list:
    return [p.data.tolist() for p in params]


def _load_params(params: list[Tensor], stored: list) -> None:
    if len(stored) != len(params):
        raise DataError(f"checkpoint has {len(stored)} parameter arrays, "
                        f"model expects {len(params)}")
    for p, arr in zip(params, stored):
        data = np.asarray(arr, dtype=float)
        if data.shape != p.data.shape:
            raise DataError(f"checkpoint parameter shape {data.shape} != {p.data.shape}")
        p.data = data


def save_checkpoint(ckpt: Checkpoint, path: str | Path) -> None:
    from ..util import write_json
    doc = {
        "format": CHECKPOINT_FORMAT,
        "hyper": ckpt.hyper.to_dict(),
        "edge_ids": ckpt.edge_ids,
        "bin_s": ckpt.bin_s,
        "feature_mu": ckpt.feature_mu.tolist(),
        "feature_sigma": ckpt.feature_sigma.tolist(),
        "forecaster_params": _params_to_lists(ckpt.forecaster.params()),
        "calibration": {
            "alpha": ckpt.calibration.alpha,
            "delta": ckpt.calibration.delta.tolist(),
            "fallback_used": ckpt.calibration.fallback_used,
        },
        "config_hash": ckpt.config_hash,
        "extras": ckpt.extras,
    }
    if ckpt.localizer is not None and ckpt.localization is not None:
        doc["localizer_params"] = _params_to_lists(ckpt.localizer.params())
        doc["localization"] = {
            "quantile": ckpt.localization.quantile,
            "padding": ckpt.localization.padding.tolist(),
            "target_mu": ckpt.localization.target_mu.tolist(),
            "target_sigma": ckpt.localization.target_sigma.tolist(),
        }
    write_json(path, doc)


def load_checkpoint(path: str | Path) -> Checkpoint:
    from ..util import read_json
    path = Path(path)
    if not path.exists():
        raise DataError(f"checkpoint not found: {path}")
    doc = read_json(path)
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise DataError(f"unsupported checkpoint format {doc.get('format')!r}")
    hyper = ModelHyper.from_dict(doc["hyper"])
    edge_ids = list(doc["edge_ids"])
    rng = np.random.default_rng(0)     # shapes only; weights are overwritten
    forecaster = Forecaster(rng, len(edge_ids), hyper)
    _load_params(forecaster.params(), doc["forecaster_params"])
    calibration = CalibrationTable(
        alpha=float(doc["calibration"]["alpha"]),
        delta=np.asarray(doc["calibration"]["delta"], dtype=float),
        fallback_used=bool(doc["calibration"]["fallback_used"]))
    localizer = None
    localization = None
    if "localizer_params" in doc:
        localizer = Localizer(rng, len(edge_ids), hyper)
        _load_params(localizer.params(), doc["localizer_params"])
        loc = doc["localization"]
        localization = LocalizationCalibration(
            quantile=float(loc["quantile"]),
            padding=np.asarray(loc["padding"], dtype=float),
            target_mu=np.asarray(loc["target_mu"], dtype=float),
            target_sigma=np.asarray(loc["target_sigma"], dtype=float))
    return Checkpoint(hyper=hyper, edge_ids=edge_ids, bin_s=float(doc["bin_s"]),
                      feature_mu=np.asarray(doc["feature_mu"], dtype=float),
                      feature_sigma=np.asarray(doc["feature_sigma"], dtype=float),
                      forecaster=forecaster, localizer=localizer,
                      calibration=calibration, localization=localization,
                      config_hash=str(doc.get("config_hash", "")),
                      extras=dict(doc.get("extras", {})))
