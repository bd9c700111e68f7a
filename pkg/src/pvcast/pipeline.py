"""End-to-end orchestration: config, preparation, training, and artifacts.

A run flows: load or synthesize -> repair -> decompose the pv series ->
group modes into high/low components -> window and split chronologically ->
select weather features and fit normalization on the training span only ->
train the fused network with Adam and early stopping -> forecast the test
split -> evaluate -> write CSV/JSON artifacts and figures, all under a run
directory named by the config hash.

Leakage note: the default decomposes the full series before splitting, as
the source pipeline order implies; this leaks future samples into the
decomposition.  ``causal_decomposition`` restricts the decomposition to the
training span and extends the low component forward with a trailing moving
average instead.
"""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .data import (
    AlignedDataset,
    NormStats,
    RepairReport,
    SynthConfig,
    WindowSet,
    make_windows,
    read_csv,
    repair_dataset,
    select_features,
    split_windows,
    synth_dataset,
    zscore_fit,
)
from .emd import CeemdanConfig, DecompositionResult, ceemdan
from .eqn import (
    DEFAULT_LEVELS,
    EqnHead,
    EqnOutput,
    LossWeights,
    QuantileLevels,
    WidthSpec,
    aleatoric,
    epistemic,
    total_loss,
    width_spec_from_targets,
)
from .errors import NumericError, ValidationError
from .metrics import EvalReport, evaluate_forecasts
from .nets.checkpoint import load_checkpoint, read_checkpoint_meta, save_checkpoint
from .nets.extractors import FeatureNetwork
from .nets.layers import Module
from .nets.optim import Adam
from .nets.tensor import Tensor
from .spectral import (
    DEFAULT_F_HIGH,
    FrequencyProfile,
    ReconstructedSignals,
    split_signal,
    write_profiles_json,
)

# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------


def _strict_kwargs(cls, d: dict, where: str) -> dict:
    known = {f.name for f in fields(cls)}
    unknown = set(d) - known
    if unknown:
        raise ValidationError(f"unknown config key(s) under {where}: {', '.join(sorted(unknown))}")
    return d


@dataclass
class DataConfig:
    """Input source: a CSV path when given, otherwise the synthetic plant."""

    csv_path: str | None = None
    synth: SynthConfig = field(default_factory=SynthConfig)

    def to_dict(self) -> dict:
        return {"csv_path": self.csv_path, "synth": self.synth.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "DataConfig":
        d = _strict_kwargs(cls, dict(d), "data")
        synth = SynthConfig.from_dict(d.pop("synth", {}))
        return cls(synth=synth, **d)


@dataclass
class NetConfig:
    d: int = 64
    fusion_heads: int = 8
    cnn_channels: int = 64
    cnn_kernel: int = 3
    cnn_blocks: int = 2
    dropout: float = 0.1
    itr_d_model: int = 128
    itr_depth: int = 4
    itr_heads: int = 8
    lstm_hidden: int = 64
    lstm_layers: int = 2
    eqn_hidden: int = 128

    def __post_init__(self) -> None:
        for name in ("d", "fusion_heads", "cnn_channels", "cnn_kernel", "cnn_blocks",
                     "itr_d_model", "itr_depth", "itr_heads", "lstm_hidden",
                     "lstm_layers", "eqn_hidden"):
            if getattr(self, name) < 1:
                raise ValidationError(f"net.{name} must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ValidationError("net.dropout must be in [0, 1)")
        if self.d % self.fusion_heads != 0:
            raise ValidationError("net.d must be divisible by net.fusion_heads")
        if self.itr_d_model % self.itr_heads != 0:
            raise ValidationError("net.itr_d_model must be divisible by net.itr_heads")

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, d: dict) -> "NetConfig":
        return cls(**_strict_kwargs(cls, dict(d), "net"))


@dataclass
class TrainConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    batch_size: int = 64
    max_epochs: int = 100
    patience: int = 10
    min_improvement: float = 1e-6

    def __post_init__(self) -> None:
        if self.lr <= 0:
            raise ValidationError("train.lr must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValidationError("train.betas must be in [0, 1)")
        if self.batch_size < 1 or self.max_epochs < 1:
            raise ValidationError("train.batch_size and train.max_epochs must be positive")
        if self.patience < 0 or self.min_improvement < 0:
            raise ValidationError("train.patience and train.min_improvement must be nonnegative")

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**_strict_kwargs(cls, dict(d), "train"))


@dataclass
class PipelineConfig:
    data: DataConfig = field(default_factory=DataConfig)
    ceemdan: CeemdanConfig = field(default_factory=CeemdanConfig)
    f_high: float = DEFAULT_F_HIGH
    causal_decomposition: bool = False
    lookback: int = 12
    horizon: int = 1
    split: tuple[float, float, float] = (0.8, 0.1, 0.1)
    top_k_weather: int = 4
    levels: tuple[float, ...] = DEFAULT_LEVELS
    loss: LossWeights = field(default_factory=LossWeights)
    width_threshold_scale: float = 2.0
    net: NetConfig = field(default_factory=NetConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    alpha: float = 0.9
    classical_winkler: bool = False
    seed: int = 0

    def __post_init__(self) -> None:
        self.split = tuple(float(r) for r in self.split)
        self.levels = tuple(float(t) for t in self.levels)
        QuantileLevels(self.levels)  # validates
        if self.f_high <= 0:
            raise ValidationError("f_high must be positive")
        if self.lookback < 1 or self.horizon < 1:
            raise ValidationError("lookback and horizon must be positive")
        if self.top_k_weather < 1:
            raise ValidationError("top_k_weather must be positive")
        if self.width_threshold_scale < 0:
            raise ValidationError("width_threshold_scale must be nonnegative")
        if not 0.0 < self.alpha < 1.0:
            raise ValidationError("alpha must be in (0, 1)")

    @property
    def quantile_levels(self) -> QuantileLevels:
        return QuantileLevels(self.levels)

    def to_dict(self) -> dict:
        return {
            "data": self.data.to_dict(),
            "ceemdan": self.ceemdan.to_dict(),
            "f_high": self.f_high,
            "causal_decomposition": self.causal_decomposition,
            "lookback": self.lookback,
            "horizon": self.horizon,
            "split": list(self.split),
            "top_k_weather": self.top_k_weather,
            "levels": list(self.levels),
            "loss": {
                "lam_quantile": self.loss.lam_quantile,
                "lam_evidence": self.loss.lam_evidence,
                "lam_width": self.loss.lam_width,
            },
            "width_threshold_scale": self.width_threshold_scale,
            "net": self.net.to_dict(),
            "train": self.train.to_dict(),
            "alpha": self.alpha,
            "classical_winkler": self.classical_winkler,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        d = _strict_kwargs(cls, dict(d), "config")
        kwargs: dict = {}
        if "data" in d:
            kwargs["data"] = DataConfig.from_dict(d.pop("data"))
        if "ceemdan" in d:
            kwargs["ceemdan"] = CeemdanConfig.from_dict(d.pop("ceemdan"))
        if "loss" in d:
            kwargs["loss"] = LossWeights(**d.pop("loss"))
        if "net" in d:
            kwargs["net"] = NetConfig.from_dict(d.pop("net"))
        if "train" in d:
            kwargs["train"] = TrainConfig.from_dict(d.pop("train"))
        if "split" in d:
            kwargs["split"] = tuple(d.pop("split"))
        if "levels" in d:
            kwargs["levels"] = tuple(d.pop("levels"))
        return cls(**kwargs, **d)

    def config_hash(self) -> str:
        canonical = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:12]

    def to_json(self) -> str:
        return json.dumps(
            {"config_hash": self.config_hash(), "config": self.to_dict()}, indent=2, sort_keys=True
        ) + "\n"

    @classmethod
    def from_json_file(cls, path: str | Path) -> "PipelineConfig":
        payload = json.loads(Path(path).read_text())
        # accept both the bare dict and the {"config": ...} echo we emit
        return cls.from_dict(payload.get("config", payload))


def apply_overrides(config_dict: dict, overrides: list[str]) -> dict:
    """Applies ``dotted.key=value`` overrides onto a config dict.

    Values parse as JSON when possible (numbers, booleans, lists), else as
    bare strings.  Intermediate tables are created as needed; validity is
    checked by the subsequent ``from_dict``.
    """
    out = json.loads(json.dumps(config_dict))  # deep copy
    for item in overrides:
        key, sep, raw = item.partition("=")
        if not sep or not key:
            raise ValidationError(f"override {item!r} is not of the form key=value")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = out
        parts = key.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ValidationError(f"override {key!r} descends through a non-table value")
        node[parts[-1]] = value
    return out


# ---------------------------------------------------------------------------
# Model
# ---------------------------------------------------------------------------


class ForecastModel(Module):
    """Three-branch feature network feeding the quantile/evidence head."""

    def __init__(
        self,
        lookback: int,
        n_weather: int,
        net: NetConfig,
        levels: QuantileLevels,
        pv_mean: float = 0.0,
        pv_std: float = 1.0,
        rng: np.random.Generator | None = None,
    ) -> None:
        super().__init__()
        rng = rng or np.random.default_rng(0)
        self.features = FeatureNetwork(
            lookback=lookback,
            n_weather=n_weather,
            d=net.d,
            fusion_heads=net.fusion_heads,
            cnn_channels=net.cnn_channels,
            cnn_kernel=net.cnn_kernel,
            cnn_blocks=net.cnn_blocks,
            dropout=net.dropout,
            itr_d_model=net.itr_d_model,
            itr_depth=net.itr_depth,
            itr_heads=net.itr_heads,
            lstm_hidden=net.lstm_hidden,
            lstm_layers=net.lstm_layers,
            rng=rng,
        )
        self.head = EqnHead(
            in_dim=net.d, hidden=net.eqn_hidden, levels=levels, rng=rng,
            pv_mean=pv_mean, pv_std=pv_std,
        )

    def __call__(self, x_high: Tensor, x_low: Tensor, x_weather: Tensor) -> EqnOutput:
        return self.head(self.features(x_high, x_low, x_weather))


# ---------------------------------------------------------------------------
# Preparation
# ---------------------------------------------------------------------------


@dataclass
class PreparedData:
    config: PipelineConfig
    dataset: AlignedDataset
    repair_report: RepairReport
    decomposition: DecompositionResult
    profiles: list[FrequencyProfile]
    recon: ReconstructedSignals
    train: WindowSet
    val: WindowSet
    test: WindowSet
    norm: NormStats
    selected: list[str]
    width_spec: WidthSpec | None
    levels: QuantileLevels

    @property
    def pv_mean(self) -> float:
        return self.norm.mean["pv"]

    @property
    def pv_std(self) -> float:
        return self.norm.std["pv"] or 1.0


def load_dataset(config: PipelineConfig) -> AlignedDataset:
    if config.data.csv_path is not None:
        return read_csv(config.data.csv_path)
    return synth_dataset(config.data.synth, seed=config.seed)


def _causal_low_extension(pv: np.ndarray, low_train: np.ndarray, cutoff: int, step_seconds: int) -> np.ndarray:
    """Extends the low component beyond the training span with a trailing
    moving average (about four hours wide) of the raw series."""
    window = max(1, int(round(4 * 3600 / step_seconds)))
    low = np.empty_like(pv)
    low[:cutoff] = low_train
    csum = np.concatenate(([0.0], np.cumsum(pv)))
    for i in range(cutoff, len(pv)):
        start = max(0, i - window + 1)
        low[i] = (csum[i + 1] - csum[start]) / (i + 1 - start)
    return low


def prepare(config: PipelineConfig) -> PreparedData:
    """Everything up to training: repaired data, components, windows, stats.

    All statistics that could leak (normalization, feature ranking, width
    thresholds) are computed from rows up to the last training target only.
    """
    levels = config.quantile_levels
    raw = load_dataset(config)
    ds, repair_report = repair_dataset(raw)
    n = len(ds)

    # split structure depends only on the time grid, so probe it first
    zeros = np.zeros(n)
    probe = make_windows(ds, zeros, zeros, config.lookback, config.horizon, channels=())
    probe_train, probe_val, probe_test = split_windows(probe, config.split)
    if len(probe_val) == 0 or len(probe_test) == 0:
        raise ValidationError("dataset too small: empty validation or test split")
    cutoff = int(np.searchsorted(ds.timestamps, probe_train.times[-1], side="right"))

    if config.causal_decomposition:
        result = ceemdan(ds.pv[:cutoff], config.ceemdan)
        recon_train, profiles = split_signal(result, 1.0 / ds.step_seconds, config.f_high)
        low = _causal_low_extension(ds.pv, recon_train.low, cutoff, ds.step_seconds)
        recon = ReconstructedSignals(
            high=ds.pv - low, low=low,
            high_indices=recon_train.high_indices, low_indices=recon_train.low_indices,
        )
    else:
        result = ceemdan(ds.pv, config.ceemdan)
        recon, profiles = split_signal(result, 1.0 / ds.step_seconds, config.f_high)

    train_span = ds.take(np.arange(n) < cutoff)
    selected = select_features(train_span, k=config.top_k_weather)
    if not selected:
        raise ValidationError("no usable weather channels (all constant on the training span)")

    windows = make_windows(ds, recon.high, recon.low, config.lookback, config.horizon, channels=selected)
    train, val, test = split_windows(windows, config.split)

    norm = zscore_fit({
        "pv": ds.pv[:cutoff],
        "high": recon.high[:cutoff],
        "low": recon.low[:cutoff],
        **{name: ds.channels[name][:cutoff] for name in selected},
    })
    width_spec = None
    if config.loss.lam_width > 0:
        width_spec = width_spec_from_targets(train.y, levels, scale=config.width_threshold_scale)
    return PreparedData(
        config=config, dataset=ds, repair_report=repair_report,
        decomposition=result, profiles=profiles, recon=recon,
        train=train, val=val, test=test, norm=norm, selected=selected,
        width_spec=width_spec, levels=levels,
    )


def model_inputs(ws: WindowSet, norm: NormStats) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Normalizes a window set's input blocks with training-span statistics."""

    def z(a: np.ndarray, name: str) -> np.ndarray:
        return (a - norm.mean[name]) / (norm.std[name] or 1.0)

    x_high = z(ws.x_high, "high")
    x_low = z(ws.x_low, "low")
    cols = []
    for j, name in enumerate(ws.feature_names):
        if name not in norm.mean:
            raise ValidationError(f"no normalization statistics for channel {name!r}")
        cols.append(z(ws.x_weather[:, :, j], name))
    x_weather = np.stack(cols, axis=2) if cols else np.zeros_like(ws.x_weather)
    return x_high, x_low, x_weather


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------


@dataclass
class TrainReport:
    train_losses: list[float]
    val_losses: list[float]
    best_epoch: int  # 1-based
    best_val_loss: float
    stop_reason: str  # "early_stop" | "max_epochs" | "diverged"
    total_seconds: float
    epoch_seconds: list[float]

    def to_dict(self) -> dict:
        return {
            "train_losses": self.train_losses,
            "val_losses": self.val_losses,
            "best_epoch": self.best_epoch,
            "best_val_loss": self.best_val_loss,
            "stop_reason": self.stop_reason,
            "total_seconds": self.total_seconds,
            "epoch_seconds": self.epoch_seconds,
        }

    def to_json(self, config_hash: str | None = None) -> str:
        payload = self.to_dict()
        if config_hash is not None:
            payload["config_hash"] = config_hash
        return json.dumps(payload, indent=2, sort_keys=True) + "\n"


def _snapshot(model: Module) -> dict:
    return {
        "params": {name: p.data.copy() for name, p in model.named_parameters()},
        "buffers": {name: b.copy() for name, b in model.named_buffers()},
    }


def _restore(model: Module, snap: dict) -> None:
    for name, p in model.named_parameters():
        p.data[...] = snap["params"][name]
    for name, b in model.named_buffers():
        b[...] = snap["buffers"][name]


def _epoch_pass(
    model: ForecastModel,
    arrays: tuple[np.ndarray, np.ndarray, np.ndarray],
    y: np.ndarray,
    order: np.ndarray,
    batch_size: int,
    prepared: PreparedData,
    weights: LossWeights,
    optimizer: Adam | None,
) -> float:
    """One pass over ``order``; steps the optimizer when given.

    Returns the sample-weighted mean total loss, or ``inf`` when a batch
    produced a non-finite loss.
    """
    x_high, x_low, x_weather = arrays
    total = 0.0
    for start in range(0, len(order), batch_size):
        idx = order[start : start + batch_size]
        try:
            out = model(Tensor(x_high[idx]), Tensor(x_low[idx]), Tensor(x_weather[idx]))
            loss, _ = total_loss(Tensor(y[idx]), out, prepared.levels, weights, prepared.width_spec)
        except NumericError:
            return float("inf")
        value = float(loss.data)
        if not np.isfinite(value):
            return float("inf")
        if optimizer is not None:
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
        total += value * len(idx)
    return total / len(order)


def train_model(prepared: PreparedData, config: PipelineConfig) -> tuple[ForecastModel, TrainReport]:
    """Mini-batch Adam on the total loss with early stopping.

    Stops when validation loss fails to improve by more than
    ``min_improvement`` for more than ``patience`` consecutive epochs; the
    best-validation parameters are restored before returning.  A non-finite
    training loss aborts with the last finite best state.
    """
    tc = config.train
    init_rng = np.random.default_rng(np.random.SeedSequence(entropy=config.seed, spawn_key=(101,)))
    model = ForecastModel(
        lookback=config.lookback,
        n_weather=len(prepared.selected),
        net=config.net,
        levels=prepared.levels,
        pv_mean=prepared.pv_mean,
        pv_std=prepared.pv_std,
        rng=init_rng,
    )
    optimizer = Adam(model.parameters(), lr=tc.lr, betas=(tc.beta1, tc.beta2))

    train_arrays = model_inputs(prepared.train, prepared.norm)
    val_arrays = model_inputs(prepared.val, prepared.norm)
    y_train, y_val = prepared.train.y, prepared.val.y
    val_order = np.arange(len(y_val))

    best = _snapshot(model)
    best_val = float("inf")
    best_epoch = 0
    stale = 0
    stop_reason = "max_epochs"
    train_losses: list[float] = []
    val_losses: list[float] = []
    epoch_seconds: list[float] = []
    t_start = time.perf_counter()

    for epoch in range(1, tc.max_epochs + 1):
        t_epoch = time.perf_counter()
        shuffle = np.random.default_rng(
            np.random.SeedSequence(entropy=config.seed, spawn_key=(202, epoch))
        )
        order = shuffle.permutation(len(y_train))
        model.train()
        train_loss = _epoch_pass(
            model, train_arrays, y_train, order, tc.batch_size, prepared, config.loss, optimizer
        )
        if not np.isfinite(train_loss):
            stop_reason = "diverged"
            break
        model.eval()
        val_loss = _epoch_pass(
            model, val_arrays, y_val, val_order, tc.batch_size, prepared, config.loss, None
        )
        if not np.isfinite(val_loss):
            stop_reason = "diverged"
            break
        train_losses.append(train_loss)
        val_losses.append(val_loss)
        epoch_seconds.append(time.perf_counter() - t_epoch)
        if val_loss < best_val - tc.min_improvement:
            best_val = val_loss
            best_epoch = epoch
            best = _snapshot(model)
            stale = 0
        else:
            stale += 1
            if stale > tc.patience:
                stop_reason = "early_stop"
                break

    _restore(model, best)
    model.eval()
    if best_epoch == 0:
        # no epoch ever improved on the initial state; report the first
        best_epoch = 1 if val_losses else 0
        best_val = val_losses[0] if val_losses else float("inf")
    report = TrainReport(
        train_losses=train_losses,
        val_losses=val_losses,
        best_epoch=best_epoch,
        best_val_loss=best_val,
        stop_reason=stop_reason,
        total_seconds=time.perf_counter() - t_start,
        epoch_seconds=epoch_seconds,
    )
    return model, report


# ---------------------------------------------------------------------------
# Forecasting
# ---------------------------------------------------------------------------


@dataclass
class ForecastRecords:
    """Per-window forecasts in physical units, one row per target time."""

    times: np.ndarray
    y_true: np.ndarray
    quantiles: np.ndarray  # (n, Q)
    evidence_mean: np.ndarray
    u_epistemic: np.ndarray
    u_aleatoric: np.ndarray
    levels: QuantileLevels

    def __len__(self) -> int:
        return len(self.y_true)

    def write_csv(self, path: str | Path, config_hash: str | None = None) -> None:
        level_cols = [f"q_{tau:g}" for tau in self.levels.taus]
        header = ["t", "y_true", *level_cols, "evidence_mean", "u_epistemic", "u_aleatoric"]
        lines = []
        if config_hash is not None:
            lines.append(f"# config_hash={config_hash}")
        lines.append(",".join(header))
        for i in range(len(self)):
            stamp = np.datetime_as_string(self.times[i], unit="s") + "Z"
            row = [stamp, repr(float(self.y_true[i]))]
            row += [repr(float(v)) for v in self.quantiles[i]]
            row += [
                repr(float(self.evidence_mean[i])),
                repr(float(self.u_epistemic[i])),
                repr(float(self.u_aleatoric[i])),
            ]
            lines.append(",".join(row))
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def read_csv(cls, path: str | Path) -> "ForecastRecords":
        lines = [ln for ln in Path(path).read_text().splitlines() if ln and not ln.startswith("#")]
        if not lines:
            raise ValidationError(f"{path}: empty forecast file")
        header = lines[0].split(",")
        level_cols = [h for h in header if h.startswith("q_")]
        expected = ["t", "y_true", *level_cols, "evidence_mean", "u_epistemic", "u_aleatoric"]
        if header != expected:
            raise ValidationError(f"{path}: unexpected forecast columns {header}")
        taus = tuple(float(h[2:]) for h in level_cols)
        times, rows = [], []
        for ln in lines[1:]:
            cells = ln.split(",")
            if len(cells) != len(header):
                raise ValidationError(f"{path}: ragged forecast row {ln!r}")
            times.append(np.datetime64(cells[0].rstrip("Z"), "s"))
            rows.append([float(c) for c in cells[1:]])
        data = np.asarray(rows)
        q = len(taus)
        return cls(
            times=np.asarray(times),
            y_true=data[:, 0],
            quantiles=data[:, 1 : 1 + q],
            evidence_mean=data[:, 1 + q],
            u_epistemic=data[:, 2 + q],
            u_aleatoric=data[:, 3 + q],
            levels=QuantileLevels(taus),
        )


def forecast(
    model: ForecastModel,
    windows: WindowSet,
    norm: NormStats,
    levels: QuantileLevels,
    batch_size: int = 256,
) -> ForecastRecords:
    """Eval-mode forecasts for every window, with uncertainty split."""
    if len(windows) == 0:
        raise ValidationError("no windows to forecast")
    model.eval()
    x_high, x_low, x_weather = model_inputs(windows, norm)
    quantiles, evidence = [], []
    for start in range(0, len(windows), batch_size):
        stop = start + batch_size
        out = model(Tensor(x_high[start:stop]), Tensor(x_low[start:stop]), Tensor(x_weather[start:stop]))
        quantiles.append(out.quantiles.data)
        evidence.append(out.evidence.data)
    q = np.concatenate(quantiles, axis=0)
    e = np.concatenate(evidence, axis=0)
    return ForecastRecords(
        times=windows.times.copy(),
        y_true=windows.y.copy(),
        quantiles=q,
        evidence_mean=e.mean(axis=1),
        u_epistemic=epistemic(e),
        u_aleatoric=aleatoric(q, levels),
        levels=levels,
    )


def evaluate_records(
    records: ForecastRecords, alpha: float = 0.9, classical_winkler: bool = False
) -> EvalReport:
    return evaluate_forecasts(
        records.y_true, records.quantiles, records.levels, alpha, classical_winkler
    )


# ---------------------------------------------------------------------------
# Artifacts
# ---------------------------------------------------------------------------


def write_decomposition_csv(
    path: str | Path,
    timestamps: np.ndarray,
    result: DecompositionResult,
    config_hash: str | None = None,
) -> None:
    """Mode matrix as `t, imf_1..imf_K, residual` rows."""
    lines = []
    if config_hash is not None:
        lines.append(f"# config_hash={config_hash}")
    names = [f"imf_{imf.index}" for imf in result.imfs]
    lines.append(",".join(["t", *names, "residual"]))
    columns = [imf.values for imf in result.imfs] + [result.residual]
    for i in range(len(result.residual)):
        stamp = np.datetime_as_string(timestamps[i], unit="s") + "Z"
        lines.append(",".join([stamp, *(repr(float(c[i])) for c in columns)]))
    Path(path).write_text("\n".join(lines) + "\n")


def write_components_csv(
    path: str | Path,
    ds: AlignedDataset,
    recon: ReconstructedSignals,
    config_hash: str | None = None,
) -> None:
    lines = []
    if config_hash is not None:
        lines.append(f"# config_hash={config_hash}")
    lines.append("t,pv,s_high,s_low")
    for i in range(len(ds)):
        stamp = np.datetime_as_string(ds.timestamps[i], unit="s") + "Z"
        lines.append(
            ",".join([stamp, repr(float(ds.pv[i])), repr(float(recon.high[i])), repr(float(recon.low[i]))])
        )
    Path(path).write_text("\n".join(lines) + "\n")


def checkpoint_meta(prepared: PreparedData) -> dict:
    return {
        "config": prepared.config.to_dict(),
        "config_hash": prepared.config.config_hash(),
        "norm": prepared.norm.to_dict(),
        "selected_features": list(prepared.selected),
        "levels": list(prepared.levels.taus),
        "lookback": prepared.config.lookback,
    }


def build_model_from_meta(meta: dict, rng: np.random.Generator | None = None) -> ForecastModel:
    config = PipelineConfig.from_dict(meta["config"])
    return ForecastModel(
        lookback=int(meta["lookback"]),
        n_weather=len(meta["selected_features"]),
        net=config.net,
        levels=QuantileLevels(tuple(meta["levels"])),
        rng=rng or np.random.default_rng(0),
    )


def load_model(checkpoint_path: str | Path) -> tuple[ForecastModel, dict]:
    """Standalone model restore: architecture and scales come from the meta."""
    meta = read_checkpoint_meta(checkpoint_path)
    model = build_model_from_meta(meta)
    load_checkpoint(checkpoint_path, model)
    model.eval()
    return model, meta


# ---------------------------------------------------------------------------
# Run orchestration
# ---------------------------------------------------------------------------


def run_dir_for(config: PipelineConfig, out_root: str | Path) -> Path:
    run_dir = Path(out_root) / config.config_hash()
    run_dir.mkdir(parents=True, exist_ok=True)
    return run_dir


def write_run_inputs(prepared: PreparedData, run_dir: Path) -> None:
    config = prepared.config
    chash = config.config_hash()
    (run_dir / "config.json").write_text(config.to_json())
    (run_dir / "repair_report.json").write_text(prepared.repair_report.to_json())
    write_decomposition_csv(run_dir / "decomposition.csv", prepared.dataset.timestamps,
                            prepared.decomposition, chash)
    write_components_csv(run_dir / "components.csv", prepared.dataset, prepared.recon, chash)
    write_profiles_json(prepared.profiles, str(run_dir / "profiles.json"), config.f_high, chash)

    from . import figures

    figures.save_decomposition_figure(run_dir / "decomposition.png", prepared.dataset.pv,
                                      prepared.decomposition, chash)
    figures.save_grouping_figure(run_dir / "grouping.png", prepared.profiles, config.f_high, chash)
    figures.save_reconstruction_figure(run_dir / "reconstruction.png", prepared.dataset.pv,
                                       prepared.recon, chash)


def run_train(prepared: PreparedData, run_dir: Path) -> tuple[ForecastModel, TrainReport]:
    from . import figures

    config = prepared.config
    chash = config.config_hash()
    model, report = train_model(prepared, config)
    save_checkpoint(run_dir / "checkpoint.npz", model, meta=checkpoint_meta(prepared))
    (run_dir / "train_report.json").write_text(report.to_json(chash))
    if report.train_losses:
        figures.save_loss_figure(run_dir / "loss_curves.png", report.train_losses,
                                 report.val_losses, report.best_epoch, chash)
    return model, report


def run_predict(
    prepared: PreparedData, model: ForecastModel, run_dir: Path, split: str = "test"
) -> ForecastRecords:
    from . import figures

    config = prepared.config
    chash = config.config_hash()
    windows = {"train": prepared.train, "val": prepared.val, "test": prepared.test}.get(split)
    if windows is None:
        raise ValidationError(f"unknown split {split!r}; expected train, val, or test")
    records = forecast(model, windows, prepared.norm, prepared.levels)
    records.write_csv(run_dir / "forecasts.csv", chash)
    figures.save_forecast_figure(run_dir / "forecast.png", records.y_true, records.quantiles,
                                 records.levels, chash)
    median = records.quantiles[:, records.levels.median_index]
    figures.save_scatter_figure(run_dir / "scatter.png", records.y_true, median, chash)
    return records


def run_evaluate(records: ForecastRecords, config: PipelineConfig, run_dir: Path) -> EvalReport:
    report = evaluate_records(records, config.alpha, config.classical_winkler)
    report.write(run_dir, config.config_hash())
    return report


def run_decompose(config: PipelineConfig, out_root: str | Path) -> dict:
    """Standalone decomposition: repair, decompose the whole series, group,
    and persist components with figures.  Always decomposes the full series;
    the causal option only affects the training pipeline."""
    from . import figures

    run_dir = run_dir_for(config, out_root)
    chash = config.config_hash()
    raw = load_dataset(config)
    ds, repair_report = repair_dataset(raw)
    result = ceemdan(ds.pv, config.ceemdan)
    recon, profiles = split_signal(result, 1.0 / ds.step_seconds, config.f_high)
    (run_dir / "config.json").write_text(config.to_json())
    (run_dir / "repair_report.json").write_text(repair_report.to_json())
    write_decomposition_csv(run_dir / "decomposition.csv", ds.timestamps, result, chash)
    write_components_csv(run_dir / "components.csv", ds, recon, chash)
    write_profiles_json(profiles, str(run_dir / "profiles.json"), config.f_high, chash)
    figures.save_decomposition_figure(run_dir / "decomposition.png", ds.pv, result, chash)
    figures.save_grouping_figure(run_dir / "grouping.png", profiles, config.f_high, chash)
    figures.save_reconstruction_figure(run_dir / "reconstruction.png", ds.pv, recon, chash)
    return {
        "run_dir": str(run_dir),
        "config_hash": chash,
        "n_modes": result.n_modes,
        "high_indices": list(recon.high_indices),
        "low_indices": list(recon.low_indices),
    }


def predict_from_checkpoint(
    checkpoint_path: str | Path, dataset: AlignedDataset, out_dir: str | Path
) -> ForecastRecords:
    """Forecasts every window of ``dataset`` with a stored model.

    Decomposition settings, lookback, feature choice, and normalization all
    come from the checkpoint meta, so the provided data must carry the same
    weather channels the model was trained on.
    """
    from . import figures

    model, meta = load_model(checkpoint_path)
    config = PipelineConfig.from_dict(meta["config"])
    chash = str(meta.get("config_hash", config.config_hash()))
    levels = QuantileLevels(tuple(meta["levels"]))
    norm = NormStats.from_dict(meta["norm"])
    ds, _ = repair_dataset(dataset)
    result = ceemdan(ds.pv, config.ceemdan)
    recon, _ = split_signal(result, 1.0 / ds.step_seconds, config.f_high)
    windows = make_windows(
        ds, recon.high, recon.low, int(meta["lookback"]), config.horizon,
        channels=meta["selected_features"],
    )
    records = forecast(model, windows, norm, levels)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    records.write_csv(out / "forecasts.csv", chash)
    figures.save_forecast_figure(out / "forecast.png", records.y_true, records.quantiles,
                                 records.levels, chash)
    figures.save_scatter_figure(out / "scatter.png", records.y_true,
                                records.quantiles[:, records.levels.median_index], chash)
    return records


def run_all(config: PipelineConfig, out_root: str | Path) -> dict:
    """Full pipeline; returns a summary with the run directory and metrics."""
    run_dir = run_dir_for(config, out_root)
    prepared = prepare(config)
    write_run_inputs(prepared, run_dir)
    model, train_report = run_train(prepared, run_dir)
    records = run_predict(prepared, model, run_dir, split="test")
    eval_report = run_evaluate(records, config, run_dir)
    return {
        "run_dir": str(run_dir),
        "config_hash": config.config_hash(),
        "stop_reason": train_report.stop_reason,
        "best_epoch": train_report.best_epoch,
        "epochs": len(train_report.train_losses),
        "metrics": eval_report.to_dict(),
    }
