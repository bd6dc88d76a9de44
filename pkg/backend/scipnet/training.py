# backend/scipnet/training.py
"""
Staged training pipeline.

    stability (S) and weight (W) networks
        -> cached stabilized weights on the training instances
    encoder (E)
        -> one decoder (D) per horizon, MSE weighted by the cached weights

S, W and E do not depend on the variant, so they are fitted once and
shared by the scip, cip and unweighted decoders.
"""

import json
import pathlib
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import torch

from .config import settings
from .datasets import STEP, DecoderInstances, PathTensors, build_decoder_instances, build_path_tensors, to_index
from .errors import DivergenceError, ScipNetError, ValidationError
from .logger import get_logger
from .networks import (
    DecoderNet,
    EncoderNet,
    StabilityNet,
    WeightNet,
    bce_intensity,
    ce_propensity,
    mse_encoder,
    weighted_mse_decoder,
)
from .neuralcde import (
    load_module_arrays,
    make_optimizer,
    manifest_json,
    module_arrays,
    pack_arrays,
    parameter_gradients,
    adam_update,
    unpack_arrays,
)
from .schemas import TrainConfig, Trajectory, Variant, WeightRecord
from .trajectory import OutcomeScaler, load_trajectories, validate
from .utils import PathLike, atomic_write_bytes, atomic_write_text, chunks, derive_seed, dumps_jsonl, set_seed, sha256_bytes
from .weights import GridModel, plan_weights, normalize_mean_one, truncate_normalize

logger = get_logger()

# stream keys for derive_seed
SPLIT_KEY, STABILITY_KEY, WEIGHT_KEY, ENCODER_KEY, DECODER_KEY = range(5)
VARIANT_KEYS = {"scip": 0, "cip": 1, "unweighted": 2}


# =============================================================================
# DATA PREPARATION
# =============================================================================
@dataclass
class TrainingData:
    """A tensorized training cohort with its subject split."""

    trajectories: List[Trajectory]
    scaler: OutcomeScaler
    tensors: PathTensors
    train_idx: np.ndarray
    val_idx: np.ndarray

    @property
    def dims(self) -> Dict[str, int]:
        return {
            "full_channels": self.tensors.full_channels,
            "treatment_channels": self.tensors.treatment_channels,
            "static_dim": self.tensors.static_dim,
            "n_arms": self.tensors.n_arms,
            "outcome_dim": int(self.tensors.outcome_target.shape[-1]),
            "tau": int(round(self.tensors.grid[-1])),
        }


def split_subjects(n: int, val_fraction: float, seed: int) -> Tuple[np.ndarray, np.ndarray]:
    """Random train/validation split of subject indices."""
    rng = np.random.default_rng(derive_seed(seed, SPLIT_KEY))
    perm = rng.permutation(n)
    n_val = int(round(n * val_fraction))
    if val_fraction > 0 and n_val == 0 and n > 1:
        n_val = 1
    return np.sort(perm[n_val:]), np.sort(perm[:n_val])


def prepare_data(trajectories: Sequence[Trajectory], config: TrainConfig) -> TrainingData:
    """
    Validate, split and tensorize a training cohort.

    The outcome scaler is fitted on training subjects only.

    Raises:
        ValidationError: empty cohort or a trajectory breaking its invariants
    """
    trajectories = list(trajectories)
    if not trajectories:
        raise ValidationError("training data is empty")
    for traj in trajectories:
        problems = validate(traj)
        if problems:
            raise ValidationError(f"trajectory {traj.id}: {problems[0]}")
    train_idx, val_idx = split_subjects(len(trajectories), config.val_fraction, config.seed)
    scaler = OutcomeScaler.fit(trajectories[i] for i in train_idx)
    tensors = build_path_tensors(trajectories, scaler, STEP)
    return TrainingData(trajectories=trajectories, scaler=scaler, tensors=tensors, train_idx=train_idx, val_idx=val_idx)


# =============================================================================
# METRICS
# =============================================================================
class MetricsLog:
    """Per-epoch stage losses, written as CSV (epoch, stage, split, loss)."""

    COLUMNS = ["epoch", "stage", "split", "loss"]

    def __init__(self) -> None:
        self.rows: List[Dict[str, object]] = []

    def add(self, stage: str, epoch: int, split: str, loss: float) -> None:
        self.rows.append({"epoch": epoch, "stage": stage, "split": split, "loss": loss})

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.rows, columns=self.COLUMNS)

    def write(self, path: PathLike) -> pathlib.Path:
        return atomic_write_text(path, self.to_frame().to_csv(index=False, float_format="%.17g"))


# =============================================================================
# GENERIC STAGE LOOP
# =============================================================================
# loss_fn(net, units, training) -> (loss, rows in the batch)
LossFn = Callable[[torch.nn.Module, np.ndarray, bool], Tuple[torch.Tensor, int]]


def _evaluate(net: torch.nn.Module, units: np.ndarray, batch_size: int, loss_fn: LossFn) -> Optional[float]:
    if len(units) == 0:
        return None
    net.eval()
    total, count = 0.0, 0
    with torch.no_grad():
        for batch in chunks(units, batch_size):
            loss, rows = loss_fn(net, batch, False)
            total += loss.item() * rows
            count += rows
    return total / count if count else None


def run_stage(
    stage: str,
    net: torch.nn.Module,
    train_units: np.ndarray,
    val_units: np.ndarray,
    batch_size: int,
    loss_fn: LossFn,
    config: TrainConfig,
    seed: int,
    metrics: Optional[MetricsLog] = None,
) -> Tuple[Optional[float], Optional[float]]:
    """
    Mini-batch Adam over `config.epochs` epochs.

    Args:
        stage: Stage name for logs and metrics
        net: Network to train in place
        train_units: Units (subjects or instances) to shuffle and batch
        val_units: Held-out units, evaluated each epoch without dropout
        batch_size: Units per batch
        loss_fn: Batch loss
        config: Training settings (epochs, lr, clip_norm)
        seed: Stage seed for shuffling
        metrics: Optional metrics sink

    Returns:
        (last train loss, last validation loss)

    Raises:
        DivergenceError: non-finite loss or latent, with the epoch index
    """
    logger.stage_start(stage, len(train_units), len(val_units))
    params = [p for p in net.parameters() if p.requires_grad]
    optimizer = make_optimizer(params, config.lr)
    rng = np.random.default_rng(seed)
    train_loss: Optional[float] = None
    val_loss: Optional[float] = None

    for epoch in range(config.epochs):
        net.train()
        order = rng.permutation(train_units)
        total, count = 0.0, 0
        for batch in chunks(order, batch_size):
            try:
                loss, rows = loss_fn(net, batch, True)
            except DivergenceError as e:
                raise DivergenceError(f"{stage}: {e}", step=e.step, epoch=epoch)
            if rows == 0:
                continue
            if not torch.isfinite(loss):
                raise DivergenceError(f"{stage}: non-finite loss", epoch=epoch)
            grads = parameter_gradients(loss, params)
            adam_update(params, grads, optimizer, config.clip_norm)
            total += loss.item() * rows
            count += rows
        train_loss = total / count if count else None
        val_loss = _evaluate(net, val_units, batch_size, loss_fn)
        if metrics is not None:
            if train_loss is not None:
                metrics.add(stage, epoch, "train", train_loss)
            if val_loss is not None:
                metrics.add(stage, epoch, "val", val_loss)
        logger.epoch_metrics(stage, epoch, train_loss if train_loss is not None else float("nan"), val_loss)

    net.eval()
    logger.stage_done(stage, train_loss, val_loss)
    return train_loss, val_loss


# =============================================================================
# NETWORK CONSTRUCTION
# =============================================================================
def build_stability(dims: Dict[str, int], config: TrainConfig) -> StabilityNet:
    return StabilityNet(dims["treatment_channels"], dims["n_arms"], config.latent_factor, config.hidden_dim, config.dropout, config.substeps)


def build_weightnet(dims: Dict[str, int], config: TrainConfig) -> WeightNet:
    return WeightNet(dims["full_channels"], dims["static_dim"], dims["n_arms"], config.latent_factor, config.hidden_dim, config.dropout, config.substeps)


def build_encoder(dims: Dict[str, int], config: TrainConfig) -> EncoderNet:
    return EncoderNet(dims["full_channels"], dims["static_dim"], dims["n_arms"], dims["outcome_dim"], config.latent_factor, config.hidden_dim, config.dropout, config.substeps)


def build_decoder(dims: Dict[str, int], config: TrainConfig) -> DecoderNet:
    return DecoderNet(
        config.latent_factor * dims["full_channels"],
        dims["treatment_channels"],
        dims["n_arms"],
        dims["outcome_dim"],
        config.latent_factor,
        config.hidden_dim,
        config.dropout,
        config.substeps,
    )


# =============================================================================
# STAGES S, W, E
# =============================================================================
def train_stability(data: TrainingData, config: TrainConfig, metrics: Optional[MetricsLog] = None) -> StabilityNet:
    """Fit S on treatment-only paths over the full [0, tau]."""
    t = data.tensors
    seed = derive_seed(config.seed, STABILITY_KEY)
    set_seed(seed)
    net = build_stability(data.dims, config)

    def loss_fn(model: StabilityNet, batch: np.ndarray, training: bool) -> Tuple[torch.Tensor, int]:
        b = to_index(batch)
        out = model(t.treatment_controls[b])
        mask = t.event_mask[b]
        decided = mask & (t.event_target[b] > 0.5)
        loss = bce_intensity(out.event_logit, t.event_target[b], mask) + ce_propensity(out.arm_logit, t.arm_target[b], decided)
        return loss, len(batch)

    run_stage("stability", net, data.train_idx, data.val_idx, config.batch_size, loss_fn, config, seed, metrics)
    return net


def _treatment_row_loss(model: WeightNet, t: PathTensors, subjects: np.ndarray) -> Tuple[torch.Tensor, int]:
    subject, cutoff = t.pairs(t.prefix_valid & t.event_mask, subjects)
    if len(subject) == 0:
        return torch.zeros((), dtype=t.prefix_controls.dtype), 0
    controls, static, c = t.prefix_rows(subject, cutoff)
    out = model(controls, static, c)
    s = to_index(subject)
    target = t.event_target[s, c]
    ones = torch.ones_like(target, dtype=torch.bool)
    loss = bce_intensity(out.event_logit, target, ones) + ce_propensity(out.arm_logit, t.arm_target[s, c], target > 0.5)
    return loss, len(subject)


def train_weightnet(data: TrainingData, config: TrainConfig, metrics: Optional[MetricsLog] = None) -> WeightNet:
    """Fit W on full-history prefix paths, one row per (subject, cutoff)."""
    t = data.tensors
    seed = derive_seed(config.seed, WEIGHT_KEY)
    set_seed(seed)
    net = build_weightnet(data.dims, config)
    run_stage(
        "weight", net, data.train_idx, data.val_idx, config.batch_size,
        lambda model, batch, training: _treatment_row_loss(model, t, batch),
        config, seed, metrics,
    )
    return net


def train_encoder(data: TrainingData, config: TrainConfig, metrics: Optional[MetricsLog] = None) -> EncoderNet:
    """Fit E to the outcomes observed at each valid cutoff (unweighted)."""
    t = data.tensors
    seed = derive_seed(config.seed, ENCODER_KEY)
    set_seed(seed)
    net = build_encoder(data.dims, config)

    def loss_fn(model: EncoderNet, batch: np.ndarray, training: bool) -> Tuple[torch.Tensor, int]:
        subject, cutoff = t.pairs(t.outcome_mask, batch)
        if len(subject) == 0:
            return torch.zeros((), dtype=t.prefix_controls.dtype), 0
        controls, static, c = t.prefix_rows(subject, cutoff)
        s = to_index(subject)
        pred, _ = model(controls, static, c, t.current_treatment[s, c])
        target = t.outcome_target[s, c]
        return mse_encoder(pred, target, torch.ones(len(subject), dtype=torch.bool)), len(subject)

    run_stage("encoder", net, data.train_idx, data.val_idx, config.batch_size, loss_fn, config, seed, metrics)
    return net


@dataclass
class SharedStages:
    """Variant-independent networks."""

    stability: StabilityNet
    weight: WeightNet
    encoder: EncoderNet


def train_shared(data: TrainingData, config: TrainConfig, metrics: Optional[MetricsLog] = None) -> SharedStages:
    return SharedStages(
        stability=train_stability(data, config, metrics),
        weight=train_weightnet(data, config, metrics),
        encoder=train_encoder(data, config, metrics),
    )


# =============================================================================
# WEIGHT CACHE
# =============================================================================
@dataclass
class WeightCache:
    """Cached per-instance weights of one (variant, horizon)."""

    variant: str
    horizon: int
    records: List[WeightRecord]

    @property
    def weights(self) -> np.ndarray:
        return np.array([r.weight for r in self.records], dtype=float)

    def to_jsonl(self) -> str:
        return dumps_jsonl(self.records)

    def digest(self) -> str:
        return sha256_bytes(self.to_jsonl().encode("utf-8"))


def treatment_tables(
    stability: StabilityNet,
    weight: WeightNet,
    tensors: PathTensors,
    subjects: Sequence[int],
    batch_size: int,
) -> Dict[int, Tuple[GridModel, GridModel]]:
    """
    (full-history model, treatment-only model) per subject, tabulated on the grid.

    Cutoffs without a valid prefix get NaN probabilities in the W table.
    """
    stability.eval()
    weight.eval()
    subjects = np.asarray(sorted(set(int(s) for s in subjects)), dtype=int)
    g = len(tensors.grid)
    d_a = tensors.n_arms
    w_event = np.full((tensors.n_subjects, g), np.nan)
    w_arms = np.full((tensors.n_subjects, g, d_a), np.nan)
    s_event = np.zeros((tensors.n_subjects, g))
    s_arms = np.zeros((tensors.n_subjects, g, d_a))

    with torch.no_grad():
        for batch in chunks(subjects, batch_size):
            b = to_index(batch)
            out = stability(tensors.treatment_controls[b])
            s_event[batch] = out.event_prob.numpy()
            s_arms[batch] = out.arm_prob.numpy()
            subject, cutoff = tensors.pairs(tensors.prefix_valid, batch)
            if len(subject):
                controls, static, c = tensors.prefix_rows(subject, cutoff)
                out = weight(controls, static, c)
                w_event[subject, cutoff] = out.event_prob.numpy()
                w_arms[subject, cutoff] = out.arm_prob.numpy()

    return {
        int(i): (
            GridModel(step=STEP, event_prob=w_event[i], arm_prob=w_arms[i]),
            GridModel(step=STEP, event_prob=s_event[i], arm_prob=s_arms[i]),
        )
        for i in subjects
    }


def cache_weights(
    instances: DecoderInstances,
    tables: Dict[int, Tuple[GridModel, GridModel]],
    variant: Variant,
    config: TrainConfig,
) -> WeightCache:
    """
    Per-instance weights for the decoder loss.

    scip stores stabilized weights, cip unstabilized ones, both truncated
    to the configured percentiles and rescaled to mean 1; unweighted stores 1.
    An instance whose weight cannot be computed is flagged and gets NaN,
    which the decoder loss skips.
    """
    substep = STEP / config.substeps
    traces = []
    raw = np.ones(len(instances))
    for i, (row, plan) in enumerate(zip(instances.subject_index, instances.plans)):
        full, marginal = tables[int(row)]
        try:
            trace = plan_weights(full, marginal, plan, substep, config.lambda_floor, config.pi_floor)
            if variant == "scip":
                raw[i] = trace.product_stabilized
            elif variant == "cip":
                raw[i] = trace.product_unstabilized
        except ScipNetError as e:
            logger.warning(f"weight for instance {instances.instance_ids[i]} failed: {e}")
            trace = None
            raw[i] = np.nan
        if trace is not None and not np.isfinite(raw[i]):
            raw[i] = np.nan
        traces.append(trace)

    if variant == "unweighted":
        final = np.ones(len(instances))
    elif np.isfinite(raw).any():
        final = truncate_normalize(raw, config.truncate_low, config.truncate_high)
    else:
        final = np.full(len(instances), np.nan)

    records: List[WeightRecord] = []
    flagged = 0
    for i, trace in enumerate(traces):
        if trace is None:
            flags, w_f, xi_f, jumps, stab, unstab = ["failed"], [], [], [], float("nan"), float("nan")
        else:
            flags = list(trace.flags)
            w_f, xi_f = trace.w_factors.tolist(), trace.xi_factors.tolist()
            jumps = list(trace.jump_times)
            stab, unstab = trace.product_stabilized, trace.product_unstabilized
        flagged += bool(flags)
        records.append(
            WeightRecord(
                instance_id=instances.instance_ids[i],
                jump_times=jumps,
                W_factors=w_f,
                Xi_factors=xi_f,
                stabilized=stab,
                unstabilized=unstab,
                weight=float(final[i]),
                flags=flags,
            )
        )

    finite = raw[np.isfinite(raw)]
    logger.weight_summary(
        variant,
        instances.horizon,
        len(instances),
        float(finite.mean()) if finite.size else float("nan"),
        float(finite.max()) if finite.size else float("nan"),
        flagged / len(instances) if len(instances) else 0.0,
    )
    return WeightCache(variant=variant, horizon=instances.horizon, records=records)


# =============================================================================
# DECODER
# =============================================================================
def encoder_latents(encoder: EncoderNet, tensors: PathTensors, subject: np.ndarray, cutoff: np.ndarray, batch_size: int = 512) -> torch.Tensor:
    """Frozen encoder representations z^E at (subject, cutoff) rows."""
    encoder.eval()
    parts = []
    with torch.no_grad():
        for rows in chunks(np.arange(len(subject)), batch_size):
            controls, static, c = tensors.prefix_rows(subject[rows], cutoff[rows])
            parts.append(encoder.latent(controls, static, c))
    if not parts:
        return torch.zeros((0, encoder.latent_dim), dtype=tensors.prefix_controls.dtype)
    return torch.cat(parts)


def train_decoder(
    data: TrainingData,
    encoder: EncoderNet,
    train_instances: DecoderInstances,
    weights: np.ndarray,
    config: TrainConfig,
    val_instances: Optional[DecoderInstances] = None,
    metrics: Optional[MetricsLog] = None,
    stage_seed: Optional[int] = None,
) -> DecoderNet:
    """
    Fit a decoder for one horizon with the weighted MSE.

    Weights are rescaled to mean 1 first, so any global rescaling of the
    cache yields the same parameters. Validation loss is unweighted.
    """
    if len(weights) != len(train_instances):
        raise ValidationError(f"{len(weights)} weights for {len(train_instances)} instances")
    t = data.tensors
    seed = derive_seed(config.seed, DECODER_KEY, train_instances.horizon) if stage_seed is None else stage_seed
    set_seed(seed)
    decoder = build_decoder(data.dims, config)
    w = torch.as_tensor(normalize_mean_one(weights) if len(weights) else np.zeros(0), dtype=t.treatment_controls.dtype)

    splits = {"train": (train_instances, w)}
    if val_instances is not None and len(val_instances):
        splits["val"] = (val_instances, torch.ones(len(val_instances), dtype=w.dtype))
    latents = {
        name: encoder_latents(encoder, t, inst.subject_index, inst.start)
        for name, (inst, _) in splits.items()
    }

    def make_loss(name: str) -> LossFn:
        inst, weight = splits[name]
        z = latents[name]

        def loss_fn(model: DecoderNet, batch: np.ndarray, training: bool) -> Tuple[torch.Tensor, int]:
            b = to_index(batch)
            controls = t.treatment_controls[to_index(inst.subject_index[batch])]
            pred = model(z[b], controls, to_index(inst.start[batch]), to_index(inst.end[batch]))
            loss, skipped = weighted_mse_decoder(pred, inst.target[b], weight[b])
            return loss, len(batch) - skipped

        return loss_fn

    train_loss_fn = make_loss("train")
    val_loss_fn = make_loss("val") if "val" in splits else None

    def loss_fn(model: DecoderNet, batch: np.ndarray, training: bool) -> Tuple[torch.Tensor, int]:
        if training or val_loss_fn is None:
            return train_loss_fn(model, batch, training)
        return val_loss_fn(model, batch, training)

    val_units = np.arange(len(val_instances)) if "val" in splits else np.zeros(0, dtype=int)
    run_stage(
        f"decoder[h={train_instances.horizon}]", decoder, np.arange(len(train_instances)), val_units,
        config.decoder_batch_size, loss_fn, config, seed, metrics,
    )
    return decoder


def split_instances(instances: DecoderInstances, data: TrainingData) -> Tuple[DecoderInstances, DecoderInstances]:
    """Instances of training subjects and of validation subjects."""
    in_train = np.isin(instances.subject_index, data.train_idx)
    return instances.subset(np.flatnonzero(in_train)), instances.subset(np.flatnonzero(~in_train))


def fit_decoders(
    data: TrainingData,
    shared: SharedStages,
    variant: Variant,
    horizons: Sequence[int],
    config: TrainConfig,
    metrics: Optional[MetricsLog] = None,
) -> Tuple[Dict[int, DecoderNet], Dict[int, WeightCache]]:
    """Cache weights and fit one decoder per horizon for a variant."""
    tables = treatment_tables(shared.stability, shared.weight, data.tensors, data.train_idx, config.batch_size)
    decoders: Dict[int, DecoderNet] = {}
    caches: Dict[int, WeightCache] = {}
    for horizon in horizons:
        instances = build_decoder_instances(data.trajectories, data.tensors, horizon, data.scaler)
        train_inst, val_inst = split_instances(instances, data)
        if len(train_inst) == 0:
            raise ValidationError(f"no training instances for horizon {horizon}", key="training.horizons")
        cache = cache_weights(train_inst, tables, variant, config)
        decoders[horizon] = train_decoder(
            data, shared.encoder, train_inst, cache.weights, config, val_inst, metrics,
            stage_seed=derive_seed(config.seed, DECODER_KEY, horizon),
        )
        caches[horizon] = cache
    return decoders, caches


# =============================================================================
# MODEL BUNDLE
# =============================================================================
PARAMS_FILE = "params.bin"
BUNDLE_FILE = "bundle.json"


@dataclass
class ModelBundle:
    """All trained networks plus what is needed to rebuild and use them."""

    config: TrainConfig
    dims: Dict[str, int]
    scaler: OutcomeScaler
    stability: StabilityNet
    weight: WeightNet
    encoder: EncoderNet
    decoders: Dict[int, DecoderNet]
    weight_digests: Dict[int, str] = field(default_factory=dict)

    def arrays(self) -> Dict[str, np.ndarray]:
        arrays: Dict[str, np.ndarray] = {}
        arrays.update(module_arrays(self.stability, "s."))
        arrays.update(module_arrays(self.weight, "w."))
        arrays.update(module_arrays(self.encoder, "e."))
        for horizon, decoder in self.decoders.items():
            arrays.update(module_arrays(decoder, f"d.h{horizon}."))
        return arrays

    def _header(self, manifest: List[Dict[str, object]]) -> str:
        header = {
            "artifact_version": settings.ARTIFACT_VERSION,
            "config": self.config.model_dump(mode="json"),
            "dims": self.dims,
            "scaler": {"mean": self.scaler.mean, "std": self.scaler.std},
            "horizons": sorted(self.decoders),
            "weight_digests": {str(k): v for k, v in sorted(self.weight_digests.items())},
            "parameters": json.loads(manifest_json(manifest)),
        }
        return json.dumps(header, sort_keys=True, indent=2)

    def serialize(self) -> Tuple[str, bytes]:
        manifest, blob = pack_arrays(self.arrays())
        return self._header(manifest), blob

    def digest(self) -> str:
        header, blob = self.serialize()
        return sha256_bytes(blob + header.encode("utf-8"))

    def save(self, out_dir: PathLike) -> Dict[str, str]:
        """Write params.bin and bundle.json; returns {path: sha256}."""
        out_dir = pathlib.Path(out_dir)
        header, blob = self.serialize()
        outputs = {}
        for name, data in ((PARAMS_FILE, blob), (BUNDLE_FILE, header.encode("utf-8"))):
            path = atomic_write_bytes(out_dir / name, data)
            outputs[str(path)] = sha256_bytes(data)
            logger.artifact_written(str(path), outputs[str(path)])
        return outputs

    @classmethod
    def load(cls, out_dir: PathLike) -> "ModelBundle":
        out_dir = pathlib.Path(out_dir)
        bundle_path = out_dir / BUNDLE_FILE
        params_path = out_dir / PARAMS_FILE
        for path in (bundle_path, params_path):
            if not path.exists():
                raise ValidationError(f"model bundle file not found: {path}", key="--model")
        header = json.loads(bundle_path.read_text(encoding="utf-8"))
        arrays = unpack_arrays(header["parameters"], params_path.read_bytes())
        config = TrainConfig.model_validate(header["config"])
        dims = {k: int(v) for k, v in header["dims"].items()}
        bundle = cls(
            config=config,
            dims=dims,
            scaler=OutcomeScaler(**header["scaler"]),
            stability=build_stability(dims, config),
            weight=build_weightnet(dims, config),
            encoder=build_encoder(dims, config),
            decoders={int(h): build_decoder(dims, config) for h in header["horizons"]},
            weight_digests={int(k): v for k, v in header["weight_digests"].items()},
        )
        load_module_arrays(bundle.stability, arrays, "s.")
        load_module_arrays(bundle.weight, arrays, "w.")
        load_module_arrays(bundle.encoder, arrays, "e.")
        for horizon, decoder in bundle.decoders.items():
            load_module_arrays(decoder, arrays, f"d.h{horizon}.")
        bundle.eval()
        return bundle

    def eval(self) -> "ModelBundle":
        for net in (self.stability, self.weight, self.encoder, *self.decoders.values()):
            net.eval()
        return self


def fit_bundle(
    trajectories: Sequence[Trajectory],
    config: TrainConfig,
    metrics: Optional[MetricsLog] = None,
) -> Tuple[ModelBundle, Dict[int, WeightCache]]:
    """Run all stages in memory for config.variant and config.horizons."""
    data = prepare_data(trajectories, config)
    shared = train_shared(data, config, metrics)
    decoders, caches = fit_decoders(data, shared, config.variant, config.horizons, config, metrics)
    bundle = ModelBundle(
        config=config,
        dims=data.dims,
        scaler=data.scaler,
        stability=shared.stability,
        weight=shared.weight,
        encoder=shared.encoder,
        decoders=decoders,
        weight_digests={h: c.digest() for h, c in caches.items()},
    )
    return bundle.eval(), caches


def run_pipeline(data_path: PathLike, config: TrainConfig, out_dir: PathLike) -> Tuple[ModelBundle, Dict[str, str]]:
    """
    Train from a trajectory file and persist the bundle, weight caches and metrics.

    Returns:
        (bundle, {output path: sha256})

    Raises:
        ValidationError: data file missing (before any training)
    """
    data_path = pathlib.Path(data_path)
    if not data_path.exists():
        raise ValidationError(f"data file not found: {data_path}", key="--data")
    trajectories = load_trajectories(data_path)

    out_dir = pathlib.Path(out_dir)
    metrics = MetricsLog()
    bundle, caches = fit_bundle(trajectories, config, metrics)

    outputs = bundle.save(out_dir)
    for horizon, cache in caches.items():
        text = cache.to_jsonl()
        path = atomic_write_text(out_dir / f"weights_h{horizon}.jsonl", text)
        outputs[str(path)] = sha256_bytes(text.encode("utf-8"))
    path = metrics.write(out_dir / "metrics.csv")
    outputs[str(path)] = sha256_bytes(path.read_bytes())
    return bundle, outputs
