# backend/scipnet/evaluation.py
"""
CAPO inference, RMSE reporting and the experiment sweep.

RMSE is computed in normalized outcome units: predictions and ground truth
both go through the training-set z-score of the bundle.
"""

import json
import pathlib
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Sequence, Tuple

import numpy as np
import pandas as pd
import torch
from pydantic import ValidationError as PydanticValidationError

from .datasets import STEP
from .errors import ValidationError
from .logger import get_logger
from .neuralcde import as_tensor
from .schemas import (
    EvalRecord,
    InterventionPlan,
    PredictionRecord,
    ResolvedConfig,
    Trajectory,
    TrainConfig,
)
from .simulator import build_eval_records, simulate_cohort
from .trajectory import build_control_path, build_plan_path, grid_index, make_grid
from .training import ModelBundle, SharedStages, fit_decoders, prepare_data, train_shared
from .utils import PathLike, atomic_write_text, dumps_jsonl, read_jsonl, sha256_bytes

logger = get_logger()

REPORT_COLUMNS = ["variant", "gamma", "omega", "horizon", "seed", "rmse", "n_pairs", "status"]
SUMMARY_COLUMNS = ["variant", "gamma", "omega", "horizon", "rmse_mean", "rmse_std", "n_seeds"]


# =============================================================================
# PREDICTION
# =============================================================================
def _plan_horizon(plan: InterventionPlan, cutoff: float) -> int:
    delta = plan.horizon - cutoff
    if delta <= 0:
        raise ValidationError("plan horizon must be after the prefix cutoff")
    if abs(delta - round(delta)) > 1e-9:
        raise ValidationError(f"plan horizon {plan.horizon} is not on the day grid")
    return int(round(delta))


def predict_capo(bundle: ModelBundle, trajectory: Trajectory, cutoff: float, plan: InterventionPlan) -> np.ndarray:
    """
    Estimated E[Y_tau[plan] | history before `cutoff`] in normalized units.

    Raises:
        ValidationError: plan off the grid, starting before the cutoff, or
            with a horizon the bundle has no decoder for
    """
    return predict_batch(bundle, {trajectory.id: trajectory}, [(trajectory.id, cutoff, plan)])[0]


def predict_batch(
    bundle: ModelBundle,
    trajectories: Dict[int, Trajectory],
    queries: Sequence[Tuple[int, float, InterventionPlan]],
    batch_size: int = 512,
) -> np.ndarray:
    """
    Batched CAPO predictions for (subject id, cutoff, plan) queries.

    Encoder latents are computed once per (subject, cutoff).

    Returns:
        Predictions [Q, d_y] in normalized units
    """
    bundle.eval()
    if not queries:
        return np.zeros((0, bundle.dims["outcome_dim"]))
    tau = float(bundle.dims["tau"])
    grid = make_grid(tau, STEP)

    horizons, starts, ends, plan_paths, keys = [], [], [], [], []
    for subject_id, cutoff, plan in queries:
        if subject_id not in trajectories:
            raise ValidationError(f"unknown subject {subject_id}")
        if plan.start < cutoff - 1e-9:
            raise ValidationError(f"plan starts at {plan.start}, before prefix cutoff {cutoff}")
        delta = _plan_horizon(plan, cutoff)
        if delta not in bundle.decoders:
            raise ValidationError(f"no decoder for horizon {delta}; trained horizons {sorted(bundle.decoders)}")
        horizons.append(delta)
        starts.append(grid_index(grid, cutoff))
        ends.append(grid_index(grid, plan.horizon))
        plan_paths.append(build_plan_path(trajectories[subject_id], plan, STEP, cutoff=cutoff).values)
        keys.append((subject_id, float(cutoff)))

    unique = sorted(set(keys))
    position = {k: i for i, k in enumerate(unique)}
    prefix = np.stack([build_control_path(trajectories[s], c, STEP, scaler=bundle.scaler).values for s, c in unique])
    static = np.stack([np.asarray(trajectories[s].static, dtype=float) for s, _ in unique])
    cut_idx = np.array([grid_index(grid, c) for _, c in unique])

    with torch.no_grad():
        latents = []
        for lo in range(0, len(unique), batch_size):
            sl = slice(lo, lo + batch_size)
            latents.append(bundle.encoder.latent(as_tensor(prefix[sl]), as_tensor(static[sl]), torch.as_tensor(cut_idx[sl])))
        z = torch.cat(latents)

        out = np.zeros((len(queries), bundle.dims["outcome_dim"]))
        rows_by_horizon: Dict[int, List[int]] = {}
        for i, h in enumerate(horizons):
            rows_by_horizon.setdefault(h, []).append(i)
        for h, rows in rows_by_horizon.items():
            decoder = bundle.decoders[h]
            for lo in range(0, len(rows), batch_size):
                batch = rows[lo:lo + batch_size]
                zb = z[torch.as_tensor([position[keys[i]] for i in batch])]
                pred = decoder(
                    zb,
                    as_tensor(np.stack([plan_paths[i] for i in batch])),
                    torch.as_tensor([starts[i] for i in batch]),
                    torch.as_tensor([ends[i] for i in batch]),
                )
                out[batch] = pred.numpy()
    return out


# =============================================================================
# RMSE
# =============================================================================
def rmse(predictions: np.ndarray, truth: np.ndarray) -> float:
    """Root mean squared error over all entries."""
    predictions = np.asarray(predictions, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if predictions.shape != truth.shape or predictions.size == 0:
        raise ValidationError(f"cannot compare predictions {predictions.shape} with truth {truth.shape}")
    return float(np.sqrt(np.mean((predictions - truth) ** 2)))


@dataclass
class RmseReport:
    """Per-horizon RMSE over all (record, plan) pairs, with the pairs themselves."""

    rmse: Dict[int, float]
    n_pairs: Dict[int, int]
    predictions: Dict[int, np.ndarray] = field(default_factory=dict)
    truth: Dict[int, np.ndarray] = field(default_factory=dict)
    records: Dict[int, List[EvalRecord]] = field(default_factory=dict)


def evaluate(bundle: ModelBundle, trajectories: Iterable[Trajectory], records: Sequence[EvalRecord]) -> RmseReport:
    """
    RMSE of CAPO predictions against ground truth, per horizon.

    Raises:
        ValidationError: no records, or a record whose subject is missing
    """
    if not records:
        raise ValidationError("no evaluation records")
    by_id = {t.id: t for t in trajectories}
    grouped: Dict[int, List[EvalRecord]] = {}
    for record in records:
        grouped.setdefault(record.horizon, []).append(record)

    report = RmseReport(rmse={}, n_pairs={})
    for horizon in sorted(grouped):
        group = grouped[horizon]
        pred = predict_batch(bundle, by_id, [(r.subject_id, r.prefix_cutoff, r.intervention_plan) for r in group])
        truth = bundle.scaler.transform(np.array([r.ground_truth_y_tau for r in group], dtype=float))
        report.rmse[horizon] = rmse(pred, truth)
        report.n_pairs[horizon] = len(group)
        report.predictions[horizon] = pred
        report.truth[horizon] = truth
        report.records[horizon] = group
    return report


def load_eval_records(path: PathLike) -> List[EvalRecord]:
    """
    Read evaluation records from JSON-lines.

    Raises:
        ValidationError: malformed line or record
    """
    try:
        return [EvalRecord.model_validate(r) for r in read_jsonl(path)]
    except (PydanticValidationError, json.JSONDecodeError) as e:
        raise ValidationError(f"malformed evaluation records: {e}", key=str(path))


def prediction_records(report: RmseReport, variant: str, gamma: float, omega: float, seed: int) -> List[PredictionRecord]:
    """Per-pair prediction dump lines for a report."""
    lines: List[PredictionRecord] = []
    for horizon in sorted(report.records):
        plan_counter: Dict[Tuple[int, float], int] = {}
        for record, pred, truth in zip(report.records[horizon], report.predictions[horizon], report.truth[horizon]):
            key = (record.subject_id, record.prefix_cutoff)
            index = plan_counter.get(key, 0)
            plan_counter[key] = index + 1
            lines.append(
                PredictionRecord(
                    variant=variant,
                    gamma=gamma,
                    omega=omega,
                    horizon=horizon,
                    seed=seed,
                    subject_id=record.subject_id,
                    prefix_cutoff=record.prefix_cutoff,
                    plan_index=index,
                    prediction=pred.tolist(),
                    ground_truth=truth.tolist(),
                )
            )
    return lines


def summarize(report: pd.DataFrame) -> pd.DataFrame:
    """Mean and sample std (ddof=1) of RMSE over seeds for every completed cell."""
    ok = report[report["status"] == "ok"]
    if ok.empty:
        return pd.DataFrame(columns=SUMMARY_COLUMNS)
    grouped = ok.groupby(["variant", "gamma", "omega", "horizon"], sort=False)["rmse"]
    summary = grouped.agg(rmse_mean="mean", rmse_std=lambda s: s.std(ddof=1), n_seeds="count").reset_index()
    return summary[SUMMARY_COLUMNS]


def _csv(frame: pd.DataFrame) -> str:
    return frame.to_csv(index=False, float_format="%.17g")


# =============================================================================
# SWEEP
# =============================================================================
@dataclass
class SweepResult:
    report: pd.DataFrame
    summary: pd.DataFrame
    predictions: List[PredictionRecord]


def _cell(variant: str, gamma: float, omega: float, horizon: int, seed: int) -> str:
    return f"{variant}/gamma={gamma:g}/omega={omega:g}/h={horizon}/seed={seed}"


def _failed_row(variant: str, gamma: float, omega: float, horizon: int, seed: int) -> Dict[str, object]:
    return {"variant": variant, "gamma": gamma, "omega": omega, "horizon": horizon, "seed": seed, "rmse": np.nan, "n_pairs": 0, "status": "failed"}


def run_sweep(config: ResolvedConfig) -> SweepResult:
    """
    Full factorial over gammas x omegas x seeds x variants x horizons.

    Per (gamma, omega, seed) a training and a test cohort are simulated and
    the shared stages are fitted once; each (variant, horizon) cell then
    fits its own decoder. A cell that raises anything is recorded as failed
    with the error logged, and the sweep moves on.
    """
    sweep = config.sweep
    rows: List[Dict[str, object]] = []
    dump: List[PredictionRecord] = []

    for gamma in sweep.gammas:
        for omega in sweep.omegas:
            for seed in sweep.seeds:
                logger.separator(f"gamma={gamma:g} omega={omega:g} seed={seed}")
                sim = config.simulation.model_copy(update={"gamma": gamma, "omega": omega, "seed": seed})
                train_cfg = config.training.model_copy(update={"seed": seed, "horizons": sweep.horizons})
                eval_cfg = config.evaluation.model_copy(update={"horizons": sweep.horizons})
                try:
                    train, _ = simulate_cohort(sim)
                    test, truths = simulate_cohort(sim, eval_cfg.n_test_subjects, stream=1, id_offset=sim.n_subjects)
                    records = build_eval_records(test, truths, sim, eval_cfg)
                    data = prepare_data(train, train_cfg)
                    shared = train_shared(data, train_cfg)
                except Exception as e:
                    for variant in sweep.variants:
                        for horizon in sweep.horizons:
                            logger.cell_result(_cell(variant, gamma, omega, horizon, seed), False, error=str(e))
                            rows.append(_failed_row(variant, gamma, omega, horizon, seed))
                    continue

                for variant in sweep.variants:
                    for horizon in sweep.horizons:
                        cell = _cell(variant, gamma, omega, horizon, seed)
                        try:
                            bundle = _cell_bundle(data, shared, variant, horizon, train_cfg)
                            cell_records = [r for r in records if r.horizon == horizon]
                            report = evaluate(bundle, test, cell_records)
                        except Exception as e:
                            logger.cell_result(cell, False, error=str(e))
                            rows.append(_failed_row(variant, gamma, omega, horizon, seed))
                            continue
                        logger.cell_result(cell, True, rmse=report.rmse[horizon])
                        rows.append({
                            "variant": variant, "gamma": gamma, "omega": omega, "horizon": horizon, "seed": seed,
                            "rmse": report.rmse[horizon], "n_pairs": report.n_pairs[horizon], "status": "ok",
                        })
                        dump.extend(prediction_records(report, variant, gamma, omega, seed))

    frame = pd.DataFrame(rows, columns=REPORT_COLUMNS)
    return SweepResult(report=frame, summary=summarize(frame), predictions=dump)


def _cell_bundle(data, shared: SharedStages, variant: str, horizon: int, config: TrainConfig) -> ModelBundle:
    cfg = config.model_copy(update={"variant": variant, "horizons": [horizon]})
    decoders, caches = fit_decoders(data, shared, variant, [horizon], cfg)
    return ModelBundle(
        config=cfg,
        dims=data.dims,
        scaler=data.scaler,
        stability=shared.stability,
        weight=shared.weight,
        encoder=shared.encoder,
        decoders=decoders,
        weight_digests={h: c.digest() for h, c in caches.items()},
    ).eval()


def _write_texts(out_dir: PathLike, texts: Sequence[Tuple[str, str]]) -> Dict[str, str]:
    out_dir = pathlib.Path(out_dir)
    outputs: Dict[str, str] = {}
    for name, text in texts:
        path = atomic_write_text(out_dir / name, text)
        outputs[str(path)] = sha256_bytes(text.encode("utf-8"))
        logger.artifact_written(str(path), outputs[str(path)])
    return outputs


def write_sweep(result: SweepResult, out_dir: PathLike) -> Dict[str, str]:
    """Write report.csv, summary.csv and predictions.jsonl; returns {path: sha256}."""
    return _write_texts(out_dir, [
        ("report.csv", _csv(result.report)),
        ("summary.csv", _csv(result.summary)),
        ("predictions.jsonl", dumps_jsonl(result.predictions)),
    ])


def write_evaluation(
    report: RmseReport,
    bundle: ModelBundle,
    out_dir: PathLike,
    gamma: float,
    omega: float,
    seed: int,
) -> Dict[str, str]:
    """Write the report CSV and per-pair predictions of one evaluated bundle."""
    variant = bundle.config.variant
    rows = [
        {"variant": variant, "gamma": gamma, "omega": omega, "horizon": h, "seed": seed, "rmse": report.rmse[h], "n_pairs": report.n_pairs[h], "status": "ok"}
        for h in sorted(report.rmse)
    ]
    return _write_texts(out_dir, [
        ("report.csv", _csv(pd.DataFrame(rows, columns=REPORT_COLUMNS))),
        ("predictions.jsonl", dumps_jsonl(prediction_records(report, variant, gamma, omega, seed))),
    ])
