"""End-to-end experiment loop: data, pairing, per-epoch train/select/regress, artifacts.

Each epoch re-jitters the fragment boundaries, trains every pair expert for
one epoch on its jittered fragments, rebuilds the feature banks, samples the
clean set from both agreement variants and advances the downstream regressor
one epoch on the selected samples.  Held-out evaluation uses clean labels.
"""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .config import ExperimentConfig
from .data import Dataset, generate_synthetic, load_csv, split_dataset
from .data import NoiseSpec
from .experts import (
    ExpertEnsemble,
    build_feature_bank,
    init_ensemble,
    train_experts_epoch,
)
from .fragments import (
    FragmentationScheme,
    Pairing,
    fragment_edge_weights,
    fragment_labels,
    jitter_scheme,
    select_contrastive_pairing,
)
from .metrics import MetricsReport, error_residual_ratio, mae, mrae, selection_rate
from .net import Net, NetSpec, forward_batch, init_net, save_net, train_step
from .rng import derive_seed, stream
from .selection import SelectionOutcome, select_clean


class PipelineError(RuntimeError):
    """Wraps stage failures with the epoch and stage that produced them."""


@dataclass
class RunResult:
    config: ExperimentConfig
    pairing: Optional[Pairing]
    history: list[dict] = field(default_factory=list)
    rho: Optional[float] = None
    out_dir: Optional[Path] = None
    last_selection: Optional[SelectionOutcome] = None

    @property
    def final(self) -> dict:
        return self.history[-1]

    @property
    def final_mae(self) -> float:
        return self.final["mae"]

    @property
    def final_err(self) -> Optional[float]:
        return self.final.get("err")

    @property
    def final_selection_rate(self) -> float:
        return self.final["selection_rate"]


def load_source_dataset(cfg: ExperimentConfig) -> Dataset:
    src = cfg.dataset
    if src["kind"] == "synthetic":
        return generate_synthetic(
            n=src["n"],
            d=src["d"],
            label_lo=src["label_lo"],
            label_hi=src["label_hi"],
            feature_noise_std=src["feature_noise_std"],
            seed=derive_seed(cfg.seed, "data"),
        )
    return load_csv(
        src["path"],
        feature_cols=src["feature_cols"],
        label_col=src["label_col"],
        gt_col=src["gt_col"],
    )


def prepare_splits(
    cfg: ExperimentConfig, use_ground_truth: bool = False
) -> tuple[Dataset, Dataset]:
    """Load, (optionally) corrupt and split the data.

    With ``use_ground_truth`` the observed labels are replaced by ground truth
    and no noise is injected: the setup of a noise-free reference run.
    """
    ds = load_source_dataset(cfg)
    if use_ground_truth:
        if ds.y_gt is None:
            raise PipelineError("reference run requires ground-truth labels")
        ds = Dataset(x=ds.x.copy(), y=ds.y_gt.copy(), y_gt=ds.y_gt.copy())
    elif cfg.noise is not None:
        noise_seed = cfg.noise.get("seed")
        if noise_seed is None:
            noise_seed = derive_seed(cfg.seed, "noise")
        spec = NoiseSpec(
            kind=cfg.noise["kind"],
            rate=cfg.noise.get("rate"),
            max_std_frac=cfg.noise.get("max_std_frac"),
            seed=noise_seed,
        )
        ds = spec.apply(ds)
    return split_dataset(ds, cfg.test_frac, derive_seed(cfg.seed, "split"))


def resolve_pairing(cfg: ExperimentConfig, train: Dataset, scheme) -> Pairing:
    if cfg.pairing_override is not None:
        return Pairing.from_json(cfg.pairing_override)
    return select_contrastive_pairing(fragment_edge_weights(train, scheme))


def _predict_labels(reg: Net, X: np.ndarray, lo: float, span: float) -> np.ndarray:
    out, _ = forward_batch(reg, X)
    return lo + out[:, 0] * span


def _train_regressor_epoch(
    reg: Net,
    X: np.ndarray,
    targets: np.ndarray,
    lr: float,
    batch_size: int,
    seed: int,
) -> float:
    order = stream(seed, "regressor_shuffle").permutation(len(X))
    total = 0.0
    for start in range(0, len(order), batch_size):
        batch = order[start : start + batch_size]
        total += len(batch) * train_step(reg, X[batch], targets[batch], "mse", lr)
    return total / len(order)


class _ArtifactWriter:
    """Single-threaded appenders for the run directory."""

    def __init__(self, out_dir: Optional[Path]):
        self.out_dir = out_dir
        if out_dir is not None:
            out_dir.mkdir(parents=True, exist_ok=True)
            (out_dir / "selection").mkdir(exist_ok=True)
            self._metrics = (out_dir / "metrics.jsonl").open("w")
        else:
            self._metrics = None

    def metrics_line(self, record: dict) -> None:
        if self._metrics is not None:
            self._metrics.write(json.dumps(record) + "\n")

    def selection_epoch(self, epoch: int, rows: list[dict]) -> None:
        if self.out_dir is None:
            return
        path = self.out_dir / "selection" / f"epoch_{epoch:04d}.jsonl"
        with path.open("w") as fh:
            for row in rows:
                fh.write(json.dumps(row) + "\n")

    def close(self) -> None:
        if self._metrics is not None:
            self._metrics.close()


def _write_final_artifacts(
    out_dir: Path,
    cfg: ExperimentConfig,
    scheme: FragmentationScheme,
    pairing: Optional[Pairing],
    ens: Optional[ExpertEnsemble],
    reg: Net,
    result: RunResult,
) -> None:
    with (out_dir / "config.json").open("w") as fh:
        json.dump(cfg.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    layout: dict = {"fragmentation": scheme.to_json()}
    if pairing is not None:
        layout["pairing"] = pairing.to_json()
        layout["jitter_deltas"] = [rec.get("jitter_delta") for rec in result.history]
    with (out_dir / "layout.json").open("w") as fh:
        json.dump(layout, fh, indent=2, sort_keys=True)
    ckpt_dir = out_dir / "checkpoints"
    ckpt_dir.mkdir(exist_ok=True)
    save_net(reg, ckpt_dir / "regressor.npz")
    if ens is not None:
        for (i, j), net in ens.experts.items():
            save_net(net, ckpt_dir / f"expert_{i}_{j}.npz")
    write_summary_csv(out_dir / "summary.csv", [summary_row(cfg, result)])


def summary_row(cfg: ExperimentConfig, result: RunResult) -> dict:
    noise = cfg.noise or {}
    final = result.final
    return {
        "config_hash": cfg.config_hash(),
        "seed": cfg.seed,
        "mode": cfg.mode,
        "noise_kind": noise.get("kind", "none"),
        "noise_param": noise.get("rate", noise.get("max_std_frac", "")),
        "fragments": cfg.fragments,
        "jitter": cfg.jitter,
        "knn_k": cfg.knn_k,
        "epochs": cfg.epochs,
        "final_mae": final["mae"],
        "final_selection_rate": final["selection_rate"],
        "final_err": final.get("err", ""),
        "final_mrae": final.get("mrae", ""),
        "rho": result.rho if result.rho is not None else "",
    }


def write_summary_csv(path: Path, rows: list[dict]) -> None:
    with path.open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        writer.writerows(rows)


def run_experiment(
    cfg: ExperimentConfig,
    out_dir: Optional[str | Path] = None,
    use_ground_truth: bool = False,
) -> RunResult:
    """Execute the full seeded loop; write artifacts when ``out_dir`` is given."""
    stage = "prepare"
    epoch = 0
    try:
        train, test = prepare_splits(cfg, use_ground_truth=use_ground_truth)
        eval_targets = test.y_gt if test.y_gt is not None else test.y
        lo, span = train.label_min, train.label_range
        norm_targets = (train.y - lo) / span

        stage = "fragment"
        scheme = fragment_labels(train, cfg.fragments)
        pairing: Optional[Pairing] = None
        ens: Optional[ExpertEnsemble] = None
        if cfg.mode != "vanilla":
            stage = "pairing"
            pairing = resolve_pairing(cfg, train, scheme)
            ens = init_ensemble(
                pairing,
                input_dim=train.d,
                hidden_dims=cfg.expert_net.hidden_dims,
                activation=cfg.expert_net.activation,
                seed=derive_seed(cfg.seed, "experts"),
                objective="classify" if cfg.mode == "select" else "regress",
                label_lo=lo,
                label_range=span,
            )

        reg = init_net(
            NetSpec(
                input_dim=train.d,
                hidden_dims=cfg.regressor_net.hidden_dims,
                output_dim=1,
                activation=cfg.regressor_net.activation,
                seed=derive_seed(cfg.seed, "regressor"),
            )
        )

        writer = _ArtifactWriter(Path(out_dir) if out_dir is not None else None)
        result = RunResult(config=cfg, pairing=pairing, rho=cfg.reference_rho)

        for epoch in range(1, cfg.epochs + 1):
            record: dict = {"epoch": epoch}
            if ens is not None:
                stage = "jitter"
                js = jitter_scheme(scheme, cfg.jitter, cfg.seed, epoch)
                record["jitter_delta"] = js.delta

                stage = "train_experts"
                losses = train_experts_epoch(
                    ens,
                    train,
                    js,
                    cfg.expert_lr,
                    cfg.batch_size,
                    derive_seed(cfg.seed, "expert_epoch", epoch),
                )
                record["expert_loss"] = float(np.mean(list(losses.values())))

                stage = "build_banks"
                banks = build_feature_bank(ens, train, js)

                stage = "select"
                outcome = select_clean(
                    train,
                    ens,
                    scheme,
                    banks,
                    cfg.knn_k,
                    cfg.seed,
                    epoch,
                    predictive="classifier" if cfg.mode == "select" else "regression",
                )
                selected = outcome.combine(cfg.selection_combine)
                union = np.union1d(outcome.selected_pred, outcome.selected_repr)
                if not np.array_equal(outcome.selected_union, union):
                    raise PipelineError("selected union does not match S^p | S^r")
                record["n_pred"] = int(outcome.chosen_pred.sum())
                record["n_repr"] = int(outcome.chosen_repr.sum())
                result.last_selection = outcome
                writer.selection_epoch(epoch, outcome.records(train))
            else:
                selected = np.arange(train.n)

            record["n_selected"] = int(len(selected))

            stage = "train_regressor"
            if len(selected) == 0:
                warnings.warn(f"epoch {epoch}: empty selection, regressor skips the epoch")
            else:
                record["regressor_loss"] = _train_regressor_epoch(
                    reg,
                    train.x[selected],
                    norm_targets[selected],
                    cfg.regressor_lr,
                    cfg.batch_size,
                    derive_seed(cfg.seed, "regressor_epoch", epoch),
                )

            stage = "evaluate"
            epoch_mae = mae(_predict_labels(reg, test.x, lo, span), eval_targets)
            err = (
                error_residual_ratio(selected, train)
                if train.y_gt is not None
                else None
            )
            report = MetricsReport(
                epoch=epoch,
                mae=epoch_mae,
                selection_rate=selection_rate(selected, train),
                err=err,
                mrae=mrae(epoch_mae, cfg.reference_rho)
                if cfg.reference_rho is not None
                else None,
            )
            record.update(report.to_json())
            result.history.append(record)
            writer.metrics_line(record)

        writer.close()
        if writer.out_dir is not None:
            result.out_dir = writer.out_dir
            _write_final_artifacts(writer.out_dir, cfg, scheme, pairing, ens, reg, result)
        return result
    except PipelineError:
        raise
    except Exception as exc:
        raise PipelineError(f"epoch {epoch}, stage {stage}: {exc}") from exc


def run_noise_free_reference(
    cfg: ExperimentConfig, out_dir: Optional[str | Path] = None
) -> tuple[float, RunResult]:
    """Train the same regressor on ground-truth labels; returns its held-out MAE.

    This is exactly vanilla mode with noise disabled, and supplies the
    denominator for relative-error reporting.
    """
    ref_cfg = cfg.replace(mode="vanilla", noise=None, reference_rho=None)
    result = run_experiment(ref_cfg, out_dir=out_dir, use_ground_truth=True)
    return result.final_mae, result


def compare_pairings(
    cfg: ExperimentConfig,
    pairings: list,
    out_path: Optional[str | Path] = None,
) -> list[dict]:
    """Run the experiment once per pairing with shared seeds; one row each."""
    seen: set[tuple] = set()
    rows = []
    for raw in pairings:
        pairing = Pairing.from_json(raw)
        if pairing.pairs in seen:
            warnings.warn(f"duplicate pairing {pairing.to_json()} skipped")
            continue
        seen.add(pairing.pairs)
        run_cfg = cfg.replace(pairing_override=[list(p) for p in pairing.pairs])
        result = run_experiment(run_cfg)
        rows.append(
            {
                "pairing": ";".join(f"{i}-{j}" for i, j in pairing.pairs),
                "final_err": result.final.get("err", ""),
                "final_selection_rate": result.final_selection_rate,
                "final_mae": result.final_mae,
            }
        )
    if out_path is not None and rows:
        write_summary_csv(Path(out_path), rows)
    return rows
