"""Orchestration: training, streaming inference, evaluation, sweeps.

The training loop per mini-batch: forward original + augmented views,
compute the contrastive and cross-entropy terms, maybe generate a
pseudo-unknown batch (Bernoulli trigger after warm-up), score everything
against the prototype dictionary for the dual margin term, move the
threshold toward the score-quantile midpoint on triggered batches, take one
AdamW step, and refresh the known prototypes with a normalized running
mean.  Streaming inference is a single strictly sequential pass with the
threshold frozen.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from . import datakit, evalkit, losses, mkee, neuralcore, protodict
from .config import RunConfig, run_dir_name, write_config
from .datakit import Dataset, OcdSplit
from .evalkit import EvalReport, StreamResult
from .neuralcore import ModelParams, OptimizerState
from .protodict import PrototypeStore, StreamRecord, ThresholdState

CHECKPOINT_FILE = "checkpoint.txt"
RECORD_FILE = "record.json"
MANIFEST_FILE = "split_manifest.json"
CONFIG_FILE = "config.txt"
STREAM_FILE = "stream.csv"
REPORT_FILE = "report.json"
DIAGNOSTICS_FILE = "mkee_diagnostics.csv"


@dataclass
class EpochStats:
    ce: float
    sup: float
    mm: float
    total: float
    pseudo_count: int
    tau: float


@dataclass
class RunRecord:
    epochs: list[EpochStats] = field(default_factory=list)
    tau_trajectory: list[float] = field(default_factory=list)  # per batch
    final_tau: float = 0.0
    pseudo_total: int = 0
    wall_clock_sec: float = 0.0

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, indent=2) + "\n"


def build_dataset(cfg: RunConfig) -> Dataset:
    spec = cfg.dataset_spec()
    if spec.source == "csv":
        return datakit.load_embeddings_csv(spec.csv_path)
    return datakit.synth_mixture(spec, np.random.default_rng(spec.seed))


def build_split(cfg: RunConfig, dataset: Dataset) -> OcdSplit:
    return datakit.make_split(dataset, cfg.data_known_classes,
                              cfg.data_train_fraction, cfg.data_seed)


@dataclass
class TrainedModel:
    params: ModelParams
    store: PrototypeStore
    threshold: ThresholdState
    record: RunRecord


def run_train(cfg: RunConfig, split: OcdSplit,
              diagnostics_sink: list[str] | None = None) -> TrainedModel:
    """Train on the support set; returns the model, store, threshold and record."""
    t0 = time.perf_counter()
    rng = np.random.default_rng(cfg.run_seed)
    x_train = split.support_features
    y_train = split.support_labels
    n = x_train.shape[0]
    k = split.k_known

    params = neuralcore.init_params(
        input_dim=x_train.shape[1], hidden_dims=cfg.hidden_dims(),
        feature_dim=cfg.model_feature_dim, n_classes=k, rng=rng,
    )
    opt = OptimizerState(lr=cfg.optim_lr, weight_decay=cfg.optim_weight_decay,
                         beta1=cfg.optim_beta1, beta2=cfg.optim_beta2, eps=cfg.optim_eps)
    loss_cfg = cfg.loss_config()
    mkee_cfg = cfg.mkee_config()

    store = protodict.init_prototypes(
        neuralcore.forward(params, x_train).features, y_train, k
    )
    threshold = ThresholdState(
        tau=cfg.tau_init, beta=cfg.tau_beta if cfg.train_adaptive_tau else 0.0,
        q_pos=cfg.tau_q_pos, q_neg=cfg.tau_q_neg,
    )
    record = RunRecord()

    for epoch in range(cfg.train_epochs):
        order = rng.permutation(n)
        sums = np.zeros(4)
        n_batches = 0
        pseudo_count = 0
        for start in range(0, n, cfg.train_batch_size):
            batch_idx = order[start:start + cfg.train_batch_size]
            x = x_train[batch_idx]
            y = y_train[batch_idx]
            b = x.shape[0]

            # two views per sample: the input and a lightly jittered copy
            x_aug = x + cfg.data_augment_sigma * rng.standard_normal(x.shape)
            views = np.vstack([x, x_aug])
            view_labels = np.concatenate([y, y])
            trace = neuralcore.forward(params, views)

            ce, grad_logits = losses.ce_loss(trace.logits, view_labels)
            sup, grad_f = losses.sup_con_loss(trace.features, view_labels,
                                              loss_cfg.temperature)
            grad_f = loss_cfg.alpha * grad_f

            pseudo = (mkee.generate_pseudo_batch(params, x, y, mkee_cfg, epoch, rng)
                      if cfg.train_enable_mkee else mkee.PseudoBatch())
            pseudo_count += len(pseudo)
            if diagnostics_sink is not None and not pseudo.empty:
                diagnostics_sink.extend(
                    mkee.diagnostics_rows(pseudo, epoch, n_batches))

            f_known = trace.features[:b]
            s_known = store.scores(f_known)
            best_known = np.argmax(s_known, axis=1)
            smax_known = s_known[np.arange(b), best_known]

            trace_p = None
            smax_pseudo = np.zeros(0)
            if not pseudo.empty:
                trace_p = neuralcore.forward(params, pseudo.outputs)
                s_pseudo = store.scores(trace_p.features)
                best_pseudo = np.argmax(s_pseudo, axis=1)
                smax_pseudo = s_pseudo[np.arange(len(pseudo)), best_pseudo]

            mm = 0.0
            grad_f_p = None
            if cfg.train_enable_mm:
                _, _, mm, g_sk, g_sp = losses.max_margin_loss(
                    smax_known, smax_pseudo, threshold.tau,
                    loss_cfg.margin_pos, loss_cfg.margin_neg,
                )
                # d s_max / d f is the winning prototype (prototypes are
                # constants for the gradient)
                grad_f[:b] += loss_cfg.gamma_mm * g_sk[:, None] * store.protos[best_known]
                if not pseudo.empty:
                    grad_f_p = loss_cfg.gamma_mm * g_sp[:, None] * store.protos[best_pseudo]

            total = losses.total_loss(ce, sup, mm, loss_cfg.alpha, loss_cfg.gamma_mm)
            if not np.isfinite(total):
                raise RuntimeError(
                    f"non-finite loss at epoch {epoch} batch {n_batches}: "
                    f"ce={ce} sup={sup} mm={mm}"
                )

            # threshold moves only on generation-triggered batches
            if not pseudo.empty:
                u_pos, u_neg, tau_target = protodict.quantile_targets(
                    smax_known, smax_pseudo, threshold.q_pos, threshold.q_neg)
                protodict.ema_update(threshold, tau_target, u_pos, u_neg)

            grads = neuralcore.backprop_params(params, trace, grad_f, grad_logits)
            if grad_f_p is not None:
                grads_p = neuralcore.backprop_params(params, trace_p, grad_f_p, None)
                for (gw, gb), (pw, pb) in zip(grads.layers, grads_p.layers):
                    gw += pw
                    gb += pb
                grads.head_w += grads_p.head_w
                grads.head_b += grads_p.head_b
            neuralcore.adamw_step(params, grads, opt)

            for i in range(b):
                store.running_update(f_known[i], int(y[i]), cfg.proto_momentum)

            sums += (ce, sup, mm, total)
            n_batches += 1
            record.tau_trajectory.append(threshold.tau)

        mean = sums / n_batches
        record.epochs.append(EpochStats(
            ce=float(mean[0]), sup=float(mean[1]), mm=float(mean[2]),
            total=float(mean[3]), pseudo_count=pseudo_count, tau=threshold.tau,
        ))
        record.pseudo_total += pseudo_count

    record.final_tau = threshold.tau
    record.wall_clock_sec = time.perf_counter() - t0
    return TrainedModel(params=params, store=store, threshold=threshold, record=record)


def run_stream(params: ModelParams, store: PrototypeStore, tau: float,
               split: OcdSplit) -> tuple[list[StreamRecord], PrototypeStore]:
    """One strictly sequential pass over the query stream with tau frozen."""
    if split.dataset.dim != params.input_dim:
        raise ValueError(
            f"checkpoint input dim {params.input_dim} != dataset dim {split.dataset.dim}"
        )
    store = store.copy()
    records = []
    for item_id, x in datakit.stream_iter(split):
        f = neuralcore.forward(params, x).features[0]
        idx, s_max, spawned = store.assign_or_spawn(f, tau)
        records.append(StreamRecord(item_id=item_id, predicted=idx,
                                    s_max=s_max, spawned=spawned))
    return records, store


def stream_result(records: list[StreamRecord], split: OcdSplit,
                  k_known: int) -> StreamResult:
    """Join stream records with ground truth; ids must match the split."""
    truth = {int(i): int(split.dataset.labels[i]) for i in split.query_order}
    labels = []
    for r in records:
        if r.item_id not in truth:
            raise ValueError(f"stream item {r.item_id} is not in the query set")
        labels.append(truth[r.item_id])
    if len(records) != len(split.query_order):
        raise ValueError(
            f"stream has {len(records)} items, query set has {len(split.query_order)}"
        )
    return StreamResult(
        true_labels=np.array(labels),
        predictions=np.array([r.predicted for r in records]),
        old_labels=frozenset(split.seen_labels),
        k_known=k_known,
    )


def run_eval(records: list[StreamRecord], split: OcdSplit, k_known: int) -> EvalReport:
    return evalkit.evaluate(stream_result(records, split, k_known))


# ---------------------------------------------------------------------------
# Whole-run pipeline and on-disk layout


def save_run(out_dir: Path, cfg: RunConfig, model: TrainedModel,
             split: OcdSplit, diagnostics: list[str] | None = None) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    write_config(out_dir / CONFIG_FILE, cfg)
    datakit.write_split_manifest(out_dir / MANIFEST_FILE, split)
    arrays = neuralcore.params_to_arrays(model.params)
    st_arrays, st_ints = protodict.store_to_arrays(model.store)
    arrays.update(st_arrays)
    neuralcore.write_checkpoint(out_dir / CHECKPOINT_FILE, arrays,
                                floats={"tau": model.threshold.tau}, ints=st_ints)
    (out_dir / RECORD_FILE).write_text(model.record.to_json(), encoding="utf-8")
    if diagnostics is not None:
        text = "\n".join([mkee.DIAGNOSTICS_HEADER, *diagnostics]) + "\n"
        (out_dir / DIAGNOSTICS_FILE).write_text(text, encoding="utf-8")


def load_checkpoint(path) -> tuple[ModelParams, PrototypeStore, float]:
    arrays, floats, ints = neuralcore.read_checkpoint(path)
    params = neuralcore.params_from_arrays(arrays)
    store = protodict.store_from_arrays(arrays, ints)
    return params, store, floats["tau"]


def run_pipeline(cfg: RunConfig, out_dir: Path | None = None) -> tuple[EvalReport, TrainedModel]:
    """Train, stream, evaluate; optionally persist all artifacts."""
    dataset = build_dataset(cfg)
    split = build_split(cfg, dataset)
    diagnostics: list[str] | None = [] if cfg.mkee_dump_diagnostics else None
    model = run_train(cfg, split, diagnostics_sink=diagnostics)
    records, _ = run_stream(model.params, model.store, model.threshold.tau, split)
    report = run_eval(records, split, split.k_known)
    if out_dir is not None:
        save_run(out_dir, cfg, model, split, diagnostics)
        protodict.write_stream_csv(out_dir / STREAM_FILE, records)
        (out_dir / REPORT_FILE).write_text(report.to_json(), encoding="utf-8")
    return report, model


def default_run_dir(cfg: RunConfig) -> Path:
    return Path(cfg.run_out_dir) / run_dir_name(cfg)


def run_sweep(cfg: RunConfig, axis: str, values: list[str],
              out_dir: Path | None = None) -> list[dict]:
    """One full train+stream+eval per value of a single dotted config key."""
    from .config import KEYS, load_config, config_lines

    if axis not in KEYS:
        raise ValueError(f"sweep axis {axis!r} is not a config key")
    rows = []
    base = dict(line.split(" = ", 1) for line in config_lines(cfg))
    for value in values:
        overrides = dict(base)
        overrides[axis] = str(value)
        run_cfg = load_config(None, overrides)
        sub_dir = out_dir / f"{axis.replace('.', '_')}={value}" if out_dir else None
        report, model = run_pipeline(run_cfg, sub_dir)
        row = {"axis": axis, "value": value, "final_tau": model.record.final_tau,
               **{k: v for k, v in asdict(report).items() if k != "assignment"}}
        rows.append(row)
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        with open(out_dir / "sweep.json", "w", encoding="utf-8") as fh:
            json.dump(rows, fh, sort_keys=True, indent=2)
            fh.write("\n")
    return rows
