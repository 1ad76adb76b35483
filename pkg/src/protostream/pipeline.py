"""End-to-end pipeline steps shared by the CLI and the test suite.

Every step materializes its outputs as files (CSV for logs and reports,
binary formats for datasets, adapters and memory snapshots) plus a resolved
config snapshot, so each stage can be rerun and reproduced bitwise.
"""

from __future__ import annotations

import csv
import logging
from pathlib import Path

import numpy as np

from . import config as config_mod
from . import data as data_mod
from .evaluation import EvalReport, greedy_accuracy, hash_baseline, strict_accuracy
from .memory import init_from_labeled, read_memory_snapshot, write_memory_snapshot
from .offline import angle_stats, read_adapter, train_offline, write_adapter
from .online import DecisionConfig, StreamEngine, TtaConfig

log = logging.getLogger(__name__)


def _fmt(value) -> str:
    """Deterministic shortest-roundtrip formatting for CSV cells."""
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if value is None:
        return "na"
    return str(value)


def write_csv(path, header: list[str], rows) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def do_synth(bundle: config_mod.ConfigBundle, out_dir) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    labeled, stream = data_mod.generate_synthetic(bundle.synth())
    paths = {"labeled": out / "labeled.ocde", "stream": out / "stream.ocde"}
    data_mod.write_dataset(paths["labeled"], labeled)
    data_mod.write_dataset(paths["stream"], stream)
    config_mod.write_snapshot(out / "config.resolved.json", bundle.resolved)
    log.info("synth: %d labeled, %d stream samples (d=%d)",
             len(labeled), len(stream), labeled.dim)
    return paths


def do_train(labeled_path, bundle: config_mod.ConfigBundle, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    labeled = data_mod.read_dataset(labeled_path)
    if labeled.labels is None:
        raise ValueError(f"{labeled_path} carries no labels; cannot train")
    second = labeled.views[:, 1, :] if labeled.views_per_sample >= 2 else None
    adapter, history = train_offline(labeled.primary, labeled.labels,
                                     bundle.offline(), second_views=second)
    adapter_path = out / "adapter.ocda"
    write_adapter(adapter_path, adapter)
    write_csv(out / "training_log.csv",
              ["epoch", "loss_sup", "loss_ce", "total"],
              [(h.epoch, h.loss_sup, h.loss_ce, h.loss_total) for h in history])
    config_mod.write_snapshot(out / "config.resolved.json", bundle.resolved)
    return adapter_path


def do_run(labeled_path, stream_path, adapter_path, bundle: config_mod.ConfigBundle,
           out_dir, resume_memory=None) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    adapter = read_adapter(adapter_path)
    stream = data_mod.read_dataset(stream_path)

    if resume_memory is not None:
        memory = read_memory_snapshot(resume_memory)
    else:
        labeled = data_mod.read_dataset(labeled_path)
        if labeled.labels is None:
            raise ValueError(f"{labeled_path} carries no labels; cannot build memory")
        memory = init_from_labeled(adapter.embed(labeled.primary), labeled.labels)

    known_classes = [p.origin_index for p in memory.prototypes if p.origin == "known"]
    ordered = data_mod.order_stream(
        stream, bundle.order_policy,
        seed=config_mod.subsystem_seed(bundle.seed, "order"),
        known_classes=known_classes)

    engine = StreamEngine(adapter, memory, bundle.decision(), bundle.tta(),
                          bundle.update_params(),
                          enable_tta_p=bundle.enable_tta_p,
                          enable_tta_m=bundle.enable_tta_m)
    result = engine.run_stream(ordered.ids, ordered.primary,
                               batch_size=bundle.stream_batch_size)

    batch_size = bundle.stream_batch_size
    pred_rows = [(seq, p.sample_id, p.assigned_id, p.s_max, p.is_novel_creation,
                  seq // batch_size)
                 for seq, p in enumerate(result.predictions)]
    paths = {
        "predictions": out / "predictions.csv",
        "diagnostics": out / "diagnostics.csv",
        "memory": out / "memory.ocdm",
        "adapter_final": out / "adapter_final.ocda",
    }
    write_csv(paths["predictions"],
              ["seq", "sample_id", "assigned_id", "s_max", "novel_created", "batch_index"],
              pred_rows)
    write_csv(paths["diagnostics"],
              ["batch_index", "loss_ent", "loss_align", "loss_sep", "loss_total",
               "prototypes_updated", "novel_created", "ndc_so_far", "memory_size"],
              [tuple(d.values()) for d in result.diagnostics])
    write_memory_snapshot(paths["memory"], result.memory)
    write_adapter(paths["adapter_final"], result.adapter)
    config_mod.write_snapshot(out / "config.resolved.json", bundle.resolved)
    return paths


def read_predictions(path) -> dict[str, np.ndarray]:
    with open(path) as f:
        reader = csv.DictReader(f)
        rows = list(reader)
    return {
        "sample_id": np.array([int(r["sample_id"]) for r in rows], dtype=np.int64),
        "assigned_id": np.array([int(r["assigned_id"]) for r in rows], dtype=np.int64),
        "s_max": np.array([float(r["s_max"]) for r in rows]),
        "novel_created": np.array([r["novel_created"] == "1" for r in rows]),
    }


def _join_labels(pred: dict, dataset: data_mod.EmbeddingDataset) -> np.ndarray:
    by_id = {int(i): int(l) for i, l in zip(dataset.ids, dataset.labels)}
    missing = [i for i in pred["sample_id"].tolist() if i not in by_id]
    if missing:
        raise ValueError(f"prediction log references unknown sample id {missing[0]}")
    return np.array([by_id[int(i)] for i in pred["sample_id"]], dtype=np.int64)


def evaluate_predictions(pred: dict, labels: np.ndarray, known_classes,
                         protocol: str) -> list[EvalReport]:
    ndc = int(pred["novel_created"].sum())
    reports = []
    if protocol in ("strict", "both"):
        reports.append(strict_accuracy(pred["assigned_id"], labels, known_classes, ndc=ndc))
    if protocol in ("greedy", "both"):
        reports.append(greedy_accuracy(pred["assigned_id"], labels, known_classes, ndc=ndc))
    return reports


def do_eval(pred_path, labels_path, protocol: str, out_dir, known_classes=None,
            hash_code_lengths=()) -> dict[str, Path]:
    """Evaluate a prediction log against the labeled stream file.

    When known_classes is omitted it is inferred from the log: known
    prototype ids equal their class index, so the known set is every
    assigned id that never appears as a novel creation. (A known class that
    was never predicted escapes this inference; pass the set explicitly for
    exact Old/New splits.)
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    pred = read_predictions(pred_path)
    dataset = data_mod.read_dataset(labels_path)
    if dataset.labels is None:
        raise ValueError(f"{labels_path} carries no labels; cannot evaluate")
    labels = _join_labels(pred, dataset)
    if known_classes is None:
        novel_ids = set(pred["assigned_id"][pred["novel_created"]].tolist())
        known_classes = sorted(set(pred["assigned_id"].tolist()) - novel_ids)

    reports = evaluate_predictions(pred, labels, known_classes, protocol)

    rows = [(r.protocol, r.acc_all, r.acc_old, r.acc_new, r.num_clusters_raw,
             r.num_clusters_retained, r.ndc) for r in reports]
    hash_rows = []
    feature_by_id = {int(i): v for i, v in zip(dataset.ids, dataset.primary)}
    feats = np.stack([feature_by_id[int(i)] for i in pred["sample_id"]])
    for code_len in hash_code_lengths:
        ids = hash_baseline(feats, code_len)
        for rep in evaluate_predictions(
                {"assigned_id": ids, "novel_created": np.zeros(len(ids), bool),
                 "sample_id": pred["sample_id"]},
                labels, known_classes, protocol):
            hash_rows.append((f"{rep.protocol}_hash_L{code_len}", rep.acc_all, rep.acc_old,
                              rep.acc_new, rep.num_clusters_raw, rep.num_clusters_retained,
                              rep.ndc))

    paths = {"csv": out / "eval_report.csv", "text": out / "eval_report.txt"}
    write_csv(paths["csv"],
              ["protocol", "acc_all", "acc_old", "acc_new", "clusters_raw",
               "clusters_retained", "ndc"],
              rows + hash_rows)
    with open(paths["text"], "w") as f:
        for r in reports:
            f.write(f"[{r.protocol}] All={r.acc_all:.4f} "
                    f"Old={'na' if r.acc_old is None else f'{r.acc_old:.4f}'} "
                    f"New={'na' if r.acc_new is None else f'{r.acc_new:.4f}'} "
                    f"clusters={r.num_clusters_raw}->{r.num_clusters_retained} "
                    f"NDC={r.ndc}\n")
        for row in hash_rows:
            f.write(f"[{row[0]}] All={row[1]:.4f} clusters_raw={row[4]}\n")
    return paths


def do_angles(labeled_path, adapter_path, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    labeled = data_mod.read_dataset(labeled_path)
    if labeled.labels is None:
        raise ValueError(f"{labeled_path} carries no labels")
    adapter = read_adapter(adapter_path)
    stats = angle_stats(labeled.primary, labeled.labels, adapter)
    path = out / "angles.csv"
    rows = [("intra", a, np.degrees(a)) for a in stats.intra]
    rows += [("inter", a, np.degrees(a)) for a in stats.inter]
    rows.append(("mean_intra", stats.intra.mean(), stats.mean_intra_deg))
    rows.append(("mean_inter", stats.inter.mean(), stats.mean_inter_deg))
    write_csv(path, ["kind", "angle_rad", "angle_deg"], rows)
    return path


def run_full_pipeline(bundle: config_mod.ConfigBundle, out_dir,
                      protocol: str = "both", hash_code_lengths=()) -> dict[str, Path]:
    """synth -> train -> run -> eval in one sweep-friendly call."""
    out = Path(out_dir)
    paths = do_synth(bundle, out)
    adapter_path = do_train(paths["labeled"], bundle, out)
    run_paths = do_run(paths["labeled"], paths["stream"], adapter_path, bundle, out)
    eval_paths = do_eval(run_paths["predictions"], paths["stream"], protocol, out,
                         known_classes=range(bundle.resolved["synth"]["n_known"]),
                         hash_code_lengths=hash_code_lengths)
    return {**paths, "adapter": adapter_path, **run_paths, **eval_paths}
