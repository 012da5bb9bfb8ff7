"""End-to-end steps behind the command line: preprocess, train, predict,
evaluate and report.  Each ``cmd_*`` returns the text it prints."""
from __future__ import annotations

import csv
import hashlib
import logging
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import ahi as A
from . import metrics as M
from . import plots
from .classify import (RESP_CLASSES, SLEEP_CLASSES, EpochPrediction, SegmentInputs,
                       classify_batch, detect_record_events, read_predictions, resp_class,
                       segment_inputs, sleep_class, split_subjects, training_arrays,
                       write_events, write_predictions)
from .config import RunConfig
from .errors import (DataError, EmptyDataset, ModelMissing, NoSubjects, RunPreprocessFirst)
from .features import SEQ_LENGTHS, FeatureSequences, export_feature_csv
from .nn import TrainResult, load_mobilenet, mobilenet_v2, save_weights, train
from .preprocess import DROP_REASONS, filter_segments, format_drop_summary, segment_record
from .signal_io import META_FILE, Label, LabelKind, SignalRecord, load_record, record_annotations

log = logging.getLogger(__name__)

CACHE_FILES = ("starts.npy", "sequences.npy", "edr.npy", "labels.npy")
SEVERITY_ORDER = tuple(s.value for s in A.Severity)


# -- per-subject feature cache ------------------------------------------------------

@dataclass
class SubjectCache:
    subject_id: str
    starts: np.ndarray          # (n,) window start times, s
    sequences: np.ndarray       # (n, 800)
    edr: np.ndarray             # (n, 240)
    labels: np.ndarray          # (n, 2) stage and respiration label strings
    total: int = 0
    drops: Counter = field(default_factory=Counter)

    def __len__(self) -> int:
        return len(self.starts)

    def inputs(self, i: int) -> SegmentInputs:
        return SegmentInputs(self.sequences[i], self.edr[i])

    def items(self) -> list[tuple[SegmentInputs, Label, Label]]:
        return [(self.inputs(i), Label(self.labels[i, 0]), Label(self.labels[i, 1]))
                for i in range(len(self))]


def extract_subject(record: SignalRecord, stage_track=None, resp_track=None) -> SubjectCache:
    """Segment, gate and featurise one record.

    Segments failing the SpO2 or ECG checks, or whose QRS detection finds too
    few beats, are dropped and counted.  Unlabelled segments are kept so they
    can still be predicted.
    """
    segments = segment_record(record, stage_track=stage_track, resp_track=resp_track)
    kept, drops = filter_segments(segments, require_label=None)
    drops["beats"] = 0
    starts, seqs, edrs, labels = [], [], [], []
    for seg in kept:
        try:
            inp = segment_inputs(seg)
        except DataError:
            drops["beats"] += 1
            continue
        starts.append(seg.start_s)
        seqs.append(inp.sequences)
        edrs.append(inp.edr)
        labels.append((seg.stage_label.value, seg.resp_label.value))
    n_seq = sum(SEQ_LENGTHS.values())
    return SubjectCache(
        record.subject_id, np.array(starts, dtype=np.float64),
        np.array(seqs, dtype=np.float64).reshape(-1, n_seq),
        np.array(edrs, dtype=np.float64).reshape(len(starts), -1),
        np.array(labels, dtype="<U7").reshape(-1, 2), len(segments), drops)


def save_cache(cache: SubjectCache, directory: Path) -> Path:
    directory.mkdir(parents=True, exist_ok=True)
    for name, arr in zip(CACHE_FILES, (cache.starts, cache.sequences, cache.edr, cache.labels)):
        np.save(directory / name, arr, allow_pickle=False)
    reasons = Counter({r: cache.drops.get(r, 0) for r in (*DROP_REASONS, "beats")})
    (directory / "summary.txt").write_text(format_drop_summary(cache.total, reasons) + "\n",
                                           encoding="utf-8")
    return directory


def load_cache(directory: Path, subject_id: str | None = None) -> SubjectCache:
    if not all((directory / f).exists() for f in CACHE_FILES):
        raise RunPreprocessFirst(f"no feature cache in {directory}; run preprocess first")
    arrs = [np.load(directory / f, allow_pickle=False) for f in CACHE_FILES]
    return SubjectCache(subject_id or directory.name, *arrs)


def cache_checksum(directory: Path) -> str:
    h = hashlib.sha256()
    for name in (*CACHE_FILES, "summary.txt"):
        h.update((directory / name).read_bytes())
    return h.hexdigest()


def subject_dirs(data_root: str | Path) -> list[Path]:
    root = Path(data_root)
    dirs = sorted(p for p in root.iterdir() if (p / META_FILE).exists()) if root.is_dir() else []
    if not dirs:
        raise NoSubjects(f"no subject directories with {META_FILE} under {root}")
    return dirs


def _preprocess_one(path: Path, cache_root: Path) -> tuple[str, int, Counter]:
    record = load_record(path)
    ann = record_annotations(path)
    cache = extract_subject(record, ann.get(LabelKind.STAGE), ann.get(LabelKind.RESPIRATION))
    save_cache(cache, cache_root / record.subject_id)
    return record.subject_id, cache.total, cache.drops


def _map(fn, args: list, workers: int) -> list:
    if workers <= 1 or len(args) <= 1:
        return [fn(*a) for a in args]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, *zip(*args)))


def cached_subjects(cfg: RunConfig) -> list[str]:
    root = cfg.cache_dir
    names = sorted(p.name for p in root.iterdir() if (p / CACHE_FILES[0]).exists()) if root.is_dir() else []
    if not names:
        raise RunPreprocessFirst(f"no feature caches under {root}; run preprocess first")
    return names


# -- commands --------------------------------------------------------------------------

def cmd_preprocess(cfg: RunConfig) -> str:
    dirs = subject_dirs(cfg.data_root)
    results = _map(_preprocess_one, [(d, cfg.cache_dir) for d in dirs], cfg.workers)
    total, reasons = 0, Counter()
    lines = []
    for subject, n, drops in results:
        total += n
        reasons.update(drops)
        lines.append(f"{subject} segments {n} retained {n - sum(drops.values())}")
    all_reasons = Counter({r: reasons.get(r, 0) for r in (*DROP_REASONS, "beats")})
    summary = format_drop_summary(total, all_reasons)
    if cfg.export_features:
        _export_features(cfg, [s for s, _, _ in results])
    return "\n".join(lines + [summary]) + "\n"


def _export_features(cfg: RunConfig, subjects: list[str]) -> Path:
    cuts = np.cumsum(list(SEQ_LENGTHS.values()))[:-1]
    rows = []
    for s in subjects:
        c = load_cache(cfg.cache_dir / s)
        rows += [(s, float(c.starts[i]), FeatureSequences(*np.split(c.sequences[i], cuts)))
                 for i in range(len(c))]
    return export_feature_csv(rows, cfg.out / "features.csv")


def normalise_task(task: str) -> str:
    task = task.lower()
    if task in ("resp", "respiration"):
        return "resp"
    if task == "sleep":
        return "sleep"
    raise ValueError(f"unknown task {task!r}")


def train_task(caches: list[SubjectCache], task: str, *, epochs: int = 20, batch_size: int = 32,
               lr: float = 1e-3, seed: int = 0, val_fraction: float = 0.2,
               target_val_accuracy: float | None = None, patience: int | None = None
               ) -> TrainResult:
    """Subject-wise split, image building and training for one task."""
    task = normalise_task(task)
    train_ids, val_ids = split_subjects([c.subject_id for c in caches], val_fraction)
    by_id = {c.subject_id: c for c in caches}

    def arrays(ids):
        items = [it for s in ids for it in _task_items(by_id[s], task)]
        return training_arrays(items, task)

    x, y = arrays(train_ids)
    if len(x) == 0:
        raise EmptyDataset(f"no labelled {task} segments in the training subjects")
    val = arrays(val_ids) if val_ids else None
    if val is not None and len(val[0]) == 0:
        val = None
    model = mobilenet_v2(2, seed=seed)
    return train(model, x, y, epochs=epochs, batch_size=batch_size, lr=lr, seed=seed, val=val,
                 target_val_accuracy=target_val_accuracy, patience=patience)


def _task_items(cache: SubjectCache, task: str):
    items = cache.items()
    if task == "resp":
        # per-minute labels: only frames aligned with a labelled minute
        items = [it for it, s in zip(items, cache.starts) if np.isclose(s % 60.0, 0.0)]
    return items


def write_train_log(result: TrainResult, path: Path) -> Path:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "loss", "accuracy", "val_loss", "val_accuracy"])
        for e in result.log:
            w.writerow([e.epoch, f"{e.loss:.6f}", f"{e.accuracy:.6f}",
                        "" if e.val_loss is None else f"{e.val_loss:.6f}",
                        "" if e.val_accuracy is None else f"{e.val_accuracy:.6f}"])
    return path


def cmd_train(cfg: RunConfig, task: str) -> str:
    task = normalise_task(task)
    caches = [load_cache(cfg.cache_dir / s) for s in cached_subjects(cfg)]
    result = train_task(caches, task, epochs=cfg.epochs, batch_size=cfg.batch_size, lr=cfg.lr,
                        seed=cfg.seed, val_fraction=cfg.val_fraction,
                        target_val_accuracy=cfg.target_val_accuracy, patience=cfg.patience)
    path = cfg.model_path(task)
    path.parent.mkdir(parents=True, exist_ok=True)
    save_weights(result.model, path)
    write_train_log(result, path.with_name(f"{task}_log.csv"))
    lines = [f"epoch {e.epoch} loss {e.loss:.4f} acc {e.accuracy:.4f}"
             + ("" if e.val_accuracy is None else f" val_acc {e.val_accuracy:.4f}")
             for e in result.log]
    lines += [f"best_epoch {result.best_epoch}", f"weights {path}", f"checksum {result.checksum}"]
    return "\n".join(lines) + "\n"


def load_models(cfg: RunConfig):
    models = []
    for task in ("sleep", "resp"):
        path = cfg.model_path(task)
        if not path.exists():
            raise ModelMissing(f"{task} model {path} not found; run train --task {task}")
        models.append(load_mobilenet(path))
    return tuple(models)


def predict_subject(cache: SubjectCache, sleep_model, resp_model,
                    batch: int = 64) -> list[EpochPrediction]:
    out: list[EpochPrediction] = []
    for lo in range(0, len(cache), batch):
        idx = range(lo, min(len(cache), lo + batch))
        s_img = np.stack([cache.inputs(i).sleep_image() for i in idx]).astype(np.float32)
        r_img = np.stack([cache.inputs(i).resp_image() for i in idx]).astype(np.float32)
        s_lab, s_prob = classify_batch(sleep_model, s_img, SLEEP_CLASSES, "sleep")
        r_lab, r_prob = classify_batch(resp_model, r_img, RESP_CLASSES, "respiration")
        out += [EpochPrediction(cache.subject_id, float(cache.starts[i]), s_lab[j], float(s_prob[j]),
                                r_lab[j], float(r_prob[j])) for j, i in enumerate(idx)]
    return out


def truth_predictions(cache: SubjectCache) -> list[EpochPrediction] | None:
    """Annotations of the cached segments in prediction form, or None when
    the subject has no known labels of either kind."""
    out = []
    for i in range(len(cache)):
        s = sleep_class(Label(cache.labels[i, 0]))
        r = resp_class(Label(cache.labels[i, 1]))
        if s is None or r is None:
            continue
        out.append(EpochPrediction(cache.subject_id, float(cache.starts[i]), SLEEP_CLASSES[s],
                                   float(s), RESP_CLASSES[r], float(r)))
    return out or None


def _prediction_dir(cfg: RunConfig) -> Path:
    d = cfg.out / "predictions"
    d.mkdir(parents=True, exist_ok=True)
    return d


def subject_report(cfg: RunConfig, subject: str, models) -> A.AhiReport:
    cache = load_cache(cfg.cache_dir / subject)
    preds = predict_subject(cache, *models)
    out = _prediction_dir(cfg)
    write_predictions(preds, out / f"{subject}.csv")
    events = None
    if A.CountMode(cfg.count_mode) is A.CountMode.EVENTS:
        path = Path(cfg.data_root) / subject
        events = [e for e in detect_record_events(load_record(path)) if e.confirmed]
        write_events(subject, events, out / f"{subject}_events.csv")
    report = A.build_report(subject, preds, events, cfg.count_mode)
    (out / f"{subject}_report.txt").write_text(report.text(), encoding="utf-8")
    with open(out / f"{subject}_report.csv", "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(A.REPORT_HEADER)
        w.writerow(report.csv_row())
    return report


def cmd_predict(cfg: RunConfig, subject: str | None = None) -> str:
    subjects = cached_subjects(cfg)
    if subject is not None:
        if subject not in subjects:
            raise RunPreprocessFirst(f"no feature cache for subject {subject!r}")
        subjects = [subject]
    models = load_models(cfg)
    return "".join(subject_report(cfg, s, models).text() for s in subjects)


def _read_reports(cfg: RunConfig) -> list[list[str]]:
    d = cfg.out / "predictions"
    rows = []
    for path in sorted(d.glob("*_report.csv")) if d.is_dir() else []:
        with open(path, encoding="utf-8", newline="") as fh:
            rows += list(csv.reader(fh))[1:]
    if not rows:
        raise RunPreprocessFirst(f"no reports under {d}; run predict first")
    return rows


def cmd_report(cfg: RunConfig) -> str:
    rows = _read_reports(cfg)
    path = cfg.out / "reports.csv"
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(A.REPORT_HEADER)
        w.writerows(rows)
    widths = [max(len(h), *(len(r[i]) for r in rows)) for i, h in enumerate(A.REPORT_HEADER)]
    fmt = lambda r: "  ".join(v.ljust(wd) for v, wd in zip(r, widths)).rstrip()
    return "\n".join([fmt(A.REPORT_HEADER)] + [fmt(r) for r in rows]) + "\n"


# -- evaluation ----------------------------------------------------------------------

def evaluate_subjects(pairs: list[tuple[list[EpochPrediction], list[EpochPrediction]]],
                      count_mode: str = "per_minute") -> dict:
    """Frame- and subject-level metrics for ``(predicted, truth)`` pairs."""
    s_pred, s_true, s_prob, r_pred, r_true, r_prob = [], [], [], [], [], []
    subj = []
    for preds, truth in pairs:
        by_start = {p.start_s: p for p in preds}
        for t in truth:
            p = by_start.get(t.start_s)
            if p is None:
                continue
            s_pred.append(SLEEP_CLASSES.index(p.sleep_label))
            s_true.append(SLEEP_CLASSES.index(t.sleep_label))
            s_prob.append(p.sleep_prob)
            if np.isclose(t.start_s % 60.0, 0.0):
                r_pred.append(RESP_CLASSES.index(p.resp_label))
                r_true.append(RESP_CLASSES.index(t.resp_label))
                r_prob.append(p.resp_prob)
        subject_id = truth[0].subject_id
        subj.append((A.build_report(subject_id, preds, mode=count_mode),
                     A.build_report(subject_id, truth, mode=count_mode)))

    def frame_block(pred, true, prob, classes):
        cm = M.confusion(pred, true, 2, classes)
        block = {"confusion": cm.counts, "summary": M.summarize(cm).to_dict(), "n": len(pred)}
        try:
            roc = M.roc_auc(prob, true)
            block["roc"] = {"auc": roc.auc, "fpr": roc.fpr, "tpr": roc.tpr}
        except DataError:
            block["roc"] = None
        return block, cm

    sleep_block, sleep_cm = frame_block(s_pred, s_true, s_prob, SLEEP_CLASSES)
    resp_block, resp_cm = frame_block(r_pred, r_true, r_prob, RESP_CLASSES)

    reliable = [(p, t) for p, t in subj if p.reliable and t.reliable]
    sev = M.confusion([SEVERITY_ORDER.index(p.severity.value) for p, _ in reliable],
                      [SEVERITY_ORDER.index(t.severity.value) for _, t in reliable], 4, SEVERITY_ORDER)
    risk = M.confusion([int(p.risk) for p, _ in reliable], [int(t.risk) for _, t in reliable],
                       2, ("normal", "risk"))
    try:
        r = M.pearson([p.ahi for p, _ in reliable], [t.ahi for _, t in reliable])
    except DataError:
        r = None
    return {
        "frame": {"sleep": sleep_block, "resp": resp_block},
        "subject": {
            "n": len(reliable),
            "unreliable": len(subj) - len(reliable),
            "severity": {"confusion": sev.counts, "summary": M.summarize(sev).to_dict()},
            "risk": {"confusion": risk.counts, "summary": M.summarize(risk).to_dict()},
            "pearson_r": r,
            "ahi": [{"subject": p.subject_id, "predicted": p.ahi, "true": t.ahi}
                    for p, t in reliable],
        },
        "_cms": {"sleep": sleep_cm, "resp": resp_cm, "severity": sev, "risk": risk},
    }


def cmd_evaluate(cfg: RunConfig) -> str:
    pred_dir = cfg.out / "predictions"
    pairs, skipped = [], 0
    for subject in cached_subjects(cfg):
        path = pred_dir / f"{subject}.csv"
        if not path.exists():
            continue
        truth = truth_predictions(load_cache(cfg.cache_dir / subject))
        if truth is None:
            skipped += 1
            continue
        pairs.append((read_predictions(path), truth))
    if not pairs:
        raise RunPreprocessFirst("no predicted subjects with truth labels; run predict first")
    if skipped:
        log.warning("%d subject(s) skipped: no truth labels", skipped)
    result = evaluate_subjects(pairs, cfg.count_mode)
    cms = result.pop("_cms")
    result["skipped_no_truth"] = skipped

    out = cfg.out / "eval"
    out.mkdir(parents=True, exist_ok=True)
    (out / "metrics.json").write_text(M.metrics_json(result), encoding="utf-8")
    tables = []
    for name, cm in cms.items():
        tables.append(f"[{name}]\n{cm.table()}")
        plots.write_svg(plots.confusion_table(cm, name), out / f"confusion_{name}.svg")
    (out / "confusion.txt").write_text("\n\n".join(tables) + "\n", encoding="utf-8")
    curves = {}
    for task in ("sleep", "resp"):
        roc = result["frame"][task]["roc"]
        if roc is not None:
            curves[task] = M.RocCurve(np.zeros(0), np.asarray(roc["fpr"]), np.asarray(roc["tpr"]),
                                      roc["auc"])
    plots.write_svg(plots.roc_chart(curves), out / "roc.svg")
    ahi_rows = result["subject"]["ahi"]
    idx = np.arange(len(ahi_rows))
    plots.write_svg(plots.line_chart(
        {"true AHI": (idx, [a["true"] for a in ahi_rows]),
         "predicted AHI": (idx, [a["predicted"] for a in ahi_rows])},
        "AHI per subject", "subject", "events / h"), out / "ahi.svg")

    f = result["frame"]
    r = result["subject"]["pearson_r"]
    lines = [f"sleep frames {f['sleep']['n']} accuracy {f['sleep']['summary']['accuracy']:.4f}",
             f"resp frames {f['resp']['n']} accuracy {f['resp']['summary']['accuracy']:.4f}",
             f"subjects {result['subject']['n']} skipped_no_truth {skipped}",
             f"pearson_r {'n/a' if r is None else f'{r:.4f}'}",
             *tables]
    return "\n".join(lines) + "\n"
