"""Writer-independent verification with a multi-writer RBF-SVM.

A query claiming writer ``w`` is accepted iff the SVM trained on all writers'
reference signatures predicts ``w``. The decision is counted correct when a
genuine query is accepted or a forged query is rejected.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import torch
from sklearn.manifold import TSNE
from sklearn.svm import SVC

from .dataset import Label, Manifest, Role, SignatureSample, Split, load_grayscale
from .encoder import PatchEncoder, load_checkpoint
from .errors import InsufficientSamples, NeedTwoClasses, UnknownWriter
from .plotting import scatter_by_label
from .preprocess import eval_view

log = logging.getLogger(__name__)

RECORD_FIELDS = ("query_id", "claimed_writer", "predicted_writer", "true_label", "decision", "correct")


def l2_normalize(x: np.ndarray, eps: float = 1e-12) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return x / (np.linalg.norm(x, axis=1, keepdims=True) + eps)


@dataclass
class WriterClassifier:
    """One-vs-one RBF-SVM over writers with majority voting.

    A pairwise decision within ``tie_tol`` of zero splits its vote; equal vote
    totals go to the smallest writer id.
    """

    svc: SVC
    classes: list[str]
    tie_tol: float = 1e-6

    def votes(self, features: np.ndarray) -> np.ndarray:
        x = l2_normalize(np.atleast_2d(features))
        dec = self.svc.decision_function(x)
        k = len(self.classes)
        if k == 2:
            # binary SVC reports positive values for the second class
            dec = -dec.reshape(-1, 1)
        votes = np.zeros((x.shape[0], k))
        col = 0
        for i in range(k):
            for j in range(i + 1, k):
                d = dec[:, col]
                votes[:, i] += np.where(d > self.tie_tol, 1.0, np.where(d < -self.tie_tol, 0.0, 0.5))
                votes[:, j] += np.where(d < -self.tie_tol, 1.0, np.where(d > self.tie_tol, 0.0, 0.5))
                col += 1
        return votes

    def predict(self, features: np.ndarray) -> list[str]:
        # argmax returns the first maximum, i.e. the smallest writer id
        return [self.classes[i] for i in np.argmax(self.votes(features), axis=1)]


def fit_writer_svm(ref_features: np.ndarray, ref_writer_ids: Sequence[str], C: float = 1.0,
                   gamma: str | float = "scale", tie_tol: float = 1e-6) -> WriterClassifier:
    """Fit the multi-writer SVM on L2-normalized reference features."""
    classes = sorted(set(ref_writer_ids))
    if len(classes) < 2:
        raise NeedTwoClasses("need >= 2 classes (writers) to fit the SVM")
    index = {w: i for i, w in enumerate(classes)}
    y = np.array([index[w] for w in ref_writer_ids])
    svc = SVC(C=C, kernel="rbf", gamma=gamma, decision_function_shape="ovo", tol=1e-8)
    svc.fit(l2_normalize(ref_features), y)
    return WriterClassifier(svc, classes, tie_tol)


@dataclass(frozen=True)
class VerificationRecord:
    query_id: str
    claimed_writer: str
    predicted_writer: str
    true_label: str
    decision: str  # "accept" or "reject"
    correct: bool


def _record(query_id: str, claimed: str, predicted: str, true_label: str) -> VerificationRecord:
    accept = predicted == claimed
    genuine = Label(true_label) is Label.GENUINE
    return VerificationRecord(
        str(query_id), claimed, predicted, Label(true_label).value,
        "accept" if accept else "reject", accept == genuine,
    )


def verify(query_feature: np.ndarray, claimed_writer: str, clf: WriterClassifier,
           true_label: str = "genuine", query_id: str = "") -> VerificationRecord:
    if claimed_writer not in clf.classes:
        raise UnknownWriter(f"unknown writer: {claimed_writer}")
    predicted = clf.predict(np.atleast_2d(query_feature))[0]
    return _record(query_id, claimed_writer, predicted, true_label)


def verify_batch(features: np.ndarray, claimed: Sequence[str], labels: Sequence[str],
                 clf: WriterClassifier, query_ids: Sequence[str] | None = None) -> list[VerificationRecord]:
    unknown = sorted(set(claimed) - set(clf.classes))
    if unknown:
        raise UnknownWriter(f"unknown writer: {unknown[0]}")
    if query_ids is None:
        query_ids = [str(i) for i in range(len(claimed))]
    predicted = clf.predict(features) if len(claimed) else []
    return [_record(q, c, p, lab) for q, c, p, lab in zip(query_ids, claimed, predicted, labels)]


@dataclass(frozen=True)
class MetricsReport:
    accuracy: float
    far: float
    frr: float
    n_genuine: int
    n_forged: int

    def to_dict(self) -> dict:
        return {k: (None if isinstance(v, float) and math.isnan(v) else v) for k, v in asdict(self).items()}


def compute_metrics(records: Iterable[VerificationRecord]) -> MetricsReport:
    """Accuracy, false acceptance rate (forged accepted) and false rejection rate (genuine rejected)."""
    records = list(records)
    if not records:
        raise ValueError("no verification records")
    genuine = [r for r in records if r.true_label == Label.GENUINE.value]
    forged = [r for r in records if r.true_label == Label.FORGED.value]
    if forged:
        far = sum(r.decision == "accept" for r in forged) / len(forged)
    else:
        warnings.warn("no forged queries: FAR undefined", RuntimeWarning, stacklevel=2)
        far = float("nan")
    if genuine:
        frr = sum(r.decision == "reject" for r in genuine) / len(genuine)
    else:
        warnings.warn("no genuine queries: FRR undefined", RuntimeWarning, stacklevel=2)
        frr = float("nan")
    accuracy = sum(r.correct for r in records) / len(records)
    return MetricsReport(accuracy, far, frr, len(genuine), len(forged))


def tsne_embed(features: np.ndarray, perplexity: float = 30.0, seed: int = 0,
               max_iter: int = 1000) -> np.ndarray:
    n = len(features)
    if n <= 3 * perplexity:
        raise InsufficientSamples(
            f"insufficient samples: t-SNE with perplexity {perplexity} needs more than "
            f"{3 * perplexity:g} points, got {n}"
        )
    tsne = TSNE(n_components=2, perplexity=perplexity, random_state=seed, max_iter=max_iter,
                init="pca", learning_rate="auto", n_jobs=1)
    return tsne.fit_transform(np.asarray(features, dtype=np.float64))


def tsne_plot(features: np.ndarray, writer_ids: Sequence[str], out_path: str | Path,
              perplexity: float = 30.0, seed: int = 0, max_iter: int = 1000,
              title: str = "") -> Path:
    """Embed features in 2-D with t-SNE and write a per-writer scatter PNG."""
    points = tsne_embed(features, perplexity, seed, max_iter)
    return scatter_by_label(points, writer_ids, out_path, title=title)


def preprocess_for_eval(samples: Sequence[SignatureSample]) -> np.ndarray:
    return np.stack([eval_view(load_grayscale(s)) for s in samples])


@torch.no_grad()
def extract_features(model: PatchEncoder | str | Path, samples_or_views, stage: str = "pooled",
                     batch_size: int = 16) -> np.ndarray:
    """Frozen-encoder features, pooled (pre-projector) by default.

    ``samples_or_views`` is either a list of samples (preprocessed with Otsu
    crop and resize, no augmentation) or an array of (N, 224, 224) views.
    """
    if stage not in ("pooled", "projected"):
        raise ValueError(f"unknown stage {stage!r}")
    if not isinstance(model, PatchEncoder):
        model, _ = load_checkpoint(model)
    model.eval()
    if isinstance(samples_or_views, np.ndarray):
        views = samples_or_views
    else:
        views = preprocess_for_eval(list(samples_or_views))
    out = []
    for i in range(0, len(views), batch_size):
        x = torch.from_numpy(np.ascontiguousarray(views[i:i + batch_size], dtype=np.float32))
        h = model.pooled(x)
        if stage == "projected":
            h = model.project(h)
        out.append(h.numpy())
    return np.concatenate(out) if out else np.zeros((0, model.cfg.backbone.out_dim), np.float32)


@dataclass
class EvalConfig:
    svm_c: float = 1.0
    svm_gamma: str | float = "scale"
    stage: str = "pooled"
    tsne_perplexity: float = 30.0
    tsne_iterations: int = 1000
    seed: int = 0
    extra: dict = field(default_factory=dict)


@dataclass
class FeatureSet:
    """Features for the test split, aligned with per-sample metadata."""

    features: np.ndarray
    writer_ids: list[str]
    labels: list[str]
    roles: list[str]
    query_ids: list[str]

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        np.savez(path, features=self.features, writer_id=np.array(self.writer_ids),
                 label=np.array(self.labels), role=np.array(self.roles),
                 query_id=np.array(self.query_ids))
        return path

    @classmethod
    def load(cls, path: str | Path) -> "FeatureSet":
        with np.load(path, allow_pickle=False) as z:
            return cls(z["features"], z["writer_id"].tolist(), z["label"].tolist(),
                       z["role"].tolist(), z["query_id"].tolist())


def features_from_manifest(model, manifest: Manifest, stage: str = "pooled") -> FeatureSet:
    test = [s for s in manifest.samples if s.split is Split.TEST and s.role is not Role.UNASSIGNED]
    if not test:
        raise ValueError("manifest has no test samples with assigned roles; run assign_references first")
    base = manifest.root
    ids = []
    for s in test:
        try:
            ids.append(s.image_path.relative_to(base).as_posix() if base else str(s.image_path))
        except ValueError:
            ids.append(str(s.image_path))
    feats = extract_features(model, test, stage=stage)
    return FeatureSet(feats, [s.writer_id for s in test], [s.label.value for s in test],
                      [s.role.value for s in test], ids)


def write_records(records: Sequence[VerificationRecord], path: str | Path) -> Path:
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RECORD_FIELDS)
        for r in records:
            w.writerow([r.query_id, r.claimed_writer, r.predicted_writer, r.true_label,
                        r.decision, "true" if r.correct else "false"])
    return path


def evaluate_features(fs: FeatureSet, out_dir: str | Path, cfg: EvalConfig = EvalConfig()
                      ) -> tuple[MetricsReport, list[VerificationRecord]]:
    """Fit on references, verify every query, and write ``metrics.json``,
    ``records.csv`` and ``tsne.png`` into ``out_dir``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    roles = np.array(fs.roles)
    ref = roles == Role.REFERENCE.value
    qry = roles == Role.QUERY.value
    ref_writers = [w for w, r in zip(fs.writer_ids, ref) if r]
    clf = fit_writer_svm(fs.features[ref], ref_writers, C=cfg.svm_c, gamma=cfg.svm_gamma)
    q_idx = np.flatnonzero(qry)
    records = verify_batch(
        fs.features[q_idx], [fs.writer_ids[i] for i in q_idx], [fs.labels[i] for i in q_idx],
        clf, [fs.query_ids[i] for i in q_idx],
    )
    report = compute_metrics(records)
    write_records(records, out_dir / "records.csv")

    n = len(fs.features)
    perplexity = min(cfg.tsne_perplexity, (n - 1) / 3)
    if perplexity < 1:
        log.warning("skipping t-SNE: only %d samples", n)
    else:
        if perplexity < cfg.tsne_perplexity:
            log.warning("t-SNE perplexity lowered to %.2f for %d samples", perplexity, n)
        tsne_plot(fs.features, fs.writer_ids, out_dir / "tsne.png", perplexity, cfg.seed,
                  cfg.tsne_iterations)

    payload = report.to_dict()
    payload["n_queries"] = len(records)
    payload["n_references"] = int(ref.sum())
    payload["n_writers"] = len(clf.classes)
    payload["config"] = {
        "svm_c": cfg.svm_c, "svm_gamma": cfg.svm_gamma, "stage": cfg.stage,
        "tsne_perplexity": cfg.tsne_perplexity, "tsne_perplexity_used": perplexity,
        "tsne_iterations": cfg.tsne_iterations, "seed": cfg.seed, **cfg.extra,
    }
    (out_dir / "metrics.json").write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n",
                                          encoding="utf-8")
    return report, records


def evaluate(checkpoint: str | Path, manifest: Manifest, out_dir: str | Path,
             cfg: EvalConfig = EvalConfig()) -> tuple[MetricsReport, list[VerificationRecord]]:
    model, meta = load_checkpoint(checkpoint)
    fs = features_from_manifest(model, manifest, cfg.stage)
    cfg.extra.setdefault("checkpoint_epoch", meta["epoch"])
    cfg.extra.setdefault("config_hash", meta["config_hash"])
    return evaluate_features(fs, out_dir, cfg)
