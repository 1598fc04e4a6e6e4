"""Correlation of metric maps against averaged human artifact annotations.

Human masks live under <root>/<scene>/<sample>/<participant>.png and are
averaged into per-pixel marking probabilities. Metric maps are calibrated
with a 5-parameter logistic before Pearson correlation; Spearman is
computed on raw values.
"""

import csv
import io
import os
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .errors import ValidationError
from .tensor import bilinear_resize, load_image

CSV_HEADER = ["scene", "sample", "pcc_raw", "pcc_fit", "srcc",
              "a1", "a2", "a3", "a4", "a5"]


@dataclass(frozen=True)
class HumanMaskSet:
    scene: str
    sample: str
    masks: tuple          # per-participant binary (H, W) float32 arrays
    mean_map: np.ndarray  # elementwise mean of masks


@dataclass(frozen=True)
class LogisticParams:
    a1: float
    a2: float
    a3: float
    a4: float
    a5: float

    def as_tuple(self):
        return (self.a1, self.a2, self.a3, self.a4, self.a5)


IDENTITY_PARAMS = LogisticParams(0.0, 1.0, 0.0, 1.0, 0.0)


@dataclass
class SampleResult:
    scene: str
    sample: str
    pcc_raw: float
    pcc_fit: float
    srcc: float
    params: LogisticParams
    degenerate: bool = False


@dataclass
class CorrelationReport:
    samples: list = field(default_factory=list)
    scene_pcc: dict = field(default_factory=dict)
    scene_srcc: dict = field(default_factory=dict)
    missing: list = field(default_factory=list)
    pcc_mean: float = float("nan")
    pcc_std: float = float("nan")
    srcc_mean: float = float("nan")
    srcc_std: float = float("nan")


def ingest_annotations(root):
    """Collect every <scene>/<sample>/<participant>.png mask set under root."""
    sets = []
    for scene in sorted(os.listdir(root)):
        scene_dir = os.path.join(root, scene)
        if not os.path.isdir(scene_dir):
            continue
        for sample in sorted(os.listdir(scene_dir)):
            sample_dir = os.path.join(scene_dir, sample)
            if not os.path.isdir(sample_dir):
                continue
            files = sorted(
                f for f in os.listdir(sample_dir)
                if f.lower().endswith((".png", ".jpg", ".jpeg"))
            )
            if not files:
                continue
            masks, shape = [], None
            for fname in files:
                path = os.path.join(sample_dir, fname)
                img = load_image(path).mean(axis=2)
                mask = (img > 0.5).astype(np.float32)
                if shape is None:
                    shape = mask.shape
                elif mask.shape != shape:
                    raise ValidationError(
                        f"mask shape mismatch in {scene}/{sample}: {fname} is "
                        f"{mask.shape}, expected {shape}"
                    )
                masks.append(mask)
            stacked = np.stack(masks)
            sets.append(HumanMaskSet(
                scene=scene, sample=sample, masks=tuple(masks),
                mean_map=stacked.mean(axis=0).astype(np.float32),
            ))
    return sets


def logistic(x, p):
    """5-parameter calibration curve: a1*(1/2 - 1/(1+exp(a2*(x-a3)))) + a4*x + a5."""
    x = np.asarray(x, dtype=np.float64)
    u = np.clip(p.a2 * (x - p.a3), -500.0, 500.0)
    return p.a1 * (0.5 - 1.0 / (1.0 + np.exp(u))) + p.a4 * x + p.a5


def pearson(a, b):
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    sa, sb = a.std(), b.std()
    if sa == 0.0 or sb == 0.0:
        return 0.0
    return float(((a - a.mean()) * (b - b.mean())).mean() / (sa * sb))


def spearman(metric_map, human_map):
    """Rank correlation with average-rank tie handling; 0 for constant inputs."""
    a = np.asarray(metric_map, dtype=np.float64).ravel()
    b = np.asarray(human_map, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise ValidationError(f"shape mismatch: {a.shape} vs {b.shape}")
    if np.ptp(a) == 0.0 or np.ptp(b) == 0.0:
        return 0.0
    return float(stats.spearmanr(a, b).statistic)


def _pcc_and_grad(params_vec, x, y):
    """PCC(q(x), y) and its gradient in the 5 parameters."""
    a1, a2, a3, a4, a5 = params_vec
    u = np.clip(a2 * (x - a3), -500.0, 500.0)
    g = 1.0 / (1.0 + np.exp(u))
    bracket = 0.5 - g
    z = a1 * bracket + a4 * x + a5

    n = z.size
    zc = z - z.mean()
    yc = y - y.mean()
    sz = np.sqrt((zc * zc).mean())
    sy = np.sqrt((yc * yc).mean())
    if sz == 0.0 or sy == 0.0:
        return 0.0, np.zeros(5)
    pcc = (zc * yc).mean() / (sz * sy)
    # dPCC/dz
    dz = yc / (n * sz * sy) - pcc * zc / (n * sz * sz)
    gp = g * (1.0 - g)  # d(bracket)/du
    grad = np.array([
        np.dot(dz, bracket),
        np.dot(dz, a1 * gp * (x - a3)),
        np.dot(dz, a1 * gp * (-a2)),
        np.dot(dz, x),
        dz.sum(),
    ])
    return pcc, grad


def fit_logistic_pcc(metric_map, human_map, seed=0, n_random_starts=6,
                     iterations=500, step=1e-2):
    """Maximize PCC(logistic(metric), human) by multi-start gradient ascent.

    Starts: identity, sign-flipped identity, and seeded random draws.
    Backtracking halves the step whenever an update would lower the PCC.
    """
    x = np.asarray(metric_map, dtype=np.float64).ravel()
    y = np.asarray(human_map, dtype=np.float64).ravel()
    if x.shape != y.shape:
        raise ValidationError(f"shape mismatch: {x.shape} vs {y.shape}")
    if np.ptp(y) == 0.0:
        raise ValidationError("human map is constant")
    if np.ptp(x) == 0.0:
        return IDENTITY_PARAMS, 0.0, True

    x_mean, x_std = x.mean(), max(x.std(), 1e-12)
    raw_pcc = pearson(x, y)

    rng = np.random.default_rng(seed)
    starts = [
        np.array([0.0, 1.0, x_mean, 1.0, 0.0]),
        np.array([0.0, 1.0, x_mean, -1.0, 0.0]),
    ]
    for _ in range(n_random_starts):
        starts.append(np.array([
            rng.normal(scale=2.0),
            rng.normal(scale=2.0) / x_std,
            x_mean + rng.normal(scale=x_std),
            rng.normal(scale=1.0),
            rng.normal(scale=0.5),
        ]))

    best_pcc, best_vec = -np.inf, starts[0]
    for vec in starts:
        p = vec.copy()
        cur, grad = _pcc_and_grad(p, x, y)
        lr = step
        for _ in range(iterations):
            gn = np.linalg.norm(grad)
            if gn < 1e-14:
                break
            trial = p + lr * grad / gn
            trial_pcc, trial_grad = _pcc_and_grad(trial, x, y)
            if trial_pcc > cur:
                p, cur, grad = trial, trial_pcc, trial_grad
                lr *= 1.2
            else:
                lr *= 0.5
                if lr < 1e-10:
                    break
        if cur > best_pcc:
            best_pcc, best_vec = cur, p.copy()

    # identity is in the family, so never report worse than the raw map
    if best_pcc < raw_pcc:
        best_pcc, best_vec = raw_pcc, np.array([0.0, 1.0, x_mean, 1.0, 0.0])
    return LogisticParams(*best_vec), float(best_pcc), False


def evaluate(mask_sets, load_metric_map, seed=0):
    """Correlate every annotated sample with its metric map.

    load_metric_map(scene, sample) returns the raw map or None when missing.
    Scene score is the mean over its samples; the aggregate is mean +/- std
    over scenes.
    """
    report = CorrelationReport()
    by_scene = {}
    for ms in mask_sets:
        metric_map = load_metric_map(ms.scene, ms.sample)
        if metric_map is None:
            report.missing.append((ms.scene, ms.sample))
            continue
        h, w = ms.mean_map.shape
        if metric_map.shape != (h, w):
            metric_map = bilinear_resize(metric_map, h, w)
        raw = pearson(metric_map, ms.mean_map)
        params, fit, degenerate = fit_logistic_pcc(metric_map, ms.mean_map, seed=seed)
        result = SampleResult(
            scene=ms.scene, sample=ms.sample, pcc_raw=raw, pcc_fit=fit,
            srcc=spearman(metric_map, ms.mean_map), params=params,
            degenerate=degenerate,
        )
        report.samples.append(result)
        by_scene.setdefault(ms.scene, []).append(result)

    excluded = {scene for scene, _ in report.missing}
    for scene, results in by_scene.items():
        if scene in excluded:
            continue
        report.scene_pcc[scene] = float(np.mean([r.pcc_fit for r in results]))
        report.scene_srcc[scene] = float(np.mean([r.srcc for r in results]))
    if report.scene_pcc:
        pccs = np.array(list(report.scene_pcc.values()))
        srccs = np.array(list(report.scene_srcc.values()))
        report.pcc_mean, report.pcc_std = float(pccs.mean()), float(pccs.std())
        report.srcc_mean, report.srcc_std = float(srccs.mean()), float(srccs.std())
    return report


def report_csv(report):
    """Per-sample CSV rows; aggregation is recomputable from these alone."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for r in sorted(report.samples, key=lambda r: (r.scene, r.sample)):
        writer.writerow([
            r.scene, r.sample,
            f"{r.pcc_raw:.9g}", f"{r.pcc_fit:.9g}", f"{r.srcc:.9g}",
        ] + [f"{v:.9g}" for v in r.params.as_tuple()])
    return buf.getvalue()


def format_table(report):
    lines = [f"{'scene':<16}{'PCC(fit)':>10}{'SRCC':>10}"]
    for scene in sorted(report.scene_pcc):
        lines.append(
            f"{scene:<16}{report.scene_pcc[scene]:>10.4f}{report.scene_srcc[scene]:>10.4f}"
        )
    lines.append(
        f"{'aggregate':<16}"
        f"{report.pcc_mean:>6.4f}±{report.pcc_std:<.3f}"
        f" {report.srcc_mean:>6.4f}±{report.srcc_std:<.3f}"
    )
    if report.missing:
        lines.append("missing maps: " + ", ".join(f"{s}/{m}" for s, m in report.missing))
    return "\n".join(lines)


def save_report_figure(report, path):
    """Per-scene correlation bar chart rendered next to the CSV output."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    scenes = sorted(report.scene_pcc)
    if not scenes:
        return
    xs = np.arange(len(scenes))
    fig, ax = plt.subplots(figsize=(max(6, 0.7 * len(scenes)), 4))
    ax.bar(xs - 0.2, [report.scene_pcc[s] for s in scenes], width=0.4, label="PCC (fit)")
    ax.bar(xs + 0.2, [report.scene_srcc[s] for s in scenes], width=0.4, label="SRCC")
    ax.set_xticks(xs)
    ax.set_xticklabels(scenes, rotation=45, ha="right")
    ax.set_ylim(-1, 1)
    ax.axhline(0, color="k", lw=0.5)
    ax.set_ylabel("correlation with human masks")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
