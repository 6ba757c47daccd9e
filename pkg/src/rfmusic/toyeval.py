"""Desk-scale sample-quality evaluation for the flow-vs-DDIM comparison.

Pretrained audio metrics are out of reach here, so generated latents are
scored with (a) a kernel MMD between pooled latent features of generated and
held-out synthetic data, reported next to the data-split null baseline, and
(b) attribute accuracy of a nearest-centroid classifier over the synthetic
attribute prototypes (per axis and for the full attribute triple).
"""

import itertools
from dataclasses import dataclass

import numpy as np

from .datapipe import ATTRIBUTE_AXES, ATTRIBUTES, attrs_to_caption
from .sampling import sample_latents

COMBOS = [
    dict(zip(ATTRIBUTE_AXES, values))
    for values in itertools.product(*(ATTRIBUTES[a] for a in ATTRIBUTE_AXES))
]


def pooled_features(latents):
    """[N,16,128,c] -> [N, 16*c*3]: per (freq-row, channel) time mean, time
    std, and mean absolute frame difference (captures modulation rate)."""
    x = np.asarray(latents, np.float64)
    mean_t = x.mean(axis=2)
    std_t = x.std(axis=2)
    mod_t = np.abs(np.diff(x, axis=2)).mean(axis=2)
    n = x.shape[0]
    return np.concatenate(
        [mean_t.reshape(n, -1), std_t.reshape(n, -1), mod_t.reshape(n, -1)], axis=1
    )


def median_bandwidth(feats):
    """Median pairwise distance heuristic for the RBF kernel width."""
    n = feats.shape[0]
    idx = np.random.default_rng(0).choice(n, size=min(n, 256), replace=False)
    sub = feats[idx]
    d2 = ((sub[:, None, :] - sub[None, :, :]) ** 2).sum(-1)
    med = np.median(d2[np.triu_indices_from(d2, k=1)])
    return float(np.sqrt(max(med, 1e-12)))


def mmd_rbf(x, y, bandwidth):
    """Biased (V-statistic) kernel MMD with an RBF kernel; always >= 0."""
    gamma = 1.0 / (2.0 * bandwidth**2)

    def k(a, b):
        d2 = ((a[:, None, :] - b[None, :, :]) ** 2).sum(-1)
        return np.exp(-gamma * d2)

    m2 = k(x, x).mean() + k(y, y).mean() - 2.0 * k(x, y).mean()
    return float(np.sqrt(max(m2, 0.0)))


@dataclass
class ArmReport:
    name: str
    mmd: float
    null_mmd: float
    axis_accuracy: dict
    tuple_accuracy: float

    @property
    def mmd_ratio(self):
        return self.mmd / max(self.null_mmd, 1e-12)


class FeatureSpace:
    """Reference statistics: standardization, bandwidth, class centroids."""

    def __init__(self, ref_latents, ref_attrs):
        feats = pooled_features(ref_latents)
        self.mu = feats.mean(axis=0)
        self.sd = feats.std(axis=0) + 1e-8
        z = (feats - self.mu) / self.sd
        self.bandwidth = median_bandwidth(z)
        self.centroids = {}
        keys = [tuple(a[ax] for ax in ATTRIBUTE_AXES) for a in ref_attrs]
        for combo in COMBOS:
            key = tuple(combo[ax] for ax in ATTRIBUTE_AXES)
            rows = z[[i for i, k in enumerate(keys) if k == key]]
            if rows.shape[0] == 0:
                raise ValueError(f"reference set has no samples for combo {key}")
            self.centroids[key] = rows.mean(axis=0)

    def transform(self, latents):
        return (pooled_features(latents) - self.mu) / self.sd

    def classify(self, latents):
        z = self.transform(latents)
        keys = list(self.centroids)
        cents = np.stack([self.centroids[k] for k in keys])
        d2 = ((z[:, None, :] - cents[None, :, :]) ** 2).sum(-1)
        return [keys[i] for i in d2.argmin(axis=1)]


def attribute_accuracy(predicted, expected):
    """Per-axis and full-triple accuracy of predicted attribute keys."""
    per_axis = {}
    for j, axis in enumerate(ATTRIBUTE_AXES):
        per_axis[axis] = float(np.mean([p[j] == e[j] for p, e in zip(predicted, expected)]))
    tup = float(np.mean([p == e for p, e in zip(predicted, expected)]))
    return per_axis, tup


def eval_prompts(n):
    """n prompts cycling uniformly through the 8 attribute combinations."""
    prompts, expected = [], []
    for i in range(n):
        combo = COMBOS[i % len(COMBOS)]
        prompts.append(attrs_to_caption(combo))
        expected.append(tuple(combo[ax] for ax in ATTRIBUTE_AXES))
    return prompts, expected


def reference_sets(dataset, n, start=0):
    """Three disjoint held-out slices: (fit/compare set, null split, attrs)."""
    lat_a, _, attrs_a = dataset.batch(range(start, start + n))
    lat_b, _, attrs_b = dataset.batch(range(start + n, start + 2 * n))
    return lat_a, attrs_a, lat_b, attrs_b


def evaluate_arm(name, state, dataset, n=128, seed=0, steps=None, cfg_scale=None):
    """Score one trained arm against held-out synthetic data."""
    ref_a, attrs_a, ref_b, _ = reference_sets(dataset, n)
    space = FeatureSpace(ref_a, attrs_a)
    prompts, expected = eval_prompts(n)
    gen = sample_latents(state, prompts, steps=steps, cfg_scale=cfg_scale, seed=seed)
    za = space.transform(ref_a)
    zb = space.transform(ref_b)
    zg = space.transform(gen)
    mmd = mmd_rbf(zg, za, space.bandwidth)
    null = mmd_rbf(zb, za, space.bandwidth)
    per_axis, tup = attribute_accuracy(space.classify(gen), expected)
    return ArmReport(name, mmd, null, per_axis, tup)


def format_report(reports):
    lines = []
    header = f"{'arm':8s} {'MMD':>8s} {'null':>8s} {'ratio':>7s}"
    for axis in ATTRIBUTE_AXES:
        header += f" {'acc_' + axis:>12s}"
    header += f" {'acc_tuple':>10s}"
    lines.append(header)
    for r in reports:
        row = f"{r.name:8s} {r.mmd:8.4f} {r.null_mmd:8.4f} {r.mmd_ratio:7.2f}"
        for axis in ATTRIBUTE_AXES:
            row += f" {r.axis_accuracy[axis]:12.3f}"
        row += f" {r.tuple_accuracy:10.3f}"
        lines.append(row)
    return "\n".join(lines)
