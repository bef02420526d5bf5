"""Representation analyses: paraphrase and viewpoint invariance probes.

All studies run the trained encoder in inference mode on freshly generated
scenes and captions, so they are deterministic given the seed and are
embarrassingly parallel over scenes (we keep them sequential here).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .captions import (TRANSFORMATIONS, Vocabulary, caption_words,
                       gershman_scene_set, relations_for_pair,
                       transformation_captions, LEFT_OF, RIGHT_OF)
from .colors import hsv_to_rgb
from .encoder import RepresentationEncoder, aggregate
from .decoder import CanvasDecoder
from .render import FLOOR_COLOR, SKY_COLOR, WALL_COLOR, image_grid
from .scenes import GenerationConfig, Scene, sample_scene, world_to_view


def cosine_distance(u, v) -> float:
    """1 - cos(u, v); raises on zero vectors."""
    u = np.asarray(u, dtype=np.float64).ravel()
    v = np.asarray(v, dtype=np.float64).ravel()
    nu = float(np.linalg.norm(u))
    nv = float(np.linalg.norm(v))
    if nu == 0.0 or nv == 0.0:
        raise ValueError("cosine distance undefined for zero vectors")
    return 1.0 - float(np.dot(u, v)) / (nu * nv)


def euclidean_distance(u, v) -> float:
    return float(np.linalg.norm(np.asarray(u, np.float64) - np.asarray(v, np.float64)))


def pearson_distance(u, v) -> float:
    u = np.asarray(u, np.float64).ravel()
    v = np.asarray(v, np.float64).ravel()
    return 1.0 - float(np.corrcoef(u, v)[0, 1])


def encode_captions(enc: RepresentationEncoder, vocab: Vocabulary,
                    word_lists: list[list[str]], thetas: list[float]) -> torch.Tensor:
    """Encode captions (word lists) with their camera angles; [n, view_dim]."""
    ids = [vocab.encode(w, allow_unk=True) for w in word_lists]
    max_len = max(len(i) for i in ids)
    tokens = np.zeros((len(ids), max_len), dtype=np.int64)
    for k, row in enumerate(ids):
        tokens[k, :len(row)] = row
    with torch.no_grad():
        return enc.encode_view(torch.from_numpy(tokens),
                               torch.tensor(thetas, dtype=torch.float32))


def _mean_ci(values: np.ndarray) -> tuple[float, float]:
    mean = float(np.mean(values))
    if len(values) < 2:
        return mean, 0.0
    sem = float(np.std(values, ddof=1) / math.sqrt(len(values)))
    return mean, 1.96 * sem


@dataclass
class SimilarityReport:
    """Cosine distance of each transformation to the base, with 95% CIs."""

    scene_level: dict[str, tuple[float, float]]
    single_level: dict[str, tuple[float, float]]
    n_scenes: int
    # orderings under alternative metrics, for the footnote-style comparison
    euclidean_order: tuple[str, ...]
    pearson_order: tuple[str, ...]

    def ordering(self, level: str = "scene") -> tuple[str, ...]:
        table = self.scene_level if level == "scene" else self.single_level
        return tuple(sorted(table, key=lambda k: table[k][0]))

    def rows(self):
        for t in TRANSFORMATIONS:
            yield (t, *self.scene_level[t], *self.single_level[t])


def transformation_study(enc: RepresentationEncoder, vocab: Vocabulary,
                         n_scenes: int = 200, seed: int = 0) -> SimilarityReport:
    """Distances between base-scene representations and their transforms.

    Every scene set is captioned at all 10 of its camera angles per variant;
    the scene level compares aggregated representations, the single level
    averages per-view embedding distances over the 10 views.
    """
    scene_d = {t: [] for t in TRANSFORMATIONS}
    single_d = {t: [] for t in TRANSFORMATIONS}
    eu_d = {t: [] for t in TRANSFORMATIONS}
    pe_d = {t: [] for t in TRANSFORMATIONS}
    for s in range(n_scenes):
        rng = np.random.default_rng(np.random.SeedSequence((seed, s)))
        ts = gershman_scene_set(rng)
        thetas = list(ts.base.cameras)
        variants = ["base"] + list(TRANSFORMATIONS)
        words: list[list[str]] = []
        for theta in thetas:
            caps = transformation_captions(ts, theta)
            for v in variants:
                words.append(caps[v])
        h = encode_captions(enc, vocab, words,
                            [t for t in thetas for _ in variants])
        h = h.reshape(len(thetas), len(variants), -1).numpy()
        r = h.mean(axis=0)  # [variant, dim]
        for vi, t in enumerate(TRANSFORMATIONS, start=1):
            scene_d[t].append(cosine_distance(r[0], r[vi]))
            single_d[t].append(np.mean([
                cosine_distance(h[k, 0], h[k, vi]) for k in range(len(thetas))]))
            eu_d[t].append(euclidean_distance(r[0], r[vi]))
            pe_d[t].append(pearson_distance(r[0], r[vi]))
    eu_mean = {t: float(np.mean(eu_d[t])) for t in TRANSFORMATIONS}
    pe_mean = {t: float(np.mean(pe_d[t])) for t in TRANSFORMATIONS}
    return SimilarityReport(
        scene_level={t: _mean_ci(np.asarray(scene_d[t])) for t in TRANSFORMATIONS},
        single_level={t: _mean_ci(np.asarray(single_d[t])) for t in TRANSFORMATIONS},
        n_scenes=n_scenes,
        euclidean_order=tuple(sorted(eu_mean, key=eu_mean.get)),
        pearson_order=tuple(sorted(pe_mean, key=pe_mean.get)),
    )


def _scene_view_embeddings(enc, vocab, scene: Scene, thetas: list[float],
                           rng: np.random.Generator,
                           cfg: GenerationConfig) -> np.ndarray:
    words = [caption_words(scene, t, rng, cfg.size_min, cfg.size_max)
             for t in thetas]
    return encode_captions(enc, vocab, words, thetas).numpy()


def fold_angle(delta: float) -> float:
    d = abs(delta) % (2.0 * math.pi)
    return min(d, 2.0 * math.pi - d)


@dataclass
class CurveTable:
    bin_centers: np.ndarray
    mean_distance: np.ndarray
    counts: np.ndarray
    control_mean: np.ndarray  # pairs drawn from different scenes

    def rows(self):
        for i in range(len(self.bin_centers)):
            yield (float(self.bin_centers[i]), float(self.mean_distance[i]),
                   int(self.counts[i]), float(self.control_mean[i]))


def angle_distance_curve(enc: RepresentationEncoder, vocab: Vocabulary,
                         n_scenes: int = 64, n_bins: int = 9,
                         seed: int = 0,
                         cfg: GenerationConfig | None = None) -> CurveTable:
    """Per-view embedding distance vs angular separation, same scene.

    Pairs fold to [0, pi] and include each view against itself, which pins
    the zero-separation bin at distance zero. The control column pairs
    views across different scenes under the same binning.
    """
    cfg = cfg or GenerationConfig()
    edges = np.linspace(0.0, math.pi, n_bins + 1)
    sums = np.zeros(n_bins)
    counts = np.zeros(n_bins, dtype=np.int64)
    csums = np.zeros(n_bins)
    ccounts = np.zeros(n_bins, dtype=np.int64)
    all_h: list[np.ndarray] = []
    all_t: list[list[float]] = []
    for s in range(n_scenes):
        rng = np.random.default_rng(np.random.SeedSequence((seed, 7, s)))
        scene = sample_scene(rng, cfg)
        thetas = list(scene.cameras)
        h = _scene_view_embeddings(enc, vocab, scene, thetas, rng, cfg)
        all_h.append(h)
        all_t.append(thetas)
        for i in range(len(thetas)):
            for j in range(i, len(thetas)):
                d = cosine_distance(h[i], h[j]) if i != j else 0.0
                b = min(np.searchsorted(edges, fold_angle(thetas[i] - thetas[j]),
                                        side="right") - 1, n_bins - 1)
                sums[b] += d
                counts[b] += 1
    for s in range(n_scenes):
        h1, t1 = all_h[s], all_t[s]
        h2, t2 = all_h[(s + 1) % n_scenes], all_t[(s + 1) % n_scenes]
        for i in range(len(t1)):
            for j in range(len(t2)):
                b = min(np.searchsorted(edges, fold_angle(t1[i] - t2[j]),
                                        side="right") - 1, n_bins - 1)
                csums[b] += cosine_distance(h1[i], h2[j])
                ccounts[b] += 1
    centers = (edges[:-1] + edges[1:]) / 2.0
    return CurveTable(
        bin_centers=centers,
        mean_distance=sums / np.maximum(counts, 1),
        counts=counts,
        control_mean=csums / np.maximum(ccounts, 1),
    )


@dataclass
class ArcTable:
    arc_sizes: np.ndarray
    same_mean: np.ndarray
    same_ci: np.ndarray
    diff_mean: np.ndarray
    diff_ci: np.ndarray

    def rows(self):
        for i in range(len(self.arc_sizes)):
            yield (float(self.arc_sizes[i]), float(self.same_mean[i]),
                   float(self.same_ci[i]), float(self.diff_mean[i]),
                   float(self.diff_ci[i]))


def arc_study(enc: RepresentationEncoder, vocab: Vocabulary,
              n_scenes: int = 64, arc_sizes: list[float] | None = None,
              n_per_arc: int = 9, seed: int = 0,
              cfg: GenerationConfig | None = None) -> ArcTable:
    """Distance between representations aggregated from opposing arcs.

    For each central angle, n_per_arc viewpoints are sampled with
    replacement inside the arcs starting at 0 and at pi; while the arc size
    stays at or below pi the two view sets cannot overlap. The different-
    scene column takes the second arc from the following scene.
    """
    arc_sizes = arc_sizes or [k * math.pi / 4 for k in range(1, 9)]
    cfg = cfg or GenerationConfig()
    scenes = []
    rngs = []
    for s in range(n_scenes):
        rng = np.random.default_rng(np.random.SeedSequence((seed, 11, s)))
        scenes.append(sample_scene(rng, cfg))
        rngs.append(rng)
    same = np.zeros((len(arc_sizes), n_scenes))
    diff = np.zeros((len(arc_sizes), n_scenes))
    for ai, arc in enumerate(arc_sizes):
        for s, scene in enumerate(scenes):
            rng = np.random.default_rng(np.random.SeedSequence((seed, 13, s, ai)))
            t1 = [float(rng.uniform(0.0, arc)) for _ in range(n_per_arc)]
            t2 = [float((math.pi + rng.uniform(0.0, arc)) % (2 * math.pi))
                  for _ in range(n_per_arc)]
            other = scenes[(s + 1) % n_scenes]
            h1 = _scene_view_embeddings(enc, vocab, scene, t1, rng, cfg)
            h2 = _scene_view_embeddings(enc, vocab, scene, t2, rng, cfg)
            h3 = _scene_view_embeddings(enc, vocab, other, t2, rng, cfg)
            r1, r2, r3 = h1.mean(0), h2.mean(0), h3.mean(0)
            same[ai, s] = cosine_distance(r1, r2)
            diff[ai, s] = cosine_distance(r1, r3)
    same_stats = [_mean_ci(same[ai]) for ai in range(len(arc_sizes))]
    diff_stats = [_mean_ci(diff[ai]) for ai in range(len(arc_sizes))]
    return ArcTable(
        arc_sizes=np.asarray(arc_sizes),
        same_mean=np.asarray([m for m, _ in same_stats]),
        same_ci=np.asarray([c for _, c in same_stats]),
        diff_mean=np.asarray([m for m, _ in diff_stats]),
        diff_ci=np.asarray([c for _, c in diff_stats]),
    )


def angle_cluster_probe(enc: RepresentationEncoder, vocab: Vocabulary,
                        n_scenes: int = 32, n_angles: int = 10,
                        seed: int = 0,
                        cfg: GenerationConfig | None = None) -> float:
    """Leave-one-out 1-NN accuracy of camera-angle labels on view embeddings.

    Scenes are captioned on a fixed shared grid of camera angles so the
    angle label is a 10-class problem across scenes; chance is 1/n_angles.
    """
    cfg = cfg or GenerationConfig()
    grid = [2.0 * math.pi * k / n_angles for k in range(n_angles)]
    embeddings = []
    labels = []
    for s in range(n_scenes):
        rng = np.random.default_rng(np.random.SeedSequence((seed, 17, s)))
        scene = sample_scene(rng, cfg)
        h = _scene_view_embeddings(enc, vocab, scene, grid, rng, cfg)
        embeddings.append(h)
        labels.extend(range(n_angles))
    H = np.concatenate(embeddings, axis=0).astype(np.float64)
    labels = np.asarray(labels)
    H /= np.linalg.norm(H, axis=1, keepdims=True)
    sim = H @ H.T
    np.fill_diagonal(sim, -np.inf)
    pred = labels[np.argmax(sim, axis=1)]
    return float(np.mean(pred == labels))


# ---------------------------------------------------------------------------
# conditional sampling sweep and the caption-consistency score
# ---------------------------------------------------------------------------

def dominant_lateral_pair(scene: Scene, theta: float,
                          min_delta: float = 0.25):
    """The most laterally separated object pair at theta, if it is dominant.

    Returns (i, j, relation of i w.r.t. j) or None when no pair has a clear
    left/right dominant relation.
    """
    best = None
    for i in range(len(scene.objects)):
        for j in range(i + 1, len(scene.objects)):
            rels = relations_for_pair(scene.objects[i], scene.objects[j], theta)
            if rels[0] not in (LEFT_OF, RIGHT_OF):
                continue
            li, _ = world_to_view(scene.objects[i].position, theta)
            lj, _ = world_to_view(scene.objects[j].position, theta)
            dlat = abs(li - lj)
            if dlat >= min_delta and (best is None or dlat > best[0]):
                best = (dlat, i, j, rels[0])
    if best is None:
        return None
    return best[1], best[2], best[3]


def consistency_score(images: np.ndarray, scene: Scene, theta: float) -> float | None:
    """Fraction of sampled images whose object layout matches the caption.

    Pixels are classified to the nearest reference color (backgrounds plus
    the two target objects); the dominant left/right relation must agree
    with the two color masses' column centroids.
    """
    pair = dominant_lateral_pair(scene, theta)
    if pair is None:
        return None
    i, j, rel = pair
    refs = [FLOOR_COLOR, WALL_COLOR, SKY_COLOR]
    refs += [np.asarray(hsv_to_rgb(*scene.objects[k].hsv), dtype=np.float32)
             for k in range(len(scene.objects))]
    refs = np.stack(refs)  # [R, 3]
    idx_i = 3 + i
    idx_j = 3 + j
    hits = 0
    total = 0
    for img in images:
        d = ((img[:, :, None, :] - refs[None, None, :, :]) ** 2).sum(-1)
        owner = np.argmin(d, axis=2)
        cols = np.arange(img.shape[1])[None, :]
        mask_i = owner == idx_i
        mask_j = owner == idx_j
        if mask_i.sum() < 2 or mask_j.sum() < 2:
            total += 1
            continue
        ci = float((cols * mask_i).sum() / mask_i.sum())
        cj = float((cols * mask_j).sum() / mask_j.sum())
        ok = ci < cj if rel == LEFT_OF else ci > cj
        hits += int(ok)
        total += 1
    return hits / total if total else None


@dataclass
class SweepResult:
    grid: np.ndarray                    # composed image grid
    conditions: list[str]
    scores: list[float | None]          # caption consistency per condition


def viewpoint_sweep(enc: RepresentationEncoder, dec: CanvasDecoder,
                    vocab: Vocabulary, scene: Scene, theta_out: float,
                    n_samples: int = 4, seed: int = 0,
                    single_angles: list[float] | None = None,
                    arc_sizes: list[float] | None = None,
                    cfg: GenerationConfig | None = None) -> SweepResult:
    """Samples at a fixed output camera under varying input conditions.

    Rows: single-view contexts at several angles, then contexts aggregated
    from arcs of growing size (9 views sampled with replacement).
    """
    cfg = cfg or GenerationConfig()
    single_angles = single_angles or [k * math.pi / 2 for k in range(4)]
    arc_sizes = arc_sizes or [math.pi / 2, math.pi, 2 * math.pi]
    rng = np.random.default_rng(np.random.SeedSequence((seed, 23)))
    rows: list[list[np.ndarray]] = []
    conditions: list[str] = []
    scores: list[float | None] = []

    def sample_images(r_vec: np.ndarray) -> np.ndarray:
        r = torch.tensor(r_vec, dtype=torch.float32)[None]
        theta = torch.tensor([theta_out], dtype=torch.float32)
        out = []
        for s in range(n_samples):
            gen = torch.Generator().manual_seed(int(rng.integers(2 ** 62)))
            with torch.no_grad():
                img = dec.sample(r, theta, gen=gen)[0]
            out.append(img.permute(1, 2, 0).numpy())
        return np.stack(out)

    for ang in single_angles:
        h = _scene_view_embeddings(enc, vocab, scene, [ang], rng, cfg)
        images = sample_images(h[0])
        rows.append(list(images))
        conditions.append(f"single@{ang:.2f}")
        scores.append(consistency_score(images, scene, theta_out))
    for arc in arc_sizes:
        thetas = [float(rng.uniform(0.0, arc)) for _ in range(9)]
        h = _scene_view_embeddings(enc, vocab, scene, thetas, rng, cfg)
        images = sample_images(h.mean(0))
        rows.append(list(images))
        conditions.append(f"arc@{arc:.2f}")
        scores.append(consistency_score(images, scene, theta_out))
    return SweepResult(grid=image_grid(rows), conditions=conditions, scores=scores)


def write_csv(path: str | Path, header: list[str], rows) -> None:
    import csv

    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow(row)
