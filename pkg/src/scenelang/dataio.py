"""Dataset serialization: framed little-endian binary splits plus manifest.

Split file layout:
    header: magic "SCNVIEWS" | version u32 | height u32 | width u32 |
            channels u32 | views_per_scene u32
    record: magic "REC0" | scene_id u32 | views_per_scene frames of
            [angle f32 | image f32*h*w*c | caption_len u32 | ids u16*len]

Images are stored as float32 in [0, 1] so the on-disk values round-trip the
rendering pipeline bit-exactly.
"""

from __future__ import annotations

import dataclasses
import hashlib
import multiprocessing
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import DataFormatError
from .captions import Vocabulary, build_vocabulary, generate_caption
from .colors import color_table_text
from .config import format_kv, parse_kv_file
from .render import downsample, render_view
from .scenes import (SPLIT_TEST, SPLIT_TRAIN, SPLIT_VALIDATION,
                     GenerationConfig, Scene, assign_split, sample_scene,
                     scene_rng)

FILE_MAGIC = b"SCNVIEWS"
RECORD_MAGIC = b"REC0"
FORMAT_VERSION = 1

SPLIT_FILES = {SPLIT_TRAIN: "train.bin", SPLIT_VALIDATION: "validation.bin",
               SPLIT_TEST: "test.bin"}


def sha256_file(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


@dataclass
class SceneRecord:
    scene_id: int
    angles: np.ndarray          # (V,) float32
    images: np.ndarray          # (V, H, W, C) float32
    captions: list[np.ndarray]  # V arrays of uint16 token ids
    split: str


class SplitWriter:
    def __init__(self, path: Path, image_hw: int, channels: int, views: int):
        self.path = path
        self.count = 0
        self._fh = open(path, "wb")
        self._fh.write(FILE_MAGIC)
        self._fh.write(struct.pack("<IIIII", FORMAT_VERSION, image_hw, image_hw,
                                   channels, views))
        self._views = views

    def append(self, rec: SceneRecord) -> None:
        fh = self._fh
        fh.write(RECORD_MAGIC)
        fh.write(struct.pack("<I", rec.scene_id))
        for i in range(self._views):
            fh.write(struct.pack("<f", float(rec.angles[i])))
            fh.write(np.ascontiguousarray(rec.images[i], dtype="<f4").tobytes())
            ids = np.ascontiguousarray(rec.captions[i], dtype="<u2")
            fh.write(struct.pack("<I", ids.size))
            fh.write(ids.tobytes())
        self.count += 1

    def close(self) -> None:
        self._fh.close()


@dataclass
class ViewDataset:
    """One split loaded in memory."""

    scene_ids: np.ndarray        # (N,)
    angles: np.ndarray           # (N, V) float32
    images: np.ndarray           # (N, V, H, W, C) float32
    captions: list[list[np.ndarray]]
    vocab: Vocabulary

    def __len__(self) -> int:
        return len(self.scene_ids)

    @property
    def views_per_scene(self) -> int:
        return self.angles.shape[1]


def read_split(path: str | Path, vocab: Vocabulary) -> ViewDataset:
    path = Path(path)
    blob = path.read_bytes()
    if blob[:8] != FILE_MAGIC:
        raise DataFormatError(f"{path}: bad file magic at byte offset 0")
    version, h, w, c, views = struct.unpack_from("<IIIII", blob, 8)
    if version != FORMAT_VERSION:
        raise DataFormatError(f"{path}: unsupported format version {version}")
    off = 8 + 20
    img_bytes = h * w * c * 4
    ids_list: list[int] = []
    angles: list[np.ndarray] = []
    images: list[np.ndarray] = []
    captions: list[list[np.ndarray]] = []
    while off < len(blob):
        if blob[off:off + 4] != RECORD_MAGIC:
            raise DataFormatError(f"{path}: bad record magic at byte offset {off}")
        off += 4
        (scene_id,) = struct.unpack_from("<I", blob, off)
        off += 4
        rec_angles = np.empty(views, dtype=np.float32)
        rec_images = np.empty((views, h, w, c), dtype=np.float32)
        rec_caps: list[np.ndarray] = []
        for i in range(views):
            (rec_angles[i],) = struct.unpack_from("<f", blob, off)
            off += 4
            rec_images[i] = np.frombuffer(blob, dtype="<f4", count=h * w * c,
                                          offset=off).reshape(h, w, c)
            off += img_bytes
            (n_tok,) = struct.unpack_from("<I", blob, off)
            off += 4
            ids = np.frombuffer(blob, dtype="<u2", count=n_tok, offset=off).copy()
            off += 2 * n_tok
            rec_caps.append(ids)
        ids_list.append(scene_id)
        angles.append(rec_angles)
        images.append(rec_images)
        captions.append(rec_caps)
    if not ids_list:
        return ViewDataset(np.zeros(0, np.int64), np.zeros((0, views), np.float32),
                           np.zeros((0, views, h, w, c), np.float32), [], vocab)
    return ViewDataset(
        scene_ids=np.asarray(ids_list, dtype=np.int64),
        angles=np.stack(angles),
        images=np.stack(images),
        captions=captions,
        vocab=vocab,
    )


# ---------------------------------------------------------------------------
# generation orchestration
# ---------------------------------------------------------------------------

def build_scene_record(scene_index: int, cfg: GenerationConfig,
                       vocab: Vocabulary) -> SceneRecord:
    """Sample, render, caption and split one scene, deterministically."""
    rng = scene_rng(cfg.seed, scene_index)
    scene = sample_scene(rng, cfg)
    split = assign_split(scene)
    angles = np.asarray(scene.cameras, dtype=np.float32)
    images = np.empty((cfg.n_views, 32, 32, 3), dtype=np.float32)
    captions: list[np.ndarray] = []
    for i, theta in enumerate(scene.cameras):
        images[i] = downsample(render_view(scene, theta, res=128))
        cap = generate_caption(scene, theta, rng, vocab, style=cfg.caption_style,
                               size_min=cfg.size_min, size_max=cfg.size_max)
        captions.append(np.asarray(cap.tokens, dtype=np.uint16))
    return SceneRecord(scene_id=scene_index, angles=angles, images=images,
                       captions=captions, split=split)


def _record_worker(args) -> SceneRecord:
    index, cfg, vocab_words = args
    vocab = Vocabulary(vocab_words)
    return build_scene_record(index, cfg, vocab)


def generate_dataset(cfg: GenerationConfig, out_dir: str | Path,
                     progress=None) -> dict[str, int]:
    """Generate a full dataset directory; returns per-split scene counts."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    style = "varied" if cfg.caption_style == "varied" else "synthetic"
    vocab = build_vocabulary(style)
    vocab.save(out / "vocab.txt")
    (out / "colors.txt").write_text(color_table_text())
    (out / "gen.cfg").write_text(format_kv(dataclasses.asdict(cfg)))

    writers = {split: SplitWriter(out / name, 32, 3, cfg.n_views)
               for split, name in SPLIT_FILES.items()}
    try:
        if cfg.workers > 1:
            jobs = ((i, cfg, vocab.words) for i in range(cfg.n_scenes))
            with multiprocessing.Pool(cfg.workers) as pool:
                for rec in pool.imap(_record_worker, jobs, chunksize=16):
                    writers[rec.split].append(rec)
                    if progress:
                        progress(rec.scene_id)
        else:
            for i in range(cfg.n_scenes):
                rec = build_scene_record(i, cfg, vocab)
                writers[rec.split].append(rec)
                if progress:
                    progress(i)
    finally:
        for w in writers.values():
            w.close()

    counts = {split: writers[split].count for split in SPLIT_FILES}
    manifest = {
        "format_version": FORMAT_VERSION,
        "image_size": 32,
        "views_per_scene": cfg.n_views,
        "caption_style": style,
        "train_scenes": counts[SPLIT_TRAIN],
        "validation_scenes": counts[SPLIT_VALIDATION],
        "test_scenes": counts[SPLIT_TEST],
        "vocab_sha256": sha256_file(out / "vocab.txt"),
        "colors_sha256": sha256_file(out / "colors.txt"),
        "config_sha256": sha256_file(out / "gen.cfg"),
    }
    (out / "manifest.txt").write_text(format_kv(manifest))
    return counts


def verify_manifest(data_dir: str | Path) -> dict[str, str]:
    """Check bundled-file hashes and return the parsed manifest."""
    data_dir = Path(data_dir)
    manifest = parse_kv_file(data_dir / "manifest.txt")
    for key, fname in (("vocab_sha256", "vocab.txt"),
                       ("colors_sha256", "colors.txt"),
                       ("config_sha256", "gen.cfg")):
        actual = sha256_file(data_dir / fname)
        if manifest[key] != actual:
            raise DataFormatError(
                f"{data_dir / fname}: hash mismatch against manifest "
                f"({manifest[key][:12]}... != {actual[:12]}...)")
    return manifest


def load_split(data_dir: str | Path, split: str) -> ViewDataset:
    data_dir = Path(data_dir)
    manifest = verify_manifest(data_dir)
    vocab = Vocabulary.load(data_dir / "vocab.txt")
    ds = read_split(data_dir / SPLIT_FILES[split], vocab)
    expected = int(manifest[f"{'validation' if split == SPLIT_VALIDATION else split}_scenes"])
    if len(ds) != expected:
        raise DataFormatError(f"{data_dir}: manifest promises {expected} "
                              f"{split} scenes, file has {len(ds)}")
    return ds
