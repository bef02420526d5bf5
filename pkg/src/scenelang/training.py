"""Training loop: context/target batching, ADAM schedule, early stopping.

Each training example takes a random 9-view subset of a scene's captions as
encoder context and the held-out 10th view's image and camera as the
reconstruction target. Validation ELBO is measured every eval_every steps
on fixed evaluation batches; the best checkpoint wins and training stops
after `patience` evaluations without improvement.
"""

from __future__ import annotations

import csv
import hashlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from . import TrainingDivergedError, nn
from .config import ModelConfig, TrainingConfig
from .dataio import ViewDataset
from .decoder import CanvasDecoder
from .encoder import RepresentationEncoder, aggregate

EVAL_STREAM = 0x5EED_E7A1


@dataclass
class Batch:
    tokens: torch.Tensor         # [B, n_context, L] int64, 0-padded
    thetas: torch.Tensor         # [B, n_context] float32
    target_images: torch.Tensor  # [B, C, H, W] float32
    target_thetas: torch.Tensor  # [B] float32
    corpus: np.ndarray           # [B] 0 = primary corpus, 1 = secondary


def step_rng(seed: int, stream: int, step: int) -> np.random.Generator:
    """Stateless per-step generator; resume-safe by construction."""
    return np.random.default_rng(np.random.SeedSequence((seed, stream, step)))


def step_torch_gen(seed: int, stream: int, step: int) -> torch.Generator:
    digest = hashlib.sha256(f"{seed}/{stream}/{step}".encode()).digest()
    return torch.Generator().manual_seed(int.from_bytes(digest[:8], "little"))


def lr_schedule(step: int, cfg: TrainingConfig) -> float:
    """Linear decay from lr_start to lr_end over anneal_steps, then flat."""
    if step < 0:
        raise ValueError("step must be >= 0")
    frac = min(step / cfg.anneal_steps, 1.0)
    return cfg.lr_start + (cfg.lr_end - cfg.lr_start) * frac


def make_batch(datasets: list[ViewDataset], rng: np.random.Generator,
               cfg: TrainingConfig) -> Batch:
    """Assemble one batch; with two corpora, scenes are drawn mix_ratio/1-mix."""
    n_ctx = cfg.n_context
    picks: list[tuple[ViewDataset, int]] = []
    corpus = np.zeros(cfg.batch_size, dtype=np.int64)
    for b in range(cfg.batch_size):
        ds_idx = 0
        if len(datasets) > 1:
            ds_idx = 0 if rng.uniform() < cfg.mix_ratio else 1
        corpus[b] = ds_idx
        ds = datasets[ds_idx]
        picks.append((ds, int(rng.integers(len(ds)))))

    views = picks[0][0].views_per_scene
    if n_ctx >= views:
        raise ValueError("n_context must be smaller than views per scene")
    ctx_caps: list[list[np.ndarray]] = []
    ctx_thetas = np.empty((cfg.batch_size, n_ctx), dtype=np.float32)
    tgt_thetas = np.empty(cfg.batch_size, dtype=np.float32)
    tgt_images = []
    for b, (ds, i) in enumerate(picks):
        if ds.views_per_scene != views:
            raise ValueError("corpora disagree on views per scene")
        perm = rng.permutation(views)
        ctx = perm[:n_ctx]
        tgt = int(perm[n_ctx])
        ctx_caps.append([ds.captions[i][j] for j in ctx])
        ctx_thetas[b] = ds.angles[i, ctx]
        tgt_thetas[b] = ds.angles[i, tgt]
        tgt_images.append(ds.images[i, tgt])

    max_len = max(len(c) for caps in ctx_caps for c in caps)
    tokens = np.zeros((cfg.batch_size, n_ctx, max_len), dtype=np.int64)
    for b, caps in enumerate(ctx_caps):
        for j, c in enumerate(caps):
            tokens[b, j, :len(c)] = c
    images = np.stack(tgt_images).transpose(0, 3, 1, 2)  # to [B, C, H, W]
    return Batch(
        tokens=torch.from_numpy(tokens),
        thetas=torch.from_numpy(ctx_thetas),
        target_images=torch.from_numpy(images),
        target_thetas=torch.from_numpy(tgt_thetas),
        corpus=corpus,
    )


@dataclass
class TrainState:
    params: nn.ParamSet
    model_cfg: ModelConfig
    step: int = 0
    best_val_loss: float = float("inf")
    bad_evals: int = 0
    seed: int = 0
    unconditional: bool = False

    def meta_entries(self) -> dict[str, np.ndarray]:
        meta = {
            "meta/step": np.asarray([self.step], np.float32),
            "meta/best_val_loss": np.asarray([self.best_val_loss], np.float32),
            "meta/bad_evals": np.asarray([self.bad_evals], np.float32),
            "meta/seed": np.asarray([self.seed], np.float32),
            "meta/unconditional": np.asarray([float(self.unconditional)], np.float32),
        }
        for key, val in self.model_cfg.meta_entries().items():
            meta[key] = np.asarray([val], np.float32)
        return meta

    def save(self, path: str | Path) -> None:
        entries = self.params.state_entries()
        entries.update(self.meta_entries())
        nn.save_checkpoint(path, entries)


def build_models(model_cfg: ModelConfig, seed: int = 0,
                 unconditional: bool = False,
                 dtype=torch.float32) -> tuple[nn.ParamSet, RepresentationEncoder, CanvasDecoder]:
    params = nn.ParamSet(seed=seed, dtype=dtype)
    enc = RepresentationEncoder(model_cfg, params)
    dec = CanvasDecoder(model_cfg, params, unconditional=unconditional)
    return params, enc, dec


def load_model(path: str | Path) -> tuple[TrainState, RepresentationEncoder, CanvasDecoder]:
    entries = nn.load_checkpoint(path)
    model_cfg = ModelConfig.from_meta(entries)
    unconditional = bool(entries.get("meta/unconditional", [0.0])[0])
    params, enc, dec = build_models(model_cfg, unconditional=unconditional)
    params.load_state(entries)
    state = TrainState(
        params=params, model_cfg=model_cfg,
        step=int(entries["meta/step"][0]),
        best_val_loss=float(entries["meta/best_val_loss"][0]),
        bad_evals=int(entries["meta/bad_evals"][0]),
        seed=int(entries["meta/seed"][0]),
        unconditional=unconditional,
    )
    return state, enc, dec


def _forward_loss(enc: RepresentationEncoder, dec: CanvasDecoder, batch: Batch,
                  cfg: TrainingConfig, *, training: bool,
                  gen: torch.Generator):
    if cfg.unconditional:
        r, theta = None, None
    else:
        h = enc.encode_views(batch.tokens, batch.thetas, training=training,
                             dropout_rate=cfg.resolved_dropout if training else 0.0,
                             gen=gen)
        r = aggregate(h).r
        theta = batch.target_thetas
    return dec.elbo(batch.target_images, r, theta, gen=gen)


def evaluate(enc: RepresentationEncoder, dec: CanvasDecoder,
             dataset: ViewDataset, cfg: TrainingConfig,
             n_samples: int | None = None) -> dict[str, float]:
    """Mean ELBO over fixed deterministic evaluation batches."""
    n_samples = n_samples or cfg.eval_samples
    n_batches = max(1, n_samples // cfg.batch_size)
    tot = {"elbo": 0.0, "recon": 0.0, "kl": 0.0}
    with torch.no_grad():
        for i in range(n_batches):
            rng = step_rng(cfg.seed, EVAL_STREAM, i)
            gen = step_torch_gen(cfg.seed, EVAL_STREAM, i)
            batch = make_batch([dataset], rng, cfg)
            res = _forward_loss(enc, dec, batch, cfg, training=False, gen=gen)
            tot["elbo"] += float(res.loss)
            tot["recon"] += float(res.recon)
            tot["kl"] += float(res.kl)
    return {k: v / n_batches for k, v in tot.items()}


def train(cfg: TrainingConfig, train_sets: list[ViewDataset],
          val_set: ViewDataset, out_dir: str | Path,
          pretrained: str | Path | None = None,
          log=print) -> TrainState:
    """Run the full training loop; returns the final state.

    Writes losses.csv plus ckpt_best.bin / ckpt_last.bin under out_dir.
    NL_FROZEN loads the generator from `pretrained` and trains only the
    representation encoder.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    vocab_size = len(train_sets[0].vocab)
    model_cfg = cfg.model_config(vocab_size)
    params, enc, dec = build_models(model_cfg, seed=cfg.seed,
                                    unconditional=cfg.unconditional)

    if cfg.regime in ("NL_FROZEN", "NL_SYN_MIX"):
        if pretrained is None:
            raise ValueError(f"regime {cfg.regime} needs a pretrained checkpoint")
        entries = nn.load_checkpoint(pretrained)
        params.load_state(entries, prefix="gen/")
    if cfg.regime == "NL_FROZEN":
        params.set_trainable("gen/", False)

    state = TrainState(params=params, model_cfg=model_cfg, seed=cfg.seed,
                       unconditional=cfg.unconditional)
    csv_path = out / "losses.csv"
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "lr", "train_elbo", "val_elbo", "recon", "kl"])

    running: list[float] = []
    for step in range(cfg.max_steps):
        lr = lr_schedule(step, cfg)
        rng = step_rng(cfg.seed, 0, step)
        gen = step_torch_gen(cfg.seed, 0, step)
        batch = make_batch(train_sets, rng, cfg)
        try:
            res = _forward_loss(enc, dec, batch, cfg, training=True, gen=gen)
            params.zero_grad()
            res.loss.backward()
        except TrainingDivergedError:
            state.step = step
            state.save(out / "ckpt_diverged.bin")
            raise
        nn.clip_global_norm(params.parameters(), cfg.grad_clip)
        for p in params.parameters():
            if p.trainable and p.data.grad is not None:
                nn.adam_update(p, p.data.grad, lr)
        running.append(float(res.loss))
        state.step = step + 1

        if (step + 1) % cfg.eval_every == 0 or step + 1 == cfg.max_steps:
            metrics = evaluate(enc, dec, val_set, cfg)
            train_elbo = float(np.mean(running)) if running else float("nan")
            running.clear()
            with open(csv_path, "a", newline="") as fh:
                csv.writer(fh).writerow(
                    [step + 1, f"{lr:.8g}", f"{train_elbo:.6f}",
                     f"{metrics['elbo']:.6f}", f"{metrics['recon']:.6f}",
                     f"{metrics['kl']:.6f}"])
            improved = metrics["elbo"] < state.best_val_loss
            if improved:
                state.best_val_loss = metrics["elbo"]
                state.bad_evals = 0
                state.save(out / "ckpt_best.bin")
            else:
                state.bad_evals += 1
            log(f"step {step + 1}: train {train_elbo:.2f} "
                f"val {metrics['elbo']:.2f} (recon {metrics['recon']:.2f}, "
                f"kl {metrics['kl']:.2f}){' *' if improved else ''}")
            if state.bad_evals >= cfg.patience:
                log(f"early stop at step {step + 1}: no improvement in "
                    f"{cfg.patience} evaluations")
                break

    state.save(out / "ckpt_last.bin")
    if not (out / "ckpt_best.bin").exists():
        state.save(out / "ckpt_best.bin")
    return state
