"""Representation network: (caption, camera angle) pairs -> scene vector.

Captions are encoded by a dilated 1D convolutional encoder with layer
normalization and mean pooling over the sequence; the camera angle by a
small MLP on [cos, sin]. Both are merged through residual MLP blocks into a
per-view embedding, and view embeddings average into the scene
representation, independent of how many views were given.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch

from . import nn
from .config import ModelConfig


@dataclass(frozen=True)
class SceneRepresentation:
    r: torch.Tensor  # [..., view_dim]
    n: int           # number of aggregated views


def aggregate(h: torch.Tensor) -> SceneRepresentation:
    """Arithmetic mean of view embeddings along the view axis [..., n, d]."""
    if h.shape[-2] < 1:
        raise ValueError("aggregate needs at least one view embedding")
    return SceneRepresentation(r=h.mean(dim=-2), n=int(h.shape[-2]))


class RepresentationEncoder:
    PREFIX = "rep"

    def __init__(self, cfg: ModelConfig, params: nn.ParamSet):
        self.cfg = cfg
        self.params = params
        p, c = self.PREFIX, cfg
        params.new(f"{p}/embed", (c.vocab_size, c.text_embed_dim),
                   fan_in=c.text_embed_dim)
        ch = c.text_channels
        for i in range(c.text_layers):
            cin = c.text_embed_dim if i == 0 else ch
            params.new(f"{p}/conv{i}/w", (c.text_kernel, cin, ch),
                       fan_in=c.text_kernel * cin)
            params.new(f"{p}/conv{i}/b", (ch,), zeros=True)
            params.new(f"{p}/conv{i}/ln_g", (ch,), zeros=True)
            with torch.no_grad():
                params.tensor(f"{p}/conv{i}/ln_g").fill_(1.0)
            params.new(f"{p}/conv{i}/ln_b", (ch,), zeros=True)
        params.new(f"{p}/cam/w1", (2, c.camera_dim), fan_in=2)
        params.new(f"{p}/cam/b1", (c.camera_dim,), zeros=True)
        params.new(f"{p}/cam/w2", (c.camera_dim, c.camera_dim), fan_in=c.camera_dim)
        params.new(f"{p}/cam/b2", (c.camera_dim,), zeros=True)
        merged = ch + c.camera_dim
        params.new(f"{p}/merge/w", (merged, c.view_dim), fan_in=merged)
        params.new(f"{p}/merge/b", (c.view_dim,), zeros=True)
        for i in range(c.merge_blocks):
            d = c.view_dim
            params.new(f"{p}/block{i}/ln_g", (d,), zeros=True)
            with torch.no_grad():
                params.tensor(f"{p}/block{i}/ln_g").fill_(1.0)
            params.new(f"{p}/block{i}/ln_b", (d,), zeros=True)
            params.new(f"{p}/block{i}/w1", (d, d), fan_in=d)
            params.new(f"{p}/block{i}/b1", (d,), zeros=True)
            params.new(f"{p}/block{i}/w2", (d, d), fan_in=d)
            params.new(f"{p}/block{i}/b2", (d,), zeros=True)

    def _t(self, name: str) -> torch.Tensor:
        return self.params.tensor(f"{self.PREFIX}/{name}")

    def encode_text(self, tokens: torch.Tensor, *, training: bool = False,
                    dropout_rate: float = 0.0,
                    gen: torch.Generator | None = None) -> torch.Tensor:
        """Token id sequences [B, L] (0-padded) -> text embeddings [B, d]."""
        if tokens.dim() != 2:
            raise ValueError("tokens must be [batch, length]")
        if int(tokens.max()) >= self.cfg.vocab_size or int(tokens.min()) < 0:
            raise ValueError("token id outside vocabulary")
        mask = (tokens != 0)
        if not bool(mask.any(dim=1).all()):
            raise ValueError("empty caption in batch")
        x = self._t("embed")[tokens]  # [B, L, E]
        for i in range(self.cfg.text_layers):
            x = nn.conv1d_dilated(x, self._t(f"conv{i}/w"), self._t(f"conv{i}/b"),
                                  self.cfg.text_dilation)
            x = nn.layer_norm(x, self._t(f"conv{i}/ln_g"), self._t(f"conv{i}/ln_b"))
            x = nn.relu(x)
            x = nn.dropout(x, dropout_rate, training, gen)
        fmask = mask.to(x.dtype)[:, :, None]
        return (x * fmask).sum(dim=1) / fmask.sum(dim=1)

    def embed_camera(self, theta: torch.Tensor) -> torch.Tensor:
        """Angles [B] -> camera embeddings [B, camera_dim]."""
        feats = torch.stack([torch.cos(theta), torch.sin(theta)], dim=-1)
        h = nn.relu(nn.dense(feats, self._t("cam/w1"), self._t("cam/b1")))
        return nn.dense(h, self._t("cam/w2"), self._t("cam/b2"))

    def _merge(self, d_hat: torch.Tensor, c_hat: torch.Tensor) -> torch.Tensor:
        x = nn.dense(torch.cat([d_hat, c_hat], dim=-1),
                     self._t("merge/w"), self._t("merge/b"))
        for i in range(self.cfg.merge_blocks):
            y = nn.layer_norm(x, self._t(f"block{i}/ln_g"), self._t(f"block{i}/ln_b"))
            y = nn.relu(nn.dense(y, self._t(f"block{i}/w1"), self._t(f"block{i}/b1")))
            y = nn.dense(y, self._t(f"block{i}/w2"), self._t(f"block{i}/b2"))
            x = x + y
        return x

    def encode_view(self, tokens: torch.Tensor, theta: torch.Tensor, *,
                    training: bool = False, dropout_rate: float = 0.0,
                    gen: torch.Generator | None = None) -> torch.Tensor:
        """(captions [B, L], angles [B]) -> view embeddings [B, view_dim]."""
        d_hat = self.encode_text(tokens, training=training,
                                 dropout_rate=dropout_rate, gen=gen)
        c_hat = self.embed_camera(theta)
        h = self._merge(d_hat, c_hat)
        return nn.dropout(h, dropout_rate, training, gen)

    def encode_views(self, tokens: torch.Tensor, thetas: torch.Tensor, *,
                     training: bool = False, dropout_rate: float = 0.0,
                     gen: torch.Generator | None = None) -> torch.Tensor:
        """Batched multi-view encoding [B, n, L], [B, n] -> [B, n, view_dim]."""
        b, n, length = tokens.shape
        h = self.encode_view(tokens.reshape(b * n, length),
                             thetas.reshape(b * n), training=training,
                             dropout_rate=dropout_rate, gen=gen)
        return h.reshape(b, n, -1)

    def scene_representation(self, tokens: torch.Tensor, thetas: torch.Tensor,
                             **kw) -> SceneRepresentation:
        return aggregate(self.encode_views(tokens, thetas, **kw))
