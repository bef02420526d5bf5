"""Conditional recurrent-canvas image generator.

A 12-iteration variational autoencoder in the DRAW family, attention-free:
an encoder convLSTM reads the target image and the current reconstruction
error and emits a diagonal-Gaussian posterior over a spatial latent; the
decoder convLSTM consumes the latent together with the broadcast
conditioning (scene representation and target camera, passed through a
linear conditioning projection) and additively paints a canvas. The prior
over every iteration's latent is a fixed standard normal; the final canvas
maps through a sigmoid to per-subpixel Bernoulli probabilities.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import torch

from . import TrainingDivergedError, nn
from .config import ModelConfig


@dataclass
class DrawStep:
    z: torch.Tensor
    mu_q: torch.Tensor
    sigma_q: torch.Tensor
    mu_p: torch.Tensor
    sigma_p: torch.Tensor
    canvas: torch.Tensor


@dataclass
class DrawTrace:
    steps: list[DrawStep] = field(default_factory=list)

    @property
    def iterations(self) -> int:
        return len(self.steps)


@dataclass
class ElboResult:
    loss: torch.Tensor        # scalar: mean over batch of (recon + kl)
    recon: torch.Tensor       # scalar
    kl: torch.Tensor          # scalar
    recon_per_example: torch.Tensor
    kl_per_example: torch.Tensor
    probs: torch.Tensor
    trace: DrawTrace


class CanvasDecoder:
    PREFIX = "gen"

    def __init__(self, cfg: ModelConfig, params: nn.ParamSet,
                 unconditional: bool = False):
        self.cfg = cfg
        self.params = params
        self.unconditional = unconditional
        p, c = self.PREFIX, cfg
        k = 5
        params.new(f"{p}/cam/w1", (2, c.camera_dim), fan_in=2)
        params.new(f"{p}/cam/b1", (c.camera_dim,), zeros=True)
        params.new(f"{p}/cam/w2", (c.camera_dim, c.camera_dim), fan_in=c.camera_dim)
        params.new(f"{p}/cam/b2", (c.camera_dim,), zeros=True)
        cond_in = c.view_dim + c.camera_dim
        params.new(f"{p}/cond/w", (cond_in, c.cond_channels), fan_in=cond_in)
        params.new(f"{p}/cond/b", (c.cond_channels,), zeros=True)
        read_in = 2 * c.image_channels
        params.new(f"{p}/read/w", (c.read_channels, read_in, k, k),
                   fan_in=read_in * k * k)
        params.new(f"{p}/read/b", (c.read_channels,), zeros=True)
        enc_in = c.read_channels + c.lstm_channels  # read features + decoder h
        params.new(f"{p}/enc_lstm/w",
                   (4 * c.lstm_channels, enc_in + c.lstm_channels, k, k),
                   fan_in=(enc_in + c.lstm_channels) * k * k)
        params.new(f"{p}/enc_lstm/b", (4 * c.lstm_channels,), zeros=True)
        params.new(f"{p}/post/w", (2 * c.z_channels, c.lstm_channels, 1, 1),
                   fan_in=c.lstm_channels)
        params.new(f"{p}/post/b", (2 * c.z_channels,), zeros=True)
        dec_in = c.z_channels + c.cond_channels
        params.new(f"{p}/dec_lstm/w",
                   (4 * c.lstm_channels, dec_in + c.lstm_channels, k, k),
                   fan_in=(dec_in + c.lstm_channels) * k * k)
        params.new(f"{p}/dec_lstm/b", (4 * c.lstm_channels,), zeros=True)
        params.new(f"{p}/write/w", (c.lstm_channels, c.image_channels, k, k),
                   fan_in=c.lstm_channels * k * k)
        params.new(f"{p}/write/b", (c.image_channels,), zeros=True)

    def _t(self, name: str) -> torch.Tensor:
        return self.params.tensor(f"{self.PREFIX}/{name}")

    # -- conditioning -------------------------------------------------------

    def embed_camera(self, theta: torch.Tensor) -> torch.Tensor:
        feats = torch.stack([torch.cos(theta), torch.sin(theta)], dim=-1)
        h = nn.relu(nn.dense(feats, self._t("cam/w1"), self._t("cam/b1")))
        return nn.dense(h, self._t("cam/w2"), self._t("cam/b2"))

    def _condition_map(self, r: torch.Tensor | None, theta: torch.Tensor | None,
                       batch: int, dtype) -> torch.Tensor:
        """Broadcast conditioning map [B, cond, S, S].

        The unconditional baseline feeds zeros for both the scene
        representation and the camera features, keeping the architecture
        and parameter count identical.
        """
        c = self.cfg
        if self.unconditional or r is None:
            feats = torch.zeros(batch, c.view_dim + c.camera_dim, dtype=dtype)
        else:
            feats = torch.cat([r, self.embed_camera(theta)], dim=-1)
        cond = nn.dense(feats, self._t("cond/w"), self._t("cond/b"))
        s = c.latent_hw
        return cond[:, :, None, None].expand(batch, c.cond_channels, s, s)

    # -- passes -------------------------------------------------------------

    def _write_delta(self, h_dec: torch.Tensor) -> torch.Tensor:
        c = self.cfg
        k, stride, pad = 5, c.stride, 2
        outpad = c.image_size - ((c.latent_hw - 1) * stride - 2 * pad + k)
        return nn.conv_transpose2d(h_dec, self._t("write/w"), self._t("write/b"),
                                   stride=stride, padding=pad,
                                   output_padding=outpad)

    def posterior_pass(self, x: torch.Tensor, r: torch.Tensor | None,
                       theta: torch.Tensor | None, *,
                       gen: torch.Generator | None = None,
                       noise: list[torch.Tensor] | None = None,
                       match_prior: bool = False) -> tuple[DrawTrace, torch.Tensor]:
        """Encode-decode pass; returns the trace and the probability map.

        x: target images [B, C, H, W] in [0, 1]. `noise` fixes the latent
        noise per iteration (tests); `match_prior` forces the posterior to
        the prior so every KL term vanishes (test hook).
        """
        c = self.cfg
        b = x.shape[0]
        dtype = x.dtype
        s = c.latent_hw
        cond = self._condition_map(r, theta, b, dtype)
        canvas = torch.zeros_like(x)
        h_e = torch.zeros(b, c.lstm_channels, s, s, dtype=dtype)
        c_e = torch.zeros_like(h_e)
        h_d = torch.zeros_like(h_e)
        c_d = torch.zeros_like(h_e)
        trace = DrawTrace()
        for k in range(c.draw_iters):
            err = x - torch.sigmoid(canvas)
            rfeat = nn.relu(nn.conv2d(torch.cat([x, err], dim=1),
                                      self._t("read/w"), self._t("read/b"),
                                      stride=c.stride, padding=2))
            h_e, c_e = nn.conv_lstm_step(torch.cat([rfeat, h_d], dim=1),
                                         h_e, c_e,
                                         self._t("enc_lstm/w"),
                                         self._t("enc_lstm/b"))
            stats = nn.conv2d(h_e, self._t("post/w"), self._t("post/b"))
            mu_q, raw = torch.split(stats, c.z_channels, dim=1)
            sigma_q = nn.softplus_sigma(raw)
            mu_p = torch.zeros_like(mu_q)
            sigma_p = torch.ones_like(sigma_q)
            if match_prior:
                mu_q, sigma_q = mu_p, sigma_p
            xi = noise[k] if noise is not None else None
            z = nn.gaussian_sample(mu_q, sigma_q, gen=gen, noise=xi)
            h_d, c_d = nn.conv_lstm_step(torch.cat([z, cond], dim=1),
                                         h_d, c_d,
                                         self._t("dec_lstm/w"),
                                         self._t("dec_lstm/b"))
            canvas = canvas + self._write_delta(h_d)
            trace.steps.append(DrawStep(z=z, mu_q=mu_q, sigma_q=sigma_q,
                                        mu_p=mu_p, sigma_p=sigma_p,
                                        canvas=canvas))
        if not bool(torch.isfinite(canvas).all()):
            raise TrainingDivergedError("non-finite canvas in posterior pass")
        probs = torch.clamp(torch.sigmoid(canvas), nn.NLL_EPS, 1.0 - nn.NLL_EPS)
        return trace, probs

    def elbo(self, x: torch.Tensor, r: torch.Tensor | None,
             theta: torch.Tensor | None, *,
             gen: torch.Generator | None = None,
             noise: list[torch.Tensor] | None = None,
             match_prior: bool = False) -> ElboResult:
        """Per-example ELBO loss: reconstruction NLL plus the KL sum."""
        trace, probs = self.posterior_pass(x, r, theta, gen=gen, noise=noise,
                                           match_prior=match_prior)
        recon_b = nn.bernoulli_nll(x, probs, dim=(1, 2, 3))
        kl_b = torch.zeros_like(recon_b)
        for step in trace.steps:
            kl_b = kl_b + nn.kl_diag_gaussian(step.mu_q, step.sigma_q,
                                              step.mu_p, step.sigma_p,
                                              dim=(1, 2, 3))
        loss = (recon_b + kl_b).mean()
        if not bool(torch.isfinite(loss)):
            raise TrainingDivergedError("non-finite ELBO")
        return ElboResult(loss=loss, recon=recon_b.mean(), kl=kl_b.mean(),
                          recon_per_example=recon_b, kl_per_example=kl_b,
                          probs=probs, trace=trace)

    def sample(self, r: torch.Tensor | None, theta: torch.Tensor | None,
               batch: int | None = None, *,
               gen: torch.Generator | None = None,
               noise: list[torch.Tensor] | None = None,
               z_override: list[torch.Tensor] | None = None,
               dtype=torch.float32) -> torch.Tensor:
        """Decoder-only rollout with latents from the prior.

        Returns the mean probability map [B, C, H, W] as the sampled image.
        `z_override` replays fixed latents (e.g. from a posterior trace).
        """
        c = self.cfg
        if batch is None:
            batch = r.shape[0] if r is not None else 1
        if r is not None:
            dtype = r.dtype
        cond = self._condition_map(r, theta, batch, dtype)
        s = c.latent_hw
        canvas = torch.zeros(batch, c.image_channels, c.image_size, c.image_size,
                             dtype=dtype)
        h_d = torch.zeros(batch, c.lstm_channels, s, s, dtype=dtype)
        c_d = torch.zeros_like(h_d)
        for k in range(c.draw_iters):
            if z_override is not None:
                z = z_override[k]
            else:
                xi = noise[k] if noise is not None else None
                z = nn.gaussian_sample(torch.zeros(batch, c.z_channels, s, s, dtype=dtype),
                                       torch.ones(batch, c.z_channels, s, s, dtype=dtype),
                                       gen=gen, noise=xi)
            h_d, c_d = nn.conv_lstm_step(torch.cat([z, cond], dim=1), h_d, c_d,
                                         self._t("dec_lstm/w"), self._t("dec_lstm/b"))
            canvas = canvas + self._write_delta(h_d)
        return torch.clamp(torch.sigmoid(canvas), nn.NLL_EPS, 1.0 - nn.NLL_EPS)

    def iwae_nll(self, x: torch.Tensor, r: torch.Tensor | None,
                 theta: torch.Tensor | None, n_samples: int,
                 gen: torch.Generator | None = None) -> torch.Tensor:
        """Importance-weighted NLL estimate (tighter than the ELBO)."""
        log_w = []
        for _ in range(n_samples):
            trace, probs = self.posterior_pass(x, r, theta, gen=gen)
            log_px = -nn.bernoulli_nll(x, probs, dim=(1, 2, 3))
            log_pz = torch.zeros_like(log_px)
            log_qz = torch.zeros_like(log_px)
            for step in trace.steps:
                log_pz = log_pz + nn.gaussian_logpdf(step.z, step.mu_p,
                                                     step.sigma_p, dim=(1, 2, 3))
                log_qz = log_qz + nn.gaussian_logpdf(step.z, step.mu_q,
                                                     step.sigma_q, dim=(1, 2, 3))
            log_w.append(log_px + log_pz - log_qz)
        stacked = torch.stack(log_w, dim=0)  # [S, B]
        iwae = torch.logsumexp(stacked, dim=0) - float(torch.log(torch.tensor(float(n_samples))))
        return (-iwae).mean()
