"""Numerical core: tensor ops, layers, optimizer state and checkpoints.

Dense-tensor arithmetic and reverse-mode differentiation are delegated to
torch on CPU; everything above that level (layer semantics, parameter
registry, the ADAM update, the checkpoint wire format, gradient checking)
is defined here so the contracts stay explicit and independently testable.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np
import torch

from . import DataFormatError

LAYER_NORM_EPS = 1e-5
SIGMA_FLOOR = 1e-4
NLL_EPS = 1e-6

relu = torch.relu
sigmoid = torch.sigmoid
tanh = torch.tanh


# ---------------------------------------------------------------------------
# parameters and optimizer state
# ---------------------------------------------------------------------------

@dataclass
class Parameter:
    """A trainable tensor with its ADAM moment buffers."""

    name: str
    data: torch.Tensor
    m: torch.Tensor = field(init=False)
    v: torch.Tensor = field(init=False)
    t: int = 0
    trainable: bool = True

    def __post_init__(self):
        self.data.requires_grad_(True)
        self.m = torch.zeros_like(self.data, requires_grad=False)
        self.v = torch.zeros_like(self.data, requires_grad=False)

    @property
    def grad(self) -> torch.Tensor | None:
        return self.data.grad


def fan_in_uniform(shape: Sequence[int], fan_in: int,
                   gen: torch.Generator, dtype=torch.float32) -> torch.Tensor:
    bound = 1.0 / np.sqrt(max(1, fan_in))
    return (torch.rand(tuple(shape), generator=gen, dtype=dtype) * 2.0 - 1.0) * bound


class ParamSet:
    """Ordered name -> Parameter registry shared by the model components."""

    def __init__(self, seed: int = 0, dtype=torch.float32):
        self._params: dict[str, Parameter] = {}
        self.dtype = dtype
        self.gen = torch.Generator().manual_seed(seed)

    def new(self, name: str, shape: Sequence[int], fan_in: int | None = None,
            zeros: bool = False) -> torch.Tensor:
        if name in self._params:
            raise ValueError(f"duplicate parameter {name!r}")
        if zeros:
            data = torch.zeros(tuple(shape), dtype=self.dtype)
        else:
            if fan_in is None:
                fan_in = int(np.prod(shape[:-1])) if len(shape) > 1 else int(shape[0])
            data = fan_in_uniform(shape, fan_in, self.gen, self.dtype)
        self._params[name] = Parameter(name=name, data=data)
        return self._params[name].data

    def __getitem__(self, name: str) -> Parameter:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def names(self) -> list[str]:
        return list(self._params)

    def parameters(self) -> list[Parameter]:
        return list(self._params.values())

    def tensor(self, name: str) -> torch.Tensor:
        return self._params[name].data

    def count(self) -> int:
        return sum(p.data.numel() for p in self._params.values())

    def set_trainable(self, prefix: str, trainable: bool) -> None:
        hit = False
        for p in self._params.values():
            if p.name.startswith(prefix):
                p.trainable = trainable
                p.data.requires_grad_(trainable)
                hit = True
        if not hit:
            raise KeyError(f"no parameters under prefix {prefix!r}")

    def zero_grad(self) -> None:
        for p in self._params.values():
            if p.data.grad is not None:
                p.data.grad = None

    def state_entries(self) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {}
        for p in self._params.values():
            arr = p.data.detach().cpu().numpy().astype(np.float32)
            out[f"param/{p.name}"] = arr
            out[f"adam_m/{p.name}"] = p.m.cpu().numpy().astype(np.float32)
            out[f"adam_v/{p.name}"] = p.v.cpu().numpy().astype(np.float32)
            out[f"adam_t/{p.name}"] = np.asarray([p.t], dtype=np.float32)
        return out

    def load_state(self, entries: dict[str, np.ndarray], prefix: str = "",
                   strict: bool = True) -> list[str]:
        """Load parameters (and moments when present). Returns loaded names."""
        loaded = []
        for p in self._params.values():
            if prefix and not p.name.startswith(prefix):
                continue
            key = f"param/{p.name}"
            if key not in entries:
                if strict:
                    raise KeyError(f"checkpoint missing {key}")
                continue
            arr = entries[key]
            if tuple(arr.shape) != tuple(p.data.shape):
                raise ValueError(f"shape mismatch for {p.name}: "
                                 f"{arr.shape} vs {tuple(p.data.shape)}")
            with torch.no_grad():
                p.data.copy_(torch.from_numpy(arr).to(self.dtype))
            if f"adam_m/{p.name}" in entries:
                p.m = torch.from_numpy(entries[f"adam_m/{p.name}"]).to(self.dtype)
                p.v = torch.from_numpy(entries[f"adam_v/{p.name}"]).to(self.dtype)
                p.t = int(entries[f"adam_t/{p.name}"][0])
            loaded.append(p.name)
        return loaded


def adam_update(param: Parameter, grad: torch.Tensor, lr: float,
                beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
    """One bias-corrected ADAM step, applied in place."""
    if grad.shape != param.data.shape:
        raise ValueError("gradient shape mismatch")
    with torch.no_grad():
        param.t += 1
        param.m.mul_(beta1).add_(grad, alpha=1.0 - beta1)
        param.v.mul_(beta2).addcmul_(grad, grad, value=1.0 - beta2)
        m_hat = param.m / (1.0 - beta1 ** param.t)
        v_hat = param.v / (1.0 - beta2 ** param.t)
        param.data.sub_(lr * m_hat / (v_hat.sqrt() + eps))


def clip_global_norm(params: Iterable[Parameter], max_norm: float) -> float:
    """Scale all gradients so their global L2 norm is at most max_norm."""
    grads = [p.data.grad for p in params if p.data.grad is not None]
    if not grads:
        return 0.0
    total = float(torch.sqrt(sum((g.double() ** 2).sum() for g in grads)))
    if total > max_norm and total > 0.0:
        scale = max_norm / total
        with torch.no_grad():
            for g in grads:
                g.mul_(scale)
    return total


# ---------------------------------------------------------------------------
# layers
# ---------------------------------------------------------------------------

def dense(x: torch.Tensor, w: torch.Tensor, b: torch.Tensor | None = None) -> torch.Tensor:
    """Affine map with weight layout [in, out]."""
    y = x @ w
    return y if b is None else y + b


def conv1d_dilated(x: torch.Tensor, w: torch.Tensor, b: torch.Tensor,
                   dilation: int) -> torch.Tensor:
    """Dilated 1D cross-correlation with zero 'same' padding.

    x: [seq, C_in] or [batch, seq, C_in]; w: [k, C_in, C_out]; output keeps
    the sequence length.
    """
    squeeze = x.dim() == 2
    if squeeze:
        x = x[None]
    k = w.shape[0]
    pad = dilation * (k - 1) // 2
    # torch wants [B, C, L] and kernels [C_out, C_in, k]
    y = torch.nn.functional.conv1d(
        x.permute(0, 2, 1), w.permute(2, 1, 0), bias=b,
        padding=pad, dilation=dilation)
    y = y.permute(0, 2, 1)
    return y[0] if squeeze else y


def layer_norm(x: torch.Tensor, gain: torch.Tensor, bias: torch.Tensor,
               eps: float = LAYER_NORM_EPS) -> torch.Tensor:
    """Normalize the last dimension to zero mean, unit variance, then affine."""
    mean = x.mean(dim=-1, keepdim=True)
    var = ((x - mean) ** 2).mean(dim=-1, keepdim=True)
    return (x - mean) / torch.sqrt(var + eps) * gain + bias


def conv2d(x: torch.Tensor, w: torch.Tensor, b: torch.Tensor | None = None,
           stride: int = 1, padding: int = 0) -> torch.Tensor:
    return torch.nn.functional.conv2d(x, w, bias=b, stride=stride, padding=padding)


def conv_transpose2d(x: torch.Tensor, w: torch.Tensor, b: torch.Tensor | None = None,
                     stride: int = 1, padding: int = 0,
                     output_padding: int = 0) -> torch.Tensor:
    return torch.nn.functional.conv_transpose2d(
        x, w, bias=b, stride=stride, padding=padding, output_padding=output_padding)


def conv_lstm_step(x: torch.Tensor, h: torch.Tensor, c: torch.Tensor,
                   w: torch.Tensor, b: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """One convolutional LSTM step with 5x5 'same' kernels.

    x: [B, C_in, H, W]; h, c: [B, C_h, H, W]; w: [4*C_h, C_in + C_h, 5, 5].
    Gate order along the output channels is (input, forget, candidate,
    output); no forget-gate bias offset is applied.
    """
    ch = h.shape[1]
    gates = conv2d(torch.cat([x, h], dim=1), w, b, padding=w.shape[-1] // 2)
    i, f, g, o = torch.split(gates, ch, dim=1)
    c_new = torch.sigmoid(f) * c + torch.sigmoid(i) * torch.tanh(g)
    h_new = torch.sigmoid(o) * torch.tanh(c_new)
    return h_new, c_new


def dropout(x: torch.Tensor, rate: float, training: bool,
            gen: torch.Generator | None = None) -> torch.Tensor:
    """Inverted-scaling dropout; identity when not training or rate == 0."""
    if not training or rate <= 0.0:
        return x
    keep = 1.0 - rate
    mask = (torch.rand(x.shape, generator=gen, dtype=x.dtype) < keep).to(x.dtype)
    return x * mask / keep


def gaussian_sample(mu: torch.Tensor, sigma: torch.Tensor,
                    gen: torch.Generator | None = None,
                    noise: torch.Tensor | None = None) -> torch.Tensor:
    """Reparameterized sample mu + sigma * xi with xi ~ N(0, 1)."""
    if noise is None:
        noise = torch.randn(mu.shape, generator=gen, dtype=mu.dtype)
    return mu + sigma * noise


def gaussian_logpdf(x: torch.Tensor, mu: torch.Tensor, sigma: torch.Tensor,
                    dim=None) -> torch.Tensor:
    logp = -0.5 * ((x - mu) / sigma) ** 2 - torch.log(sigma) \
        - 0.5 * float(np.log(2.0 * np.pi))
    return logp.sum() if dim is None else logp.sum(dim=dim)


def kl_diag_gaussian(mu_q: torch.Tensor, sigma_q: torch.Tensor,
                     mu_p: torch.Tensor, sigma_p: torch.Tensor,
                     dim=None) -> torch.Tensor:
    """KL(Q || P) for diagonal Gaussians, summed over dim (all dims if None)."""
    if bool((sigma_q <= 0).any()) or bool((sigma_p <= 0).any()):
        raise ValueError("sigma must be positive")
    term = (torch.log(sigma_p / sigma_q)
            + (sigma_q ** 2 + (mu_q - mu_p) ** 2) / (2.0 * sigma_p ** 2) - 0.5)
    return term.sum() if dim is None else term.sum(dim=dim)


def bernoulli_nll(x: torch.Tensor, p: torch.Tensor, dim=None) -> torch.Tensor:
    """Negative Bernoulli log likelihood, summed over dim (all dims if None).

    Probabilities are clamped away from {0, 1} before the logs.
    """
    p = torch.clamp(p, NLL_EPS, 1.0 - NLL_EPS)
    nll = -(x * torch.log(p) + (1.0 - x) * torch.log(1.0 - p))
    return nll.sum() if dim is None else nll.sum(dim=dim)


def softplus_sigma(raw: torch.Tensor) -> torch.Tensor:
    return torch.nn.functional.softplus(raw) + SIGMA_FLOOR


# ---------------------------------------------------------------------------
# checkpoint wire format: little-endian framed binary
#   magic "TNSC" | version u32 | count u32
#   entry: name_len u32 | name utf-8 | rank u32 | dims u32 * rank | f32 data
# ---------------------------------------------------------------------------

CHECKPOINT_MAGIC = b"TNSC"
CHECKPOINT_VERSION = 1


def save_checkpoint(path: str | Path, entries: dict[str, np.ndarray]) -> None:
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(entries)))
        for name in sorted(entries):
            arr = np.ascontiguousarray(entries[name], dtype="<f4")
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<I", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.tobytes())


def load_checkpoint(path: str | Path) -> dict[str, np.ndarray]:
    path = Path(path)
    blob = path.read_bytes()
    if blob[:4] != CHECKPOINT_MAGIC:
        raise DataFormatError(f"{path}: bad checkpoint magic at byte offset 0")
    version, count = struct.unpack_from("<II", blob, 4)
    if version != CHECKPOINT_VERSION:
        raise DataFormatError(f"{path}: unsupported checkpoint version {version}")
    off = 12
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<I", blob, off)
        off += 4
        name = blob[off:off + name_len].decode("utf-8")
        off += name_len
        (rank,) = struct.unpack_from("<I", blob, off)
        off += 4
        dims = struct.unpack_from(f"<{rank}I", blob, off)
        off += 4 * rank
        n = int(np.prod(dims)) if rank else 1
        arr = np.frombuffer(blob, dtype="<f4", count=n, offset=off).reshape(dims)
        off += 4 * n
        out[name] = arr.copy()
    if off != len(blob):
        raise DataFormatError(f"{path}: {len(blob) - off} trailing bytes")
    return out


# ---------------------------------------------------------------------------
# gradient checking
# ---------------------------------------------------------------------------

def gradient_check(f: Callable[[], torch.Tensor], wrt: Sequence[torch.Tensor],
                   eps: float = 1e-5, n_probe: int = 8,
                   rng: np.random.Generator | None = None) -> float:
    """Max relative error between autograd and central finite differences.

    f must be a deterministic closure over the tensors in wrt (float64
    recommended). Probes up to n_probe random coordinates per tensor.
    """
    rng = rng or np.random.default_rng(0)
    for t in wrt:
        t.requires_grad_(True)
        t.grad = None
    loss = f()
    loss.backward()
    worst = 0.0
    for t in wrt:
        grad = t.grad.detach().clone() if t.grad is not None \
            else torch.zeros_like(t)
        flat = t.detach().reshape(-1)
        idxs = rng.choice(flat.numel(), size=min(n_probe, flat.numel()),
                          replace=False)
        for i in idxs:
            orig = float(flat[i])
            with torch.no_grad():
                flat[i] = orig + eps
            lp = float(f())
            with torch.no_grad():
                flat[i] = orig - eps
            lm = float(f())
            with torch.no_grad():
                flat[i] = orig
            numeric = (lp - lm) / (2.0 * eps)
            analytic = float(grad.reshape(-1)[i])
            denom = max(abs(numeric), abs(analytic), 1e-6)
            worst = max(worst, abs(numeric - analytic) / denom)
    return worst
