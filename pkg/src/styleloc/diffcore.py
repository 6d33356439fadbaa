"""Tensor plumbing shared by every network and loss.

Tensors are ``torch.Tensor`` objects in double precision.  Reverse-mode
differentiation is torch autograd; this module adds the pieces the pipeline
relies on beyond it: a scalar-only ``backward``, a finite-difference
gradient checker, window (cell) softmax, clamped bilinear sampling,
parameter freezing/checksums and the checkpoint container.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Callable, Iterable, Mapping

import numpy as np
import torch
import torch.nn.functional as F

DTYPE = torch.float64

CHECKPOINT_MAGIC = b"STYLELOC-CKPT"
CHECKPOINT_VERSION = 1


class ContractError(ValueError):
    """A caller violated an operation's preconditions."""


class GradCheckError(RuntimeError):
    """Finite differencing produced a non-finite value."""

    def __init__(self, index: int, message: str):
        super().__init__(f"coordinate {index}: {message}")
        self.index = index


class CheckpointError(IOError):
    pass


def tensor(values, requires_grad: bool = False) -> torch.Tensor:
    """Double-precision tensor from array-like ``values``."""
    t = torch.as_tensor(np.asarray(values, dtype=np.float64), dtype=DTYPE).clone()
    t.requires_grad_(requires_grad)
    return t


def backward(output: torch.Tensor) -> None:
    """Backpropagate from a scalar output; grads accumulate on leaves."""
    if output.numel() != 1:
        raise ContractError(f"backward needs a scalar output, got shape {tuple(output.shape)}")
    if not output.requires_grad:
        raise ContractError("output is not connected to any requires_grad leaf")
    output.reshape(()).backward()


def zero_grad(params: Iterable[torch.Tensor]) -> None:
    for p in params:
        p.grad = None


def grad_check(f: Callable[[torch.Tensor], torch.Tensor], x: torch.Tensor, eps: float = 1e-6) -> float:
    """Max relative error between autograd and central differences.

    The error per coordinate is ``|analytic - numeric| / max(1, |numeric|)``.
    """
    x0 = x.detach().to(DTYPE).clone()
    leaf = x0.clone().requires_grad_(True)
    out = f(leaf)
    if out.numel() != 1:
        raise ContractError("grad_check needs a scalar-valued function")
    if out.requires_grad:
        (analytic,) = torch.autograd.grad(out.reshape(()), leaf, allow_unused=True)
        if analytic is None:
            analytic = torch.zeros_like(x0)
    else:
        analytic = torch.zeros_like(x0)
    analytic = analytic.reshape(-1)

    flat = x0.reshape(-1)
    worst = 0.0
    with torch.no_grad():
        for i in range(flat.numel()):
            orig = flat[i].item()
            flat[i] = orig + eps
            fp = float(f(x0))
            flat[i] = orig - eps
            fm = float(f(x0))
            flat[i] = orig
            if not (np.isfinite(fp) and np.isfinite(fm)):
                raise GradCheckError(i, f"non-finite value f(x±eps) = ({fp}, {fm})")
            numeric = (fp - fm) / (2.0 * eps)
            err = abs(analytic[i].item() - numeric) / max(1.0, abs(numeric))
            worst = max(worst, err)
    return worst


def window_softmax(logits: torch.Tensor, cell: int) -> torch.Tensor:
    """Softmax over each non-overlapping ``cell`` x ``cell`` window of the last two axes."""
    *lead, h, w = logits.shape
    if h % cell or w % cell:
        raise ContractError(f"spatial extent {h}x{w} not divisible by cell {cell}")
    gh, gw = h // cell, w // cell
    x = logits.reshape(*lead, gh, cell, gw, cell)
    x = x.movedim(-3, -2).reshape(*lead, gh, gw, cell * cell)
    x = torch.softmax(x, dim=-1)
    x = x.reshape(*lead, gh, gw, cell, cell).movedim(-2, -3)
    return x.reshape(*lead, h, w)


def upsample_nearest(x: torch.Tensor, factor: int) -> torch.Tensor:
    if factor == 1:
        return x
    return F.interpolate(x, scale_factor=factor, mode="nearest")


def bilinear_sample(fmap: torch.Tensor, coords: torch.Tensor) -> torch.Tensor:
    """Sample a ``C x H x W`` (or ``H x W``) map at fractional ``(u, v)`` pixel coords.

    Pixel centres sit at integer coordinates.  Coordinates are clamped to
    ``[0, W-1] x [0, H-1]``; the clamp passes zero gradient outside.
    Returns ``N x C`` (or ``N`` for a 2-D map).
    """
    squeeze = fmap.dim() == 2
    if squeeze:
        fmap = fmap.unsqueeze(0)
    c, h, w = fmap.shape
    if h < 2 or w < 2:
        raise ContractError("bilinear sampling needs a map of at least 2x2")
    u = coords[:, 0].clamp(0.0, w - 1.0)
    v = coords[:, 1].clamp(0.0, h - 1.0)
    u0 = torch.floor(u).detach().clamp(max=w - 2)
    v0 = torch.floor(v).detach().clamp(max=h - 2)
    fu = u - u0
    fv = v - v0
    iu = u0.long()
    iv = v0.long()
    flat = fmap.reshape(c, h * w)
    i00 = iv * w + iu
    # one gather for all four corners keeps the backward to a single scatter
    f00, f01, f10, f11 = flat[:, torch.cat([i00, i00 + 1, i00 + w, i00 + w + 1])].reshape(c, 4, -1).unbind(1)
    out = (f00 * (1 - fu) * (1 - fv) + f01 * fu * (1 - fv)
           + f10 * (1 - fu) * fv + f11 * fu * fv)
    out = out.t()
    return out[:, 0] if squeeze else out


def freeze(module: torch.nn.Module) -> torch.nn.Module:
    for p in module.parameters():
        p.requires_grad_(False)
    return module


def param_checksum(module_or_params) -> str:
    """SHA-256 over parameter names, shapes and bytes."""
    if isinstance(module_or_params, torch.nn.Module):
        items = sorted(module_or_params.state_dict().items())
    else:
        items = sorted(module_or_params.items())
    h = hashlib.sha256()
    for name, t in items:
        h.update(name.encode())
        h.update(str(tuple(t.shape)).encode())
        h.update(t.detach().cpu().contiguous().numpy().astype("<f8").tobytes())
    return h.hexdigest()


# --- checkpoint container -------------------------------------------------
#
# Layout:
#   line 1:  b"STYLELOC-CKPT <version>\n"
#   line 2:  UTF-8 JSON header + b"\n":
#            {"meta": {...}, "tensors": [{"name": str, "shape": [int, ...]}, ...]}
#   payload: each tensor, in header order, row-major little-endian float64.


def save_checkpoint(path, tensors: Mapping[str, torch.Tensor], meta: dict | None = None) -> Path:
    path = Path(path)
    names = sorted(tensors)
    header = {
        "meta": meta or {},
        "tensors": [{"name": n, "shape": list(tensors[n].shape)} for n in names],
    }
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC + b" " + str(CHECKPOINT_VERSION).encode() + b"\n")
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
        for n in names:
            arr = tensors[n].detach().cpu().contiguous().numpy().astype("<f8")
            fh.write(arr.tobytes(order="C"))
    tmp.replace(path)
    return path


def load_checkpoint(path) -> tuple[dict[str, torch.Tensor], dict]:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    first, _, rest = data.partition(b"\n")
    magic, _, version = first.partition(b" ")
    if magic != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    if version.strip() != str(CHECKPOINT_VERSION).encode():
        raise CheckpointError(f"{path}: unsupported checkpoint version {version!r}")
    header_raw, _, payload = rest.partition(b"\n")
    try:
        header = json.loads(header_raw.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt header: {exc}") from exc
    out: dict[str, torch.Tensor] = {}
    offset = 0
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        nbytes = 8 * count
        if offset + nbytes > len(payload):
            raise CheckpointError(f"{path}: truncated payload at tensor {entry['name']}")
        arr = np.frombuffer(payload, dtype="<f8", count=count, offset=offset).reshape(shape)
        out[entry["name"]] = torch.from_numpy(arr.astype(np.float64))
        offset += nbytes
    if offset != len(payload):
        raise CheckpointError(f"{path}: {len(payload) - offset} trailing bytes")
    return out, header["meta"]


def namespaced(prefix: str, module: torch.nn.Module) -> dict[str, torch.Tensor]:
    return {f"{prefix}.{k}": v for k, v in module.state_dict().items()}


def load_namespace(module: torch.nn.Module, prefix: str, tensors: Mapping[str, torch.Tensor]) -> None:
    sub = {k[len(prefix) + 1:]: v for k, v in tensors.items() if k.startswith(prefix + ".")}
    if not sub:
        raise CheckpointError(f"checkpoint has no '{prefix}.' parameters")
    try:
        module.load_state_dict(sub, strict=True)
    except RuntimeError as exc:
        raise CheckpointError(f"'{prefix}.' parameters do not fit the network: {exc}") from exc
