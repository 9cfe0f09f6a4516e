"""Inference backends behind a zoo-identifier string.

A model reference is "<scheme>:<name>", optionally "@pretrained" to
request published weights. The default is a deterministic seeded
initialisation (seed derived from the architecture name), which keeps
repeat runs bit-identical and needs no downloads.
"""
from __future__ import annotations

import hashlib
import warnings
from typing import Protocol

import numpy as np

from .errors import ModelLoadFailure


class InferenceBackend(Protocol):
    """A loaded classifier: numpy batches in, numpy logits out."""

    model_ref: str
    head_count: int
    input_size: int

    def logits(self, batch: np.ndarray) -> np.ndarray: ...


def _arch_seed(arch: str) -> int:
    digest = hashlib.blake2s(arch.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little") % (2**31)


class TorchvisionBackend:
    input_size = 224

    def __init__(self, model_ref: str, arch: str, pretrained: bool,
                 device: str) -> None:
        try:
            import torch
            from torchvision import models
        except ImportError as exc:
            raise ModelLoadFailure(
                f"torchvision backend needs torch installed: {exc}"
            ) from exc
        factory = getattr(models, arch, None)
        if factory is None or not callable(factory):
            raise ModelLoadFailure(f"unknown torchvision model {arch!r}")
        self._torch = torch
        self.model_ref = model_ref
        try:
            if pretrained:
                model = factory(weights="DEFAULT")
            else:
                torch.manual_seed(_arch_seed(arch))
                model = factory(weights=None)
        except Exception as exc:
            raise ModelLoadFailure(f"cannot load {model_ref!r}: {exc}") from exc
        if device != "cpu" and not torch.cuda.is_available():
            warnings.warn(f"device {device!r} unavailable, using cpu")
            device = "cpu"
        self._device = device
        self._model = model.to(device).eval()
        probe = torch.zeros(1, 3, self.input_size, self.input_size,
                            device=device)
        with torch.no_grad():
            out = self._model(probe)
        if out.ndim != 2:
            raise ModelLoadFailure(
                f"{model_ref!r} is not a flat classifier "
                f"(output shape {tuple(out.shape)})"
            )
        self.head_count = int(out.shape[1])

    def logits(self, batch: np.ndarray) -> np.ndarray:
        tensor = self._torch.from_numpy(np.ascontiguousarray(batch)).to(
            self._device
        )
        with self._torch.no_grad():
            out = self._model(tensor)
        return out.cpu().numpy().astype(np.float64)


_SCHEMES = {"torchvision": TorchvisionBackend}


def load_backend(model_ref: str, device: str = "cpu") -> InferenceBackend:
    scheme, sep, rest = model_ref.partition(":")
    if not sep or not rest:
        raise ModelLoadFailure(
            f"model reference {model_ref!r} is not '<scheme>:<name>'"
        )
    arch, _, variant = rest.partition("@")
    if variant not in ("", "pretrained"):
        raise ModelLoadFailure(f"unknown model variant {variant!r}")
    backend_cls = _SCHEMES.get(scheme)
    if backend_cls is None:
        raise ModelLoadFailure(f"unknown model scheme {scheme!r}")
    return backend_cls(model_ref, arch, variant == "pretrained", device)
