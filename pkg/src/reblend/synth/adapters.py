"""Reconstruction adapters: produce a lossy re-rendering of a genuine face.

An adapter disentangles a face into an identity latent and a background
latent, then decodes the pair back to an image.  Before decoding, Gaussian
noise may be injected into the background latent so the re-rendering drifts
away from the original everywhere, not just on the face.

Three adapters are provided:
  * ``IdentityAdapter``   splits the flattened raster in half; decode is the
    exact inverse, so reconstruction is perfect absent latent noise.  Useful
    as a null baseline and for fast tests.
  * ``ConvAutoencoderAdapter``  a small convolutional autoencoder trained
    in-repo; its limited latent makes reconstructions carry the low-pass
    "re-rendered" character the detector learns to spot.
  * ``ExternalAdapter``   wraps a TorchScript module with encode/decode
    methods for plugging in an externally trained generator.
"""

from __future__ import annotations

import io
from abc import ABC, abstractmethod
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
from torch import nn

from ..errors import SynthesisError
from ..rng import derive_seed

__all__ = [
    "LatentPair",
    "ReconstructorAdapter",
    "IdentityAdapter",
    "ConvAutoencoderAdapter",
    "ExternalAdapter",
    "ToyAutoencoder",
    "inject_bg_noise",
    "reconstruct",
    "train_toy_autoencoder",
]


@dataclass
class LatentPair:
    """Identity/background latent vectors of one encoded face."""

    id_vec: np.ndarray
    bg_vec: np.ndarray


class ReconstructorAdapter(ABC):
    """Encode a face to latents and decode latents back to an image."""

    name: str = "abstract"

    @abstractmethod
    def encode(self, image: np.ndarray) -> LatentPair: ...

    @abstractmethod
    def decode(self, latents: LatentPair) -> np.ndarray: ...


def _check_face(image: np.ndarray) -> np.ndarray:
    arr = np.asarray(image, dtype=np.float32)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise SynthesisError(f"adapter input must be H x W x 3, got shape {arr.shape}")
    return arr


class IdentityAdapter(ReconstructorAdapter):
    """Lossless round trip: latents are the two halves of the flat raster."""

    name = "identity"

    def __init__(self, image_shape: tuple[int, int, int]):
        self.image_shape = tuple(int(v) for v in image_shape)
        self._half = int(np.prod(self.image_shape)) // 2

    def encode(self, image: np.ndarray) -> LatentPair:
        arr = _check_face(image)
        if arr.shape != self.image_shape:
            raise SynthesisError(
                f"identity adapter built for shape {self.image_shape}, got {arr.shape}"
            )
        flat = arr.reshape(-1)
        return LatentPair(id_vec=flat[: self._half].copy(), bg_vec=flat[self._half :].copy())

    def decode(self, latents: LatentPair) -> np.ndarray:
        flat = np.concatenate([latents.id_vec, latents.bg_vec])
        if flat.size != int(np.prod(self.image_shape)):
            raise SynthesisError(
                f"latent size {flat.size} does not match image shape {self.image_shape}"
            )
        return np.clip(flat.reshape(self.image_shape), 0.0, 1.0).astype(np.float32)


class ToyAutoencoder(nn.Module):
    """Small convolutional autoencoder with a split latent.

    Three stride-2 convolutions encode an S x S face down to S/8, a linear
    layer maps to a ``latent_dim`` vector split into identity/background
    halves, and a mirrored decoder reconstructs through a sigmoid.
    """

    def __init__(self, image_size: int = 64, latent_dim: int = 256):
        super().__init__()
        if image_size % 8 != 0:
            raise SynthesisError(f"autoencoder image_size must be divisible by 8, got {image_size}")
        if latent_dim % 2 != 0:
            raise SynthesisError(f"latent_dim must be even, got {latent_dim}")
        self.image_size = image_size
        self.latent_dim = latent_dim
        self.spatial = image_size // 8
        self.encoder = nn.Sequential(
            nn.Conv2d(3, 16, 3, stride=2, padding=1), nn.SiLU(),
            nn.Conv2d(16, 32, 3, stride=2, padding=1), nn.SiLU(),
            nn.Conv2d(32, 64, 3, stride=2, padding=1), nn.SiLU(),
        )
        self.to_latent = nn.Linear(64 * self.spatial**2, latent_dim)
        self.from_latent = nn.Linear(latent_dim, 64 * self.spatial**2)
        self.decoder = nn.Sequential(
            nn.ConvTranspose2d(64, 32, 4, stride=2, padding=1), nn.SiLU(),
            nn.ConvTranspose2d(32, 16, 4, stride=2, padding=1), nn.SiLU(),
            nn.ConvTranspose2d(16, 3, 4, stride=2, padding=1), nn.Sigmoid(),
        )

    def encode(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        z = self.to_latent(self.encoder(x).flatten(1))
        half = self.latent_dim // 2
        return z[:, :half], z[:, half:]

    def decode(self, id_vec: torch.Tensor, bg_vec: torch.Tensor) -> torch.Tensor:
        z = torch.cat([id_vec, bg_vec], dim=1)
        grid = self.from_latent(z).reshape(-1, 64, self.spatial, self.spatial)
        return self.decoder(grid)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.decode(*self.encode(x))


class ConvAutoencoderAdapter(ReconstructorAdapter):
    name = "toy_autoencoder"

    def __init__(self, module: ToyAutoencoder):
        self.module = module.eval()

    def encode(self, image: np.ndarray) -> LatentPair:
        arr = _check_face(image)
        if arr.shape[0] != self.module.image_size or arr.shape[1] != self.module.image_size:
            raise SynthesisError(
                f"autoencoder adapter expects {self.module.image_size}px faces, got {arr.shape[:2]}"
            )
        with torch.no_grad():
            x = torch.from_numpy(arr).permute(2, 0, 1).unsqueeze(0)
            id_vec, bg_vec = self.module.encode(x)
        return LatentPair(id_vec=id_vec[0].numpy().copy(), bg_vec=bg_vec[0].numpy().copy())

    def decode(self, latents: LatentPair) -> np.ndarray:
        with torch.no_grad():
            id_vec = torch.from_numpy(np.asarray(latents.id_vec, dtype=np.float32)).unsqueeze(0)
            bg_vec = torch.from_numpy(np.asarray(latents.bg_vec, dtype=np.float32)).unsqueeze(0)
            out = self.module.decode(id_vec, bg_vec)[0].permute(1, 2, 0).numpy()
        return np.clip(out, 0.0, 1.0).astype(np.float32)

    def save(self, path: str | Path) -> None:
        torch.save(
            {
                "image_size": self.module.image_size,
                "latent_dim": self.module.latent_dim,
                "state": self.module.state_dict(),
            },
            path,
        )

    @classmethod
    def load(cls, path: str | Path) -> "ConvAutoencoderAdapter":
        try:
            blob = torch.load(path, map_location="cpu", weights_only=True)
        except (OSError, RuntimeError, ValueError) as exc:
            raise SynthesisError(f"toy_autoencoder adapter: cannot load {path}: {exc}") from exc
        module = ToyAutoencoder(int(blob["image_size"]), int(blob["latent_dim"]))
        module.load_state_dict(blob["state"])
        return cls(module)


class ExternalAdapter(ReconstructorAdapter):
    """TorchScript reconstructor with ``encode``/``decode`` methods.

    ``encode`` must map a 1 x 3 x H x W tensor to an (id, bg) tensor pair and
    ``decode`` the pair back to 1 x 3 x H x W.  Any load or shape failure is
    reported as a synthesis error naming this adapter.
    """

    name = "external"

    def __init__(self, path: str | Path):
        path = Path(path)
        if not path.exists():
            raise SynthesisError(f"external adapter: serialized model not found at {path}")
        try:
            self.module = torch.jit.load(str(path), map_location="cpu").eval()
        except (OSError, RuntimeError, ValueError) as exc:
            raise SynthesisError(f"external adapter: cannot load {path}: {exc}") from exc

    def encode(self, image: np.ndarray) -> LatentPair:
        arr = _check_face(image)
        with torch.no_grad():
            x = torch.from_numpy(arr).permute(2, 0, 1).unsqueeze(0)
            try:
                id_vec, bg_vec = self.module.encode(x)
            except RuntimeError as exc:
                raise SynthesisError(f"external adapter: encode failed: {exc}") from exc
        return LatentPair(id_vec=id_vec[0].numpy().copy(), bg_vec=bg_vec[0].numpy().copy())

    def decode(self, latents: LatentPair) -> np.ndarray:
        with torch.no_grad():
            id_vec = torch.from_numpy(np.asarray(latents.id_vec, dtype=np.float32)).unsqueeze(0)
            bg_vec = torch.from_numpy(np.asarray(latents.bg_vec, dtype=np.float32)).unsqueeze(0)
            try:
                out = self.module.decode(id_vec, bg_vec)
            except RuntimeError as exc:
                raise SynthesisError(f"external adapter: decode failed: {exc}") from exc
        return np.clip(out[0].permute(1, 2, 0).numpy(), 0.0, 1.0).astype(np.float32)


def train_toy_autoencoder(
    images: Sequence[np.ndarray] | np.ndarray,
    *,
    image_size: int = 64,
    latent_dim: int = 256,
    epochs: int = 8,
    lr: float = 2e-3,
    batch_size: int = 32,
    seed: int = 0,
) -> ConvAutoencoderAdapter:
    """Fit the toy autoencoder on a stack of faces; fully seed-deterministic."""
    stack = np.stack([_check_face(im) for im in images])
    if stack.shape[1] != image_size or stack.shape[2] != image_size:
        raise SynthesisError(
            f"autoencoder training images must be {image_size}px, got {stack.shape[1:3]}"
        )
    torch.manual_seed(derive_seed(seed, "toy-autoencoder-init"))
    module = ToyAutoencoder(image_size=image_size, latent_dim=latent_dim)
    data = torch.from_numpy(stack).permute(0, 3, 1, 2).contiguous()
    optimizer = torch.optim.Adam(module.parameters(), lr=lr)
    order_rng = np.random.default_rng(derive_seed(seed, "toy-autoencoder-order"))
    module.train()
    for _ in range(epochs):
        order = order_rng.permutation(len(data))
        for start in range(0, len(data), batch_size):
            batch = data[order[start : start + batch_size]]
            optimizer.zero_grad()
            loss = torch.mean((module(batch) - batch) ** 2)
            loss.backward()
            optimizer.step()
    return ConvAutoencoderAdapter(module)


def inject_bg_noise(
    bg_vec: np.ndarray,
    rng: np.random.Generator,
    prob: float = 0.5,
    sigma_range: tuple[float, float] = (0.1, 0.3),
) -> tuple[np.ndarray, dict]:
    """Add zero-mean Gaussian noise to a background latent with probability ``prob``.

    The noise standard deviation is drawn uniformly from ``sigma_range``.
    Returns the (possibly unchanged) vector and a log of what was applied.
    """
    vec = np.asarray(bg_vec, dtype=np.float32)
    lo, hi = float(sigma_range[0]), float(sigma_range[1])
    if lo < 0 or hi < lo:
        raise ValueError(f"sigma_range must satisfy 0 <= lo <= hi, got {sigma_range}")
    if not (0.0 <= prob <= 1.0):
        raise ValueError(f"prob must be a probability, got {prob}")
    if rng.random() >= prob:
        return vec.copy(), {"applied": False, "sigma": None}
    sigma = float(rng.uniform(lo, hi))
    noisy = vec + rng.normal(0.0, sigma, size=vec.shape).astype(np.float32)
    return noisy, {"applied": True, "sigma": sigma}


def reconstruct(
    image: np.ndarray,
    adapter: ReconstructorAdapter,
    rng: np.random.Generator,
    noise_prob: float = 0.5,
    sigma_range: tuple[float, float] = (0.1, 0.3),
) -> tuple[np.ndarray, dict]:
    """Encode, perturb the background latent, and decode one genuine face."""
    arr = _check_face(image)
    latents = adapter.encode(arr)
    bg, noise_log = inject_bg_noise(latents.bg_vec, rng, prob=noise_prob, sigma_range=sigma_range)
    out = adapter.decode(LatentPair(id_vec=latents.id_vec, bg_vec=bg))
    if out.shape != arr.shape:
        raise SynthesisError(
            f"{adapter.name} adapter: decode produced shape {out.shape}, expected {arr.shape}"
        )
    return out, {"adapter": adapter.name, "bg_noise": noise_log}


def adapter_fingerprint(adapter: ReconstructorAdapter) -> str:
    """Short digest identifying the adapter weights (for sample metadata)."""
    if isinstance(adapter, ConvAutoencoderAdapter):
        buf = io.BytesIO()
        for key, tensor in sorted(adapter.module.state_dict().items()):
            buf.write(key.encode())
            buf.write(tensor.numpy().tobytes())
        import hashlib

        return hashlib.sha256(buf.getvalue()).hexdigest()[:16]
    return adapter.name
