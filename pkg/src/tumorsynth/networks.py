"""Small 3-D networks: an encoder-decoder used for both the generator and the
segmentation discriminator, and a patch classifier for real-vs-synthetic.

Desk-scale stand-ins: channel widths and depth are configurable, shapes must
be divisible by 4 (two poolings).
"""

from __future__ import annotations

from pathlib import Path

import torch
import torch.nn as nn


def _block(cin: int, cout: int) -> nn.Sequential:
    return nn.Sequential(
        nn.Conv3d(cin, cout, 3, padding=1),
        nn.BatchNorm3d(cout),
        nn.LeakyReLU(0.1, inplace=True),
        nn.Conv3d(cout, cout, 3, padding=1),
        nn.BatchNorm3d(cout),
        nn.LeakyReLU(0.1, inplace=True),
    )


class UNet3d(nn.Module):
    """Two-pooling encoder-decoder with skip connections, one output channel."""

    def __init__(self, base_channels: int = 8):
        super().__init__()
        b = base_channels
        self.base_channels = b
        self.enc1 = _block(1, b)
        self.enc2 = _block(b, b * 2)
        self.enc3 = _block(b * 2, b * 4)
        self.pool = nn.MaxPool3d(2)
        self.up2 = nn.ConvTranspose3d(b * 4, b * 2, 2, stride=2)
        self.dec2 = _block(b * 4, b * 2)
        self.up1 = nn.ConvTranspose3d(b * 2, b, 2, stride=2)
        self.dec1 = _block(b * 2, b)
        self.head = nn.Conv3d(b, 1, 1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        e1 = self.enc1(x)
        e2 = self.enc2(self.pool(e1))
        e3 = self.enc3(self.pool(e2))
        d2 = self.dec2(torch.cat([self.up2(e3), e2], dim=1))
        d1 = self.dec1(torch.cat([self.up1(d2), e1], dim=1))
        return self.head(d1)


class SegNet(UNet3d):
    """Tumor segmenter: forward gives logits, predict_probs gives [0, 1]."""

    def __init__(self, base_channels: int = 8):
        super().__init__(base_channels)
        # start at the background prior so the rare class drives early updates
        nn.init.constant_(self.head.bias, -3.0)

    @torch.no_grad()
    def predict_probs(self, volume_data) -> torch.Tensor:
        x = torch.as_tensor(volume_data, dtype=torch.float32)
        squeeze = x.ndim == 3
        if squeeze:
            x = x[None, None]
        probs = torch.sigmoid(self.forward(x))
        return probs[0, 0] if squeeze else probs


class GenNet(UNet3d):
    """Synthesis generator: forward gives the raw (pre-tanh) field."""


class ClsNet(nn.Module):
    """Patch classifier: probability that the patch's tumor is real."""

    def __init__(self, base_channels: int = 8):
        super().__init__()
        b = base_channels
        self.base_channels = b
        self.features = nn.Sequential(
            nn.Conv3d(1, b, 3, stride=2, padding=1),
            nn.BatchNorm3d(b),
            nn.LeakyReLU(0.1, inplace=True),
            nn.Conv3d(b, b * 2, 3, stride=2, padding=1),
            nn.BatchNorm3d(b * 2),
            nn.LeakyReLU(0.1, inplace=True),
            nn.Conv3d(b * 2, b * 4, 3, stride=2, padding=1),
            nn.BatchNorm3d(b * 4),
            nn.LeakyReLU(0.1, inplace=True),
        )
        self.head = nn.Linear(b * 4, 1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        f = self.features(x)
        pooled = f.mean(dim=(2, 3, 4))
        return self.head(pooled).squeeze(-1)


_ARCHS = {"SegNet": SegNet, "GenNet": GenNet, "ClsNet": ClsNet}


def save_checkpoint(model: nn.Module, path: str | Path, meta: dict | None = None):
    """Self-describing checkpoint: architecture, width, weights, metadata."""
    payload = {
        "arch": type(model).__name__,
        "base_channels": getattr(model, "base_channels", None),
        "state_dict": model.state_dict(),
        "meta": meta or {},
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(payload, path)


def load_checkpoint(path: str | Path) -> tuple[nn.Module, dict]:
    payload = torch.load(Path(path), map_location="cpu", weights_only=False)
    arch = payload.get("arch")
    if arch not in _ARCHS:
        raise ValueError(f"checkpoint {path} has unknown architecture {arch!r}")
    model = _ARCHS[arch](base_channels=payload["base_channels"])
    model.load_state_dict(payload["state_dict"])
    model.eval()
    return model, payload.get("meta", {})


def state_hash(model: nn.Module) -> str:
    """Order-stable digest of all parameters and buffers (frozen-weight checks)."""
    import hashlib

    h = hashlib.sha256()
    for name, tensor in sorted(model.state_dict().items()):
        h.update(name.encode())
        h.update(tensor.detach().cpu().numpy().tobytes())
    return h.hexdigest()
