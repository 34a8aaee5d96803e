"""Encoders and the three heads used for pretraining, contrastive and segmentation."""
from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

FAMILIES = ("small_cnn", "resnet18", "resnet50", "resnet152")
HEADS = ("score_head", "projection_head", "segmentation_head")


@dataclass(frozen=True)
class EncoderSpec:
    family: str = "small_cnn"
    embedding_dim: int = 128
    dropout_between_blocks: float | None = None

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown encoder family {self.family!r}; expected one of {FAMILIES}")
        if int(self.embedding_dim) < 1:
            raise ValueError("embedding_dim must be >= 1")
        p = self.dropout_between_blocks
        if p is not None and not 0.0 < p < 1.0:
            raise ValueError(f"dropout_between_blocks must be in (0, 1), got {p}")


def _conv_block(cin: int, cout: int) -> nn.Sequential:
    return nn.Sequential(
        nn.Conv2d(cin, cout, 3, padding=1, bias=False),
        nn.BatchNorm2d(cout),
        nn.ReLU(inplace=True),
    )


class Encoder(nn.Module):
    """Backbone returning a feature pyramid; ``forward`` pools to an embedding.

    Each call counts the images it processed in ``images_seen`` so training
    loops can assert how many encoder forwards a step performs.
    """

    def __init__(self, spec: EncoderSpec, blocks: nn.ModuleList, channels: list[int]):
        super().__init__()
        self.spec = spec
        self.blocks = blocks
        self.channels = channels
        p = spec.dropout_between_blocks
        self.dropouts = nn.ModuleList(nn.Dropout(p) if p else nn.Identity() for _ in blocks[:-1])
        self.images_seen = 0

    @property
    def has_dropout(self) -> bool:
        return any(isinstance(d, nn.Dropout) for d in self.dropouts)

    @property
    def embedding_dim(self) -> int:
        return self.channels[-1]

    def features(self, x: torch.Tensor) -> list[torch.Tensor]:
        self.images_seen += x.shape[0]
        feats = []
        for i, block in enumerate(self.blocks):
            x = block(x)
            feats.append(x)
            if i < len(self.dropouts):
                x = self.dropouts[i](x)
        return feats

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.features(x)[-1].mean(dim=(2, 3))


def _small_cnn(spec: EncoderSpec) -> Encoder:
    d = int(spec.embedding_dim)
    widths = [max(1, d // 8), max(1, d // 4), max(1, d // 2), d]
    blocks = nn.ModuleList()
    cin = 1
    for i, w in enumerate(widths):
        layers = [_conv_block(cin, w), _conv_block(w, w)]
        if i > 0:
            layers.insert(0, nn.MaxPool2d(2))
        blocks.append(nn.Sequential(*layers))
        cin = w
    return Encoder(spec, blocks, widths)


def _resnet(spec: EncoderSpec) -> Encoder:
    import torchvision

    net = getattr(torchvision.models, spec.family)(weights=None)
    stem = nn.Sequential(nn.Conv2d(1, 64, 7, stride=2, padding=3, bias=False), net.bn1, net.relu, net.maxpool)
    blocks = nn.ModuleList([nn.Sequential(stem, net.layer1), net.layer2, net.layer3, net.layer4])
    widths = [_out_channels(b) for b in blocks]
    if widths[-1] != spec.embedding_dim:
        blocks[-1] = nn.Sequential(blocks[-1], nn.Conv2d(widths[-1], spec.embedding_dim, 1))
        widths[-1] = spec.embedding_dim
    return Encoder(spec, blocks, widths)


def _out_channels(module: nn.Module) -> int:
    convs = [m for m in module.modules() if isinstance(m, nn.Conv2d)]
    bns = [m for m in module.modules() if isinstance(m, nn.BatchNorm2d)]
    return bns[-1].num_features if bns else convs[-1].out_channels


def build_encoder(spec: EncoderSpec) -> Encoder:
    if spec.family == "small_cnn":
        return _small_cnn(spec)
    return _resnet(spec)


class ScoreModel(nn.Module):
    """Encoder plus a linear layer mapping the embedding to one scalar."""

    def __init__(self, encoder: Encoder):
        super().__init__()
        self.encoder = encoder
        self.head = nn.Linear(encoder.embedding_dim, 1)

    def forward(self, x):
        return self.head(self.encoder(x)).squeeze(-1)


class ContrastiveModel(nn.Module):
    def __init__(self, encoder: Encoder, projection_dim: int = 128):
        super().__init__()
        self.encoder = encoder
        d = encoder.embedding_dim
        self.head = nn.Sequential(nn.Linear(d, d), nn.ReLU(inplace=True), nn.Linear(d, projection_dim))

    def forward(self, x):
        return self.head(self.encoder(x))


class _ASPP(nn.Module):
    def __init__(self, cin: int, cout: int, rates=(1, 2, 3)):
        super().__init__()
        self.branches = nn.ModuleList(
            nn.Sequential(nn.Conv2d(cin, cout, 3 if r > 1 else 1, padding=r if r > 1 else 0, dilation=r,
                                    bias=False), nn.BatchNorm2d(cout), nn.ReLU(inplace=True))
            for r in rates)
        self.pool = nn.Sequential(nn.AdaptiveAvgPool2d(1), nn.Conv2d(cin, cout, 1), nn.ReLU(inplace=True))
        self.project = nn.Sequential(nn.Conv2d(cout * (len(rates) + 1), cout, 1, bias=False),
                                     nn.BatchNorm2d(cout), nn.ReLU(inplace=True))

    def forward(self, x):
        outs = [b(x) for b in self.branches]
        outs.append(self.pool(x).expand(-1, -1, x.shape[2], x.shape[3]))
        return self.project(torch.cat(outs, dim=1))


class SegmentationModel(nn.Module):
    """Encoder with either an atrous-pyramid decoder or a U-Net style decoder.

    ``deeplab_like`` fuses the deepest features (through ASPP) with the
    second pyramid level; ``unet_like`` upsamples through every level with
    skip connections.
    """

    def __init__(self, encoder: Encoder, n_classes: int, decoder: str = "deeplab_like"):
        super().__init__()
        if decoder not in ("deeplab_like", "unet_like"):
            raise ValueError(f"unknown segmentation head {decoder!r}")
        self.encoder = encoder
        self.decoder = decoder
        ch = encoder.channels
        if decoder == "deeplab_like":
            mid = max(16, ch[-1] // 2)
            self.aspp = _ASPP(ch[-1], mid)
            self.low = nn.Sequential(nn.Conv2d(ch[1], 16, 1, bias=False), nn.BatchNorm2d(16), nn.ReLU(inplace=True))
            self.fuse = nn.Sequential(_conv_block(mid + 16, mid), nn.Conv2d(mid, n_classes, 1))
        else:
            ups = []
            for deep, skip in zip(ch[:0:-1], ch[-2::-1]):
                ups.append(nn.ModuleDict({"reduce": nn.Conv2d(deep, skip, 1), "conv": _conv_block(2 * skip, skip)}))
            self.ups = nn.ModuleList(ups)
            self.classifier = nn.Conv2d(ch[0], n_classes, 1)

    def forward(self, x):
        size = x.shape[-2:]
        feats = self.encoder.features(x)
        if self.decoder == "deeplab_like":
            deep = self.aspp(feats[-1])
            low = self.low(feats[1])
            deep = F.interpolate(deep, size=low.shape[-2:], mode="bilinear", align_corners=False)
            out = self.fuse(torch.cat([deep, low], dim=1))
        else:
            y = feats[-1]
            for up, skip in zip(self.ups, feats[-2::-1]):
                y = F.interpolate(up["reduce"](y), size=skip.shape[-2:], mode="bilinear", align_corners=False)
                y = up["conv"](torch.cat([y, skip], dim=1))
            out = self.classifier(y)
        return F.interpolate(out, size=size, mode="bilinear", align_corners=False)


def build_model(spec: EncoderSpec, head: str = "score_head", *, n_classes: int = 2,
                segmentation_head: str = "deeplab_like", projection_dim: int = 128) -> nn.Module:
    if head not in HEADS:
        raise ValueError(f"unknown head {head!r}; expected one of {HEADS}")
    encoder = build_encoder(spec)
    if head == "score_head":
        return ScoreModel(encoder)
    if head == "projection_head":
        return ContrastiveModel(encoder, projection_dim)
    return SegmentationModel(encoder, n_classes, segmentation_head)


def enable_inference_dropout(model: nn.Module) -> nn.Module:
    """Evaluation mode everywhere except dropout layers, which keep sampling."""
    model.eval()
    for m in model.modules():
        if isinstance(m, nn.Dropout):
            m.train()
    return model


def to_tensor(images) -> torch.Tensor:
    """Stack 2D uint8/float images (0-255 scale) into an (N, 1, H, W) float tensor in [0, 1]."""
    import numpy as np

    arr = np.stack([np.asarray(im, dtype=np.float32) for im in images])
    return torch.from_numpy(arr / 255.0).unsqueeze(1)
