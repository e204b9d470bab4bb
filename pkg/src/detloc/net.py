"""Two-stream multi-scale model.

A backbone exposes three feature taps at strides 4/8/16. Each tap feeds
a semantic head (per-pixel manipulation probability) and a noise head
(3-channel residual estimate). The deepest semantic and noise features
are concatenated and gated by the deepest predicted map (spatial
attention); optionally the shallow/middle features are aligned to the
deepest resolution by size-align blocks and concatenated in as well.
A small classifier maps the attended feature to class logits.

Any module with `channels`, `strides`, and a forward returning three
taps can serve as the backbone; register it with `register_backbone`.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from pathlib import Path

import torch
from torch import nn

CHECKPOINT_FORMAT_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    num_classes: int = 2
    head_channels: int = 64
    aggregation: bool = False
    backbone: str = "reference"
    input_size: int = 64
    hidden_units: int = 128

    def __post_init__(self) -> None:
        if self.num_classes not in (2, 5):
            raise ValueError(f"num_classes must be 2 or 5, got {self.num_classes}")
        if self.head_channels < 1 or self.hidden_units < 1:
            raise ValueError("channel counts must be positive")


def _norm(ch: int) -> nn.GroupNorm:
    # Narrow layers get one group so every group still has >1 value even on
    # 1x1 feature maps (deepest tap of a 16px input).
    groups = 4 if ch % 4 == 0 and ch >= 8 else 1
    return nn.GroupNorm(groups, ch)


def _conv_block(in_ch: int, out_ch: int, stride: int) -> nn.Sequential:
    return nn.Sequential(
        nn.Conv2d(in_ch, out_ch, 3, stride=stride, padding=1),
        _norm(out_ch),
        nn.ReLU(inplace=True),
    )


class ReferenceBackbone(nn.Module):
    """Small three-stage CNN with taps at strides 4/8/16."""

    def __init__(self, widths: tuple[int, int, int] = (32, 64, 128)) -> None:
        super().__init__()
        stem_ch = max(widths[0] // 2, 4)
        self.stem = _conv_block(3, stem_ch, stride=2)
        self.stage1 = nn.Sequential(
            _conv_block(stem_ch, widths[0], stride=2),
            _conv_block(widths[0], widths[0], stride=1),
        )
        self.stage2 = nn.Sequential(
            _conv_block(widths[0], widths[1], stride=2),
            _conv_block(widths[1], widths[1], stride=1),
        )
        self.stage3 = nn.Sequential(
            _conv_block(widths[1], widths[2], stride=2),
            _conv_block(widths[2], widths[2], stride=1),
        )
        self.channels = tuple(widths)
        self.strides = (4, 8, 16)

    def forward(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        f1 = self.stage1(self.stem(x))
        f2 = self.stage2(f1)
        f3 = self.stage3(f2)
        return f1, f2, f3


BACKBONES: dict[str, callable] = {
    "reference": lambda: ReferenceBackbone((32, 64, 128)),
    "reference-tiny": lambda: ReferenceBackbone((4, 8, 16)),
}


def register_backbone(name: str, factory) -> None:
    """Register an adapter factory producing (f1, f2, f3) at strides 4/8/16-like taps."""
    BACKBONES[name] = factory


def _sep_conv(in_ch: int, out_ch: int) -> nn.Sequential:
    return nn.Sequential(
        nn.Conv2d(in_ch, in_ch, 3, padding=1, groups=in_ch),
        nn.Conv2d(in_ch, out_ch, 1),
        _norm(out_ch),
        nn.ReLU(inplace=True),
    )


class PredictionHead(nn.Module):
    """Depthwise-separable block emitting a C-channel feature and a map.

    Semantic heads project to one sigmoid channel; noise heads to three
    linear channels.
    """

    def __init__(self, in_ch: int, feat_ch: int, map_ch: int, sigmoid: bool) -> None:
        super().__init__()
        self.body = nn.Sequential(_sep_conv(in_ch, feat_ch), _sep_conv(feat_ch, feat_ch))
        self.project = nn.Conv2d(feat_ch, map_ch, 1)
        self.sigmoid = sigmoid

    def forward(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        feat = self.body(x)
        out = self.project(feat)
        if self.sigmoid:
            out = torch.sigmoid(out)
        return feat, out


class SizeAlignBlock(nn.Module):
    """Reduce a feature map to the deepest tap's resolution (stride-2 conv + pooling)."""

    def __init__(self, ch: int, factor: int) -> None:
        super().__init__()
        if factor < 2 or factor & (factor - 1):
            raise ValueError(f"reduction factor must be a power of two >= 2, got {factor}")
        layers: list[nn.Module] = [nn.Conv2d(ch, ch, 3, stride=2, padding=1), _norm(ch), nn.ReLU(inplace=True)]
        remaining = factor // 2
        while remaining > 1:
            layers.append(nn.AvgPool2d(2))
            remaining //= 2
        self.body = nn.Sequential(*layers)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.body(x)


def attention_fuse(
    sem_feat: torch.Tensor, noise_feat: torch.Tensor, mask: torch.Tensor
) -> torch.Tensor:
    """Channel-concatenate the two features and gate spatially by the mask."""
    if sem_feat.shape[-2:] != noise_feat.shape[-2:] or sem_feat.shape[-2:] != mask.shape[-2:]:
        raise ValueError(
            f"spatial shapes differ: {tuple(sem_feat.shape)}, {tuple(noise_feat.shape)}, "
            f"{tuple(mask.shape)}"
        )
    if mask.ndim == sem_feat.ndim - 1:
        mask = mask.unsqueeze(-3)
    return torch.cat([sem_feat, noise_feat], dim=-3) * mask


class Classifier(nn.Module):
    def __init__(self, in_ch: int, hidden: int, num_classes: int) -> None:
        super().__init__()
        self.pool = nn.AdaptiveAvgPool2d(1)
        self.hidden = nn.Linear(in_ch, hidden)
        self.act = nn.ReLU(inplace=True)
        self.out = nn.Linear(hidden, num_classes)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        pooled = self.pool(x).flatten(1)
        return self.out(self.act(self.hidden(pooled)))


class TwoStreamModel(nn.Module):
    def __init__(self, cfg: ModelConfig) -> None:
        super().__init__()
        if cfg.backbone not in BACKBONES:
            raise ValueError(f"unknown backbone {cfg.backbone!r}")
        self.cfg = cfg
        self.backbone = BACKBONES[cfg.backbone]()
        ch = self.backbone.channels
        c = cfg.head_channels
        self.sem_heads = nn.ModuleList(
            [PredictionHead(ch[i], c, 1, sigmoid=True) for i in range(3)]
        )
        self.noise_heads = nn.ModuleList(
            [PredictionHead(ch[i], c, 3, sigmoid=False) for i in range(3)]
        )
        s = self.backbone.strides
        if cfg.aggregation:
            self.sab_sem = nn.ModuleList(
                [SizeAlignBlock(c, s[2] // s[0]), SizeAlignBlock(c, s[2] // s[1])]
            )
            self.sab_noise = nn.ModuleList(
                [SizeAlignBlock(c, s[2] // s[0]), SizeAlignBlock(c, s[2] // s[1])]
            )
            att_ch = 6 * c
        else:
            self.sab_sem = None
            self.sab_noise = None
            att_ch = 2 * c
        self.classifier = Classifier(att_ch, cfg.hidden_units, cfg.num_classes)

    def noise_parameters(self):
        """Parameters of the noise stream (frozen during training step 1)."""
        for head in self.noise_heads:
            yield from head.parameters()

    def aggregate_features(self, sem_feats, noise_feats, mask3: torch.Tensor) -> torch.Tensor:
        """Align shallow/middle features to the deepest tap and fuse all six."""
        if self.sab_sem is None:
            raise RuntimeError("aggregation mode is disabled for this model")
        parts = [
            self.sab_sem[0](sem_feats[0]),
            self.sab_sem[1](sem_feats[1]),
            sem_feats[2],
            self.sab_noise[0](noise_feats[0]),
            self.sab_noise[1](noise_feats[1]),
            noise_feats[2],
        ]
        ref = parts[2].shape[-2:]
        for p in parts:
            if p.shape[-2:] != ref:
                raise ValueError(
                    f"size-align output {tuple(p.shape[-2:])} does not match deepest tap {tuple(ref)}"
                )
        if mask3.ndim == 3:
            mask3 = mask3.unsqueeze(1)
        return torch.cat(parts, dim=1) * mask3

    def forward(
        self,
        x: torch.Tensor,
        mask3_override: torch.Tensor | None = None,
        return_features: bool = False,
    ):
        stride = self.backbone.strides[-1]
        if x.shape[-1] % stride or x.shape[-2] % stride:
            raise ValueError(
                f"input spatial dims {tuple(x.shape[-2:])} must be divisible by {stride}"
            )
        taps = self.backbone(x)
        sem_feats, seg_maps = [], []
        noise_feats, noise_maps = [], []
        for i in range(3):
            feat, seg = self.sem_heads[i](taps[i])
            sem_feats.append(feat)
            seg_maps.append(seg)
            feat, noise = self.noise_heads[i](taps[i])
            noise_feats.append(feat)
            noise_maps.append(noise)
        mask3 = seg_maps[2] if mask3_override is None else mask3_override
        if self.cfg.aggregation:
            attended = self.aggregate_features(sem_feats, noise_feats, mask3)
        else:
            attended = attention_fuse(sem_feats[2], noise_feats[2], mask3)
        logits = self.classifier(attended)
        if return_features:
            return {
                "taps": taps,
                "sem_feats": sem_feats,
                "noise_feats": noise_feats,
                "seg_maps": seg_maps,
                "noise_maps": noise_maps,
                "attended": attended,
                "logits": logits,
            }
        return seg_maps, noise_maps, logits


def build_model(cfg: ModelConfig) -> TwoStreamModel:
    return TwoStreamModel(cfg)


def fake_score(logits: torch.Tensor) -> torch.Tensor:
    """Decision score in [0, 1]: P(fake) for binary, 1 - P(pristine) for five-class."""
    probs = torch.softmax(logits, dim=-1)
    if logits.shape[-1] == 2:
        return probs[..., 1]
    return 1.0 - probs[..., 0]


def save_checkpoint(
    path: str | Path,
    model: TwoStreamModel,
    epoch: int,
    val_auc: float,
    extra: dict | None = None,
) -> None:
    payload = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "model_config": asdict(model.cfg),
        "state_dict": model.state_dict(),
        "epoch": int(epoch),
        "val_auc": float(val_auc),
        "extra": extra or {},
    }
    torch.save(payload, str(path))


def load_checkpoint(path: str | Path) -> tuple[TwoStreamModel, dict]:
    payload = torch.load(str(path), map_location="cpu", weights_only=False)
    version = payload.get("format_version")
    if version != CHECKPOINT_FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint format version: {version}")
    cfg = ModelConfig(**payload["model_config"])
    model = build_model(cfg)
    model.load_state_dict(payload["state_dict"])
    meta = {k: payload[k] for k in ("epoch", "val_auc", "extra")}
    return model, meta


def export_debug_arrays(model: TwoStreamModel, x: torch.Tensor, out_dir: str | Path) -> None:
    """Dump taps, predicted maps, and noise maps of one batch as raw float arrays."""
    from . import dataio

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    model.eval()
    with torch.no_grad():
        rec = model(x, return_features=True)
    for name, group in (("tap", rec["taps"]), ("seg", rec["seg_maps"]), ("noise", rec["noise_maps"])):
        for i, tensor in enumerate(group, start=1):
            arr = tensor[0].permute(1, 2, 0).numpy()
            dataio.save_float_array(out / f"{name}{i}", arr)
