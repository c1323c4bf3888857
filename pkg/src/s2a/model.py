"""Generator/critic networks and the discriminator-derived spatial attention maps.

Tensors are NCHW. Both networks share one backbone: a two-convolution encoder,
K residual dense blocks each followed by Laplacian channel attention, a
two-convolution decoder and a global 1x1 skip from the network input.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import EmptyTaps, ShapeMismatch, UnknownConditioningMode

CONDITIONING_MODES = ("concat", "multiply")
ATTENTION_VARIANTS = ("v1", "v2", "v3")


@dataclass(frozen=True)
class NetConfig:
    K: int = 6
    C: int = 128
    rdb_layers: int = 4
    rdb_growth: int = 32
    encoder_width: int = 64
    decoder_width: int = 64
    channel_attention_reduction: int = 16
    dilations: tuple[int, ...] = (3, 5, 7)
    leaky_relu_slope: float = 0.2
    mlp_hidden: int = 64
    init: str = "default"
    init_std: float = 0.02

    def __post_init__(self):
        object.__setattr__(self, "dilations", tuple(int(d) for d in self.dilations))
        if self.K < 1:
            raise ValueError("K must be >= 1")
        if self.C % self.channel_attention_reduction:
            raise ValueError("C must be divisible by channel_attention_reduction")
        if any(b <= a for a, b in zip(self.dilations, self.dilations[1:])):
            raise ValueError("dilations must be strictly increasing")
        if self.init not in ("default", "trunc_normal"):
            raise ValueError(f"unknown init scheme {self.init!r}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["dilations"] = list(self.dilations)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "NetConfig":
        return cls(**{**d, "dilations": tuple(d.get("dilations", (3, 5, 7)))})


def init_weights(module: nn.Module, std: float = 0.02, generator: torch.Generator | None = None) -> None:
    """Truncated normal (+-2 std) weights and zero biases."""
    for m in module.modules():
        if isinstance(m, (nn.Conv2d, nn.Linear)):
            with torch.no_grad():
                w = torch.randn(m.weight.shape, generator=generator)
                # resample outside +-2 std, like nn.init.trunc_normal_ but seedable
                bad = w.abs() > 2
                while bad.any():
                    w[bad] = torch.randn(int(bad.sum()), generator=generator)
                    bad = w.abs() > 2
                m.weight.copy_(w * std)
                if m.bias is not None:
                    m.bias.zero_()


class ResidualDenseBlock(nn.Module):
    def __init__(self, channels: int, layers: int = 4, growth: int = 32):
        super().__init__()
        self.channels = channels
        self.convs = nn.ModuleList(
            nn.Conv2d(channels + i * growth, growth, 3, padding=1) for i in range(layers)
        )
        self.fusion = nn.Conv2d(channels + layers * growth, channels, 1)

    def forward(self, x):
        if x.shape[1] != self.channels:
            raise ShapeMismatch(f"RDB expects {self.channels} channels, got {x.shape[1]}")
        feats = [x]
        for conv in self.convs:
            feats.append(F.relu(conv(torch.cat(feats, dim=1))))
        return x + self.fusion(torch.cat(feats, dim=1))


class LaplacianChannelAttention(nn.Module):
    """Per-channel gates from a pooled descriptor through a dilated pyramid.

    On the 1x1 pooled map each dilated 3x3 convolution uses padding equal to
    its dilation, so only the centre tap touches data.
    """

    def __init__(self, channels: int, reduction: int = 16, dilations=(3, 5, 7)):
        super().__init__()
        if channels % reduction:
            raise ShapeMismatch(f"{channels} channels not divisible by {reduction}")
        self.channels = channels
        reduced = channels // reduction
        self.pyramid = nn.ModuleList(
            nn.Conv2d(channels, reduced, 3, padding=d, dilation=d) for d in dilations
        )
        self.merge = nn.Conv2d(reduced * len(dilations), channels, 3, padding=1)

    def coefficients(self, x):
        if x.shape[1] != self.channels:
            raise ShapeMismatch(f"channel attention expects {self.channels} channels, got {x.shape[1]}")
        pooled = x.mean(dim=(2, 3), keepdim=True)
        levels = [F.relu(conv(pooled)) for conv in self.pyramid]
        return torch.sigmoid(self.merge(torch.cat(levels, dim=1)))

    def forward(self, x):
        return x * self.coefficients(x)


class Backbone(nn.Module):
    def __init__(self, in_channels: int, out_channels: int, cfg: NetConfig):
        super().__init__()
        self.in_channels = in_channels
        self.enc1 = nn.Conv2d(in_channels, cfg.encoder_width, 3, padding=1)
        self.enc2 = nn.Conv2d(cfg.encoder_width, cfg.C, 3, padding=1)
        self.blocks = nn.ModuleList(
            ResidualDenseBlock(cfg.C, cfg.rdb_layers, cfg.rdb_growth) for _ in range(cfg.K)
        )
        self.attention = nn.ModuleList(
            LaplacianChannelAttention(cfg.C, cfg.channel_attention_reduction, cfg.dilations)
            for _ in range(cfg.K)
        )
        self.dec1 = nn.Conv2d(cfg.C, cfg.decoder_width, 3, padding=1)
        self.dec2 = nn.Conv2d(cfg.decoder_width, out_channels, 3, padding=1)
        self.skip = nn.Conv2d(in_channels, out_channels, 1)

    def forward(self, x):
        """Return the output volume and the taps (encoder, each block, decoder)."""
        if x.ndim != 4 or x.shape[1] != self.in_channels:
            raise ShapeMismatch(f"expected (B, {self.in_channels}, M, N), got {tuple(x.shape)}")
        taps = []
        h = self.enc2(F.relu(self.enc1(x)))
        taps.append(h)
        for block, ca in zip(self.blocks, self.attention):
            h = ca(block(h))
            taps.append(h)
        out = self.dec2(F.relu(self.dec1(h))) + self.skip(x)
        taps.append(out)
        return out, taps


class Generator(nn.Module):
    def __init__(self, cfg: NetConfig = NetConfig(), conditioning: str = "concat"):
        super().__init__()
        if conditioning not in CONDITIONING_MODES:
            raise UnknownConditioningMode(conditioning)
        self.cfg = cfg
        self.conditioning = conditioning
        self.backbone = Backbone(4 if conditioning == "concat" else 3, 1, cfg)

    def forward(self, z, a_s):
        """``z``: (B, 3, M, N); ``a_s``: (B, M, N) or (B, 1, M, N)."""
        if a_s.ndim == 3:
            a_s = a_s.unsqueeze(1)
        if z.ndim != 4 or z.shape[1] != 3 or a_s.shape[-2:] != z.shape[-2:] or a_s.shape[0] != z.shape[0]:
            raise ShapeMismatch(f"z {tuple(z.shape)} and attention {tuple(a_s.shape)} do not align")
        if self.conditioning == "concat":
            inp = torch.cat([z, a_s], dim=1)
        else:
            inp = z * a_s
        out, _ = self.backbone(inp)
        return out


class Discriminator(nn.Module):
    """Wasserstein critic with activation taps for spatial attention."""

    def __init__(self, cfg: NetConfig = NetConfig()):
        super().__init__()
        self.cfg = cfg
        self.backbone = Backbone(1, cfg.decoder_width, cfg)
        slope = cfg.leaky_relu_slope
        self.mlp = nn.Sequential(
            nn.Linear(cfg.decoder_width, cfg.mlp_hidden),
            nn.LeakyReLU(slope),
            nn.Linear(cfg.mlp_hidden, cfg.mlp_hidden),
            nn.LeakyReLU(slope),
            nn.Linear(cfg.mlp_hidden, 1),
        )

    def forward(self, x):
        """Return ``(scores (B,), taps)``."""
        if x.ndim == 3:
            x = x.unsqueeze(1)
        out, taps = self.backbone(x)
        score = self.mlp(out.mean(dim=(2, 3))).squeeze(1)
        return score, taps

    def score(self, x):
        return self.forward(x)[0]


def build_networks(cfg: NetConfig, conditioning: str = "concat", seed: int = 0):
    """Seeded generator/critic pair; the global torch RNG is left untouched."""
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        gen = Generator(cfg, conditioning)
        disc = Discriminator(cfg)
    if cfg.init == "trunc_normal":
        rng = torch.Generator().manual_seed(seed)
        init_weights(gen, cfg.init_std, rng)
        init_weights(disc, cfg.init_std, rng)
    return gen, disc


# --- spatial attention ---------------------------------------------------------

def normalize_unit(v: torch.Tensor) -> torch.Tensor:
    """Min-max normalize each (M, N) plane of a (B, M, N) tensor; constant planes -> 0."""
    lo = v.amin(dim=(-2, -1), keepdim=True)
    hi = v.amax(dim=(-2, -1), keepdim=True)
    span = hi - lo
    ok = span > 0
    safe = torch.where(ok, span, torch.ones_like(span))
    return torch.where(ok, (v - lo) / safe, torch.zeros_like(v))


def _channel_sums(taps):
    if not taps:
        raise EmptyTaps("spatial attention needs at least one tap")
    sizes = {tuple(t.shape[-2:]) for t in taps}
    if len(sizes) != 1:
        raise ShapeMismatch(f"taps disagree on spatial size: {sizes}")
    return [t.abs().sum(dim=1) for t in taps]


def spatial_attention_v1(taps) -> torch.Tensor:
    return torch.sigmoid(sum(_channel_sums(taps)))


def spatial_attention_v2(taps) -> torch.Tensor:
    return torch.sigmoid(sum(torch.sigmoid(s) for s in _channel_sums(taps)))


def spatial_attention_v3(taps) -> torch.Tensor:
    return normalize_unit(sum(normalize_unit(s) for s in _channel_sums(taps)))


ATTENTION_FUNCS = {
    "v1": spatial_attention_v1,
    "v2": spatial_attention_v2,
    "v3": spatial_attention_v3,
}


def spatial_attention(taps, variant: str = "v3") -> torch.Tensor:
    try:
        fn = ATTENTION_FUNCS[variant]
    except KeyError:
        raise ValueError(f"unknown attention variant {variant!r}") from None
    return fn(taps)


def attention_map(disc: Discriminator, x: torch.Tensor, variant: str = "v3") -> torch.Tensor:
    """A_s(x) from the critic's activation taps, shape (B, M, N)."""
    _, taps = disc(x)
    return spatial_attention(taps, variant)
