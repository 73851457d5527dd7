"""U-shaped segmentation network with graph-convolution stages.

The encoder runs ``num_conv_stages`` plain convolution stages, adds a
learnable position embedding, then ``num_topo_stages`` graph stages (pooled
grapher + windowed grapher pairs) with strided-conv downsampling between
them.  The decoder mirrors the encoder with transposed-conv upsampling and
channel-concatenated skips; graph stages reappear at the mirrored depths.
Channel width doubles at every stage that downsamples, capped at
``max_channels``.
"""

from dataclasses import dataclass, asdict
from typing import List, Optional, Sequence, Tuple

import torch
import torch.nn as nn

from .blocks import TopoStagePair, map_norm, _init_uniform
from .errors import ConfigurationError

Tensor = torch.Tensor


def _conv(rank: int):
    return nn.Conv2d if rank == 2 else nn.Conv3d


def _conv_transpose(rank: int):
    return nn.ConvTranspose2d if rank == 2 else nn.ConvTranspose3d


def derive_stage_strides(extents: Sequence[int], num_stages: int) -> List[Tuple[int, ...]]:
    """Per-stage, per-axis entry strides: halve while the extent is even and >= 4."""
    strides = [tuple(1 for _ in extents)]
    current = list(extents)
    for _ in range(1, num_stages):
        stride = []
        for axis, e in enumerate(current):
            if e >= 4 and e % 2 == 0:
                stride.append(2)
                current[axis] = e // 2
            else:
                stride.append(1)
        strides.append(tuple(stride))
    return strides


@dataclass
class NetworkConfig:
    spatial_rank: int
    num_classes: int
    input_extents: Tuple[int, ...]
    in_channels: int = 1
    base_channels: int = 24
    num_conv_stages: int = 3
    num_topo_stages: int = 3
    knn_schedule: Tuple[int, ...] = (4, 8, 16)
    window_size: int = 4
    num_heads: Optional[int] = None
    ffn_expansion: int = 4
    max_channels: int = 384
    stage_strides: Optional[List[Tuple[int, ...]]] = None
    pgrapher_pool: Optional[List[bool]] = None
    decoder_topo: bool = True
    shifted_windows: bool = True

    def __post_init__(self):
        if self.spatial_rank not in (2, 3):
            raise ConfigurationError(f"spatial_rank must be 2 or 3, got {self.spatial_rank}")
        self.input_extents = tuple(int(e) for e in self.input_extents)
        if len(self.input_extents) != self.spatial_rank:
            raise ConfigurationError(
                f"{len(self.input_extents)} extents given for rank {self.spatial_rank}"
            )
        self.knn_schedule = tuple(int(k) for k in self.knn_schedule)
        if len(self.knn_schedule) != self.num_topo_stages:
            raise ConfigurationError(
                f"knn_schedule has {len(self.knn_schedule)} entries for "
                f"{self.num_topo_stages} topo stages"
            )
        if self.num_heads is None:
            self.num_heads = 6 if self.spatial_rank == 3 else 4
        if self.num_conv_stages < 1 or self.num_topo_stages < 1:
            raise ConfigurationError("need at least one conv stage and one topo stage")
        if self.stage_strides is None:
            self.stage_strides = derive_stage_strides(self.input_extents, self.num_stages)
        self.stage_strides = [tuple(int(s) for s in st) for st in self.stage_strides]
        if len(self.stage_strides) != self.num_stages:
            raise ConfigurationError(
                f"stage_strides has {len(self.stage_strides)} entries for "
                f"{self.num_stages} stages"
            )
        if any(s != 1 for s in self.stage_strides[0]):
            raise ConfigurationError("the first stage must keep full resolution (stride 1)")
        if self.pgrapher_pool is None:
            # The last two topo stages skip internal pooling to keep deep semantics.
            self.pgrapher_pool = [
                j < self.num_topo_stages - 2 for j in range(self.num_topo_stages)
            ]
        if len(self.pgrapher_pool) != self.num_topo_stages:
            raise ConfigurationError("pgrapher_pool length must equal num_topo_stages")
        self._validate_geometry()

    @property
    def num_stages(self) -> int:
        return self.num_conv_stages + self.num_topo_stages

    def stage_extents(self) -> List[Tuple[int, ...]]:
        """Spatial extents at the output of every stage."""
        extents = []
        current = list(self.input_extents)
        for stride in self.stage_strides:
            for axis, s in enumerate(stride):
                if s not in (1, 2):
                    raise ConfigurationError(f"unsupported stride {s}")
                if s == 2:
                    if current[axis] % 2 != 0:
                        raise ConfigurationError(
                            f"axis {axis} extent {current[axis]} is odd and cannot be halved"
                        )
                    current[axis] //= 2
            extents.append(tuple(current))
        return extents

    def stage_channels(self) -> List[int]:
        channels = []
        width = self.base_channels
        for i, stride in enumerate(self.stage_strides):
            if i > 0 and any(s > 1 for s in stride):
                width = min(width * 2, self.max_channels)
            channels.append(width)
        return channels

    def _validate_geometry(self) -> None:
        extents = self.stage_extents()
        for axis, e in enumerate(extents[-1]):
            if e < 1:
                raise ConfigurationError(
                    f"axis {axis} shrinks below one voxel; reduce the pooling depth"
                )
        for j in range(self.num_topo_stages):
            stage = self.num_conv_stages + j
            if not self.pgrapher_pool[j]:
                continue
            toks = 1
            for axis, e in enumerate(extents[stage]):
                if e < 2:
                    raise ConfigurationError(
                        f"topo stage {j} pools internally but axis {axis} has extent {e} < 2"
                    )
                toks *= e // 2
            if toks < 2:
                raise ConfigurationError(
                    f"topo stage {j} pools down to {toks} token(s); disable pooling there"
                )
        for width in self.stage_channels()[self.num_conv_stages:]:
            if width % self.num_heads != 0:
                raise ConfigurationError(
                    f"stage width {width} is not divisible by num_heads={self.num_heads}"
                )

    def to_json(self) -> dict:
        data = asdict(self)
        data["input_extents"] = list(self.input_extents)
        data["knn_schedule"] = list(self.knn_schedule)
        data["stage_strides"] = [list(s) for s in self.stage_strides]
        return data

    @classmethod
    def from_json(cls, data: dict) -> "NetworkConfig":
        known = {f for f in cls.__dataclass_fields__}
        extra = set(data) - known
        if extra:
            raise ConfigurationError(f"unknown network config keys: {sorted(extra)}")
        return cls(**data)

    @classmethod
    def paper_default_3d(cls, num_classes: int = 9,
                         input_extents: Tuple[int, int, int] = (48, 192, 192)) -> "NetworkConfig":
        """Reference 3D configuration: C=24, three graph stages, K=[4,8,16]."""
        return cls(
            spatial_rank=3,
            num_classes=num_classes,
            input_extents=input_extents,
        )

    @classmethod
    def toy(cls, spatial_rank: int, num_classes: int, input_extents,
            base_channels: int = 8, num_conv_stages: int = 2, num_topo_stages: int = 2,
            knn_schedule=(4, 8), num_heads: int = 4, window_size: int = 4,
            **kwargs) -> "NetworkConfig":
        return cls(
            spatial_rank=spatial_rank,
            num_classes=num_classes,
            input_extents=tuple(input_extents),
            base_channels=base_channels,
            num_conv_stages=num_conv_stages,
            num_topo_stages=num_topo_stages,
            knn_schedule=tuple(knn_schedule),
            num_heads=num_heads,
            window_size=window_size,
            **kwargs,
        )


class ConvStage(nn.Module):
    """Two conv-norm-GELU layers; the first may downsample with per-axis stride."""

    def __init__(self, in_ch: int, out_ch: int, rank: int, stride: Tuple[int, ...] = None):
        super().__init__()
        conv = _conv(rank)
        stride = stride or tuple(1 for _ in range(rank))
        self.conv1 = conv(in_ch, out_ch, kernel_size=3, stride=stride, padding=1)
        self.norm1 = map_norm("instance", out_ch, rank)
        self.conv2 = conv(out_ch, out_ch, kernel_size=3, padding=1)
        self.norm2 = map_norm("instance", out_ch, rank)
        self.act = nn.GELU()
        _init_uniform(self)

    def forward(self, x: Tensor) -> Tensor:
        x = self.act(self.norm1(self.conv1(x)))
        return self.act(self.norm2(self.conv2(x)))


class Downsample(nn.Module):
    """Strided conv entry into a graph stage (kernel = stride)."""

    def __init__(self, in_ch: int, out_ch: int, rank: int, stride: Tuple[int, ...]):
        super().__init__()
        kernel = tuple(max(s, 1) for s in stride)
        self.conv = _conv(rank)(in_ch, out_ch, kernel_size=kernel, stride=stride)
        self.norm = map_norm("instance", out_ch, rank)
        _init_uniform(self)

    def forward(self, x: Tensor) -> Tensor:
        return self.norm(self.conv(x))


class Upsample(nn.Module):
    """Transposed conv mirroring a stage's entry stride."""

    def __init__(self, in_ch: int, out_ch: int, rank: int, stride: Tuple[int, ...]):
        super().__init__()
        kernel = tuple(max(s, 1) for s in stride)
        self.conv = _conv_transpose(rank)(in_ch, out_ch, kernel_size=kernel, stride=stride)
        self.norm = map_norm("instance", out_ch, rank)
        _init_uniform(self)

    def forward(self, x: Tensor) -> Tensor:
        return self.norm(self.conv(x))


class DecoderTopoStage(nn.Module):
    """Skip-concat reduction followed by a graph stage pair."""

    def __init__(self, channels: int, k: int, num_heads: int, window_size: int,
                 rank: int, do_pool: bool, ffn_expansion: int, shifted: bool):
        super().__init__()
        self.reduce = _conv(rank)(2 * channels, channels, kernel_size=1)
        self.norm = map_norm("instance", channels, rank)
        self.act = nn.GELU()
        self.pair = TopoStagePair(channels, k, num_heads, window_size, rank,
                                  do_pool=do_pool, ffn_expansion=ffn_expansion,
                                  shifted=shifted)
        _init_uniform(self.reduce)

    def forward(self, x: Tensor) -> Tensor:
        return self.pair(self.act(self.norm(self.reduce(x))))


class TopoUNet(nn.Module):
    """Encoder-decoder segmentation network; see the module docstring."""

    def __init__(self, config: NetworkConfig, debug_checks: bool = False):
        super().__init__()
        self.config = config
        self.debug_checks = debug_checks
        rank = config.spatial_rank
        n1 = config.num_conv_stages
        channels = config.stage_channels()
        extents = config.stage_extents()
        self._stage_channels = channels
        self._stage_extents = extents

        self.encoder_convs = nn.ModuleList()
        in_ch = config.in_channels
        for i in range(n1):
            self.encoder_convs.append(
                ConvStage(in_ch, channels[i], rank, stride=config.stage_strides[i])
            )
            in_ch = channels[i]

        self.position_embedding = nn.Parameter(
            torch.zeros(1, channels[n1 - 1], *extents[n1 - 1])
        )

        self.topo_down = nn.ModuleList()
        self.encoder_topo = nn.ModuleList()
        for j in range(config.num_topo_stages):
            stage = n1 + j
            self.topo_down.append(
                Downsample(channels[stage - 1], channels[stage], rank,
                           config.stage_strides[stage])
            )
            self.encoder_topo.append(
                TopoStagePair(channels[stage], config.knn_schedule[j], config.num_heads,
                              config.window_size, rank, do_pool=config.pgrapher_pool[j],
                              ffn_expansion=config.ffn_expansion,
                              shifted=config.shifted_windows)
            )

        self.ups = nn.ModuleList()
        self.decoder_stages = nn.ModuleList()
        for depth in range(config.num_stages - 2, -1, -1):
            self.ups.append(
                Upsample(channels[depth + 1], channels[depth], rank,
                         config.stage_strides[depth + 1])
            )
            if depth >= n1 and config.decoder_topo:
                j = depth - n1
                self.decoder_stages.append(
                    DecoderTopoStage(channels[depth], config.knn_schedule[j],
                                     config.num_heads, config.window_size, rank,
                                     do_pool=config.pgrapher_pool[j],
                                     ffn_expansion=config.ffn_expansion,
                                     shifted=config.shifted_windows)
                )
            else:
                self.decoder_stages.append(
                    ConvStage(2 * channels[depth], channels[depth], rank)
                )

        self.head = _conv(rank)(channels[0], config.num_classes, kernel_size=1)
        _init_uniform(self.head)

    def forward(self, x: Tensor) -> Tensor:
        cfg = self.config
        if x.dim() != cfg.spatial_rank + 2:
            raise ConfigurationError(
                f"expected a rank-{cfg.spatial_rank} batch, got shape {tuple(x.shape)}"
            )
        if x.shape[1] != cfg.in_channels:
            raise ConfigurationError(
                f"expected {cfg.in_channels} input channels, got {x.shape[1]}"
            )
        for axis, (got, want) in enumerate(zip(x.shape[2:], cfg.input_extents)):
            if got != want:
                raise ConfigurationError(
                    f"axis {axis}: input extent {got} does not match the configured {want}"
                )
        skips = []
        for stage in self.encoder_convs:
            x = stage(x)
            skips.append(x)
        x = x + self.position_embedding
        for j, (down, pair) in enumerate(zip(self.topo_down, self.encoder_topo)):
            x = pair(down(x))
            if self.debug_checks:
                self._check_tokens(j, pair, x)
            skips.append(x)
        skips.pop()  # the deepest stage is the decoder input, not a skip
        for up, stage in zip(self.ups, self.decoder_stages):
            x = up(x)
            x = torch.cat([x, skips.pop()], dim=1)
            x = stage(x)
        return self.head(x)

    def _check_tokens(self, j: int, pair: TopoStagePair, out: Tensor) -> None:
        extents = out.shape[2:]
        expected = 1
        for e in extents:
            expected *= (e // 2) if self.config.pgrapher_pool[j] else e
        if pair.pooled.last_token_count != expected:
            raise AssertionError(
                f"topo stage {j}: processed {pair.pooled.last_token_count} tokens, "
                f"expected {expected}"
            )

    @property
    def clamp_events(self) -> int:
        return sum(m.clamp_events for m in self.modules() if isinstance(m, TopoStagePair))

    def num_parameters(self) -> int:
        return sum(p.numel() for p in self.parameters())

    def parameter_report(self) -> List[Tuple[str, int]]:
        """Per-stage parameter counts, encoder top-down then decoder."""
        rows = []
        for i, stage in enumerate(self.encoder_convs):
            rows.append((f"encoder/conv{i + 1}", sum(p.numel() for p in stage.parameters())))
        rows.append(("encoder/position_embedding", self.position_embedding.numel()))
        for j, (down, pair) in enumerate(zip(self.topo_down, self.encoder_topo)):
            count = sum(p.numel() for p in down.parameters())
            count += sum(p.numel() for p in pair.parameters())
            rows.append((f"encoder/topo{j + 1}", count))
        for idx, (up, stage) in enumerate(zip(self.ups, self.decoder_stages)):
            depth = self.config.num_stages - 2 - idx
            count = sum(p.numel() for p in up.parameters())
            count += sum(p.numel() for p in stage.parameters())
            rows.append((f"decoder/depth{depth + 1}", count))
        rows.append(("head", sum(p.numel() for p in self.head.parameters())))
        return rows


def build_network(config: NetworkConfig, debug_checks: bool = False) -> TopoUNet:
    return TopoUNet(config, debug_checks=debug_checks)


def format_parameter_report(net: TopoUNet) -> str:
    rows = net.parameter_report()
    width = max(len(name) for name, _ in rows)
    lines = [f"{name.ljust(width)}  {count:>12,}" for name, count in rows]
    lines.append(f"{'total'.ljust(width)}  {net.num_parameters():>12,}")
    return "\n".join(lines)
