"""Image-to-sequence table recognizer.

A convolutional encoder turns the table image into a 16x-downsampled
feature map.  A causal transformer decoder emits the structure token
sequence over that memory; for every non-empty cell a second decoder
emits four quantized coordinate tokens, started from the structure
decoder's hidden state at the cell's token.  A regression variant
replaces the coordinate decoder with a direct box head.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass

import numpy as np
import torch
from torch import Tensor, nn

from .core import Vocabulary

SEQUENCE_HEAD = "sequence"
REGRESSION_HEAD = "regression"


@dataclass(frozen=True)
class ModelConfig:
    image_side: int = 160
    d_model: int = 128
    n_layers: int = 2
    n_heads: int = 4
    ffn_dim: int = 512
    n_bins: int = 160
    max_span: int = 5
    max_html_len: int = 512
    dropout: float = 0.0
    head: str = SEQUENCE_HEAD

    def __post_init__(self) -> None:
        if self.image_side % 16 != 0 or self.image_side <= 0:
            raise ValueError("image_side must be a positive multiple of 16")
        if self.d_model < 32 or self.d_model % 8 != 0:
            raise ValueError("d_model must be a multiple of 8, at least 32")
        if self.d_model % self.n_heads != 0:
            raise ValueError("n_heads must divide d_model")
        if min(self.n_layers, self.n_heads, self.ffn_dim, self.n_bins,
               self.max_span, self.max_html_len) < 1:
            raise ValueError("size fields must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")
        if self.head not in (SEQUENCE_HEAD, REGRESSION_HEAD):
            raise ValueError(f"unknown head {self.head!r}")

    @property
    def stride(self) -> int:
        return 16

    @property
    def coord_vocab_size(self) -> int:
        # quantized coordinates take values 0..n_bins inclusive
        return self.n_bins + 1


def sinusoidal_positions(n: int, d: int) -> Tensor:
    """Fixed sin/cos position table, n x d."""
    pos = torch.arange(n, dtype=torch.float32).unsqueeze(1)
    idx = torch.arange(0, d, 2, dtype=torch.float32)
    angles = pos / torch.pow(torch.tensor(10000.0), idx / d)
    table = torch.zeros(n, d)
    table[:, 0::2] = torch.sin(angles)
    table[:, 1::2] = torch.cos(angles[:, : d // 2])
    return table


def sinusoidal_positions_2d(h: int, w: int, d: int) -> Tensor:
    """Row/column sin-cos table for an h x w grid, flattened to (h*w) x d."""
    if d % 2 != 0:
        raise ValueError("2d positions need an even dimension")
    half = d // 2
    rows = sinusoidal_positions(h, half)
    cols = sinusoidal_positions(w, half)
    grid = torch.cat(
        [rows.unsqueeze(1).expand(h, w, half),
         cols.unsqueeze(0).expand(h, w, half)],
        dim=-1,
    )
    return grid.reshape(h * w, d)


def causal_mask(n: int, device=None) -> Tensor:
    return torch.triu(
        torch.full((n, n), float("-inf"), device=device), diagonal=1
    )


class _ResidualBlock(nn.Module):
    def __init__(self, channels: int):
        super().__init__()
        groups = math.gcd(8, channels)
        self.conv1 = nn.Conv2d(channels, channels, 3, padding=1)
        self.norm1 = nn.GroupNorm(groups, channels)
        self.conv2 = nn.Conv2d(channels, channels, 3, padding=1)
        self.norm2 = nn.GroupNorm(groups, channels)

    def forward(self, x: Tensor) -> Tensor:
        y = torch.relu(self.norm1(self.conv1(x)))
        y = self.norm2(self.conv2(y))
        return torch.relu(x + y)


class ConvEncoder(nn.Module):
    """Four stride-2 stages: 3 -> d/8 -> d/4 -> d/2 -> d channels.

    Works on any input whose sides are multiples of 16; the output map is
    16x smaller than the input.
    """

    def __init__(self, d_model: int):
        super().__init__()
        stages: list[nn.Module] = []
        in_ch = 3
        for ch in (d_model // 8, d_model // 4, d_model // 2, d_model):
            stages += [
                nn.Conv2d(in_ch, ch, 3, stride=2, padding=1),
                nn.GroupNorm(math.gcd(8, ch), ch),
                nn.ReLU(),
                _ResidualBlock(ch),
            ]
            in_ch = ch
        self.stages = nn.Sequential(*stages)

    def forward(self, images: Tensor) -> Tensor:
        if images.dim() != 4 or images.shape[1] != 3:
            raise ValueError("expected images of shape (batch, 3, H, W)")
        if images.shape[2] % 16 or images.shape[3] % 16:
            raise ValueError("image sides must be multiples of 16")
        return self.stages(images)


class DecoderLayer(nn.Module):
    """Post-norm block: causal self-attention, cross-attention, feed-forward.

    Cross-attention weights are returned per head so downstream code can
    inspect where a token looked in the image.
    """

    def __init__(self, d: int, heads: int, ffn_dim: int, dropout: float):
        super().__init__()
        self.self_attn = nn.MultiheadAttention(d, heads, dropout=dropout,
                                               batch_first=True)
        self.cross_attn = nn.MultiheadAttention(d, heads, dropout=dropout,
                                                batch_first=True)
        self.ffn = nn.Sequential(
            nn.Linear(d, ffn_dim), nn.ReLU(), nn.Dropout(dropout),
            nn.Linear(ffn_dim, d),
        )
        self.norm1 = nn.LayerNorm(d)
        self.norm2 = nn.LayerNorm(d)
        self.norm3 = nn.LayerNorm(d)
        self.drop = nn.Dropout(dropout)

    def forward(self, x: Tensor, memory: Tensor,
                attn_mask: Tensor | None) -> tuple[Tensor, Tensor]:
        a, _ = self.self_attn(x, x, x, attn_mask=attn_mask,
                              need_weights=False)
        x = self.norm1(x + self.drop(a))
        a, weights = self.cross_attn(x, memory, memory, need_weights=True,
                                     average_attn_weights=False)
        x = self.norm2(x + self.drop(a))
        x = self.norm3(x + self.drop(self.ffn(x)))
        return x, weights


class _TokenDecoder(nn.Module):
    """Shared shell for both decoders: embeddings, positions, layer stack."""

    def __init__(self, vocab_size: int, max_len: int, cfg: ModelConfig):
        super().__init__()
        d = cfg.d_model
        self.embed = nn.Embedding(vocab_size, d)
        nn.init.normal_(self.embed.weight, std=d ** -0.5)
        self.scale = math.sqrt(d)
        self.register_buffer("positions", sinusoidal_positions(max_len, d),
                             persistent=False)
        self.layers = nn.ModuleList(
            DecoderLayer(d, cfg.n_heads, cfg.ffn_dim, cfg.dropout)
            for _ in range(cfg.n_layers)
        )
        self.proj = nn.Linear(d, vocab_size)

    def run(self, x: Tensor, memory: Tensor) -> tuple[Tensor, Tensor, Tensor]:
        mask = causal_mask(x.shape[1], device=x.device)
        collected = []
        for layer in self.layers:
            x, weights = layer(x, memory, mask)
            collected.append(weights)
        return self.proj(x), x, torch.stack(collected)


class HtmlDecoder(_TokenDecoder):
    """Structure decoder over the flattened image memory.

    forward returns (logits, hidden, cross_attn); hidden[b, t] is the
    state that predicts the token after input position t, and cross_attn
    stacks per-layer weights as (layers, batch, heads, T, L).
    """

    def forward(self, tokens: Tensor, memory: Tensor):
        if tokens.dim() != 2:
            raise ValueError("expected token batch of shape (batch, T)")
        if tokens.shape[1] > self.positions.shape[0]:
            raise ValueError("sequence longer than the position table")
        x = self.embed(tokens) * self.scale + self.positions[: tokens.shape[1]]
        return self.run(x, memory)


class CoordDecoder(_TokenDecoder):
    """Coordinate decoder; one row per cell, started from the cell state.

    Input slot 0 carries the structure decoder's hidden state for the
    cell, slots 1..3 the previously produced coordinate tokens, so the
    four outputs predict left, top, right, bottom bins.
    """

    MAX_STEPS = 4

    def __init__(self, cfg: ModelConfig):
        super().__init__(cfg.coord_vocab_size, self.MAX_STEPS, cfg)

    def forward(self, starts: Tensor, coords: Tensor, memory: Tensor):
        """starts (N, d); coords (N, k) with k <= 3; memory (N, L, d)."""
        if coords.shape[1] >= self.MAX_STEPS:
            raise ValueError("at most 3 teacher coordinates feed the decoder")
        x = torch.cat(
            [starts.unsqueeze(1), self.embed(coords) * self.scale], dim=1
        )
        x = x + self.positions[: x.shape[1]]
        return self.run(x, memory)


class RegressionHead(nn.Module):
    """Direct box head: cell state to four normalized coordinates."""

    def __init__(self, d: int):
        super().__init__()
        self.linear = nn.Linear(d, 4)

    def forward(self, starts: Tensor) -> Tensor:
        return torch.sigmoid(self.linear(starts))


def roi_align_2x2(fmap: Tensor, boxes: Tensor, box_to_image: Tensor,
                  stride: int) -> Tensor:
    """Pool a 2x2 patch from the feature map under each pixel-space box.

    Each output bin is the bilinear sample at the 0.25/0.75 fraction
    points of the box, in the coordinate convention where feature cell
    centers sit at pixel (i + 0.5) * stride.  Degenerate boxes collapse
    to repeated point samples.  Returns (N, C, 2, 2).
    """
    if boxes.dim() != 2 or boxes.shape[1] != 4:
        raise ValueError("boxes must have shape (N, 4)")
    n = boxes.shape[0]
    _, _, h, w = fmap.shape
    f = boxes.to(fmap.dtype) / stride - 0.5
    fl, ft, fr, fb = f.unbind(1)
    fracs = fmap.new_tensor([0.25, 0.75])
    xs = fl.unsqueeze(1) + (fr - fl).clamp(min=0).unsqueeze(1) * fracs
    ys = ft.unsqueeze(1) + (fb - ft).clamp(min=0).unsqueeze(1) * fracs
    x = xs.unsqueeze(1).expand(n, 2, 2).clamp(0, w - 1)
    y = ys.unsqueeze(2).expand(n, 2, 2).clamp(0, h - 1)
    x0 = x.floor().long().clamp(0, w - 1)
    y0 = y.floor().long().clamp(0, h - 1)
    x1 = (x0 + 1).clamp(max=w - 1)
    y1 = (y0 + 1).clamp(max=h - 1)
    wx = x - x0.to(x.dtype)
    wy = y - y0.to(y.dtype)
    img = box_to_image.view(n, 1, 1)
    v00 = fmap[img, :, y0, x0]
    v01 = fmap[img, :, y0, x1]
    v10 = fmap[img, :, y1, x0]
    v11 = fmap[img, :, y1, x1]
    wx = wx.unsqueeze(-1)
    wy = wy.unsqueeze(-1)
    pooled = ((1 - wy) * ((1 - wx) * v00 + wx * v01)
              + wy * ((1 - wx) * v10 + wx * v11))
    return pooled.permute(0, 3, 1, 2)


class RoiProjector(nn.Module):
    """Flattened 2x2 pooled features to the decoder width."""

    def __init__(self, d: int):
        super().__init__()
        self.linear = nn.Linear(4 * d, d)

    def forward(self, pooled: Tensor) -> Tensor:
        return self.linear(pooled.flatten(1))


def images_to_tensor(images) -> Tensor:
    """uint8 HWC arrays (or one array) to a float batch in [0, 1]."""
    if isinstance(images, np.ndarray) and images.ndim == 3:
        images = [images]
    stack = np.stack([np.asarray(im, dtype=np.float32) / 255.0
                      for im in images])
    return torch.from_numpy(stack).permute(0, 3, 1, 2).contiguous()


class TableRecognizer(nn.Module):
    """Encoder plus structure decoder plus one box head.

    Submodules are constructed in a fixed order so that, under the same
    seed, the encoder and structure decoder receive identical initial
    weights whichever head variant is built.
    """

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        self.vocab = Vocabulary(max_span=config.max_span)
        self.encoder = ConvEncoder(config.d_model)
        self.html_decoder = HtmlDecoder(len(self.vocab.tokens),
                                        config.max_html_len, config)
        self.roi_projector = RoiProjector(config.d_model)
        if config.head == SEQUENCE_HEAD:
            self.coord_decoder: CoordDecoder | None = CoordDecoder(config)
            self.box_head: RegressionHead | None = None
        else:
            self.coord_decoder = None
            self.box_head = RegressionHead(config.d_model)
        self._pos_cache: dict[tuple[int, int], Tensor] = {}

    def encode(self, images: Tensor) -> tuple[Tensor, Tensor]:
        """Images to (feature map (B, d, s, s), memory (B, s*s, d))."""
        fmap = self.encoder(images)
        b, d, h, w = fmap.shape
        memory = fmap.flatten(2).transpose(1, 2)
        key = (h, w)
        pos = self._pos_cache.get(key)
        if pos is None or pos.device != memory.device:
            pos = sinusoidal_positions_2d(h, w, d).to(memory.device)
            self._pos_cache[key] = pos
        return fmap, memory + pos

    def html_forward(self, tokens: Tensor, memory: Tensor):
        return self.html_decoder(tokens, memory)

    def coord_forward(self, starts: Tensor, coords: Tensor,
                      memory_rows: Tensor) -> Tensor:
        if self.coord_decoder is None:
            raise RuntimeError("model was built with the regression head")
        logits, _, _ = self.coord_decoder(starts, coords, memory_rows)
        return logits

    def regress_boxes(self, starts: Tensor) -> Tensor:
        if self.box_head is None:
            raise RuntimeError("model was built with the sequence head")
        return self.box_head(starts)

    def pool_box_features(self, fmap: Tensor, boxes: Tensor,
                          box_to_image: Tensor) -> Tensor:
        pooled = roi_align_2x2(fmap, boxes, box_to_image, self.config.stride)
        return self.roi_projector(pooled)

    def parameter_count(self) -> int:
        return sum(p.numel() for p in self.parameters())


def save_checkpoint(path, model: TableRecognizer, optimizer=None,
                    step: int = 0, extra: dict | None = None) -> None:
    payload = {
        "config": dataclasses.asdict(model.config),
        "model_state": model.state_dict(),
        "step": step,
        "extra": extra or {},
    }
    if optimizer is not None:
        payload["optimizer_state"] = optimizer.state_dict()
    torch.save(payload, path)


def load_checkpoint(path, expect: ModelConfig | None = None
                    ) -> tuple[TableRecognizer, dict]:
    """Rebuild a model from a checkpoint; refuses config mismatches."""
    payload = torch.load(path, map_location="cpu", weights_only=False)
    config = ModelConfig(**payload["config"])
    if expect is not None and config != expect:
        stored = dataclasses.asdict(config)
        wanted = dataclasses.asdict(expect)
        diff = sorted(k for k in stored if stored[k] != wanted[k])
        raise ValueError(
            "checkpoint config does not match the requested one; "
            f"differing fields: {', '.join(diff)}"
        )
    model = TableRecognizer(config)
    model.load_state_dict(payload["model_state"])
    return model, payload
