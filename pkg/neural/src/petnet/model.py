"""Promptable 3D segmentation model: ViT-style volumetric image encoder with
fixed sinusoidal absolute positional encoding, a prompt encoder for point
clicks (positional encoding + polarity embeddings) and dense mask priors
(strided 3D convolutions with 3D layer norm and GELU), and a two-way
transformer mask decoder that upsamples through 3D transposed convolutions
into a sigmoid prediction head.
"""

from __future__ import annotations

import numpy as np
import torch
from torch import nn

from .config import ModelConfig


class LayerNorm3d(nn.Module):
    """Channel-wise layer norm over (B, C, X, Y, Z) tensors."""

    def __init__(self, channels: int, eps: float = 1e-6):
        super().__init__()
        self.weight = nn.Parameter(torch.ones(channels))
        self.bias = nn.Parameter(torch.zeros(channels))
        self.eps = eps

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        mean = x.mean(1, keepdim=True)
        var = (x - mean).pow(2).mean(1, keepdim=True)
        x = (x - mean) / torch.sqrt(var + self.eps)
        return self.weight[:, None, None, None] * x + self.bias[:, None, None, None]


def sinusoidal_encoding(coords: torch.Tensor, dim: int) -> torch.Tensor:
    """Fixed 3D absolute positional encoding.

    coords: (..., 3) positions on the token lattice (may be fractional for
    point prompts). Splits the embedding into three per-axis sin/cos banks.
    """
    per_axis = dim // 3
    half = per_axis // 2
    freqs = torch.exp(
        torch.arange(half, dtype=coords.dtype, device=coords.device)
        * (-np.log(10000.0) / max(1, half - 1))
    )
    banks = []
    for axis in range(3):
        angle = coords[..., axis : axis + 1] * freqs
        banks.append(torch.sin(angle))
        banks.append(torch.cos(angle))
    out = torch.cat(banks, dim=-1)
    if out.shape[-1] < dim:  # pad the remainder channels with zeros
        pad = torch.zeros(*out.shape[:-1], dim - out.shape[-1],
                          dtype=out.dtype, device=out.device)
        out = torch.cat([out, pad], dim=-1)
    return out


def _lattice(grid_edge: int, dtype, device) -> torch.Tensor:
    axis = torch.arange(grid_edge, dtype=dtype, device=device)
    ii, jj, kk = torch.meshgrid(axis, axis, axis, indexing="ij")
    return torch.stack([ii, jj, kk], dim=-1).reshape(-1, 3)


class TransformerBlock(nn.Module):
    def __init__(self, dim: int, heads: int, mlp_ratio: int):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.attn = nn.MultiheadAttention(dim, heads, batch_first=True)
        self.norm2 = nn.LayerNorm(dim)
        self.mlp = nn.Sequential(
            nn.Linear(dim, dim * mlp_ratio),
            nn.GELU(),
            nn.Linear(dim * mlp_ratio, dim),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h = self.norm1(x)
        x = x + self.attn(h, h, h, need_weights=False)[0]
        return x + self.mlp(self.norm2(x))


class ImageEncoder(nn.Module):
    """Volume -> token grid embedding with absolute positional encoding added
    before the attention blocks."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.patch_embed = nn.Conv3d(
            1, cfg.embed_dim, kernel_size=cfg.patch_edge, stride=cfg.patch_edge
        )
        self.blocks = nn.ModuleList(
            TransformerBlock(cfg.embed_dim, cfg.num_heads, cfg.mlp_ratio)
            for _ in range(cfg.encoder_depth)
        )
        self.norm = nn.LayerNorm(cfg.embed_dim)

    def forward(self, volume: torch.Tensor) -> torch.Tensor:
        """volume: (B, 1, E, E, E) -> tokens (B, G^3, C)."""
        if volume.shape[-1] % self.cfg.patch_edge:
            raise ValueError(
                f"input edge {volume.shape[-1]} not divisible by patch edge"
            )
        x = self.patch_embed(volume)  # (B, C, G, G, G)
        grid = x.shape[-1]
        tokens = x.flatten(2).transpose(1, 2)  # (B, T, C)
        coords = _lattice(grid, tokens.dtype, tokens.device)
        tokens = tokens + sinusoidal_encoding(coords, self.cfg.embed_dim)
        for block in self.blocks:
            tokens = block(tokens)
        return self.norm(tokens)


class PromptEncoder(nn.Module):
    """Point clicks -> sparse embeddings; prior mask -> dense embedding.

    Each point gets the sinusoidal encoding of its (fractional) position on
    the token lattice plus a learned polarity embedding; with no points a
    learned no-prompt embedding stands in. The dense prior runs through two
    stride-2 3D convolutions with 3D layer norm and GELU down to the token
    resolution.
    """

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        dim = cfg.embed_dim
        self.polarity = nn.Embedding(2, dim)  # 0 = negative, 1 = positive
        self.no_prompt = nn.Parameter(torch.zeros(1, dim))
        nn.init.normal_(self.no_prompt, std=0.02)
        quarter = dim // 4
        self.dense = nn.Sequential(
            nn.Conv3d(1, quarter, kernel_size=2, stride=2),
            LayerNorm3d(quarter),
            nn.GELU(),
            nn.Conv3d(quarter, dim, kernel_size=2, stride=2),
            LayerNorm3d(dim),
            nn.GELU(),
            nn.Conv3d(dim, dim, kernel_size=1),
        )

    def encode_points(
        self, points: torch.Tensor, polarities: torch.Tensor
    ) -> torch.Tensor:
        """points: (N, 3) voxel coords; polarities: (N,) in {0, 1}."""
        if points.numel() == 0:
            return self.no_prompt
        coords = points.to(self.no_prompt.dtype) / float(self.cfg.patch_edge)
        pe = sinusoidal_encoding(coords, self.cfg.embed_dim)
        return pe + self.polarity(polarities)

    def encode_dense(self, prior: torch.Tensor) -> torch.Tensor:
        """prior: (B, 1, E, E, E) in [0, 1] -> (B, C, G, G, G)."""
        return self.dense(prior)


class TwoWayBlock(nn.Module):
    """Queries attend to themselves, then to the image; the image attends
    back to the queries."""

    def __init__(self, dim: int, heads: int, mlp_ratio: int):
        super().__init__()
        self.self_attn = nn.MultiheadAttention(dim, heads, batch_first=True)
        self.norm1 = nn.LayerNorm(dim)
        self.cross_q2i = nn.MultiheadAttention(dim, heads, batch_first=True)
        self.norm2 = nn.LayerNorm(dim)
        self.mlp = nn.Sequential(
            nn.Linear(dim, dim * mlp_ratio),
            nn.GELU(),
            nn.Linear(dim * mlp_ratio, dim),
        )
        self.norm3 = nn.LayerNorm(dim)
        self.cross_i2q = nn.MultiheadAttention(dim, heads, batch_first=True)
        self.norm4 = nn.LayerNorm(dim)

    def forward(self, queries, image):
        q = self.norm1(queries + self.self_attn(queries, queries, queries,
                                                need_weights=False)[0])
        q = self.norm2(q + self.cross_q2i(q, image, image, need_weights=False)[0])
        q = self.norm3(q + self.mlp(q))
        image = self.norm4(
            image + self.cross_i2q(image, q, q, need_weights=False)[0]
        )
        return q, image


class MaskDecoder(nn.Module):
    """Fuses image and prompt embeddings in two-way transformer blocks, then
    upsamples with 3D transposed convolutions and applies an MLP prediction
    head (mask-token hypernetwork dotted with the upsampled features)."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        dim = cfg.embed_dim
        self.mask_token = nn.Parameter(torch.zeros(1, dim))
        nn.init.normal_(self.mask_token, std=0.02)
        self.blocks = nn.ModuleList(
            TwoWayBlock(dim, cfg.num_heads, cfg.mlp_ratio)
            for _ in range(cfg.two_way_blocks)
        )
        self.final_attn = nn.MultiheadAttention(dim, cfg.num_heads, batch_first=True)
        self.final_norm = nn.LayerNorm(dim)
        half, eighth = dim // 2, dim // 8
        self.upsample = nn.Sequential(
            nn.ConvTranspose3d(dim, half, kernel_size=2, stride=2),
            LayerNorm3d(half),
            nn.GELU(),
            nn.ConvTranspose3d(half, eighth, kernel_size=2, stride=2),
            nn.GELU(),
        )
        self.head = nn.Sequential(
            nn.Linear(dim, dim),
            nn.GELU(),
            nn.Linear(dim, eighth),
        )

    def forward(
        self, image_tokens: torch.Tensor, prompt_tokens: torch.Tensor
    ) -> torch.Tensor:
        """image_tokens: (B, T, C); prompt_tokens: (N, C) -> logits
        (B, 1, E, E, E)."""
        batch = image_tokens.shape[0]
        queries = torch.cat(
            [self.mask_token, prompt_tokens], dim=0
        ).unsqueeze(0).expand(batch, -1, -1)
        image = image_tokens
        for block in self.blocks:
            queries, image = block(queries, image)
        queries = self.final_norm(
            queries + self.final_attn(queries, image, image, need_weights=False)[0]
        )
        grid = self.cfg.grid_edge if image.shape[1] == self.cfg.n_tokens else round(
            image.shape[1] ** (1 / 3)
        )
        volume = image.transpose(1, 2).reshape(batch, -1, grid, grid, grid)
        feats = self.upsample(volume)  # (B, C/8, E, E, E)
        weights = self.head(queries[:, 0, :])  # mask token -> (B, C/8)
        logits = torch.einsum("bc,bcxyz->bxyz", weights, feats).unsqueeze(1)
        return logits


class PromptableSegmenter(nn.Module):
    """End-to-end model: volume + clicks + dense prior -> probability block."""

    def __init__(self, cfg: ModelConfig | None = None):
        super().__init__()
        self.cfg = cfg or ModelConfig()
        self.image_encoder = ImageEncoder(self.cfg)
        self.prompt_encoder = PromptEncoder(self.cfg)
        self.mask_decoder = MaskDecoder(self.cfg)

    def encoder_parameters(self):
        return self.image_encoder.parameters()

    def prompt_decoder_parameters(self):
        yield from self.prompt_encoder.parameters()
        yield from self.mask_decoder.parameters()

    def forward(
        self,
        volume: torch.Tensor,
        points: torch.Tensor,
        polarities: torch.Tensor,
        prior: torch.Tensor,
    ) -> torch.Tensor:
        """volume/prior: (B, 1, E, E, E); points: (N, 3); polarities: (N,).
        Returns probabilities (B, 1, E, E, E) in (0, 1)."""
        scaled = volume * self.cfg.intensity_scale
        tokens = self.image_encoder(scaled)
        dense = self.prompt_encoder.encode_dense(prior)
        tokens = tokens + dense.flatten(2).transpose(1, 2)
        sparse = self.prompt_encoder.encode_points(points, polarities)
        logits = self.mask_decoder(tokens, sparse)
        return torch.sigmoid(logits)

    def predict(
        self,
        volume: np.ndarray,
        clicks: list[tuple[tuple[int, int, int], bool]],
        prior: np.ndarray | None = None,
    ) -> np.ndarray:
        """Numpy convenience wrapper used by the server: float32 in/out."""
        self.eval()
        edge = volume.shape[0]
        with torch.no_grad():
            vol = torch.from_numpy(np.ascontiguousarray(volume, dtype=np.float32))
            vol = vol.unsqueeze(0).unsqueeze(0)
            if prior is None:
                pri = torch.zeros_like(vol)
            else:
                pri = torch.from_numpy(
                    np.ascontiguousarray(prior, dtype=np.float32)
                ).unsqueeze(0).unsqueeze(0)
            if clicks:
                points = torch.tensor([c[0] for c in clicks], dtype=torch.float32)
                pols = torch.tensor([1 if c[1] else 0 for c in clicks])
            else:
                points = torch.zeros((0, 3))
                pols = torch.zeros((0,), dtype=torch.long)
            prob = self.forward(vol, points, pols, pri)
        return prob[0, 0].numpy().astype(np.float32)


def save_checkpoint(path, model: PromptableSegmenter, extra: dict | None = None):
    """Self-describing checkpoint: config + weights + RNG state."""
    payload = {
        "model_config": model.cfg.to_dict(),
        "state_dict": model.state_dict(),
        "torch_rng_state": torch.get_rng_state(),
        "extra": extra or {},
    }
    torch.save(payload, path)


def load_checkpoint(path) -> tuple[PromptableSegmenter, dict]:
    payload = torch.load(path, map_location="cpu", weights_only=False)
    cfg = ModelConfig(**payload["model_config"])
    model = PromptableSegmenter(cfg)
    model.load_state_dict(payload["state_dict"])
    model.eval()
    return model, payload
