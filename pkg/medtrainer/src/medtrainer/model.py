"""Toy multimodal encoder-decoder: image encoder, mixup embedder, sequence
encoder/decoder with optional cross-attention and causal masking.

The sequence core doubles as encoder and decoder: with weight tying enabled
(the default) the same module instance serves both roles, so the decoder IS
the encoder storage-wise. Cross-attention stays inactive unless image
context is provided, mirroring the contrastive/matching/modeling task split.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
from torch import nn


@dataclass(frozen=True)
class ModelConfig:
    d_e: int = 64
    layers: int = 2
    heads: int = 4
    ffn_mult: int = 4
    patch: int = 8
    proj_dim: int = 32
    queue_size: int = 512
    weight_tying: bool = True
    n_scales: int = 3
    resolution: int = 64
    d_s: int = 48
    d_c: int = 12
    vocab_size: int = 25  # 0..N operators plus special tokens

    def __post_init__(self):
        if self.d_e % self.heads:
            raise ValueError("d_e must be divisible by heads")
        if self.resolution % self.patch:
            raise ValueError("resolution must be divisible by patch")


class MixupEmbedder(nn.Module):
    """Joint embedding of padded token ids and constants.

    Tokens go through a lookup table, each constant through a per-position
    affine lift to the embedding width; the two spans are concatenated
    (tokens first) and positional embeddings cover the combined length.
    """

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.token_embed = nn.Embedding(cfg.vocab_size, cfg.d_e)
        self.const_lift = nn.Linear(1, cfg.d_e)
        self.position = nn.Embedding(cfg.d_s + cfg.d_c, cfg.d_e)
        nn.init.normal_(self.token_embed.weight, std=0.02)
        nn.init.normal_(self.position.weight, std=0.02)
        self.last_constants: torch.Tensor | None = None

    def embed_parts(self, tokens: torch.Tensor, consts: torch.Tensor) -> torch.Tensor:
        """Concatenated rows before positional mixing: (B, D_s + D_c, d_e)."""
        self.last_constants = consts.detach().clone()
        tok = self.token_embed(tokens)
        lifted = self.const_lift(consts.unsqueeze(-1))
        return torch.cat([tok, lifted], dim=1)

    def forward(self, tokens: torch.Tensor, consts: torch.Tensor) -> torch.Tensor:
        rows = self.embed_parts(tokens, consts)
        positions = torch.arange(rows.shape[1], device=rows.device)
        return rows + self.position(positions)[None]


class _Block(nn.Module):
    """Pre-LN transformer block with an optional cross-attention stage."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.norm_self = nn.LayerNorm(cfg.d_e)
        self.self_attn = nn.MultiheadAttention(cfg.d_e, cfg.heads, batch_first=True)
        self.norm_cross = nn.LayerNorm(cfg.d_e)
        self.cross_attn = nn.MultiheadAttention(cfg.d_e, cfg.heads, batch_first=True)
        self.norm_ffn = nn.LayerNorm(cfg.d_e)
        self.ffn = nn.Sequential(
            nn.Linear(cfg.d_e, cfg.ffn_mult * cfg.d_e),
            nn.GELU(),
            nn.Linear(cfg.ffn_mult * cfg.d_e, cfg.d_e),
        )

    def forward(self, x, key_padding_mask=None, attn_mask=None, context=None,
                context_padding=None):
        h = self.norm_self(x)
        attn_out, _ = self.self_attn(h, h, h, key_padding_mask=key_padding_mask,
                                     attn_mask=attn_mask, need_weights=False)
        x = x + attn_out
        if context is not None:
            h = self.norm_cross(x)
            cross_out, _ = self.cross_attn(h, context, context,
                                           key_padding_mask=context_padding,
                                           need_weights=False)
            x = x + cross_out
        return x + self.ffn(self.norm_ffn(x))


class SequenceCore(nn.Module):
    """Stack of blocks over mixup embeddings; encoder or decoder by flags."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.blocks = nn.ModuleList(_Block(cfg) for _ in range(cfg.layers))
        self.final_norm = nn.LayerNorm(cfg.d_e)

    def forward(self, rows, padding_mask=None, causal=False, context=None,
                context_padding=None):
        attn_mask = None
        if causal:
            n = rows.shape[1]
            attn_mask = torch.triu(
                torch.ones(n, n, dtype=torch.bool, device=rows.device), diagonal=1
            )
        key_padding = None if padding_mask is None else ~padding_mask
        x = rows
        for block in self.blocks:
            x = block(x, key_padding_mask=key_padding, attn_mask=attn_mask,
                      context=context, context_padding=context_padding)
        return self.final_norm(x)


class FuncimgEncoder(nn.Module):
    """Small ViT: conv patchifier, class token, self-attention blocks."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.patchify = nn.Conv2d(cfg.n_scales, cfg.d_e, kernel_size=cfg.patch,
                                  stride=cfg.patch)
        n_patches = (cfg.resolution // cfg.patch) ** 2
        self.cls = nn.Parameter(torch.zeros(1, 1, cfg.d_e))
        self.position = nn.Embedding(n_patches + 1, cfg.d_e)
        nn.init.normal_(self.position.weight, std=0.02)
        self.blocks = nn.ModuleList(_Block(cfg) for _ in range(cfg.layers))
        self.final_norm = nn.LayerNorm(cfg.d_e)

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        patches = self.patchify(images).flatten(2).transpose(1, 2)
        cls = self.cls.expand(patches.shape[0], -1, -1)
        x = torch.cat([cls, patches], dim=1)
        x = x + self.position(torch.arange(x.shape[1], device=x.device))[None]
        for block in self.blocks:
            x = block(x)
        return self.final_norm(x)


class MedModel(nn.Module):
    """The full encoder-decoder with contrastive/matching/modeling heads."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.embedder = MixupEmbedder(cfg)
        self.funcimg_encoder = FuncimgEncoder(cfg)
        self.core = SequenceCore(cfg)
        # with tying the decoder IS the encoder core; without it, a twin
        self.decoder_core = self.core if cfg.weight_tying else SequenceCore(cfg)
        self.img_proj = nn.Linear(cfg.d_e, cfg.proj_dim)
        self.ots_proj = nn.Linear(cfg.d_e, cfg.proj_dim)
        self.fom_head = nn.Sequential(
            nn.Linear(cfg.d_e, cfg.d_e), nn.GELU(), nn.Linear(cfg.d_e, 1)
        )
        self.lm_head = nn.Linear(cfg.d_e, cfg.vocab_size)
        nn.init.normal_(self.lm_head.weight, std=0.02)
        nn.init.zeros_(self.lm_head.bias)
        self.logit_scale = nn.Parameter(torch.tensor(math.log(1 / 0.07)))

    def encode_image(self, images: torch.Tensor) -> torch.Tensor:
        return self.funcimg_encoder(images)

    def encode_ots(self, tokens, consts, padding_mask, image_hidden=None):
        rows = self.embedder(tokens, consts)
        context_padding = None
        if image_hidden is not None:
            context_padding = torch.zeros(
                image_hidden.shape[:2], dtype=torch.bool, device=image_hidden.device
            )
        return self.core(rows, padding_mask=padding_mask, causal=False,
                         context=image_hidden, context_padding=context_padding)

    def decode_ots(self, tokens, consts, padding_mask, image_hidden):
        rows = self.embedder(tokens, consts)
        context_padding = torch.zeros(
            image_hidden.shape[:2], dtype=torch.bool, device=image_hidden.device
        )
        hidden = self.decoder_core(rows, padding_mask=padding_mask, causal=True,
                                   context=image_hidden, context_padding=context_padding)
        return self.lm_head(hidden[:, : self.cfg.d_s])

    def image_global(self, images: torch.Tensor) -> torch.Tensor:
        return self.encode_image(images)[:, 0]

    def combined_padding(self, token_mask, const_mask):
        return torch.cat([token_mask, const_mask], dim=1)
