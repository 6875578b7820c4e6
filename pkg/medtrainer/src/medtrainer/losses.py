"""Pre-training objectives: contrastive alignment, match classification,
and next-token modeling, with a rolling negative queue."""

from __future__ import annotations

import torch
import torch.nn.functional as F

from .model import MedModel


class NegativeQueue:
    """FIFO store of past projection vectors used as extra negatives."""

    def __init__(self, size: int, dim: int):
        self.size = size
        self.buffer = torch.zeros(size, dim)
        self.ptr = 0
        self.count = 0

    def __len__(self) -> int:
        return self.count

    def snapshot(self) -> torch.Tensor:
        return self.buffer[: self.count].clone()

    def push(self, batch: torch.Tensor) -> None:
        batch = batch.detach()
        for row in batch:
            self.buffer[self.ptr] = row
            self.ptr = (self.ptr + 1) % self.size
            self.count = min(self.count + 1, self.size)


def global_projections(model: MedModel, images, tokens, consts, token_mask, const_mask):
    """L2-normalized contrastive projections of both modalities."""
    img_hidden = model.encode_image(images)
    img_z = F.normalize(model.img_proj(img_hidden[:, 0]), dim=-1)
    padding = model.combined_padding(token_mask, const_mask)
    ots_hidden = model.encode_ots(tokens, consts, padding)  # no cross-attention
    ots_z = F.normalize(model.ots_proj(ots_hidden[:, 0]), dim=-1)
    return img_z, ots_z


def foc_loss(model: MedModel, images, tokens, consts, token_mask, const_mask,
             img_queue: NegativeQueue, ots_queue: NegativeQueue,
             update_queues: bool = True) -> torch.Tensor:
    """Symmetric InfoNCE over global states; negatives from batch + queue."""
    img_z, ots_z = global_projections(model, images, tokens, consts, token_mask, const_mask)
    scale = model.logit_scale.exp().clamp(max=100.0)
    ots_bank = torch.cat([ots_z, ots_queue.snapshot()], dim=0)
    img_bank = torch.cat([img_z, img_queue.snapshot()], dim=0)
    logits_i2t = scale * img_z @ ots_bank.T
    logits_t2i = scale * ots_z @ img_bank.T
    labels = torch.arange(img_z.shape[0], device=img_z.device)
    loss = 0.5 * (F.cross_entropy(logits_i2t, labels) + F.cross_entropy(logits_t2i, labels))
    if update_queues:
        img_queue.push(img_z)
        ots_queue.push(ots_z)
    return loss


def fom_loss(model: MedModel, images, tokens, consts, token_mask, const_mask,
             generator: torch.Generator) -> torch.Tensor:
    """Match/no-match classification with in-batch negative pairings.

    The constants array is hidden from the matcher: values are replaced by
    the mask value (0) before embedding.
    """
    batch = images.shape[0]
    masked_consts = torch.zeros_like(consts)
    img_hidden = model.encode_image(images)
    padding = model.combined_padding(token_mask, const_mask)

    pos_hidden = model.encode_ots(tokens, masked_consts, padding, image_hidden=img_hidden)
    pos_logits = model.fom_head(pos_hidden[:, 0]).squeeze(-1)

    # a derangement of the batch pairs each image with a wrong sequence
    shift = int(torch.randint(1, batch, (1,), generator=generator).item())
    neg_index = (torch.arange(batch) + shift) % batch
    neg_hidden = model.encode_ots(
        tokens[neg_index], masked_consts[neg_index], padding[neg_index],
        image_hidden=img_hidden,
    )
    neg_logits = model.fom_head(neg_hidden[:, 0]).squeeze(-1)

    logits = torch.cat([pos_logits, neg_logits])
    targets = torch.cat([torch.ones(batch), torch.zeros(batch)])
    return F.binary_cross_entropy_with_logits(logits, targets)


def lm_loss(model: MedModel, images, tokens, consts, token_mask, const_mask) -> torch.Tensor:
    """Causal next-token cross-entropy with cross-attention to the image."""
    img_hidden = model.encode_image(images)
    padding = model.combined_padding(token_mask, const_mask)
    logits = model.decode_ots(tokens, consts, padding, img_hidden)
    # predict token t+1 from position t; padding targets excluded
    shift_logits = logits[:, :-1]
    shift_targets = tokens[:, 1:]
    shift_mask = token_mask[:, 1:]
    flat = F.cross_entropy(
        shift_logits.reshape(-1, shift_logits.shape[-1]),
        shift_targets.reshape(-1),
        reduction="none",
    )
    keep = shift_mask.reshape(-1).float()
    return (flat * keep).sum() / keep.sum().clamp(min=1.0)
