"""Training loop: joint contrastive/matching/modeling optimization with a
warm-up then step-decay schedule, optional encoder-frozen fine-tuning."""

from __future__ import annotations

import csv
import json
import os
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch

from .errors import SchemaMismatch
from .io import PairDataset
from .losses import NegativeQueue, foc_loss, fom_loss, lm_loss
from .model import MedModel, ModelConfig
from .tokenizer import TokenizerConfig, tokenize_batch


@dataclass(frozen=True)
class TrainSchedule:
    warmup_start_lr: float = 1e-6
    peak_lr: float = 1e-4
    step_period: int = 5
    decay: float = 0.9
    epochs: int = 5
    warmup_epochs: int = 1
    batch_size: int = 16
    noise_sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not self.warmup_start_lr < self.peak_lr:
            raise ValueError("warmup must start below the peak learning rate")

    def lr_at(self, epoch: int, step: int, steps_per_epoch: int) -> float:
        if epoch < self.warmup_epochs:
            total = max(1, self.warmup_epochs * steps_per_epoch)
            t = (epoch * steps_per_epoch + step) / total
            return self.warmup_start_lr + t * (self.peak_lr - self.warmup_start_lr)
        return self.peak_lr * self.decay ** ((epoch - self.warmup_epochs) // self.step_period)


class Batcher:
    """Deterministic shuffled minibatches of tokenized pairs."""

    def __init__(self, dataset: PairDataset, tok_cfg: TokenizerConfig,
                 pair_ids=None, noise_sigma: float = 0.0, seed: int = 0):
        self.dataset = dataset
        self.tok_cfg = tok_cfg
        self.pair_ids = list(pair_ids) if pair_ids is not None else [r.pair_id for r in dataset.rows]
        self.noise_sigma = noise_sigma
        self.seed = seed
        self.images = {}
        self.masks = {}
        for pid in self.pair_ids:
            data, mask = dataset.image(pid)
            self.images[pid] = torch.from_numpy(data.astype(np.float32))
            self.masks[pid] = torch.from_numpy(mask)

    def __len__(self) -> int:
        return len(self.pair_ids)

    def epoch_batches(self, epoch: int, batch_size: int):
        order = np.random.Generator(np.random.Philox(
            np.random.SeedSequence((self.seed, epoch)))).permutation(len(self.pair_ids))
        noise_gen = torch.Generator().manual_seed(self.seed * 100_003 + epoch)
        for start in range(0, len(order), batch_size):
            chunk = [self.pair_ids[i] for i in order[start:start + batch_size]]
            if len(chunk) < 2:
                continue  # contrastive and matching losses need pairs to contrast
            rows = [self.dataset.row(pid) for pid in chunk]
            tokens, consts, token_mask, const_mask = tokenize_batch(
                [(r.ots, r.constants) for r in rows], self.tok_cfg, mode="encode"
            )
            dec_tokens, _, dec_mask, _ = tokenize_batch(
                [(r.ots, r.constants) for r in rows], self.tok_cfg, mode="decode"
            )
            images = torch.stack([self.images[pid] for pid in chunk])
            if self.noise_sigma > 0:
                mask = torch.stack([self.masks[pid] for pid in chunk])
                noise = torch.randn(images.shape, generator=noise_gen) * self.noise_sigma
                images = torch.where(mask, (images + noise).clamp(0.0, 1.0), images)
            yield {
                "images": images,
                "tokens": tokens,
                "consts": consts,
                "token_mask": token_mask,
                "const_mask": const_mask,
                "dec_tokens": dec_tokens,
                "dec_mask": dec_mask,
            }


def vocab_fingerprint(dataset: PairDataset) -> dict:
    return {
        "n_operators": dataset.vocab.n_operators,
        "special": dict(sorted(dataset.vocab.special.items())),
    }


def train(
    dataset_path,
    out_dir,
    model_cfg: ModelConfig | None = None,
    schedule: TrainSchedule | None = None,
    finetune: bool = False,
    init_checkpoint=None,
    loss_weights: tuple[float, float, float] = (1.0, 1.0, 1.0),
):
    """Train on a pair dataset; writes checkpoint.pt and losses.csv.

    In fine-tune mode the function-image encoder is frozen and only the
    sequence-modeling objective trains the decoder path.
    """
    schedule = schedule or TrainSchedule()
    dataset = PairDataset(dataset_path)
    tok_cfg = TokenizerConfig.for_dataset(
        dataset.vocab, dataset.max_ots_length(), dataset.max_constants()
    )
    if model_cfg is None:
        model_cfg = ModelConfig(
            resolution=dataset.resolution,
            n_scales=dataset.n_scales,
            d_s=tok_cfg.d_s,
            d_c=tok_cfg.d_c,
            vocab_size=dataset.vocab.extended_size,
        )
    _check_geometry(model_cfg, dataset, tok_cfg)
    # pad sequences to the model's capacity rather than the dataset minimum
    tok_cfg = TokenizerConfig(
        d_s=model_cfg.d_s, d_c=model_cfg.d_c,
        cls_id=tok_cfg.cls_id, bos_id=tok_cfg.bos_id, pad_id=tok_cfg.pad_id,
    )

    torch.manual_seed(schedule.seed)
    model = MedModel(model_cfg)
    if init_checkpoint is not None:
        payload = torch.load(init_checkpoint, weights_only=False)
        if payload["vocab"] != vocab_fingerprint(dataset):
            raise SchemaMismatch("checkpoint was trained against a different vocab")
        model.load_state_dict(payload["state"])

    frozen = []
    if finetune:
        frozen = [model.funcimg_encoder]
        for module in frozen:
            for p in module.parameters():
                p.requires_grad_(False)

    trainable = [p for p in model.parameters() if p.requires_grad]
    optimizer = torch.optim.AdamW(trainable, lr=schedule.warmup_start_lr, weight_decay=0.01)
    img_queue = NegativeQueue(model_cfg.queue_size, model_cfg.proj_dim)
    ots_queue = NegativeQueue(model_cfg.queue_size, model_cfg.proj_dim)
    batcher = Batcher(dataset, tok_cfg, noise_sigma=schedule.noise_sigma, seed=schedule.seed)
    steps_per_epoch = max(1, len(batcher) // schedule.batch_size)
    fom_gen = torch.Generator().manual_seed(schedule.seed + 1)

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    history = []
    w_foc, w_fom, w_lm = loss_weights
    for epoch in range(schedule.epochs):
        sums = {"foc": 0.0, "fom": 0.0, "lm": 0.0}
        n_steps = 0
        epoch_lr = schedule.lr_at(epoch, 0, steps_per_epoch)
        for step, batch in enumerate(batcher.epoch_batches(epoch, schedule.batch_size)):
            lr = schedule.lr_at(epoch, step, steps_per_epoch)
            for group in optimizer.param_groups:
                group["lr"] = lr
            optimizer.zero_grad()
            if finetune:
                lm = lm_loss(model, batch["images"], batch["dec_tokens"], batch["consts"],
                             batch["dec_mask"], batch["const_mask"])
                total = w_lm * lm
                foc = fom = torch.tensor(float("nan"))
            else:
                foc = foc_loss(model, batch["images"], batch["tokens"], batch["consts"],
                               batch["token_mask"], batch["const_mask"], img_queue, ots_queue)
                fom = fom_loss(model, batch["images"], batch["tokens"], batch["consts"],
                               batch["token_mask"], batch["const_mask"], fom_gen)
                lm = lm_loss(model, batch["images"], batch["dec_tokens"], batch["consts"],
                             batch["dec_mask"], batch["const_mask"])
                total = w_foc * foc + w_fom * fom + w_lm * lm
            total.backward()
            optimizer.step()
            sums["foc"] += float(foc)
            sums["fom"] += float(fom)
            sums["lm"] += float(lm)
            n_steps += 1
        history.append({
            "epoch": epoch,
            "foc": sums["foc"] / n_steps,
            "fom": sums["fom"] / n_steps,
            "lm": sums["lm"] / n_steps,
            "lr": epoch_lr,
        })

    with open(out / "losses.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=["epoch", "foc", "fom", "lm", "lr"])
        writer.writeheader()
        writer.writerows(history)

    checkpoint = {
        "state": model.state_dict(),
        "model_cfg": asdict(model_cfg),
        "tokenizer": asdict(tok_cfg),
        "vocab": vocab_fingerprint(dataset),
        "schedule": asdict(schedule),
    }
    tmp = out / "checkpoint.pt.tmp"
    torch.save(checkpoint, tmp)
    os.replace(tmp, out / "checkpoint.pt")  # atomic publish
    (out / "train_meta.json").write_text(
        json.dumps({"dataset": str(dataset_path), "finetune": finetune,
                    "epochs": schedule.epochs}, indent=2),
        encoding="utf-8",
    )
    return out / "checkpoint.pt", history


def _check_geometry(model_cfg: ModelConfig, dataset: PairDataset, tok_cfg: TokenizerConfig):
    if model_cfg.resolution != dataset.resolution or model_cfg.n_scales != dataset.n_scales:
        raise SchemaMismatch(
            f"model expects {model_cfg.n_scales}x{model_cfg.resolution}^2 images, dataset "
            f"provides {dataset.n_scales}x{dataset.resolution}^2"
        )
    if model_cfg.d_s < tok_cfg.d_s or model_cfg.d_c < tok_cfg.d_c:
        raise SchemaMismatch("model sequence capacity is below the dataset's needs")
    if model_cfg.vocab_size != dataset.vocab.extended_size:
        raise SchemaMismatch("model vocab size differs from the dataset vocab")


def load_checkpoint(path):
    payload = torch.load(path, weights_only=False)
    model_cfg = ModelConfig(**payload["model_cfg"])
    model = MedModel(model_cfg)
    model.load_state_dict(payload["state"])
    model.eval()
    tok_cfg = TokenizerConfig(**payload["tokenizer"])
    return model, tok_cfg, payload
