"""Joint training on both losses: per step, forward a mini-batch of view
images, compute cross-entropy, compute ground-truth-class activation maps,
compute the distance loss against each view's projected centre, and update
with Adam on the weighted sum.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from ..errors import NumericError, ValidationError
from ..losses import LossBreakdown, classification_loss, distance_map, training_distance_loss
from ..model import MipClassifier, build_classifier
from .config import TrainConfig
from .data import PreparedCase


@dataclass(frozen=True)
class StepRecord:
    epoch: int
    step: int
    losses: LossBreakdown

    def to_record(self) -> dict:
        record = {"epoch": self.epoch, "step": self.step}
        record.update(self.losses.to_record())
        return record


def _flatten_examples(cases: Sequence[PreparedCase]):
    """Stack every (case, view) pair into tensors: images, labels, distance maps."""
    images, labels, dmaps = [], [], []
    for case in cases:
        if case.centers is None:
            raise ValidationError(f"{case.case_id}: training requires centre annotations")
        h, w = case.images.shape[1:]
        for view_idx in range(2):
            images.append(case.images[view_idx])
            labels.append(case.label)
            u, v = case.centers[view_idx][0], case.centers[view_idx][1]
            dmaps.append(distance_map((h, w), (u, v)).astype(np.float32))
    return (
        torch.from_numpy(np.stack(images)).unsqueeze(1),
        torch.tensor(labels, dtype=torch.long),
        torch.from_numpy(np.stack(dmaps)),
    )


def _dump_batch(dump_dir, step: int, images, labels, message: str) -> str:
    path = Path(dump_dir) / f"diverged_step{step:06d}.npz"
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savez(path, images=images.numpy(), labels=labels.numpy(), message=np.array(message))
    return str(path)


def train(cases: Sequence[PreparedCase], cfg: TrainConfig,
          dump_dir=None) -> tuple[MipClassifier, list[StepRecord]]:
    """Train a classifier on prepared cases; reproducible for a fixed config.

    Returns the model and the per-step loss history.  A non-finite loss
    aborts with :class:`NumericError` after dumping the offending batch (when
    ``dump_dir`` is given).
    """
    if not cases:
        raise ValidationError("training requires a non-empty dataset")
    images, labels, dmaps = _flatten_examples(cases)
    image_shape = tuple(images.shape[2:])
    model = build_classifier(image_shape, num_classes=2, seed=cfg.seed)
    optimizer = torch.optim.Adam(model.parameters(), lr=cfg.learning_rate,
                                 betas=cfg.adam_betas, eps=cfg.adam_eps,
                                 weight_decay=cfg.weight_decay)
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0xBA7C4]))
    n_examples = images.shape[0]
    history: list[StepRecord] = []
    step = 0
    model.train()
    for epoch in range(cfg.epochs):
        order = rng.permutation(n_examples)
        for start in range(0, n_examples, cfg.batch_size):
            idx = torch.from_numpy(order[start:start + cfg.batch_size].copy())
            batch = images.index_select(0, idx)
            batch_labels = labels.index_select(0, idx)
            batch_dmaps = dmaps.index_select(0, idx)

            try:
                logits, feats = model(batch)
                loss1 = classification_loss(logits, batch_labels)
                if cfg.lam > 0:
                    per_sample, _ = training_distance_loss(feats, model.head.weight[batch_labels],
                                                           batch_dmaps)
                    loss2 = per_sample.mean()
                    loss = loss1 + cfg.lam * loss2
                else:
                    with torch.no_grad():  # logged for the record, not trained on
                        per_sample, _ = training_distance_loss(
                            feats, model.head.weight[batch_labels], batch_dmaps)
                        loss2 = per_sample.mean()
                    loss = loss1
                breakdown = LossBreakdown(loss1.item(), loss2.item(), cfg.lam)
            except NumericError as exc:
                message = f"training diverged at epoch {epoch} step {step}: {exc}"
                if dump_dir is not None:
                    dump = _dump_batch(dump_dir, step, batch, batch_labels, message)
                    message += f" (batch dumped to {dump})"
                raise NumericError(message) from exc

            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            history.append(StepRecord(epoch=epoch, step=step, losses=breakdown))
            step += 1
    model.eval()
    return model, history
