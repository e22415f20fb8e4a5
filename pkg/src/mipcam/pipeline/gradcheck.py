"""Finite-difference verification of the loss gradients.

Runs small double-precision instances of the real architecture (narrow
channel widths) and compares autograd gradients of the classification loss,
the distance loss, and their weighted sum against central finite differences
on a deterministic sample of parameter coordinates.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import torch

from ..errors import ValidationError
from ..losses import classification_loss, distance_map, training_distance_loss
from ..model import build_classifier

LOSS_KINDS = ("loss1", "loss2", "combined")

_SMALL_WIDTHS = (4, 4, 8, 8, 8, 8, 16, 16)
_INPUT_SHAPE = (32, 48)
_BATCH = 2
_FD_STEP = 1e-6


@dataclass
class InstanceResult:
    seed: int
    skipped_degenerate: bool
    n_coordinates: int
    max_rel_error: dict = field(default_factory=dict)
    worst_parameter: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "skipped_degenerate": self.skipped_degenerate,
            "n_coordinates": self.n_coordinates,
            "max_rel_error": self.max_rel_error,
            "worst_parameter": self.worst_parameter,
        }


@dataclass
class GradcheckReport:
    tolerance: float
    lam: float
    passed: bool
    max_rel_error: float
    instances: list[InstanceResult]
    elapsed_seconds: float

    @property
    def failures(self) -> list[str]:
        out = []
        for inst in self.instances:
            for kind, err in inst.max_rel_error.items():
                if err >= self.tolerance:
                    out.append(f"seed {inst.seed} {kind}: rel error {err:.3e} "
                               f"at {inst.worst_parameter.get(kind, '?')}")
        return out

    def to_dict(self) -> dict:
        return {
            "tolerance": self.tolerance,
            "lambda": self.lam,
            "passed": self.passed,
            "max_rel_error": self.max_rel_error,
            "elapsed_seconds": self.elapsed_seconds,
            "failures": self.failures,
            "instances": [inst.to_dict() for inst in self.instances],
        }


def _losses(model, images, labels, dmaps) -> tuple[torch.Tensor, torch.Tensor, bool]:
    logits, feats = model(images)
    loss1 = classification_loss(logits, labels)
    per_sample, hard_degenerate = training_distance_loss(feats, model.head.weight[labels], dmaps)
    # A sample whose hard-rectified map is all zero corresponds to the OP-level
    # degenerate case; skip the instance rather than checking a plateau.
    return loss1, per_sample.mean(), bool(hard_degenerate.any())


def _sample_coordinates(model, rng: np.random.Generator, per_tensor: int):
    coords = []
    for name, param in model.named_parameters():
        n = min(per_tensor, param.numel())
        picks = rng.choice(param.numel(), size=n, replace=False)
        coords.extend((name, param, int(i)) for i in picks)
    return coords


def check_instance(seed: int, lam: float, per_tensor: int = 6) -> InstanceResult:
    """One instance: build, differentiate, and finite-difference a coordinate sample."""
    model = build_classifier(_INPUT_SHAPE, num_classes=2, seed=seed,
                             channel_widths=_SMALL_WIDTHS).double()
    h, w = _INPUT_SHAPE
    gen = torch.Generator().manual_seed(int(seed) + 1)
    images = torch.randn(_BATCH, 1, h, w, generator=gen, dtype=torch.float64)
    labels = torch.randint(0, 2, (_BATCH,), generator=gen)
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x9D]))
    dmaps = torch.from_numpy(np.stack([
        distance_map((h, w), (int(rng.integers(h)), int(rng.integers(w)))) for _ in range(_BATCH)
    ]))

    loss1, loss2, degenerate = _losses(model, images, labels, dmaps)
    result = InstanceResult(seed=seed, skipped_degenerate=degenerate, n_coordinates=0)
    if degenerate:
        return result

    params = [p for _, p in model.named_parameters()]
    analytic = {}
    for kind, loss in (("loss1", loss1), ("loss2", loss2), ("combined", loss1 + lam * loss2)):
        grads = torch.autograd.grad(loss, params, retain_graph=True, allow_unused=True)
        analytic[kind] = {name: g for (name, _), g in zip(model.named_parameters(), grads)}

    coords = _sample_coordinates(model, rng, per_tensor)
    result.n_coordinates = len(coords)
    max_err = {kind: 0.0 for kind in LOSS_KINDS}
    worst = {kind: "" for kind in LOSS_KINDS}
    with torch.no_grad():
        for name, param, flat_idx in coords:
            flat = param.view(-1)
            original = flat[flat_idx].item()
            fd = {}
            for sign in (+1.0, -1.0):
                flat[flat_idx] = original + sign * _FD_STEP
                l1, l2, _ = _losses(model, images, labels, dmaps)
                fd[sign] = {"loss1": l1.item(), "loss2": l2.item(),
                            "combined": l1.item() + lam * l2.item()}
            flat[flat_idx] = original
            for kind in LOSS_KINDS:
                numeric = (fd[+1.0][kind] - fd[-1.0][kind]) / (2 * _FD_STEP)
                grad_tensor = analytic[kind][name]
                exact = 0.0 if grad_tensor is None else grad_tensor.view(-1)[flat_idx].item()
                rel = abs(exact - numeric) / max(abs(exact), abs(numeric), 1e-6)
                if rel > max_err[kind]:
                    max_err[kind] = rel
                    worst[kind] = f"{name}[{flat_idx}]"
    result.max_rel_error = max_err
    result.worst_parameter = worst
    return result


def gradcheck(seed: int = 0, instances: int = 5, tolerance: float = 1e-4,
              lam: float = 1.0, per_tensor: int = 6) -> GradcheckReport:
    """Verify gradients on at least ``instances`` non-degenerate random models.

    Degenerate instances (no positive activation anywhere) are reported with a
    skip flag and replaced; they would require dividing by a zero peak.
    """
    if instances < 1:
        raise ValidationError(f"instances must be >= 1, got {instances}")
    if tolerance <= 0:
        raise ValidationError(f"tolerance must be positive, got {tolerance}")
    start = time.perf_counter()
    results: list[InstanceResult] = []
    completed = 0
    attempt = 0
    while completed < instances and attempt < 4 * instances:
        inst = check_instance(seed + attempt, lam, per_tensor=per_tensor)
        results.append(inst)
        if not inst.skipped_degenerate:
            completed += 1
        attempt += 1
    overall = max((err for inst in results for err in inst.max_rel_error.values()), default=np.inf)
    passed = completed >= instances and overall < tolerance
    return GradcheckReport(tolerance=tolerance, lam=lam, passed=passed,
                           max_rel_error=float(overall), instances=results,
                           elapsed_seconds=time.perf_counter() - start)
