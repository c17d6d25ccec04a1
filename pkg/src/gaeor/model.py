"""Two-pathway network and the composite training objective."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields

import torch
from torch import nn

from . import gae as gae_ops
from .backbone import Backbone, BackboneConfig
from .exceptions import ConfigurationError, NumericError
from .gat import transfer_loss
from .sda import DEFAULT_GRID_SIDE, DEFAULT_SIGMA, SaliencyAmplifier, regularization_loss


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 0.3
    beta: float = 0.5
    gamma: float = 0.5
    aux: float = 1.0

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not (v >= 0 and math.isfinite(v)):
                raise ConfigurationError(f"loss weight {f.name} must be a finite nonnegative number, got {v}")


@dataclass(frozen=True)
class Components:
    """Which parts of the pipeline run during training.

    With every flag off except the defaults of the ablation switches the
    model reduces to a plain classifier.
    """

    sda: bool = True
    gae: bool = True
    gat: bool = True
    aux_warped_ce: bool = True
    cam_feedback: bool = False
    masked: bool = True
    sd_mode: bool = True
    cartesian_mode: bool = False
    gat_bidirectional: bool = False

    @classmethod
    def baseline(cls) -> "Components":
        return cls(sda=False, gae=False, gat=False, aux_warped_ce=False)

    def replace(self, **kw) -> "Components":
        d = asdict(self)
        d.update(kw)
        return Components(**d)


@dataclass
class LossBreakdown:
    l_cls: float = 0.0
    l_reg: float = 0.0
    l_dis: float = 0.0
    l_ang: float = 0.0
    l_gae: float = 0.0
    l_gat: float = 0.0
    aux_cls: float = 0.0
    total: float = 0.0

    def as_dict(self) -> dict:
        return asdict(self)

    def recombine(self, w: LossWeights) -> float:
        return self.l_cls + w.alpha * self.l_reg + w.beta * self.l_gae + w.gamma * self.l_gat + w.aux * self.aux_cls


class GAEorNet(nn.Module):
    """Shared backbone, feedback generator and polar head.

    Both pathways call the same ``backbone`` instance, so weight sharing is
    structural.
    """

    def __init__(
        self,
        num_classes: int,
        backbone: BackboneConfig | None = None,
        sigma: float = DEFAULT_SIGMA,
        grid_side: int = DEFAULT_GRID_SIDE,
    ):
        super().__init__()
        self.backbone = Backbone(backbone or BackboneConfig(), num_classes)
        C = self.backbone.config.out_channels
        self.amplifier = SaliencyAmplifier(C, sigma, grid_side)
        self.head = gae_ops.PolarHead(C)

    @property
    def num_classes(self) -> int:
        return self.backbone.num_classes

    def forward(self, image: torch.Tensor) -> torch.Tensor:
        """Inference path: logits from the classification branch only."""
        return self.backbone(image)

    def cam_feedback(self, features: torch.Tensor, logits: torch.Tensor) -> torch.Tensor:
        """Class activation map of the predicted class, standardised and squashed to (0, 1)."""
        k = logits.detach().argmax(dim=1)
        w = self.backbone.fc.weight[k]  # (B, C)
        cam = torch.einsum("bc,bchw->bhw", w, features)
        mu = cam.mean(dim=(1, 2), keepdim=True)
        sd = cam.std(dim=(1, 2), keepdim=True, unbiased=False).clamp_min(1e-6)
        return torch.sigmoid((cam - mu) / sd)


@dataclass
class StepOutput:
    total: torch.Tensor
    losses: LossBreakdown
    logits: torch.Tensor
    debug: dict


def _ce(logits: torch.Tensor, labels: torch.Tensor, reduction: str) -> torch.Tensor:
    per = -torch.log_softmax(logits, dim=1).gather(1, labels[:, None]).squeeze(1)
    return per.mean() if reduction == "mean" else per.sum()


def forward_step(
    model: GAEorNet,
    images: torch.Tensor,
    labels: torch.Tensor,
    weights: LossWeights = LossWeights(),
    components: Components = Components(),
    reduction: str = "mean",
    gamma_scale: float = 1.0,
    keep_debug: bool = False,
) -> StepOutput:
    """Run both pathways on a batch and assemble the weighted objective.

    Disabled components contribute exactly zero and are not computed.
    Raises ``NumericError`` naming the first non-finite component.
    """
    if not torch.isfinite(images).all():
        raise NumericError("input batch contains non-finite pixels", dump={"input": float("nan")})
    bb = model.backbone
    zero = images.new_zeros(())
    F = bb.encode(images)
    logits = bb.logits(F)
    l_cls = _ce(logits, labels, reduction)
    l_reg = l_dis = l_ang = l_gae = l_gat = aux = zero
    debug = {}

    T = None
    if components.sda:
        D = model.cam_feedback(F, logits) if components.cam_feedback else model.amplifier.generator(F)
        l_reg = regularization_loss(D)
        warped, grid = model.amplifier.warp(images, D)
        T = bb.encode(warped)
        if components.aux_warped_ce:
            aux = _ce(bb.logits(T), labels, reduction)
        if keep_debug:
            debug.update(D=D.detach(), grid=grid.detach(), warped=warped.detach())
    elif components.gae or components.gat:
        T = F

    if components.gae:
        pm = gae_ops.pattern_map(T)
        ref = gae_ops.locate_reference(pm)
        H, W = T.shape[-2:]
        make = gae_ops.cartesian_targets if components.cartesian_mode else gae_ops.polar_targets
        targets = make(ref, H, W, dtype=T.dtype)
        pred = gae_ops.predict_polar(T, ref, model.head)
        mask = gae_ops.loss_mask(pm, ref, masked=components.masked)
        deviation = components.sd_mode and not components.cartesian_mode
        l_dis, l_ang, l_gae = gae_ops.gae_loss(pred, targets, mask, deviation=deviation)
        if keep_debug:
            debug.update(pattern=pm.values, reference=ref, gae_records=gae_ops.debug_records(pm, ref, pred, targets, mask))

    if components.gat:
        l_gat = transfer_loss(T, F, bidirectional=components.gat_bidirectional)

    gamma = weights.gamma * gamma_scale
    total = l_cls + weights.alpha * l_reg + weights.beta * l_gae + gamma * l_gat + weights.aux * aux

    parts = {
        "l_cls": l_cls,
        "l_reg": l_reg,
        "l_dis": l_dis,
        "l_ang": l_ang,
        "l_gae": l_gae,
        "l_gat": l_gat,
        "aux_cls": aux,
        "total": total,
    }
    values = {k: float(v.detach()) for k, v in parts.items()}
    bad = [k for k, v in values.items() if not math.isfinite(v)]
    if bad:
        raise NumericError(f"non-finite loss component(s): {', '.join(bad)}", dump=values)
    return StepOutput(total, LossBreakdown(**values), logits, debug)
