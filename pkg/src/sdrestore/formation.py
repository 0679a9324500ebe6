"""Formation models, composition loss, analytic gradients, reconstruction.

The two branch outputs S (structure) and D (detail) are tied to the
training label X through a known formation rule:

- ``identity``: the components simply add, X = S + D.  Used for
  super-resolution, edge-preserving filtering and deraining.
- ``airlight``: the physical haze model I = J*D + S*(1-D), where J is the
  clear image, S the per-pixel atmospheric light and D the transmission
  map.  During training the composition must re-produce the hazy
  observation (X = I); at test time the clear image is recovered by
  inverting the model with the transmission clamped from below at ``d0``:

      J_est = (I - S) / max(D, d0) + S.

All squared-error terms are means over elements, so loss magnitudes are
independent of patch size; the analytic gradients carry the matching
1/N factor.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .tensor import ShapeError, Tensor, require_same_shape


class Task(enum.Enum):
    SUPER_RESOLUTION = "super_resolution"
    FILTERING = "filtering"
    DERAINING = "deraining"
    DEHAZING = "dehazing"


class FormationKind(enum.Enum):
    IDENTITY = "identity"
    AIR_LIGHT = "airlight"


@dataclass(frozen=True)
class FormationModel:
    kind: FormationKind
    d0: float = 0.1

    def __post_init__(self):
        if not 0.0 < self.d0 <= 1.0:
            raise ValueError(f"d0 must be in (0, 1], got {self.d0}")


IDENTITY = FormationModel(FormationKind.IDENTITY)
AIR_LIGHT = FormationModel(FormationKind.AIR_LIGHT)


@dataclass(frozen=True)
class LossWeights:
    """Trade-off weights (alpha, lam, gamma) for composition/structure/detail."""

    alpha: float
    lam: float
    gamma: float

    def __post_init__(self):
        if self.alpha < 0 or self.lam < 0 or self.gamma < 0:
            raise ValueError("loss weights must be non-negative")
        if self.alpha == 0 and self.lam == 0 and self.gamma == 0:
            raise ValueError("at least one loss weight must be positive")


def task_weights(task: Task) -> LossWeights:
    """Per-task default loss weights."""
    return {
        Task.SUPER_RESOLUTION: LossWeights(1.0, 0.001, 0.01),
        Task.FILTERING: LossWeights(1.0, 1e-4, 0.0),
        Task.DERAINING: LossWeights(1.0, 0.01, 0.0),
        Task.DEHAZING: LossWeights(0.1, 0.9, 0.9),
    }[task]


def task_formation(task: Task, d0: float = 0.1) -> FormationModel:
    if task is Task.DEHAZING:
        return FormationModel(FormationKind.AIR_LIGHT, d0=d0)
    return FormationModel(FormationKind.IDENTITY, d0=d0)


@dataclass(frozen=True)
class SampleTargets:
    """Per-sample ground truths.

    X is the label the composition must reproduce (for dehazing this is
    the hazy observation itself).  S_gt / D_gt are the branch targets;
    D_gt may be absent for tasks that define no detail target (the
    detail term then reads as zero).  J is the clear image (airlight
    only) and I the network input.
    """

    X: Tensor
    S_gt: Tensor
    I: Tensor
    D_gt: Tensor | None = None
    J: Tensor | None = None

    def __post_init__(self):
        require_same_shape(self.X, self.S_gt, "X and S_gt")
        require_same_shape(self.X, self.I, "X and I")
        if self.D_gt is not None:
            require_same_shape(self.X, self.D_gt, "X and D_gt")
        if self.J is not None:
            require_same_shape(self.X, self.J, "X and J")


@dataclass(frozen=True)
class LossBreakdown:
    """Evaluated loss terms; total = alpha*composition + lam*structure + gamma*detail."""

    total: float
    composition: float
    structure: float
    detail: float
    residual: Tensor | None = None


def compose(model: FormationModel, S: Tensor, D: Tensor, targets: SampleTargets) -> Tensor:
    """Apply the formation rule to the two components."""
    require_same_shape(S, D, "S and D")
    require_same_shape(S, targets.X, "components and targets")
    if model.kind is FormationKind.IDENTITY:
        return S + D
    if targets.J is None:
        raise ShapeError("airlight composition needs the clear image J in targets")
    return targets.J * D + S * (1.0 - D)


def loss(
    model: FormationModel,
    weights: LossWeights,
    S: Tensor,
    D: Tensor,
    targets: SampleTargets,
) -> LossBreakdown:
    """Composition + branch regularizer losses, all as means over elements."""
    residual = compose(model, S, D, targets) - targets.X
    composition = float(np.mean(residual * residual))
    ds = S - targets.S_gt
    structure = float(np.mean(ds * ds))
    if targets.D_gt is None:
        detail = 0.0
    else:
        dd = D - targets.D_gt
        detail = float(np.mean(dd * dd))
    total = weights.alpha * composition + weights.lam * structure + weights.gamma * detail
    return LossBreakdown(
        total=total,
        composition=composition,
        structure=structure,
        detail=detail,
        residual=residual,
    )


def loss_gradients(
    model: FormationModel,
    weights: LossWeights,
    S: Tensor,
    D: Tensor,
    targets: SampleTargets,
) -> tuple[Tensor, Tensor]:
    """Analytic (dL/dS, dL/dD) for the total loss.

    With E the composition residual and N the element count:

    - identity:  dS = (2a/N) E + (2l/N)(S - S_gt)
                 dD = (2a/N) E + (2g/N)(D - D_gt)
    - airlight:  dS = (2a/N)(1 - D) E + (2l/N)(S - S_gt)
                 dD = (2a/N)(J - S) E + (2g/N)(D - D_gt)

    The (1 - D) and (J - S) factors are the full partial derivatives of
    the airlight composition with respect to S and D.
    """
    residual = compose(model, S, D, targets) - targets.X
    n = float(S.size)
    if model.kind is FormationKind.IDENTITY:
        comp_s = residual
        comp_d = residual
    else:
        comp_s = (1.0 - D) * residual
        comp_d = (targets.J - S) * residual
    grad_s = (2.0 * weights.alpha / n) * comp_s + (2.0 * weights.lam / n) * (S - targets.S_gt)
    if targets.D_gt is None:
        grad_d = (2.0 * weights.alpha / n) * comp_d
    else:
        grad_d = (2.0 * weights.alpha / n) * comp_d + (2.0 * weights.gamma / n) * (D - targets.D_gt)
    return grad_s, grad_d


def reconstruct(model: FormationModel, S: Tensor, D: Tensor, I: Tensor) -> Tensor:
    """Test-time output: S + D for identity, clamped haze inversion for airlight."""
    require_same_shape(S, D, "S and D")
    require_same_shape(S, I, "components and input")
    if model.kind is FormationKind.IDENTITY:
        return S + D
    return (I - S) / np.maximum(D, model.d0) + S
