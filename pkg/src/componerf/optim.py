"""Differentiation plumbing and the optimizer.

Rendered images come back attached to a ``RenderTape`` that remembers which
named parameters produced them. Guidance providers hand us a gradient with
respect to the image, and ``backward_from_image_grad`` turns that into
per-parameter gradients via one vector-Jacobian product. The per-view
gradients are then combined by ``assemble_total_gradient`` with the loss
weights, and ``adam_step`` applies the update as a pure function of
(params, grads, state).
"""

from dataclasses import dataclass, field

import torch

from .errors import RegistryMismatch, ShapeMismatch

__all__ = [
    "LossWeights",
    "RenderTape",
    "backward_from_image_grad",
    "sparsity_loss",
    "assemble_total_gradient",
    "AdamState",
    "adam_step",
]

_WEIGHT_EPS = 1e-5


@dataclass(frozen=True)
class LossWeights:
    """Scalar weights for the three loss terms."""

    alpha_global: float = 100.0
    alpha_local: float = 100.0
    beta: float = 5e-4


class RenderTape:
    """Binds rendered tensors to the named parameters they depend on.

    The tape does not record operations itself; autograd does. It exists so
    gradient consumers can ask for "the gradient of this image with respect
    to every registered parameter, by name" without holding module objects.
    """

    def __init__(self, params: dict[str, torch.Tensor]):
        self._names = list(params)
        self._params = dict(params)

    @property
    def names(self) -> list[str]:
        return list(self._names)

    def param(self, name: str) -> torch.Tensor:
        return self._params[name]


def backward_from_image_grad(
    tape: RenderTape, image: torch.Tensor, image_grad: torch.Tensor
) -> dict[str, torch.Tensor]:
    """Vector-Jacobian product of ``image`` against every tape parameter.

    Args:
        tape: parameter registry the image was rendered under.
        image: rendered tensor, still attached to the autograd graph.
        image_grad: cotangent with the same shape as ``image``.

    Returns:
        Mapping from parameter name to gradient tensor (zeros for params
        the image does not depend on).

    Raises:
        ShapeMismatch: if the cotangent shape differs from the image shape.
    """
    if tuple(image_grad.shape) != tuple(image.shape):
        raise ShapeMismatch(
            f"image grad shape {tuple(image_grad.shape)} != image shape {tuple(image.shape)}"
        )
    params = [tape.param(name) for name in tape.names]
    grads = torch.autograd.grad(
        outputs=image,
        inputs=params,
        grad_outputs=image_grad.to(image.dtype),
        retain_graph=True,
        allow_unused=True,
    )
    out = {}
    for name, param, grad in zip(tape.names, params, grads):
        out[name] = torch.zeros_like(param) if grad is None else grad
    return out


def sparsity_loss(weights: torch.Tensor) -> torch.Tensor:
    """Mean binary entropy of per-ray accumulated weights.

    Weights are clamped into [1e-5, 1 - 1e-5] before the logs so the loss
    stays finite at fully transparent or fully opaque rays; the entropy is
    evaluated entirely on the clamped value.
    """
    w = weights.clamp(_WEIGHT_EPS, 1.0 - _WEIGHT_EPS)
    return (-w * torch.log(w) - (1.0 - w) * torch.log(1.0 - w)).mean()


def assemble_total_gradient(
    global_grads: dict[str, torch.Tensor],
    local_grads: dict[str, dict[str, torch.Tensor]],
    sparsity_grads: dict[str, torch.Tensor],
    weights: LossWeights,
) -> dict[str, torch.Tensor]:
    """Combine per-view gradients into the total objective gradient.

    total = alpha_global * global + alpha_local * sum(local views) + beta * sparsity

    Every input dict must cover exactly the same parameter names; a missing
    or extra name means two views were rendered under different registries,
    which is a caller bug we refuse to paper over.

    Raises:
        RegistryMismatch: if any gradient dict disagrees on parameter names.
    """
    names = sorted(global_grads)
    reference = set(names)

    def check(tag: str, grads: dict[str, torch.Tensor]) -> None:
        if set(grads) != reference:
            missing = sorted(reference - set(grads))
            extra = sorted(set(grads) - reference)
            raise RegistryMismatch(
                f"{tag} gradient registry mismatch: missing {missing}, extra {extra}"
            )

    check("sparsity", sparsity_grads)
    for node_id in sorted(local_grads):
        check(f"local:{node_id}", local_grads[node_id])

    total = {}
    for name in names:
        acc = weights.alpha_global * global_grads[name] + weights.beta * sparsity_grads[name]
        for node_id in sorted(local_grads):
            acc = acc + weights.alpha_local * local_grads[node_id][name]
        total[name] = acc
    return total


@dataclass
class AdamState:
    """First/second moment accumulators, keyed like the parameter registry."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, torch.Tensor] = field(default_factory=dict)
    v: dict[str, torch.Tensor] = field(default_factory=dict)


def adam_step(
    params: dict[str, torch.Tensor],
    grads: dict[str, torch.Tensor],
    state: AdamState,
) -> tuple[dict[str, torch.Tensor], AdamState]:
    """One Adam update as a pure function.

    Returns new parameter tensors and a new state; inputs are not mutated.
    With zero-initialized moments the first step moves each coordinate by
    -lr * g / (|g| + eps) after bias correction.
    """
    if set(params) != set(grads):
        raise RegistryMismatch(
            f"params/grads disagree: {sorted(set(params) ^ set(grads))}"
        )
    for name, p in params.items():
        if p.shape != grads[name].shape:
            raise ShapeMismatch(
                f"grad for {name!r} has shape {tuple(grads[name].shape)}, "
                f"parameter has {tuple(p.shape)}"
            )
    t = state.step + 1
    new_m, new_v, new_params = {}, {}, {}
    bc1 = 1.0 - state.beta1**t
    bc2 = 1.0 - state.beta2**t
    for name in sorted(params):
        g = grads[name]
        m_prev = state.m.get(name)
        v_prev = state.v.get(name)
        m = state.beta1 * m_prev + (1 - state.beta1) * g if m_prev is not None else (1 - state.beta1) * g
        v = state.beta2 * v_prev + (1 - state.beta2) * g * g if v_prev is not None else (1 - state.beta2) * g * g
        m_hat = m / bc1
        v_hat = v / bc2
        new_params[name] = params[name] - state.lr * m_hat / (torch.sqrt(v_hat) + state.eps)
        new_m[name] = m
        new_v[name] = v
    next_state = AdamState(
        lr=state.lr,
        beta1=state.beta1,
        beta2=state.beta2,
        eps=state.eps,
        step=t,
        m=new_m,
        v=new_v,
    )
    return new_params, next_state
