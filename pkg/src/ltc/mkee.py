"""Online pseudo-unknown generation.

Anchors are mixup interpolations of cross-class input pairs.  Each anchor
takes one normalized gradient-ascent step on an objective that rewards
predictive entropy and penalizes kernel density against the batch's own
features, landing it in sparse, uncertain territory.  Generation fires per
batch with probability p_gen, after a warm-up period.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import neuralcore
from .neuralcore import ModelParams

GRAD_FLOOR = 1e-12


class DegenerateBatchError(ValueError):
    """All pairwise feature distances are zero; no usable bandwidth."""


@dataclass
class MkeeConfig:
    eta: float = 1.0             # mixup Beta(eta, eta) concentration
    epsilon: float = 0.05        # perturbation step length
    lambda_rho: float = 0.1      # density weight in the ascent objective
    sigma0: float = 1.0          # bandwidth scale on the median heuristic
    p_gen: float = 0.3           # per-batch trigger probability
    warmup_epochs: int = 1

    def __post_init__(self):
        if self.eta <= 0 or self.sigma0 <= 0:
            raise ValueError("eta and sigma0 must be > 0")
        if self.epsilon < 0 or self.lambda_rho < 0:
            raise ValueError("epsilon and lambda_rho must be >= 0")
        if not 0.0 <= self.p_gen <= 1.0:
            raise ValueError("p_gen must lie in [0, 1]")


@dataclass
class PseudoBatch:
    """Perturbed anchors plus per-sample diagnostics."""

    anchors: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))
    outputs: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))
    pair_indices: np.ndarray = field(default_factory=lambda: np.zeros((0, 2), dtype=int))
    lam: np.ndarray = field(default_factory=lambda: np.zeros(0))
    entropy_before: np.ndarray = field(default_factory=lambda: np.zeros(0))
    entropy_after: np.ndarray = field(default_factory=lambda: np.zeros(0))
    density_before: np.ndarray = field(default_factory=lambda: np.zeros(0))
    density_after: np.ndarray = field(default_factory=lambda: np.zeros(0))
    objective_before: np.ndarray = field(default_factory=lambda: np.zeros(0))
    objective_after: np.ndarray = field(default_factory=lambda: np.zeros(0))
    grad_norm: np.ndarray = field(default_factory=lambda: np.zeros(0))
    vanished: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=bool))
    sigma: float = 0.0

    def __len__(self) -> int:
        return self.outputs.shape[0]

    @property
    def empty(self) -> bool:
        return len(self) == 0


def mixup_pairs(
    inputs: np.ndarray, labels: np.ndarray, eta: float, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """One mixup anchor per batch element from uniformly chosen cross-class pairs.

    Returns (anchors, pair_indices, lam).  A single-class batch yields an
    empty anchor set rather than an error.
    """
    inputs = np.asarray(inputs, dtype=np.float64)
    labels = np.asarray(labels)
    n = inputs.shape[0]
    cross = np.argwhere(labels[:, None] != labels[None, :])
    if cross.shape[0] == 0:
        return np.zeros((0, inputs.shape[1])), np.zeros((0, 2), dtype=int), np.zeros(0)
    picks = rng.integers(0, cross.shape[0], size=n)
    pairs = cross[picks]
    lam = rng.beta(eta, eta, size=n)
    anchors = lam[:, None] * inputs[pairs[:, 0]] + (1.0 - lam)[:, None] * inputs[pairs[:, 1]]
    return anchors, pairs, lam


def predictive_entropy(logits: np.ndarray) -> np.ndarray | float:
    """Shannon entropy of the softmax distribution; in [0, ln K]."""
    logits = np.asarray(logits, dtype=np.float64)
    single = logits.ndim == 1
    l2 = logits[None, :] if single else logits
    shifted = l2 - l2.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_p = shifted - log_z
    h = -(np.exp(log_p) * log_p).sum(axis=1)
    return float(h[0]) if single else h


def median_bandwidth(
    batch_features: np.ndarray, ref_features: np.ndarray, sigma0: float
) -> float:
    """sigma0 times the median of all pairwise batch-to-reference distances."""
    b = np.atleast_2d(np.asarray(batch_features, dtype=np.float64))
    r = np.atleast_2d(np.asarray(ref_features, dtype=np.float64))
    if b.shape[0] == 0 or r.shape[0] == 0:
        raise ValueError("bandwidth needs nonempty batch and reference sets")
    d2 = _pairwise_sq_dists(b, r)
    med = float(np.median(np.sqrt(np.maximum(d2, 0.0))))
    if med <= 0.0:
        raise DegenerateBatchError("median pairwise feature distance is zero")
    return sigma0 * med


def _pairwise_sq_dists(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    d2 = (
        np.einsum("ij,ij->i", a, a)[:, None]
        - 2.0 * a @ b.T
        + np.einsum("ij,ij->i", b, b)[None, :]
    )
    return np.maximum(d2, 0.0)


def batch_density(
    features: np.ndarray, ref_features: np.ndarray, sigma: float
) -> np.ndarray | float:
    """Gaussian-kernel density of unit features against a reference set."""
    refs = np.atleast_2d(np.asarray(ref_features, dtype=np.float64))
    if refs.shape[0] == 0:
        raise ValueError("reference feature set is empty")
    f = np.asarray(features, dtype=np.float64)
    single = f.ndim == 1
    f2 = f[None, :] if single else f
    kern = np.exp(-_pairwise_sq_dists(f2, refs) / (2.0 * sigma * sigma))
    rho = kern.mean(axis=1)
    return float(rho[0]) if single else rho


def objective_terms(
    features: np.ndarray,
    logits: np.ndarray,
    ref_features: np.ndarray,
    lambda_rho: float,
    sigma: float,
    with_grads: bool = False,
):
    """Entropy minus weighted density, with optional gradients at (f, logits)."""
    h = predictive_entropy(logits)
    rho = batch_density(features, ref_features, sigma)
    value = h - lambda_rho * rho
    if not with_grads:
        return value, h, rho

    l2 = np.atleast_2d(logits)
    shifted = l2 - l2.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_p = shifted - log_z
    p = np.exp(log_p)
    hv = np.atleast_1d(h)
    # dH/dlogit_k = -p_k (log p_k + H)
    grad_logits = -p * (log_p + hv[:, None])

    refs = np.atleast_2d(ref_features)
    f2 = np.atleast_2d(features)
    kern = np.exp(-_pairwise_sq_dists(f2, refs) / (2.0 * sigma * sigma))
    # drho/df = mean_r kern_r * (f_r - f) / sigma^2
    grad_f_rho = (kern @ refs - kern.sum(axis=1)[:, None] * f2) / (
        refs.shape[0] * sigma * sigma
    )
    grad_features = -lambda_rho * grad_f_rho
    return value, h, rho, grad_features, grad_logits


def mkee_objective(
    params: ModelParams,
    x: np.ndarray,
    ref_features: np.ndarray,
    lambda_rho: float,
    sigma: float,
) -> np.ndarray | float:
    """Objective value at input x: entropy(logits) - lambda_rho * density(f)."""
    single = np.asarray(x).ndim == 1
    trace = neuralcore.forward(params, x)
    value, _, _ = objective_terms(trace.features, trace.logits, ref_features,
                                  lambda_rho, sigma)
    return float(value[0]) if single else value


def ascent_step(x: np.ndarray, grad: np.ndarray, epsilon: float) -> np.ndarray:
    """x + epsilon * grad / ||grad||, rowwise."""
    g2 = np.atleast_2d(grad)
    norms = np.sqrt(np.einsum("ij,ij->i", g2, g2))
    out = np.atleast_2d(x) + epsilon * g2 / norms[:, None]
    return out[0] if np.asarray(x).ndim == 1 else out


def one_step_perturb(
    params: ModelParams,
    x_mix: np.ndarray,
    ref_features: np.ndarray,
    cfg: MkeeConfig,
    sigma: float,
    objective=None,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Single normalized gradient-ascent step from each anchor.

    Parameters stay frozen; only the inputs move.  Anchors whose objective
    gradient vanishes are passed through unperturbed and flagged.  Returns
    (x_pus, grad_norms, vanished_mask).  ``objective`` may override the
    default entropy-minus-density objective (same callable contract as
    ``neuralcore.grad_wrt_input``).
    """
    x2 = np.atleast_2d(np.asarray(x_mix, dtype=np.float64))
    trace = neuralcore.forward(params, x2)
    if objective is None:
        _, _, _, gf, gl = objective_terms(
            trace.features, trace.logits, ref_features, cfg.lambda_rho, sigma,
            with_grads=True,
        )
    else:
        _, gf, gl = objective(trace.features, trace.logits)
    gx = neuralcore.backprop_input(params, trace, gf, gl)
    norms = np.sqrt(np.einsum("ij,ij->i", gx, gx))
    vanished = norms <= GRAD_FLOOR
    x_pus = x2.copy()
    live = ~vanished
    if np.any(live):
        x_pus[live] += cfg.epsilon * gx[live] / norms[live, None]
    if np.asarray(x_mix).ndim == 1:
        return x_pus[0], norms, vanished
    return x_pus, norms, vanished


def generate_pseudo_batch(
    params: ModelParams,
    inputs: np.ndarray,
    labels: np.ndarray,
    cfg: MkeeConfig,
    epoch: int,
    rng: np.random.Generator,
) -> PseudoBatch:
    """Per-batch generation: warm-up gate, Bernoulli trigger, mixup + perturb.

    Returns an empty PseudoBatch when the epoch is still warming up, the
    trigger does not fire, or the batch has a single class.
    """
    if epoch < cfg.warmup_epochs:
        return PseudoBatch()
    if rng.random() >= cfg.p_gen:
        return PseudoBatch()
    anchors, pairs, lam = mixup_pairs(inputs, labels, cfg.eta, rng)
    if anchors.shape[0] == 0:
        return PseudoBatch()

    ref_features = neuralcore.forward(params, inputs).features
    sigma = median_bandwidth(ref_features, ref_features, cfg.sigma0)

    trace_before = neuralcore.forward(params, anchors)
    j_before, h_before, rho_before = objective_terms(
        trace_before.features, trace_before.logits, ref_features,
        cfg.lambda_rho, sigma,
    )
    outputs, grad_norm, vanished = one_step_perturb(
        params, anchors, ref_features, cfg, sigma
    )
    trace_after = neuralcore.forward(params, outputs)
    j_after, h_after, rho_after = objective_terms(
        trace_after.features, trace_after.logits, ref_features,
        cfg.lambda_rho, sigma,
    )
    return PseudoBatch(
        anchors=anchors, outputs=outputs, pair_indices=pairs, lam=lam,
        entropy_before=np.atleast_1d(h_before), entropy_after=np.atleast_1d(h_after),
        density_before=np.atleast_1d(rho_before), density_after=np.atleast_1d(rho_after),
        objective_before=np.atleast_1d(j_before), objective_after=np.atleast_1d(j_after),
        grad_norm=grad_norm, vanished=vanished, sigma=sigma,
    )


DIAGNOSTICS_HEADER = (
    "epoch,batch,anchor,entropy_before,entropy_after,density_before,"
    "density_after,objective_before,objective_after,grad_norm,vanished"
)


def diagnostics_rows(pseudo: PseudoBatch, epoch: int, batch: int) -> list[str]:
    """CSV rows matching DIAGNOSTICS_HEADER, one per anchor."""
    rows = []
    for a in range(len(pseudo)):
        rows.append(
            f"{epoch},{batch},{a},{pseudo.entropy_before[a]!r},{pseudo.entropy_after[a]!r},"
            f"{pseudo.density_before[a]!r},{pseudo.density_after[a]!r},"
            f"{pseudo.objective_before[a]!r},{pseudo.objective_after[a]!r},"
            f"{pseudo.grad_norm[a]!r},{int(pseudo.vanished[a])}"
        )
    return rows
