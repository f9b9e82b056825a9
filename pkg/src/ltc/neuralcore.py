"""Dense MLP encoder with hand-written reverse-mode gradients.

The network topology is fixed: ReLU hidden layers, a final linear layer
producing the raw embedding z(x), which is l2-normalized into the unit
feature f(x), and a linear head mapping z(x) to known-class logits.
Gradients are available both for parameters (training) and for the input
vector itself, which is what the pseudo-unknown generator climbs.

Everything is float64 and deterministic for a fixed seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

NORM_FLOOR = 1e-12


class DegenerateEmbeddingError(ValueError):
    """Raised when an embedding collapses to (numerically) zero norm."""


@dataclass
class ModelParams:
    """Encoder layer weights/biases plus the classification head.

    ``layers[i]`` is ``(W, b)`` with W of shape (out, in); hidden layers are
    followed by ReLU, the last encoder layer is linear and its output is the
    raw embedding.  ``head_w`` maps the embedding to K logits.
    """

    layers: list[tuple[np.ndarray, np.ndarray]]
    head_w: np.ndarray
    head_b: np.ndarray

    @property
    def input_dim(self) -> int:
        return self.layers[0][0].shape[1]

    @property
    def feature_dim(self) -> int:
        return self.layers[-1][0].shape[0]

    @property
    def n_classes(self) -> int:
        return self.head_w.shape[0]

    def copy(self) -> "ModelParams":
        return ModelParams(
            layers=[(w.copy(), b.copy()) for w, b in self.layers],
            head_w=self.head_w.copy(),
            head_b=self.head_b.copy(),
        )


@dataclass
class ForwardTrace:
    """Everything the backward pass needs, kept per batch (row = sample)."""

    x: np.ndarray                    # (n, d_in)
    pre: list[np.ndarray]            # pre-activations per layer
    post: list[np.ndarray]           # post-activations per layer
    z: np.ndarray                    # raw embeddings, (n, D)
    z_norm: np.ndarray               # (n,)
    features: np.ndarray             # unit features f(x), (n, D)
    logits: np.ndarray               # (n, K)


@dataclass
class ParamGrads:
    layers: list[tuple[np.ndarray, np.ndarray]]
    head_w: np.ndarray
    head_b: np.ndarray


def init_params(
    input_dim: int,
    hidden_dims: list[int],
    feature_dim: int,
    n_classes: int,
    rng: np.random.Generator,
) -> ModelParams:
    """He-initialized ReLU MLP; linear embedding layer and head use 1/fan_in.

    The embedding layer's bias starts at small random values so that an input
    landing in an all-dead ReLU region still yields a nonzero embedding.
    """
    dims = [input_dim, *hidden_dims, feature_dim]
    layers = []
    for i in range(len(dims) - 1):
        fan_in = dims[i]
        last = i == len(dims) - 2
        gain = 1.0 if last else 2.0
        w = rng.standard_normal((dims[i + 1], fan_in)) * np.sqrt(gain / fan_in)
        b = 0.01 * rng.standard_normal(dims[i + 1]) if last else np.zeros(dims[i + 1])
        layers.append((w, b))
    head_w = rng.standard_normal((n_classes, feature_dim)) * np.sqrt(1.0 / feature_dim)
    head_b = np.zeros(n_classes)
    return ModelParams(layers=layers, head_w=head_w, head_b=head_b)


def _as_batch(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        return x[None, :]
    if x.ndim != 2:
        raise ValueError(f"input must be 1-D or 2-D, got shape {x.shape}")
    return x


def forward(params: ModelParams, x: np.ndarray) -> ForwardTrace:
    """Run the encoder + head; returns the full trace (batched, row-major).

    Raises DegenerateEmbeddingError if any raw embedding has norm < 1e-12.
    """
    x = _as_batch(x)
    if x.shape[1] != params.input_dim:
        raise ValueError(
            f"input dim {x.shape[1]} does not match encoder input dim {params.input_dim}"
        )
    pre, post = [], []
    h = x
    n_layers = len(params.layers)
    for i, (w, b) in enumerate(params.layers):
        p = h @ w.T + b
        pre.append(p)
        h = np.maximum(p, 0.0) if i < n_layers - 1 else p
        post.append(h)
    z = post[-1]
    z_norm = np.sqrt(np.einsum("ij,ij->i", z, z))
    if np.any(z_norm < NORM_FLOOR):
        bad = int(np.argmin(z_norm))
        raise DegenerateEmbeddingError(
            f"embedding norm {z_norm[bad]:.3e} below {NORM_FLOOR:g} for sample {bad}"
        )
    features = z / z_norm[:, None]
    logits = z @ params.head_w.T + params.head_b
    return ForwardTrace(x=x, pre=pre, post=post, z=z, z_norm=z_norm,
                        features=features, logits=logits)


def _backward(
    params: ModelParams,
    trace: ForwardTrace,
    grad_features: np.ndarray | None,
    grad_logits: np.ndarray | None,
    want_params: bool,
    want_input: bool,
) -> tuple[ParamGrads | None, np.ndarray | None]:
    n = trace.x.shape[0]
    grad_z = np.zeros_like(trace.z)
    head_gw = head_gb = None

    if grad_logits is not None:
        grad_logits = np.asarray(grad_logits, dtype=np.float64)
        if grad_logits.shape != trace.logits.shape:
            raise ValueError(
                f"grad_logits shape {grad_logits.shape} != logits shape {trace.logits.shape}"
            )
        grad_z += grad_logits @ params.head_w
        if want_params:
            head_gw = grad_logits.T @ trace.z
            head_gb = grad_logits.sum(axis=0)
    if want_params and head_gw is None:
        head_gw = np.zeros_like(params.head_w)
        head_gb = np.zeros_like(params.head_b)

    if grad_features is not None:
        grad_features = np.asarray(grad_features, dtype=np.float64)
        if grad_features.shape != trace.features.shape:
            raise ValueError(
                f"grad_features shape {grad_features.shape} != features shape {trace.features.shape}"
            )
        # f = z / ||z||  =>  df/dz = (I - f f^T) / ||z||
        f = trace.features
        dot = np.einsum("ij,ij->i", grad_features, f)
        grad_z += (grad_features - dot[:, None] * f) / trace.z_norm[:, None]

    layer_grads: list[tuple[np.ndarray, np.ndarray]] = []
    g = grad_z
    n_layers = len(params.layers)
    for i in range(n_layers - 1, -1, -1):
        w, _ = params.layers[i]
        if i < n_layers - 1:
            g = g * (trace.pre[i] > 0)  # ReLU subgradient, 0 at the kink
        inp = trace.post[i - 1] if i > 0 else trace.x
        if want_params:
            layer_grads.append((g.T @ inp, g.sum(axis=0)))
        if i > 0 or want_input:
            g = g @ w

    pgrads = None
    if want_params:
        layer_grads.reverse()
        pgrads = ParamGrads(layers=layer_grads, head_w=head_gw, head_b=head_gb)
    gx = g if want_input else None
    assert gx is None or gx.shape == trace.x.shape
    return pgrads, gx


def backprop_params(
    params: ModelParams,
    trace: ForwardTrace,
    grad_features: np.ndarray | None = None,
    grad_logits: np.ndarray | None = None,
) -> ParamGrads:
    """Parameter gradients for a loss given its gradients at f(x) and logits."""
    pgrads, _ = _backward(params, trace, grad_features, grad_logits,
                          want_params=True, want_input=False)
    return pgrads


def backprop_input(
    params: ModelParams,
    trace: ForwardTrace,
    grad_features: np.ndarray | None = None,
    grad_logits: np.ndarray | None = None,
) -> np.ndarray:
    """Input-space gradient for a loss given its gradients at f(x) and logits."""
    _, gx = _backward(params, trace, grad_features, grad_logits,
                      want_params=False, want_input=True)
    return gx


def grad_wrt_input(params: ModelParams, x: np.ndarray, objective) -> np.ndarray:
    """Gradient of a scalar objective of (f(x), logits) with respect to x.

    ``objective(features, logits)`` must return
    ``(value, grad_features, grad_logits)`` where either gradient may be None.
    Parameters are left untouched.  Accepts a single vector or a batch;
    the returned gradient matches the input's shape.
    """
    single = np.asarray(x).ndim == 1
    trace = forward(params, x)
    _, gf, gl = objective(trace.features, trace.logits)
    gx = backprop_input(params, trace, gf, gl)
    return gx[0] if single else gx


# ---------------------------------------------------------------------------
# AdamW


@dataclass
class OptimizerState:
    lr: float = 1e-2
    weight_decay: float = 0.05
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: ParamGrads | None = field(default=None, repr=False)
    v: ParamGrads | None = field(default=None, repr=False)


def _zeros_like_params(params: ModelParams) -> ParamGrads:
    return ParamGrads(
        layers=[(np.zeros_like(w), np.zeros_like(b)) for w, b in params.layers],
        head_w=np.zeros_like(params.head_w),
        head_b=np.zeros_like(params.head_b),
    )


def _param_arrays(p: ModelParams | ParamGrads) -> list[np.ndarray]:
    out = []
    for w, b in p.layers:
        out.extend((w, b))
    out.extend((p.head_w, p.head_b))
    return out


def adamw_step(params: ModelParams, grads: ParamGrads, state: OptimizerState) -> None:
    """One decoupled-weight-decay Adam update, in place."""
    if state.m is None:
        state.m = _zeros_like_params(params)
        state.v = _zeros_like_params(params)
    state.step += 1
    t = state.step
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    for p, g, m, v in zip(
        _param_arrays(params), _param_arrays(grads),
        _param_arrays(state.m), _param_arrays(state.v),
    ):
        if not np.all(np.isfinite(g)):
            raise ValueError("non-finite gradient entries passed to adamw_step")
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        update = (m / bc1) / (np.sqrt(v / bc2) + state.eps)
        p -= state.lr * (update + state.weight_decay * p)


# ---------------------------------------------------------------------------
# Checkpoint format: textual key/value with explicit shape headers.
#
#   ltc-checkpoint 1
#   array <name> <ndim> <dim0> [<dim1>]
#   <hexfloat> <hexfloat> ...        (one line per row)
#   float <name> <hexfloat>
#   int <name> <int>
#
# float64 values are written with float.hex(), so save -> load is bit-exact.


def write_checkpoint(
    path,
    arrays: dict[str, np.ndarray],
    floats: dict[str, float] | None = None,
    ints: dict[str, int] | None = None,
) -> None:
    lines = ["ltc-checkpoint 1"]
    for name, arr in arrays.items():
        arr = np.asarray(arr, dtype=np.float64)
        if arr.ndim not in (1, 2):
            raise ValueError(f"array {name!r} must be 1-D or 2-D")
        dims = " ".join(str(d) for d in arr.shape)
        lines.append(f"array {name} {arr.ndim} {dims}")
        rows = arr[None, :] if arr.ndim == 1 else arr
        for row in rows:
            lines.append(" ".join(float(v).hex() for v in row))
    for name, val in (floats or {}).items():
        lines.append(f"float {name} {float(val).hex()}")
    for name, val in (ints or {}).items():
        lines.append(f"int {name} {int(val)}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def read_checkpoint(path) -> tuple[dict[str, np.ndarray], dict[str, float], dict[str, int]]:
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != "ltc-checkpoint 1":
        raise ValueError(f"{path}: not a ltc-checkpoint file")
    arrays: dict[str, np.ndarray] = {}
    floats: dict[str, float] = {}
    ints: dict[str, int] = {}
    i = 1
    while i < len(lines):
        parts = lines[i].split()
        i += 1
        if not parts:
            continue
        kind = parts[0]
        if kind == "array":
            name, ndim = parts[1], int(parts[2])
            shape = tuple(int(d) for d in parts[3:3 + ndim])
            n_rows = 1 if ndim == 1 else shape[0]
            rows = []
            for _ in range(n_rows):
                rows.append([float.fromhex(tok) for tok in lines[i].split()])
                i += 1
            arr = np.array(rows, dtype=np.float64)
            arrays[name] = arr[0] if ndim == 1 else arr.reshape(shape)
        elif kind == "float":
            floats[parts[1]] = float.fromhex(parts[2])
        elif kind == "int":
            ints[parts[1]] = int(parts[2])
        else:
            raise ValueError(f"{path}: unknown record kind {kind!r}")
    return arrays, floats, ints


def params_to_arrays(params: ModelParams) -> dict[str, np.ndarray]:
    out = {}
    for i, (w, b) in enumerate(params.layers):
        out[f"encoder.{i}.w"] = w
        out[f"encoder.{i}.b"] = b
    out["head.w"] = params.head_w
    out["head.b"] = params.head_b
    return out


def params_from_arrays(arrays: dict[str, np.ndarray]) -> ModelParams:
    layers = []
    i = 0
    while f"encoder.{i}.w" in arrays:
        layers.append((arrays[f"encoder.{i}.w"], arrays[f"encoder.{i}.b"]))
        i += 1
    if not layers or "head.w" not in arrays:
        raise ValueError("checkpoint is missing encoder/head arrays")
    return ModelParams(layers=layers, head_w=arrays["head.w"], head_b=arrays["head.b"])
