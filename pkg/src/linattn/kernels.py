"""Trainable positive feature maps for kernelized attention.

Four variants of the per-head projection applied to queries and keys
before the factorized attention product:

* ``linear_softplus``   softplus(X W), a single linear layer under a
  strictly positive nonlinearity.
* ``glu``               gated linear unit X W_feat * sigmoid(X W_gate);
  the output layer swaps the linear path for softplus to restore
  positivity.
* ``oglu``              same as ``glu`` but every W_feat is orthogonally
  initialized and pulled toward the orthogonal manifold by a penalty.
* ``aoglu``             ``oglu`` with the output layer's gate factored as
  a rank-r product (n x r)(r x n) to cut parameters.

Stacks of depth 2-3 insert plain gated layers (or, for the softplus
variant, linear layers under a configurable inner nonlinearity) before
the positive output layer. No normalization between layers.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import ConfigError, ShapeError
from .tensor import Tensor

VARIANTS = ("linear_softplus", "glu", "oglu", "aoglu")
INNER_NONLINEARITIES = ("softplus", "gelu", "sigmoid")

MAX_DEPTH = 3


@dataclass
class KernelSpec:
    """Declarative description of one feature-map stack.

    ``gate_rank`` is only meaningful for the ``aoglu`` variant and must
    satisfy 1 <= rank < head_dim / 2. ``low_rank_all_layers`` extends the
    rank-r gate factorization from the output layer to the intermediate
    gated layers as well (off by default: intermediate gates stay full
    rank). ``share_query_key`` controls whether queries and keys run
    through the same weights within a head.
    """

    variant: str = "linear_softplus"
    depth: int = 1
    head_dim: int = 16
    gate_rank: int = 0
    orthogonal_init: bool = True
    ortho_reg_weight: float = 0.01
    inner_nonlinearity: str = "gelu"
    low_rank_all_layers: bool = False
    share_query_key: bool = True

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown kernel variant {self.variant!r}; expected one of {VARIANTS}")
        if not 1 <= self.depth <= MAX_DEPTH:
            raise ConfigError(f"kernel depth must be in [1, {MAX_DEPTH}], got {self.depth}")
        if self.head_dim < 2:
            raise ConfigError(f"head_dim must be >= 2, got {self.head_dim}")
        if self.variant == "aoglu":
            if not 1 <= self.gate_rank or not self.gate_rank < self.head_dim / 2:
                raise ConfigError(
                    f"aoglu gate_rank must satisfy 1 <= r < head_dim/2, "
                    f"got r={self.gate_rank}, head_dim={self.head_dim}")
        if self.inner_nonlinearity not in INNER_NONLINEARITIES:
            raise ConfigError(
                f"inner_nonlinearity must be one of {INNER_NONLINEARITIES}, "
                f"got {self.inner_nonlinearity!r}")
        if self.ortho_reg_weight < 0:
            raise ConfigError(f"ortho_reg_weight must be >= 0, got {self.ortho_reg_weight}")


@dataclass
class KernelParams:
    """Weights for one feature-map stack, one dict per stacked layer.

    Layer dicts hold ``w`` for linear layers, ``w_feat``/``w_gate`` for
    full-rank gated layers, and ``w_feat``/``gate_in``/``gate_out`` for
    low-rank gated layers.
    """

    layers: list[dict[str, Tensor]] = field(default_factory=list)

    def named(self, prefix: str = "kernel") -> dict[str, Tensor]:
        out = {}
        for i, layer in enumerate(self.layers):
            for key, t in layer.items():
                out[f"{prefix}.{i}.{key}"] = t
        return out

    def param_count(self) -> int:
        return int(np.sum([t.size for layer in self.layers for t in layer.values()]))


def orthogonal_init(n: int, seed, dtype=np.float64) -> np.ndarray:
    """Draw an n x n matrix uniformly from the orthogonal group.

    QR-decomposes a standard Gaussian draw and absorbs the signs of R's
    diagonal into Q's columns, which corrects QR's sign ambiguity and
    makes the distribution Haar-uniform.
    """
    if n < 1:
        raise ConfigError(f"orthogonal_init needs n >= 1, got {n}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    a = rng.standard_normal((n, n))
    q, r = np.linalg.qr(a)
    signs = np.sign(np.diag(r))
    signs[signs == 0] = 1.0
    return (q * signs).astype(dtype)


def _uniform_init(rng: np.random.Generator, rows: int, cols: int, dtype) -> np.ndarray:
    bound = 1.0 / np.sqrt(rows)
    return rng.uniform(-bound, bound, size=(rows, cols)).astype(dtype)


def init_kernel_params(spec: KernelSpec, seed, dtype=np.float32) -> KernelParams:
    """Allocate and initialize all weights for one feature-map stack.

    Matrices subject to the orthogonality penalty (``w`` of the softplus
    variant, ``w_feat`` of oglu/aoglu) start orthogonal when the spec asks
    for it; every other matrix uses uniform(-1/sqrt(n), 1/sqrt(n)).
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    n, r = spec.head_dim, spec.gate_rank
    ortho = spec.orthogonal_init and spec.variant in ("linear_softplus", "oglu", "aoglu")

    def feat_matrix():
        if ortho:
            return Tensor(orthogonal_init(n, rng, dtype=dtype), requires_grad=True)
        return Tensor(_uniform_init(rng, n, n, dtype), requires_grad=True)

    layers = []
    for i in range(spec.depth):
        last = i == spec.depth - 1
        if spec.variant == "linear_softplus":
            layers.append({"w": feat_matrix()})
        elif spec.variant in ("glu", "oglu"):
            layers.append({"w_feat": feat_matrix(),
                           "w_gate": Tensor(_uniform_init(rng, n, n, dtype), requires_grad=True)})
        else:  # aoglu
            low_rank = last or spec.low_rank_all_layers
            layer = {"w_feat": feat_matrix()}
            if low_rank:
                layer["gate_in"] = Tensor(_uniform_init(rng, n, r, dtype), requires_grad=True)
                layer["gate_out"] = Tensor(_uniform_init(rng, r, n, dtype), requires_grad=True)
            else:
                layer["w_gate"] = Tensor(_uniform_init(rng, n, n, dtype), requires_grad=True)
            layers.append(layer)
    return KernelParams(layers)


def _check_trailing(x: Tensor, n: int, op: str):
    if x.shape[-1] != n:
        raise ShapeError(f"{op}: trailing dimension {x.shape[-1]} does not match weights ({n})")


def linear_kernel_forward(x: Tensor, w: Tensor) -> Tensor:
    """softplus(X W); strictly positive output."""
    _check_trailing(x, w.shape[0], "linear_kernel_forward")
    return T.softplus(T.matmul(x, w))


def glu_forward(x: Tensor, w_feat: Tensor, w_gate: Tensor) -> Tensor:
    """X W_feat * sigmoid(X W_gate). Not sign-constrained; intermediate
    layers only."""
    _check_trailing(x, w_feat.shape[0], "glu_forward")
    return T.mul(T.matmul(x, w_feat), T.sigmoid(T.matmul(x, w_gate)))


def oglu_output_forward(x: Tensor, w_feat: Tensor, w_gate: Tensor) -> Tensor:
    """softplus(X W_feat) * sigmoid(X W_gate); strictly positive output."""
    _check_trailing(x, w_feat.shape[0], "oglu_output_forward")
    return T.mul(T.softplus(T.matmul(x, w_feat)), T.sigmoid(T.matmul(x, w_gate)))


def aoglu_forward(x: Tensor, w_feat: Tensor, gate_in: Tensor, gate_out: Tensor) -> Tensor:
    """Positive-output gated layer with the gate factored as
    (X U)(V): softplus(X W_feat) * sigmoid((X gate_in) gate_out).

    Equals ``oglu_output_forward`` with the materialized gate
    W_gate = gate_in @ gate_out.
    """
    n = w_feat.shape[0]
    r = gate_in.shape[1]
    if not 1 <= r or not r < n / 2:
        raise ConfigError(f"gate rank must satisfy 1 <= r < n/2, got r={r}, n={n}")
    _check_trailing(x, n, "aoglu_forward")
    gate_pre = T.matmul(T.matmul(x, gate_in), gate_out)
    return T.mul(T.softplus(T.matmul(x, w_feat)), T.sigmoid(gate_pre))


def _glu_layer(x: Tensor, layer: dict[str, Tensor]) -> Tensor:
    """Plain gated layer; gate may be full-rank or factored."""
    if "w_gate" in layer:
        gate_pre = T.matmul(x, layer["w_gate"])
    else:
        gate_pre = T.matmul(T.matmul(x, layer["gate_in"]), layer["gate_out"])
    return T.mul(T.matmul(x, layer["w_feat"]), T.sigmoid(gate_pre))


_INNER = {"softplus": T.softplus, "gelu": T.gelu, "sigmoid": T.sigmoid}


def kernel_stack_forward(x: Tensor, spec: KernelSpec, params: KernelParams) -> Tensor:
    """Run the full feature-map stack; the final layer output is strictly
    positive for every variant."""
    if len(params.layers) != spec.depth:
        raise ConfigError(
            f"params hold {len(params.layers)} layers but spec depth is {spec.depth}")
    h = x
    for i, layer in enumerate(params.layers):
        last = i == spec.depth - 1
        if spec.variant == "linear_softplus":
            if last:
                h = linear_kernel_forward(h, layer["w"])
            else:
                h = _INNER[spec.inner_nonlinearity](T.matmul(h, layer["w"]))
        elif last:
            if "w_gate" in layer:
                h = oglu_output_forward(h, layer["w_feat"], layer["w_gate"])
            else:
                h = aoglu_forward(h, layer["w_feat"], layer["gate_in"], layer["gate_out"])
        else:
            h = _glu_layer(h, layer)
    return h


def regularized_matrices(spec: KernelSpec, params: KernelParams) -> list[Tensor]:
    """The matrices the orthogonality penalty applies to: ``w`` for the
    softplus variant, each layer's ``w_feat`` for oglu/aoglu, none for
    plain glu."""
    if spec.variant == "linear_softplus":
        return [layer["w"] for layer in params.layers]
    if spec.variant in ("oglu", "aoglu"):
        return [layer["w_feat"] for layer in params.layers]
    return []


def orthogonality_penalty(matrices: list[Tensor], weight: float) -> Tensor:
    """weight * sum over matrices of ||W^T W - I||_F^2.

    Returns an exact constant zero when the set is empty or the weight is
    zero, so unregularized runs carry no penalty graph.
    """
    if weight < 0:
        raise ConfigError(f"penalty weight must be >= 0, got {weight}")
    if not matrices or weight == 0:
        dtype = matrices[0].dtype if matrices else np.float64
        return Tensor(np.zeros((), dtype=dtype))
    total = None
    for w in matrices:
        n = w.shape[0]
        eye = Tensor(np.eye(n, dtype=w.dtype))
        dev = T.sub(T.matmul(T.swapaxes(w, -1, -2), w), eye)
        term = T.sum(T.square(dev))
        total = term if total is None else T.add(total, term)
    return T.scale(total, weight)
