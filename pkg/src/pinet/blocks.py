"""Polynomial blocks (CCP, NCP, NCP-Skip, higher-order residual) and their products.

All forwards take a single input vector of shape ``(d,)`` or a batch of shape
``(batch, d)`` and return the matching rank. In batch form the column-vector
recursions are applied to rows, so ``U^T z`` becomes ``z @ U`` and ``C x``
becomes ``x @ C^T``.

The recursions are written once against an ``ops`` namespace; passing
:mod:`pinet.tensor` evaluates them directly, passing an
:class:`~pinet.autodiff.Graph` records them for differentiation. Both routes
run the same tensor primitives in the same order, so they agree bit for bit.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace
from typing import Iterator, Mapping

import numpy as np

from . import tensor as T
from .autodiff import Graph, Node
from .tensor import ShapeError, Tensor

CCP = "ccp"
NCP = "ncp"
NCP_SKIP = "ncp-skip"
HIGH_ORDER_RESIDUAL = "high-order-residual"
VARIANTS = (CCP, NCP, NCP_SKIP, HIGH_ORDER_RESIDUAL)
STABILIZERS = ("none", "tanh", "instance-norm")
ACTIVATIONS = ("none", "tanh", "relu")
INIT_SCHEMES = ("normal", "ones", "fan-in", "zeros")
INSTANCE_NORM_EPS = 1e-5

_ALIASES = {
    "ncp_skip": NCP_SKIP, "ncpskip": NCP_SKIP,
    "highorderresidual": HIGH_ORDER_RESIDUAL, "high_order_residual": HIGH_ORDER_RESIDUAL,
    "hor": HIGH_ORDER_RESIDUAL, "residual": HIGH_ORDER_RESIDUAL,
    "tanh-on-higher-order": "tanh", "per-order-instance-norm": "instance-norm",
    "instance_norm": "instance-norm", "instancenorm": "instance-norm",
}


class SpecError(ValueError):
    """Invalid block or network specification."""


def _canon(value: str) -> str:
    v = str(value).strip().lower()
    return _ALIASES.get(v, v)


@dataclass(frozen=True)
class PolyBlockSpec:
    """Hyperparameters of one polynomial block.

    ``order`` is N (the block's polynomial degree), ``rank`` is k and
    ``bias_dim`` is omega; omega defaults to k and is only meaningful for the
    NCP family. For the higher-order residual block ``order`` is the expansion
    order i, ``output_dim`` is forced to ``input_dim`` and ``rank`` is unused.
    """

    variant: str
    order: int
    input_dim: int
    output_dim: int | None = None
    rank: int = 1
    bias_dim: int | None = None
    stabilizer: str = "none"
    activation: str = "none"

    def __post_init__(self):
        set_ = lambda k, v: object.__setattr__(self, k, v)  # noqa: E731
        set_("variant", _canon(self.variant))
        set_("stabilizer", _canon(self.stabilizer))
        set_("activation", _canon(self.activation))
        if self.variant not in VARIANTS:
            raise SpecError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if self.stabilizer not in STABILIZERS:
            raise SpecError(f"unknown stabilizer {self.stabilizer!r}; expected one of {STABILIZERS}")
        if self.activation not in ACTIVATIONS:
            raise SpecError(f"unknown activation {self.activation!r}; expected one of {ACTIVATIONS}")
        for name in ("order", "input_dim", "rank"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or isinstance(v, bool) or v < 1:
                raise SpecError(f"{name} must be a positive integer, got {v!r}")
        if self.variant == HIGH_ORDER_RESIDUAL:
            if self.output_dim not in (None, self.input_dim):
                raise SpecError("high-order-residual blocks map R^d to R^d; output_dim must equal input_dim")
            set_("output_dim", int(self.input_dim))
            set_("bias_dim", None)
        else:
            if self.output_dim is None:
                raise SpecError(f"output_dim is required for {self.variant}")
            if self.variant in (NCP, NCP_SKIP):
                set_("bias_dim", self.rank if self.bias_dim is None else self.bias_dim)
            else:
                set_("bias_dim", None)
        for name in ("output_dim", "bias_dim"):
            v = getattr(self, name)
            if v is not None and (not isinstance(v, (int, np.integer)) or isinstance(v, bool) or v < 1):
                raise SpecError(f"{name} must be a positive integer, got {v!r}")

    @property
    def degree(self) -> int:
        return int(self.order)

    @property
    def is_polynomial(self) -> bool:
        return self.stabilizer == "none" and self.activation == "none"

    def param_shapes(self) -> dict[str, tuple[int, ...]]:
        """Parameter names and shapes in canonical (storage) order."""
        N, k, d, o, w = self.order, self.rank, self.input_dim, self.output_dim, self.bias_dim
        if self.variant == CCP:
            shapes = {f"U{n}": (d, k) for n in range(1, N + 1)}
        elif self.variant in (NCP, NCP_SKIP):
            shapes = {f"A{n}": (d, k) for n in range(1, N + 1)}
            shapes.update({f"S{n}": (k, k) for n in range(2, N + 1)})
            shapes.update({f"B{n}": (w, k) for n in range(1, N + 1)})
            shapes.update({f"b{n}": (w,) for n in range(1, N + 1)})
        else:
            return {"C": (d, d)}
        shapes["C"] = (o, k)
        shapes["beta"] = (o,)
        return shapes

    def to_dict(self) -> dict:
        return asdict(self)


def param_count(spec: PolyBlockSpec) -> int:
    """Closed-form number of learnable scalars in a block."""
    N, k, d, o = spec.order, spec.rank, spec.input_dim, spec.output_dim
    if spec.variant == CCP:
        return N * d * k + o * k + o
    if spec.variant in (NCP, NCP_SKIP):
        w = spec.bias_dim
        return N * d * k + (N - 1) * k * k + N * w * k + N * w + o * k + o
    return d * d


def dense_param_count(input_dim: int, output_dim: int, order: int) -> int:
    """Scalars in the unfactorized expansion: one o x d^n tensor per order, plus the bias."""
    return output_dim * sum(input_dim ** n for n in range(1, order + 1)) + output_dim


@dataclass
class PolyBlockParams:
    spec: PolyBlockSpec
    tensors: dict[str, Tensor]

    def __post_init__(self):
        expected = self.spec.param_shapes()
        self.tensors = {name: T.as_tensor(self.tensors[name]) if name in self.tensors else None
                        for name in expected}
        for name, shape in expected.items():
            t = self.tensors[name]
            if t is None:
                raise SpecError(f"missing parameter {name!r} for {self.spec.variant}")
            if t.shape != shape:
                raise ShapeError(f"parameter {name}: expected shape {shape}, got {t.shape}")

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def __iter__(self):
        return iter(self.tensors)

    @property
    def size(self) -> int:
        return sum(t.size for t in self.tensors.values())

    def replace(self, updates: Mapping[str, Tensor]) -> "PolyBlockParams":
        return PolyBlockParams(self.spec, {**self.tensors, **updates})


def init_params(spec: PolyBlockSpec, seed=0, scheme: str = "normal") -> PolyBlockParams:
    """Draw block parameters deterministically from ``seed``.

    Schemes:

    * ``normal``: factor matrices i.i.d. N(0, 1/k); ``beta`` and ``b_n`` zero.
      NCP and NCP-Skip blocks therefore start out constant (``x_1 = 0``).
    * ``ones``: as ``normal`` but ``b_n = 1``; the recommended NCP start.
    * ``fan-in``: factor std ``1/sqrt(rows)`` of each matrix, ``b_n = 1``.
    * ``zeros``: everything zero, so the block outputs ``beta = 0``.

    Higher-order residual blocks have no rank; their ``C`` uses std ``1/sqrt(d)``.
    ``seed`` may be an int or a ``numpy.random.Generator``.
    """
    if scheme not in INIT_SCHEMES:
        raise SpecError(f"unknown init scheme {scheme!r}; expected one of {INIT_SCHEMES}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    tensors = {}
    for name, shape in spec.param_shapes().items():
        if scheme == "zeros":
            tensors[name] = np.zeros(shape)
        elif name == "beta":
            tensors[name] = np.zeros(shape)
        elif name.startswith("b"):
            tensors[name] = np.zeros(shape) if scheme == "normal" else np.ones(shape)
        else:
            if spec.variant == HIGH_ORDER_RESIDUAL:
                std = spec.input_dim ** -0.5
            elif scheme == "fan-in":
                std = shape[0] ** -0.5
            else:
                std = spec.rank ** -0.5
            tensors[name] = rng.normal(0.0, std, size=shape)
    return PolyBlockParams(spec, tensors)


# -- recursions ----------------------------------------------------------------


def apply_stabilizer(term, mode: str, ops=T):
    """Magnitude control for an order >= 2 term: identity, tanh, or per-sample standardization."""
    mode = _canon(mode)
    if mode == "none":
        return term
    if mode == "tanh":
        return ops.tanh(term)
    if mode == "instance-norm":
        return ops.instance_norm(term, INSTANCE_NORM_EPS)
    raise SpecError(f"unknown stabilizer {mode!r}")


def _apply_activation(x, name, ops):
    if name == "none":
        return x
    return getattr(ops, name)(x)


def _ccp(ops, spec, p, z):
    x = ops.matmul(z, p["U1"])
    for n in range(2, spec.order + 1):
        x = ops.add(apply_stabilizer(ops.hadamard(ops.matmul(z, p[f"U{n}"]), x), spec.stabilizer, ops), x)
    return ops.add_bias(ops.matmul(x, ops.transpose(p["C"])), p["beta"])


def _ncp(ops, spec, p, z, skip):
    def bias(n):  # B_n^T b_n, a k-vector
        return ops.matmul(ops.transpose(p[f"B{n}"]), p[f"b{n}"])

    x = ops.mul_bias(ops.matmul(z, p["A1"]), bias(1))
    for n in range(2, spec.order + 1):
        inner = ops.add_bias(ops.matmul(x, p[f"S{n}"]), bias(n))
        term = apply_stabilizer(ops.hadamard(ops.matmul(z, p[f"A{n}"]), inner), spec.stabilizer, ops)
        x = ops.add(term, x) if skip else term
    return ops.add_bias(ops.matmul(x, ops.transpose(p["C"])), p["beta"])


def _high_order_residual(ops, spec, p, z, order):
    cz = ops.matmul(z, ops.transpose(p["C"]))
    out = ops.add(z, cz)
    term = cz
    for _ in range(2, order + 1):
        term = ops.hadamard(term, z)
        out = ops.add(out, apply_stabilizer(term, spec.stabilizer, ops))
    return out


def block_expr(ops, spec: PolyBlockSpec, p, z, order: int | None = None):
    """Build one block's output from batch input ``z`` using the primitives in ``ops``."""
    if spec.variant == CCP:
        out = _ccp(ops, spec, p, z)
    elif spec.variant == NCP:
        out = _ncp(ops, spec, p, z, skip=False)
    elif spec.variant == NCP_SKIP:
        out = _ncp(ops, spec, p, z, skip=True)
    else:
        out = _high_order_residual(ops, spec, p, z, spec.order if order is None else order)
    return _apply_activation(out, spec.activation, ops)


def _as_batch(z, d):
    z = T.as_tensor(z)
    if z.ndim == 1:
        if z.shape[0] != d:
            raise ShapeError(f"input has length {z.shape[0]}, block expects {d}")
        return T.reshape(z, (1, d)), True
    if z.ndim != 2 or z.shape[1] != d:
        raise ShapeError(f"input shape {z.shape} incompatible with input_dim {d}")
    return z, False


def _run(params: PolyBlockParams, z, variant=None, order=None):
    spec = params.spec
    if variant is not None and spec.variant != variant:
        raise SpecError(f"expected a {variant} block, got {spec.variant}")
    zb, single = _as_batch(z, spec.input_dim)
    out = block_expr(T, spec, params.tensors, zb, order)
    return T.reshape(out, (out.shape[1],)) if single else out


def forward_ccp(params: PolyBlockParams, z) -> Tensor:
    """x_1 = U_1^T z; x_n = (U_n^T z) * x_{n-1} + x_{n-1}; output C x_N + beta."""
    return _run(params, z, CCP)


def forward_ncp(params: PolyBlockParams, z) -> Tensor:
    """x_1 = (A_1^T z) * (B_1^T b_1); x_n = (A_n^T z) * (S_n^T x_{n-1} + B_n^T b_n)."""
    return _run(params, z, NCP)


def forward_ncp_skip(params: PolyBlockParams, z) -> Tensor:
    """The NCP recursion with an extra additive ``x_{n-1}`` at every step."""
    return _run(params, z, NCP_SKIP)


def forward_high_order_residual(params: PolyBlockParams, z, order: int | None = None) -> Tensor:
    """z + Cz + (Cz)*z + (Cz)*z*z + ... with ``order`` terms beyond the identity."""
    if order is not None and order < 1:
        raise SpecError(f"expansion order must be >= 1, got {order}")
    return _run(params, z, HIGH_ORDER_RESIDUAL, order)


def forward_block(params: PolyBlockParams, z) -> Tensor:
    return _run(params, z)


# -- products of polynomials ---------------------------------------------------


@dataclass
class ProductNet:
    """Blocks applied left to right; the output of block i feeds block i+1."""

    blocks: list[PolyBlockParams] = field(default_factory=list)

    def __post_init__(self):
        if not self.blocks:
            raise SpecError("a product network needs at least one block")
        for i in range(len(self.blocks) - 1):
            a, b = self.blocks[i].spec, self.blocks[i + 1].spec
            if a.output_dim != b.input_dim:
                raise ShapeError(
                    f"block {i} outputs {a.output_dim} values but block {i + 1} expects {b.input_dim}"
                )

    @property
    def specs(self) -> list[PolyBlockSpec]:
        return [b.spec for b in self.blocks]

    @property
    def input_dim(self) -> int:
        return self.blocks[0].spec.input_dim

    @property
    def output_dim(self) -> int:
        return self.blocks[-1].spec.output_dim

    @property
    def total_degree(self) -> int:
        return math.prod(s.degree for s in self.specs)

    @property
    def is_polynomial(self) -> bool:
        return all(s.is_polynomial for s in self.specs)

    def param_count(self) -> int:
        return sum(param_count(s) for s in self.specs)

    def named_params(self) -> Iterator[tuple[str, Tensor]]:
        for i, block in enumerate(self.blocks):
            for name, t in block.tensors.items():
                yield f"block{i}.{name}", t

    def params(self) -> dict[str, Tensor]:
        return dict(self.named_params())

    def with_params(self, flat: Mapping[str, Tensor]) -> "ProductNet":
        blocks = []
        for i, block in enumerate(self.blocks):
            prefix = f"block{i}."
            updates = {k[len(prefix):]: v for k, v in flat.items() if k.startswith(prefix)}
            blocks.append(block.replace(updates))
        return ProductNet(blocks)

    def expr(self, ops, params, z):
        """Symbolic or direct evaluation; ``params`` is keyed like :meth:`params`."""
        x = z
        for i, block in enumerate(self.blocks):
            p = {name: params[f"block{i}.{name}"] for name in block.tensors}
            x = block_expr(ops, block.spec, p, x)
        return x

    def build_graph(self) -> tuple[Graph, Node, Node]:
        """Record the network on a fresh graph with input leaf ``z``."""
        g = Graph()
        z = g.input("z")
        params = {name: g.param(name) for name, _ in self.named_params()}
        out = self.expr(g, params, z)
        g.output = out
        return g, z, out

    def __call__(self, z) -> Tensor:
        return forward_product(self, z)


def forward_product(net: ProductNet, z) -> Tensor:
    zb, single = _as_batch(z, net.input_dim)
    out = net.expr(T, net.params(), zb)
    return T.reshape(out, (out.shape[1],)) if single else out


def make_net(specs, seed=0, scheme: str = "normal") -> ProductNet:
    """Initialize every block of a chain from one seeded generator."""
    rng = np.random.default_rng(seed)
    return ProductNet([init_params(s, rng, scheme) for s in specs])


def spec_from_dict(d: Mapping) -> PolyBlockSpec:
    known = {f for f in PolyBlockSpec.__dataclass_fields__}
    extra = set(d) - known
    if extra:
        raise SpecError(f"unknown block fields: {sorted(extra)}")
    return PolyBlockSpec(**d)


def without_stabilizers(spec: PolyBlockSpec) -> PolyBlockSpec:
    return replace(spec, stabilizer="none", activation="none")
