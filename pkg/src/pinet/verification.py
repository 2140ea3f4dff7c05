"""Invariant battery behind ``pinet verify`` and the acceptance suite."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from . import blocks as B
from .autodiff import grad_check, graph_loss_fn
from .blocks import PolyBlockSpec, ProductNet, forward_product, make_net
from .checkpoint import Checkpoint
from .oracle import FIT_TOL, BudgetExceeded, PROBE_TOL, eval_dense, fit_dense, probe_degree, relative_error
from .tensor import Tensor


@dataclass
class Check:
    name: str
    passed: bool
    detail: str = ""

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'} {self.name}" + (f" ({self.detail})" if self.detail else "")


@dataclass
class Section:
    title: str
    checks: list[Check] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def summary(self) -> str:
        bad = sum(not c.passed for c in self.checks)
        return f"{'PASS' if self.passed else 'FAIL'} {self.title}: {len(self.checks) - bad}/{len(self.checks)} checks"


def net_fn(net: ProductNet):
    return lambda z: forward_product(net, Tensor(z)).data


# -- oracle equivalence ---------------------------------------------------------------------


def grid_specs(variants, input_dims, ranks, output_dims, bias_dims, orders):
    """Distinct block specs spanned by the grid; axes a variant ignores are collapsed."""
    seen = set()
    for v, d, k, o, w, n in itertools.product(variants, input_dims, ranks, output_dims, bias_dims, orders):
        v = B._canon(v)
        if v == B.HIGH_ORDER_RESIDUAL:
            spec = PolyBlockSpec(v, n, input_dim=d)
        elif v == B.CCP:
            spec = PolyBlockSpec(v, n, input_dim=d, output_dim=o, rank=k)
        else:
            spec = PolyBlockSpec(v, n, input_dim=d, output_dim=o, rank=k, bias_dim=w)
        if spec not in seen:
            seen.add(spec)
            yield spec


def oracle_check(net: ProductNet, seed: int, tol: float = FIT_TOL, points: int = 200) -> Check:
    """Fit a dense polynomial of the declared degree, then compare pointwise on fresh inputs."""
    d, o, n = net.input_dim, net.output_dim, net.total_degree
    fit = fit_dense(net_fn(net), d, o, n, seed=seed, holdout=points)
    z = np.random.default_rng([seed, 99]).uniform(-1.0, 1.0, size=(points, d))
    dense = eval_dense(fit.poly, z).data
    pointwise = relative_error(forward_product(net, Tensor(z)).data, dense)
    ok = fit.residual < tol and pointwise < tol
    return Check(
        f"oracle {' -> '.join(_label(s) for s in net.specs)} seed={seed}", ok,
        f"fit residual {fit.residual:.2e}, pointwise {pointwise:.2e}, cond {fit.condition:.1e}",
    )


def _label(s: PolyBlockSpec) -> str:
    if s.variant == B.HIGH_ORDER_RESIDUAL:
        return f"{s.variant}(d={s.input_dim},N={s.order})"
    extra = f",w={s.bias_dim}" if s.bias_dim else ""
    return f"{s.variant}(d={s.input_dim},k={s.rank},o={s.output_dim}{extra},N={s.order})"


def oracle_grid(variants=B.VARIANTS, input_dims=(1, 2, 3), ranks=(1, 2, 4), output_dims=(1, 2),
                bias_dims=(1, 2), orders=(1, 2, 3), seeds=5, tolerance=FIT_TOL, points=200) -> Section:
    sec = Section("oracle equivalence grid")
    for spec in grid_specs(variants, input_dims, ranks, output_dims, bias_dims, orders):
        for seed in range(seeds):
            net = make_net([spec], seed=seed, scheme="ones")
            sec.checks.append(oracle_check(net, seed, tolerance, points))
    return sec


# -- degree law ------------------------------------------------------------------------------

_ROTATION = (B.CCP, B.NCP, B.NCP_SKIP, B.HIGH_ORDER_RESIDUAL)


def degree_chains(block_degrees=(1, 2, 3), max_blocks=3, max_total=8):
    for length in range(1, max_blocks + 1):
        for degs in itertools.product(block_degrees, repeat=length):
            if math.prod(degs) <= max_total:
                yield degs


def chain_net(degrees, seed: int, width: int = 2, out_dim: int = 2, rank: int = 3) -> ProductNet:
    """Random chain with the given block degrees; block variants rotate with the seed."""
    specs = []
    for i, n in enumerate(degrees):
        v = _ROTATION[(seed + i) % len(_ROTATION)]
        o = out_dim if i == len(degrees) - 1 else width
        if v == B.HIGH_ORDER_RESIDUAL and o != width:
            v = B.CCP
        if v == B.HIGH_ORDER_RESIDUAL:
            specs.append(PolyBlockSpec(v, n, input_dim=width))
        else:
            specs.append(PolyBlockSpec(v, n, input_dim=width, output_dim=o, rank=rank))
    return make_net(specs, seed=seed, scheme="ones")


def degree_law(block_degrees=(1, 2, 3), max_blocks=3, max_total=8, seeds=5,
               tolerance=PROBE_TOL) -> Section:
    sec = Section("degree law (product of block degrees)")
    for degs in degree_chains(block_degrees, max_blocks, max_total):
        for seed in range(seeds):
            net = chain_net(degs, seed)
            probe = probe_degree(net_fn(net), net.input_dim, seed=seed, max_degree=max_total, tol=tolerance)
            want = math.prod(degs)
            sec.checks.append(Check(
                f"degree {'x'.join(map(str, degs))} [{','.join(s.variant for s in net.specs)}] seed={seed}",
                probe.degree == want, f"probed {probe}, expected {want}",
            ))
    return sec


# -- gradient checks ----------------------------------------------------------------------------


def grad_instance(i: int, rng: np.random.Generator):
    """The i-th gradient-check case: a small network plus a batch and a loss."""
    kind = i % 8
    d = int(rng.integers(1, 5))
    k = int(rng.integers(1, 5))
    o = int(rng.integers(1, 4))
    n = int(rng.integers(1, 4))
    if kind == 0:
        specs = [PolyBlockSpec(B.CCP, n, input_dim=d, output_dim=o, rank=k)]
    elif kind == 1:
        specs = [PolyBlockSpec(B.NCP, n, input_dim=d, output_dim=o, rank=k, bias_dim=int(rng.integers(1, 4)))]
    elif kind == 2:
        specs = [PolyBlockSpec(B.NCP_SKIP, n, input_dim=d, output_dim=o, rank=k)]
    elif kind == 3:
        specs = [PolyBlockSpec(B.HIGH_ORDER_RESIDUAL, n, input_dim=d)]
    elif kind == 4:
        specs = [PolyBlockSpec(B.CCP, max(n, 2), input_dim=d, output_dim=o, rank=k, stabilizer="tanh")]
    elif kind == 5:
        specs = [PolyBlockSpec(B.NCP_SKIP, max(n, 2), input_dim=d, output_dim=o, rank=max(k, 2),
                               stabilizer="instance-norm")]
    elif kind == 6:
        specs = [PolyBlockSpec(B.NCP_SKIP, 2, input_dim=d, output_dim=3, rank=k, activation="tanh"),
                 PolyBlockSpec(B.CCP, 2, input_dim=3, output_dim=o, rank=k)]
    else:
        specs = [PolyBlockSpec(B.HIGH_ORDER_RESIDUAL, 2, input_dim=d, stabilizer="tanh"),
                 PolyBlockSpec(B.NCP, n, input_dim=d, output_dim=o, rank=k)]
    net = make_net(specs, seed=rng, scheme="ones")
    batch = int(rng.integers(1, 5))
    z = rng.uniform(-1.0, 1.0, size=(batch, net.input_dim))
    if i % 2:
        y = np.eye(net.output_dim)[rng.integers(0, net.output_dim, size=batch)]
        loss = "softmax-cross-entropy"
    else:
        y = rng.uniform(-1.0, 1.0, size=(batch, net.output_dim))
        loss = "mse"
    return net, z, y, loss


def grad_checks(instances=100, seed=0, step=1e-6, tolerance=1e-5, abs_floor=1e-8) -> Section:
    from .train import training_graph

    sec = Section("gradient correctness (central differences)")
    rng = np.random.default_rng(seed)
    for i in range(instances):
        net, z, y, loss = grad_instance(i, rng)
        g = training_graph(net, loss)
        report = grad_check(graph_loss_fn(g, {"z": Tensor(z), "y": Tensor(y)}), net.params(),
                            step, tolerance, abs_floor)
        sec.checks.append(Check(
            f"grad {' -> '.join(_label(s) + ('/' + s.stabilizer if s.stabilizer != 'none' else '') for s in net.specs)} {loss} #{i}",
            report.passed, f"max rel err {report.max_rel_error:.2e}",
        ))
    return sec


# -- checkpoints -------------------------------------------------------------------------------


def checkpoint_checks(ckpt: Checkpoint, label: str, seed: int = 0, tolerance: float = FIT_TOL) -> Section:
    sec = Section(f"checkpoint {label}")
    net = ckpt.net
    sec.checks.append(Check("payload digest", ckpt.digest_ok,
                            "matches header" if ckpt.digest_ok else "payload bytes differ from recorded digest"))
    if ckpt.fingerprint_inputs is not None:
        with np.errstate(all="ignore"):
            got = forward_product(net, ckpt.fingerprint_inputs).data
        err = relative_error(got, ckpt.fingerprint_outputs.data)
        ok = bool(np.isfinite(err) and err < tolerance)
        sec.checks.append(Check("fingerprint reproduction", ok, f"max rel deviation {err:.2e}"))
    if net.is_polynomial:
        try:
            with np.errstate(all="ignore"):
                sec.checks.append(oracle_check(net, seed, tolerance))
        except BudgetExceeded as exc:
            sec.checks.append(Check("oracle equivalence", True, f"skipped: {exc}"))
        except (ValueError, np.linalg.LinAlgError) as exc:
            sec.checks.append(Check("oracle equivalence", False, str(exc)))
    return sec
