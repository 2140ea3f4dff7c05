"""Polynomial networks built from Hadamard-product recursions.

The package is organised bottom-up:

* :mod:`pinet.tensor` - immutable float64 tensors and the handful of
  operations the blocks need;
* :mod:`pinet.autodiff` - a define-then-run graph with reverse-mode
  gradients and a finite-difference checker;
* :mod:`pinet.blocks` - CCP, NCP, NCP-Skip and higher-order residual
  blocks, and :class:`~pinet.blocks.ProductNet` chains of them;
* :mod:`pinet.oracle` - dense monomial expansions, least-squares fitting
  and the finite-difference degree probe;
* :mod:`pinet.train`, :mod:`pinet.data` - optimizers, the training loop
  and dataset loaders;
* :mod:`pinet.cli` - the ``pinet`` command.
"""

from .blocks import (
    CCP,
    HIGH_ORDER_RESIDUAL,
    NCP,
    NCP_SKIP,
    PolyBlockParams,
    PolyBlockSpec,
    ProductNet,
    forward_product,
    init_params,
    make_net,
    param_count,
)
from .checkpoint import load_checkpoint, save_checkpoint
from .oracle import DensePoly, eval_dense, fit_dense, probe_degree
from .tensor import Tensor

__version__ = "0.1.0"

__all__ = [
    "CCP", "NCP", "NCP_SKIP", "HIGH_ORDER_RESIDUAL",
    "PolyBlockSpec", "PolyBlockParams", "ProductNet",
    "forward_product", "init_params", "make_net", "param_count",
    "load_checkpoint", "save_checkpoint",
    "DensePoly", "eval_dense", "fit_dense", "probe_degree",
    "Tensor",
]
