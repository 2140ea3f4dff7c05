import numpy as np
import pytest

from pinet import blocks as B


def hand_ccp():
    """d=2, k=1, o=1, N=2 with U1=e1, U2=e2, C=1, beta=0: G(z) = z1 + z1*z2."""
    spec = B.PolyBlockSpec(B.CCP, 2, input_dim=2, output_dim=1, rank=1)
    return B.PolyBlockParams(spec, {
        "U1": [[1.0], [0.0]], "U2": [[0.0], [1.0]], "C": [[1.0]], "beta": [0.0],
    })


def all_ones(variant, order=2, bias_dim=1):
    """Scalar NCP-family block with every parameter equal to one and beta=0."""
    spec = B.PolyBlockSpec(variant, order, input_dim=1, output_dim=1, rank=1, bias_dim=bias_dim)
    tensors = {name: np.ones(shape) for name, shape in spec.param_shapes().items()}
    tensors["beta"] = np.zeros(1)
    return B.PolyBlockParams(spec, tensors)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def output_root(tmp_path, monkeypatch):
    monkeypatch.setenv("PINET_OUTPUT_ROOT", str(tmp_path / "out"))
    return tmp_path / "out"
