import numpy as np
import pytest

from gmadloop.scorer import AffineLayer, GdnLayer, ModelParams, init_params

FD_STEP = 1e-5
FD_TOL = 1e-5


def rel_error(a, b, floor=1e-4):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = np.maximum(floor, np.maximum(np.abs(a), np.abs(b)))
    return np.max(np.abs(a - b) / denom) if a.size else 0.0


def central_diff(fn, arr, i, j=None, h=FD_STEP, symmetric_partner=None):
    """Central finite difference of fn() along one entry of arr.

    symmetric_partner=(j, i) perturbs the mirrored entry in lockstep, which
    is how a tied symmetric matrix parameter must be probed.
    """
    idx = (i,) if j is None else (i, j)
    orig = arr[idx]
    orig_pair = arr[symmetric_partner] if symmetric_partner is not None else None

    def set_value(val):
        arr[idx] = val
        if symmetric_partner is not None:
            arr[symmetric_partner] = val

    set_value(orig + h)
    up = fn()
    set_value(orig - h)
    down = fn()
    arr[idx] = orig
    if symmetric_partner is not None:
        arr[symmetric_partner] = orig_pair
    return (up - down) / (2.0 * h)


def fd_layer_gradients(fn, params: ModelParams):
    """Finite-difference gradients of fn() for every layer parameter.

    Returns a list shaped like GradientRecord.layers. Gamma entries are
    perturbed symmetrically so they match the symmetrized analytic gradient.
    """
    out = []
    for layer in params.layers:
        if isinstance(layer, AffineLayer):
            gw = np.zeros_like(layer.weight)
            for i in range(layer.weight.shape[0]):
                for j in range(layer.weight.shape[1]):
                    gw[i, j] = central_diff(fn, layer.weight, i, j)
            gb = np.zeros_like(layer.bias)
            for i in range(layer.bias.shape[0]):
                gb[i] = central_diff(fn, layer.bias, i)
            out.append((gw, gb))
        else:
            go = np.zeros_like(layer.omega)
            for i in range(layer.omega.shape[0]):
                go[i] = central_diff(fn, layer.omega, i)
            gg = np.zeros_like(layer.gamma)
            c = layer.gamma.shape[0]
            for i in range(c):
                gg[i, i] = central_diff(fn, layer.gamma, i, i)
                for j in range(i + 1, c):
                    g = central_diff(fn, layer.gamma, i, j, symmetric_partner=(j, i))
                    gg[i, j] = gg[j, i] = g
            out.append((go, gg))
    return out


def assert_layer_grads_match(analytic, fd, tol=FD_TOL):
    for (aa, ab), (fa, fb) in zip(analytic, fd):
        assert rel_error(aa, fa) < tol
        assert rel_error(ab, fb) < tol


@pytest.fixture
def small_params():
    return init_params(7, [4, 3, 3, 1])
