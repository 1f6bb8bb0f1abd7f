"""Shared numeric test utilities."""

import numpy as np

from nesua import autodiff as ad


def finite_difference_grad(f, x, h_scale=1e-5):
    """Central finite differences of a scalar function over array x."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        h = h_scale * max(1.0, abs(flat[i]))
        orig = flat[i]
        flat[i] = orig + h
        up = f(x)
        flat[i] = orig - h
        down = f(x)
        flat[i] = orig
        gflat[i] = (up - down) / (2.0 * h)
    return g


def check_grad(build_loss, arrays, rtol=1e-4, atol=1e-6):
    """Compare reverse-mode gradients of build_loss against finite differences.

    build_loss takes a list of Tensors (one per entry of arrays) and
    returns a scalar Tensor.
    """
    params = [ad.parameter(a.copy()) for a in arrays]
    loss = build_loss(params)
    ad.backward(loss)

    for i, p in enumerate(params):
        def scalar(x, i=i):
            probe = [ad.constant(q.values) for q in params]
            probe[i] = ad.constant(x)
            return build_loss(probe).item()

        fd = finite_difference_grad(scalar, arrays[i])
        got = p.grad if p.grad is not None else np.zeros_like(fd)
        np.testing.assert_allclose(got, fd, rtol=rtol, atol=atol,
                                   err_msg=f"gradient mismatch on input {i}")
