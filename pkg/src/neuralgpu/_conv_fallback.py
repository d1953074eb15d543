"""Numpy convolution kernels used when the compiled extension is unavailable.

These reproduce the accumulation order of the compiled kernels element for
element (taps ascending, then channels ascending, starting from zero), so both
backends return identical arrays.  They vectorise across output positions
only, which makes them far slower than the compiled path.
"""

import numpy as np


def _padded(x, kw, kh):
    hw, hh = kw // 2, kh // 2
    return np.pad(x, ((0, 0), (hw, hw), (hh, hh), (0, 0)))


def conv_forward(s, kernel):
    kw, kh, cin, cout = kernel.shape
    nb, nw, nn, _ = s.shape
    padded = _padded(s, kw, kh)
    out = np.zeros((nb, nw, nn, cout), dtype=s.dtype)
    for u in range(kw):
        for v in range(kh):
            shifted = padded[:, u:u + nw, v:v + nn]
            for c in range(cin):
                out += shifted[..., c:c + 1] * kernel[u, v, c]
    return out


def conv_grad_input(g, kernel):
    flipped = kernel[::-1, ::-1].transpose(0, 1, 3, 2)
    return conv_forward(g, flipped)


def conv_grad_kernel(s, g, kernel_shape):
    kw, kh = kernel_shape[0], kernel_shape[1]
    nw, nn, cin = s.shape[1], s.shape[2], s.shape[3]
    cout = g.shape[-1]
    padded = _padded(s, kw, kh)
    g_rows = g.reshape(-1, cout)
    out = np.zeros((kw, kh, cin, cout), dtype=s.dtype)
    for u in range(kw):
        for v in range(kh):
            s_rows = padded[:, u:u + nw, v:v + nn].reshape(-1, cin)
            terms = s_rows[:, :, None] * g_rows[:, None, :]
            # running sum from an explicit zero keeps the compiled summation order
            terms = np.concatenate([out[u, v][None], terms])
            out[u, v] = np.add.accumulate(terms, axis=0)[-1]
    return out
