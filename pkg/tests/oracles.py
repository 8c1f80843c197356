"""Brute-force reference implementations used as test oracles."""
import numpy as np


def correlate_same(x, w, bias=None):
    """Direct sliding-window cross-correlation with zero padding; works for any dtype."""
    c_in, h, wd = x.shape
    c_out, _, k, _ = w.shape
    p = k // 2
    dtype = np.result_type(x, w, np.float64)
    out = np.zeros((c_out, h, wd), dtype=dtype)
    for o in range(c_out):
        for i in range(h):
            for j in range(wd):
                acc = 0
                for c in range(c_in):
                    for u in range(k):
                        for v in range(k):
                            ii, jj = i + u - p, j + v - p
                            if 0 <= ii < h and 0 <= jj < wd:
                                acc += w[o, c, u, v] * x[c, ii, jj]
                out[o, i, j] = acc
        if bias is not None:
            out[o] += bias[o]
    return out


def dft_matrix(n):
    """Centered orthonormal DFT matrix: fftshift . F . ifftshift."""
    eye = np.eye(n)
    f = np.fft.fft(np.fft.ifftshift(eye, axes=0), axis=0, norm="ortho")
    return np.fft.fftshift(f, axes=0)


def dense_sense(maps, mask):
    """Explicit matrix of the multi-coil forward operator, [C*H*W, H*W]."""
    c, h, w = maps.shape
    F = np.kron(dft_matrix(h), dft_matrix(w))
    blocks = [np.diag(mask.ravel()) @ F @ np.diag(maps[i].ravel()) for i in range(c)]
    return np.vstack(blocks)
