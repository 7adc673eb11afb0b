"""Pure numpy kernels; the compiled extension mirrors these signatures."""

import numpy as np


def evaluate_basis(Y, T, parent, var, harm_ptr, harm_idx, harm_val,
                   rad_coef, col_harm, col_rad):
    """Evaluate every basis column at the standardised rows ``Y``.

    Parameters
    ----------
    Y : ndarray (n, m)
    T : ndarray (n,)
        ``|Y_i|^2``.
    parent, var : ndarray (M,) of intp
        Monomial ``c`` equals monomial ``parent[c]`` times ``y[var[c]]``;
        monomial 0 is the constant (``parent[0] == -1``).
    harm_ptr, harm_idx, harm_val : CSR rows of solid harmonic coefficients
        over the monomials.
    rad_coef : ndarray (nr, d)
        Radial polynomials in ``t``, low order first, zero padded.
    col_harm, col_rad : ndarray (p,) of intp
        Harmonic and radial factor of each output column.

    Returns
    -------
    ndarray (n, p)
    """
    n = Y.shape[0]
    M = parent.shape[0]
    mono = np.empty((n, M))
    mono[:, 0] = 1.0
    for c in range(1, M):
        mono[:, c] = mono[:, parent[c]] * Y[:, var[c]]
    nh = harm_ptr.shape[0] - 1
    H = np.empty((n, nh))
    for h in range(nh):
        lo, hi = harm_ptr[h], harm_ptr[h + 1]
        H[:, h] = mono[:, harm_idx[lo:hi]] @ harm_val[lo:hi]
    d = rad_coef.shape[1]
    Rad = np.repeat(rad_coef[None, :, d - 1], n, axis=0)
    for q in range(d - 2, -1, -1):
        Rad = Rad * T[:, None] + rad_coef[None, :, q]
    return H[:, col_harm] * Rad[:, col_rad]
