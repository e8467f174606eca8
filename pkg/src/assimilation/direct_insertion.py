import numpy as np


def direct_insertion(x_b: np.ndarray, y: np.ndarray, H) -> np.ndarray:
    """
    x_a = x_b + H^T (y - H x_b): observed components replaced, others untouched.
    H is either a p x D selection matrix or the p observed node indices.
    Works on a D-vector or a D x k matrix of members.
    """
    x_b = np.asarray(x_b, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    H = np.asarray(H)
    if x_b.ndim == 2 and y.ndim == 1:
        y = y[:, None]

    if H.ndim == 2:
        if H.shape[0] == 0:
            return x_b.copy()
        return x_b + H.T @ (y - H @ x_b)

    x_a = x_b.copy()
    if H.size:
        x_a[H.astype(np.int64)] = y
    return x_a
