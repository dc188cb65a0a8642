import numpy as np

from .errors import NumericError, ParameterError


def grad_check(loss_fn, params, eps: float = 1e-5, analytic=None) -> float:
    """Worst per-coordinate disagreement between analytic and central-difference gradients.

    ``loss_fn(params) -> (value, grads)``. When ``analytic`` gradients are passed
    in, ``loss_fn`` only has to return the value (cheaper probing). Relative
    error is ``|a - n| / max(|a|, |n|, 1e-8)``.
    """
    if eps <= 0:
        raise ParameterError(f"eps must be positive, got {eps}")
    params = [np.array(p, dtype=np.float64) for p in params]
    if analytic is None:
        _, analytic = loss_fn(params)

        def probe():
            return float(loss_fn(params)[0])
    else:
        def probe():
            return float(loss_fn(params))

    worst = 0.0
    for i, p in enumerate(params):
        flat = p.reshape(-1)
        a_flat = np.asarray(analytic[i], dtype=np.float64).reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + eps
            up = probe()
            flat[j] = orig - eps
            down = probe()
            flat[j] = orig
            if not (np.isfinite(up) and np.isfinite(down)):
                raise NumericError(f"non-finite loss probing parameter {i} coordinate {j}")
            num = (up - down) / (2.0 * eps)
            a = a_flat[j]
            err = abs(a - num) / max(abs(a), abs(num), 1e-8)
            worst = max(worst, err)
    return worst
