import numpy as np

from .tape import Tape, backward


def finite_diff_gradcheck(fn, params: dict, h: float = 1e-5) -> float:
    """Largest relative disagreement between tape and central-difference gradients.

    ``fn(tape, nodes)`` must build a scalar on ``tape`` from the parameter
    nodes it is handed (a name -> Node dict) and return it. The relative error
    of one coordinate is ``|a - b| / max(|a|, |b|, 1e-8)``.
    """
    if h <= 0:
        raise ValueError("step size must be positive")
    base = {k: np.array(v, dtype=np.float64) for k, v in params.items()}

    def evaluate(values):
        tape = Tape()
        nodes = {k: tape.param(k, v) for k, v in values.items()}
        return tape, fn(tape, nodes)

    tape, root = evaluate(base)
    analytic = backward(tape, root)

    worst = 0.0
    for name, arr in base.items():
        flat = arr.reshape(-1)
        for j in range(flat.size):
            keep = flat[j]
            flat[j] = keep + h
            plus = float(evaluate(base)[1].value)
            flat[j] = keep - h
            minus = float(evaluate(base)[1].value)
            flat[j] = keep
            numeric = (plus - minus) / (2.0 * h)
            a = float(analytic[name].reshape(-1)[j])
            err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            worst = max(worst, err)
    return worst
