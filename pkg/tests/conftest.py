"""Shared test helpers."""

from sparseattn.tensor import GradientTape


def param_grad_errors(named_params, loss_fn, eps: float = 1e-5) -> dict[str, float]:
    """Worst relative error of taped vs central-difference gradients, per
    parameter, for a loss computed from live module state.

    Same comparison rule as tensor.grad_check: central differences with
    relative error over max(|analytic|, |numeric|, 1e-8). loss_fn must
    be deterministic and is re-evaluated tape-free for the probes.
    """
    tape = GradientTape()
    tape.watch(*[t for _, t in named_params])
    tape.backward(loss_fn())
    analytic = {name: t.grad.copy() for name, t in named_params}
    for _, t in named_params:
        t.grad = None

    errors = {}
    for name, t in named_params:
        base = t.data.copy()
        flat = t.data.ravel()
        grads = analytic[name].ravel()
        worst = 0.0
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            plus = loss_fn().item()
            flat[i] = orig - eps
            minus = loss_fn().item()
            flat[i] = orig
            numeric = (plus - minus) / (2.0 * eps)
            denom = max(abs(grads[i]), abs(numeric), 1e-8)
            worst = max(worst, abs(grads[i] - numeric) / denom)
        t.data = base
        errors[name] = worst
    return errors
