import numpy as np
import pytest

from tcn.data import SyntheticSpec, generate_synthetic, split_labels


def finite_difference(f, arrays, h=1e-5):
    """Central finite-difference gradient of scalar f() w.r.t. each array.

    ``f`` must be a pure function of the current array contents; callers are
    responsible for freezing any other mutable state (e.g. running batch
    statistics) inside ``f`` itself.
    """
    grads = []
    for arr in arrays:
        g = np.zeros_like(arr)
        flat = arr.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = f()
            flat[i] = orig - h
            fm = f()
            flat[i] = orig
            gflat[i] = (fp - fm) / (2 * h)
        grads.append(g)
    return grads


def max_rel_error(analytic, numeric):
    worst = 0.0
    for a, n in zip(analytic, numeric):
        denom = np.maximum(np.abs(a) + np.abs(n), 1e-6)
        worst = max(worst, float(np.max(np.abs(a - n) / denom)))
    return worst


def frozen_loss(net_or_model, f):
    """Wrap f so every call restores the module's state afterwards (keeps
    running statistics out of finite-difference probes)."""
    def wrapped():
        if hasattr(net_or_model, "state_dict"):
            snap = net_or_model.state_dict()
            value = f()
            net_or_model.load_state_dict(snap)
        else:
            snap = net_or_model.state()
            value = f()
            net_or_model.load_state(snap)
        return value
    return wrapped


@pytest.fixture(scope="session")
def small_split():
    """A small labeled/unlabeled synthetic split shared by training tests."""
    ds = generate_synthetic(SyntheticSpec(modalities=3, dims=(6, 5, 4),
                                          n_samples=60, class_separation=3.0,
                                          noise=0.8, seed=7))
    return split_labels(ds, 20, seed=0)
