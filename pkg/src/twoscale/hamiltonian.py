"""Pointwise Hamiltonian over the finite control set and greedy feedback."""

from dataclasses import dataclass

import numpy as np

from twoscale.errors import ConfigurationError


@dataclass
class HamiltonianResult:
    """Minimum value, minimizing control index and gap to the runner-up."""

    value: np.ndarray
    argmin_u: np.ndarray
    gap: np.ndarray


def hamiltonian_table(b_all, l_all, rho_table, z2, v=None):
    """Values ``l + z2 . b + v . rho`` for every control.

    Shapes: ``b_all (n, |U|, n_slow)``, ``l_all (n, |U|)``,
    ``rho_table (|U|, n_noise)``, ``z2 (n, n_slow)``, ``v (n, n_noise)``.
    """
    vals = l_all + np.einsum("nuk,nk->nu", b_all, z2)
    if v is not None:
        vals = vals + v @ rho_table.T
    return vals


def minimize_table(vals):
    """Row-wise minimum with lowest-index tie-break and the second-best gap."""
    idx = np.argmin(vals, axis=-1)
    best = np.take_along_axis(vals, idx[..., None], -1)[..., 0]
    if vals.shape[-1] > 1:
        gap = np.partition(vals, 1, axis=-1)[..., 1] - best
    else:
        gap = np.full(best.shape, np.inf)
    return HamiltonianResult(best, idx, gap)


def psi_batch(model, x, q, z2, v=None):
    """Hamiltonian at a batch of points; arrays carry a leading batch axis."""
    if model.n_controls == 0:
        raise ConfigurationError("control set U is empty")
    x = np.atleast_2d(np.asarray(x, dtype=float))
    q = np.atleast_2d(np.asarray(q, dtype=float))
    z2 = np.broadcast_to(np.asarray(z2, dtype=float), x.shape)
    if x.shape[-1] != model.n_slow or q.shape[-1] != model.n_fast:
        raise ConfigurationError("state dimensions do not match the model")
    if v is not None:
        v = np.broadcast_to(np.asarray(v, dtype=float), (x.shape[0], model.n_noise))
    b_all, l_all = model.controls(x, q)
    return minimize_table(hamiltonian_table(b_all, l_all, model.rho_table, z2, v))


def psi(model, x, q, z2, v=None):
    """Hamiltonian ``min_u l + z2 . b + v . rho`` at a single point."""
    res = psi_batch(model, np.reshape(x, (1, -1)), np.reshape(q, (1, -1)),
                    np.reshape(z2, (1, -1)), None if v is None else np.reshape(v, (1, -1)))
    return HamiltonianResult(float(res.value[0]), int(res.argmin_u[0]), float(res.gap[0]))


def _check_scales(epsilon, eta):
    if epsilon <= 0 or eta <= 0:
        raise ValueError("epsilon and eta must be positive")


def psi_scaled(model, epsilon, eta, x, q, z2, v=None):
    """``psi(x, q, z2 / eta, v / sqrt(epsilon))``."""
    _check_scales(epsilon, eta)
    z2 = np.asarray(z2, dtype=float) / eta
    v = None if v is None else np.asarray(v, dtype=float) / np.sqrt(epsilon)
    return psi(model, x, q, z2, v)


def psi_scaled_batch(model, epsilon, eta, x, q, z2, v=None):
    """Batched ``psi_scaled``."""
    _check_scales(epsilon, eta)
    v = None if v is None else np.asarray(v, dtype=float) / np.sqrt(epsilon)
    return psi_batch(model, x, q, np.asarray(z2, dtype=float) / eta, v)


def greedy_policy(model, epsilon, eta, z2_field=None, v_field=None):
    """Feedback ``(t, x, q) -> argmin_u psi_scaled`` at the field values.

    Fields are callables ``(t, x, q) -> covectors`` (batched); ``None`` means a
    zero field.
    """
    _check_scales(epsilon, eta)

    def policy(t, x, q):
        z2 = np.zeros_like(x) if z2_field is None else z2_field(t, x, q)
        v = None if v_field is None else v_field(t, x, q)
        return psi_scaled_batch(model, epsilon, eta, x, q, z2, v).argmin_u

    return policy


def constant_policy(index):
    """Feedback that always applies control ``index``."""

    def policy(t, x, q):
        return np.full(x.shape[0], int(index), dtype=np.int64)

    return policy
