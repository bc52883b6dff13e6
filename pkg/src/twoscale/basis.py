"""Polynomial regression features with analytic gradients."""

import itertools

import numpy as np


class PolynomialBasis:
    """All monomials of total degree at most ``degree`` in ``dim`` inputs.

    Inputs are standardized with ``center`` and ``scale`` before the monomials
    are formed; the first feature is the constant.
    """

    def __init__(self, dim, degree, center=None, scale=None):
        self.dim = int(dim)
        self.degree = int(degree)
        self.exponents = np.array(
            [e for d in range(degree + 1)
             for e in itertools.product(range(d + 1), repeat=dim) if sum(e) == d],
            dtype=int,
        ).reshape(-1, dim)
        self.center = np.zeros(dim) if center is None else np.asarray(center, dtype=float)
        self.scale = np.ones(dim) if scale is None else np.asarray(scale, dtype=float)

    @property
    def n_terms(self):
        return len(self.exponents)

    def fit_scaling(self, u):
        """Set ``center`` and ``scale`` from samples; constant inputs keep scale 1."""
        self.center = u.mean(axis=0)
        sd = u.std(axis=0)
        self.scale = np.where(sd > 1e-12, sd, 1.0)
        return self

    def _powers(self, s):
        # powers[p][:, j] = s[:, j] ** p
        pw = [np.ones_like(s)]
        for _ in range(self.degree):
            pw.append(pw[-1] * s)
        return pw

    def design(self, u):
        s = (np.asarray(u, dtype=float) - self.center) / self.scale
        pw = self._powers(s)
        out = np.ones((s.shape[0], self.n_terms))
        for t, e in enumerate(self.exponents):
            for j, p in enumerate(e):
                if p:
                    out[:, t] *= pw[p][:, j]
        return out

    def gradient(self, u, coef):
        """Gradient in the original (unstandardized) inputs of ``design(u) @ coef``."""
        s = (np.asarray(u, dtype=float) - self.center) / self.scale
        pw = self._powers(s)
        grad = np.zeros_like(s)
        for t, e in enumerate(self.exponents):
            if coef[t] == 0.0:
                continue
            for j in range(self.dim):
                if e[j] == 0:
                    continue
                term = np.full(s.shape[0], coef[t] * e[j])
                for i, p in enumerate(e):
                    q = p - 1 if i == j else p
                    if q:
                        term = term * pw[q][:, i]
                grad[:, j] += term
        return grad / self.scale
