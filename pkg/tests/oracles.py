"""Shared independent references used by several test modules.

Everything here is deliberately built from primitives only (dense numpy
linear algebra), never from the hierarchy code under test.
"""

import numpy as np


def fock_reduced_reference(model, times, n_fock=40, nbar=0.5, rho0=None):
    """Exact reduced dynamics of a small system coupled to one harmonic
    mode, by eigendecomposition in a truncated Fock space.

    The mode starts in the thermal state with occupation `nbar` (the
    Gaussian with <x^2> = nbar + 1/2, i.e. the classical variance
    1/(beta*omega) when nbar = 1/(beta*omega) - 1/2), the system in
    `rho0` (ground-state projector by default), and the coupling
    operator alpha0 + alpha1*x + alpha2*x^2 is attached to q_s.
    Returns an array of d x d reduced matrices, one per entry of
    `times`.
    """
    nf = int(n_fock)
    d = model.h_s.shape[0]
    a = np.diag(np.sqrt(np.arange(1, nf)), 1)
    x = (a + a.T) / np.sqrt(2.0)
    h_mode = np.diag(np.arange(nf) + 0.5)
    f = (model.alpha0 * np.eye(nf) + model.alpha1 * x
         + model.alpha2 * (x @ x))
    h_tot = (np.kron(model.h_s, np.eye(nf))
             + np.kron(model.q_s, f)
             + np.kron(np.eye(d), h_mode))
    w, v = np.linalg.eigh(h_tot)

    q = nbar / (nbar + 1.0)
    pn = (1.0 - q) * q ** np.arange(nf)
    if rho0 is None:
        rho0 = np.zeros((d, d))
        rho0[0, 0] = 1.0
    rt = v.conj().T @ np.kron(np.asarray(rho0, dtype=complex),
                              np.diag(pn)) @ v

    out = np.empty((len(times), d, d), dtype=complex)
    for i, t in enumerate(times):
        ph = np.exp(-1j * w * t)
        rho = (v * ph) @ rt @ (v * ph).conj().T
        out[i] = np.einsum("injn->ij", rho.reshape(d, nf, d, nf))
    return out
