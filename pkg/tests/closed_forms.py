"""Independent closed forms for the quenched qubit: H0 = -sz, H^(k) = -w_k sx.

Energies: E_l^0 = (-1, +1) for l = (0, 1); E_m^(k) = (-w_k, +w_k). Each
quench eigenstate has overlap 1/2 with each computational state, and the
backward initial Hamiltonian +w_k sx has the same spectrum.
"""

import numpy as np

BETA = 0.2
OMEGAS = (2.0, 3.0)
PHI = np.pi / 3


def p_l(beta=BETA):
    e = np.array([-1.0, 1.0])
    w = np.exp(-beta * e)
    return w / w.sum()


def p_k_given_l(phi=PHI):
    c, s = np.cos(phi) ** 2, np.sin(phi) ** 2
    return np.array([[c, s], [s, c]])  # [l, k]


def p_k(beta=BETA, phi=PHI):
    return p_l(beta) @ p_k_given_l(phi)


def delta_f(beta=BETA, omegas=OMEGAS):
    return np.array([-np.log(np.cosh(beta * w) / np.cosh(beta)) / beta for w in omegas])


def information(beta=BETA, phi=PHI):
    cond = p_k_given_l(phi).T  # [k, l]
    return np.log(cond / p_k(beta, phi)[:, None])


def chi_forward(k, l, u, beta=BETA, omegas=OMEGAS, phi=PHI):
    """chi_F^(k,l) for the quench: 1/2 p(k|l) p(l) sum_m exp(iu(E_m^(k) - E_l^0))."""
    u = np.asarray(u, dtype=float)
    e0 = (-1.0, 1.0)[l]
    w = omegas[k]
    pref = 0.5 * p_k_given_l(phi)[l, k] * p_l(beta)[l]
    return pref * (np.exp(1j * u * (w - e0)) + np.exp(1j * u * (-w - e0)))


def chi_forward_wcm(k, u, beta=BETA, omegas=OMEGAS):
    return chi_forward(k, k, u, beta, omegas, phi=0.0)


def chi_backward(k, l, u, beta=BETA, omegas=OMEGAS, phi=PHI):
    """chi_B^(l,k) = 1/2 p(k) sum_m thermal(m) exp(iu(E_l^0 - E~_m^(k)))."""
    u = np.asarray(u, dtype=float)
    w = omegas[k]
    e_init = np.array([-w, w])
    pops = np.exp(-beta * e_init) / np.exp(-beta * e_init).sum()
    e_fin = (-1.0, 1.0)[l]
    return 0.5 * p_k(beta, phi)[k] * sum(pops[m] * np.exp(1j * u * (e_fin - e_init[m])) for m in range(2))


def chi_backward_wcm(k, u, beta=BETA, omegas=OMEGAS):
    return chi_backward(k, k, u, beta, omegas, phi=0.0) / p_k(beta, 0.0)[k]
