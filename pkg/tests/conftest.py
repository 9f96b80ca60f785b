import numpy as np
from scipy.sparse import diags
from scipy.sparse.linalg import eigsh


def fem_spectral_gap(density, a: float, b: float, nodes: int = 4000) -> float:
    """Smallest positive Neumann eigenvalue of the weighted Sturm-Liouville
    problem -(p u')' = lambda p u on (a, b), p the density of the measure.

    P1 finite elements on a uniform grid; the generalized eigenproblem
    K u = lambda M u has 0 as its first eigenvalue (constants), and the
    second one is the Poincare constant of the measure.
    """
    x = np.linspace(a, b, nodes)
    h = x[1] - x[0]
    mid = 0.5 * (x[:-1] + x[1:])
    p_mid = density(mid)

    k_diag = np.zeros(nodes)
    k_off = -p_mid / h
    k_diag[:-1] += p_mid / h
    k_diag[1:] += p_mid / h
    m_diag = np.zeros(nodes)
    m_off = p_mid * h / 6.0
    m_diag[:-1] += p_mid * h / 3.0
    m_diag[1:] += p_mid * h / 3.0

    K = diags([k_off, k_diag, k_off], offsets=(-1, 0, 1), format="csc")
    M = diags([m_off, m_diag, m_off], offsets=(-1, 0, 1), format="csc")
    # sigma strictly below 0 keeps the shifted matrix nonsingular (0 is the
    # constant-function eigenvalue)
    vals = eigsh(K, k=2, M=M, sigma=-1e-3, which="LM",
                 return_eigenvectors=False)
    return float(np.sort(vals)[1])
