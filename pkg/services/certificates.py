"""
Convergence certificates
Matrices Psi, Phi, Upsilon, Xi and the constants derived from them, plus brute-force
matrix-class oracles (P-matrix minors, sign reversal)
"""

import itertools
import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.linalg
from scipy.optimize import linprog

from .errors import CertificateError, NumericError
from .game_core import Budgets, ChannelGains

logger = logging.getLogger(__name__)

P_MATRIX_MINOR_LIMIT = 20
PSI_SINGULAR = 'psi singular'


def _noise_power_at_max(gains: ChannelGains, budgets: Budgets):
    """I_{l,n}(p^max) and I_{l,n}(p^max_{-l})"""
    p_max = budgets.p_max
    total = gains.sigma + np.einsum('mln,mn->ln', gains.h, p_max)
    others = total - gains.direct() * p_max
    return total, others


def build_psi(gains: ChannelGains, budgets: Budgets) -> np.ndarray:
    total, _ = _noise_power_at_max(gains, budgets)
    direct = gains.direct()
    psi = -np.max(direct[:, None, :] * np.transpose(gains.h, (1, 0, 2)) / gains.sigma[:, None, :] ** 2, axis=2)
    np.fill_diagonal(psi, np.min(direct ** 2 / total ** 2, axis=1))
    return psi


def build_phi(psi: np.ndarray) -> np.ndarray:
    diag = np.diag(psi)
    if np.any(diag <= 0):
        raise CertificateError(f"Psi has a nonpositive diagonal entry: {diag}")
    phi = -psi / diag[:, None]
    np.fill_diagonal(phi, 0.0)
    return phi


def build_upsilon(gains: ChannelGains, budgets: Budgets) -> np.ndarray:
    """Entrywise bound on the Jacobian of the penalty b over the power box

    [U]_ii = max_n sum_{l != i} h_il^2 W_l
    [U]_ij = max_n h_ij h_jj / sigma_j^2 + max_n sum_{l != i,j} h_il h_jl W_l
    with W_l = h_ll p^max_l (I_l(p^max_{-l}) + I_l(p^max)) / sigma_l^4.
    """
    total, others = _noise_power_at_max(gains, budgets)
    weight = gains.direct() * budgets.p_max * (others + total) / gains.sigma ** 4
    cross = gains.cross()
    coupled = np.einsum('iln,jln,ln->ijn', cross, cross, weight)
    direct_term = cross * (gains.direct() / gains.sigma ** 2)[None, :, :]
    upsilon = np.max(direct_term, axis=2) + np.max(coupled, axis=2)
    np.fill_diagonal(upsilon, np.max(np.einsum('iin->in', coupled), axis=1))
    return upsilon


def build_xi(gains: ChannelGains) -> np.ndarray:
    direct = gains.direct()
    return np.max(direct[:, None, :] * np.transpose(gains.h, (1, 0, 2)) / gains.sigma[:, None, :] ** 2, axis=2)


def is_p_matrix(a: np.ndarray) -> bool:
    a = np.asarray(a, dtype=float)
    size = a.shape[0]
    if a.ndim != 2 or a.shape[1] != size:
        raise CertificateError(f"P-matrix test needs a square matrix, got {a.shape}")
    if size > P_MATRIX_MINOR_LIMIT:
        raise CertificateError(f"refusing exhaustive minors for size {size} > {P_MATRIX_MINOR_LIMIT}")
    for k in range(1, size + 1):
        for rows in itertools.combinations(range(size), k):
            if np.linalg.det(a[np.ix_(rows, rows)]) <= 0:
                return False
    return True


def sign_reversal_witness(a: np.ndarray) -> Optional[np.ndarray]:
    """A nonzero x with x_i (Ax)_i <= 0 for all i, or None if A reverses no sign

    Enumerates sign vectors s in {-1, 0, 1}^n (up to a global sign) and solves
    one feasibility LP per pattern.
    """
    a = np.asarray(a, dtype=float)
    size = a.shape[0]
    for signs in itertools.product((-1, 0, 1), repeat=size):
        s = np.array(signs, dtype=float)
        support = np.flatnonzero(s)
        if support.size == 0 or s[support[0]] < 0:
            continue
        # s_i x_i >= 0, s_i (A x)_i <= 0 on the support, x = 0 off it, sum s_i x_i = 1
        a_ub = np.vstack([-np.diag(s)[support], (s[:, None] * a)[support]])
        b_ub = np.zeros(a_ub.shape[0])
        bounds = [(None, None) if s[i] else (0.0, 0.0) for i in range(size)]
        res = linprog(np.zeros(size), A_ub=a_ub, b_ub=b_ub, A_eq=s[None, :], b_eq=[1.0],
                      bounds=bounds, method='highs')
        if res.status == 0:
            return res.x
    return None


def reverses_sign(a: np.ndarray, x: np.ndarray, tol: float = 0.0) -> bool:
    """x != 0 and x_i (Ax)_i <= tol for every i"""
    x = np.asarray(x, dtype=float)
    return bool(np.any(x != 0) and np.all(x * (np.asarray(a) @ x) <= tol))


def spectral_radius(a: np.ndarray, method: str = 'dense', tol: float = 1e-12, max_iter: int = 100000) -> float:
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise CertificateError(f"spectral radius needs a square matrix, got {a.shape}")
    if method == 'dense':
        try:
            return float(np.max(np.abs(scipy.linalg.eigvals(a))))
        except scipy.linalg.LinAlgError as e:
            raise NumericError(f"eigen-solver failed: {e}") from e
    if method != 'power':
        raise ValueError(f"unknown spectral radius method: {method}")
    if np.any(a < 0):
        raise CertificateError("power iteration needs a nonnegative matrix")

    # A + I keeps the Perron root strictly dominant even for periodic patterns
    shifted = a + np.eye(a.shape[0])
    x = np.ones(a.shape[0])
    estimate = 0.0
    for iteration in range(1, max_iter + 1):
        y = shifted @ x
        norm = np.max(np.abs(y))
        if abs(norm - estimate) <= tol * norm:
            return float(max(norm - 1.0, 0.0))
        estimate = norm
        x = y / norm
    raise NumericError("power iteration did not converge", iterations=max_iter)


def _lambda_min_sym(a: np.ndarray) -> float:
    return float(scipy.linalg.eigvalsh(0.5 * (a + a.T))[0])


@dataclass
class DerivedConstants:
    tau: float
    tau_psi: float
    tau_lower_bound: float
    tau_ok: bool
    L_sc: float
    L_lip: float
    eta3_bound: float
    kappa_bound: float
    contraction_rho: Optional[float]

    def kappa_ok(self, kappa: float) -> bool:
        return 0 < kappa <= min(1.0, self.kappa_bound)

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class Certificates:
    psi: np.ndarray
    phi: np.ndarray
    upsilon: np.ndarray
    xi: np.ndarray
    rho_phi: float
    rho_psi_inv_upsilon: Optional[float]
    psi_is_P: bool
    psi_is_P_by_minors: Optional[bool]
    psi_pd: bool
    psi_psd: bool
    psi_diag_dominant: bool
    tau_psi: float
    lambda_min_psi: float
    lambda_min_psi_minus_upsilon: float
    L_lip: float

    def l_sc(self, tau: float) -> float:
        return tau + self.lambda_min_psi_minus_upsilon

    def warnings(self) -> list:
        notes = []
        if not self.psi_is_P:
            notes.append(f"Psi is not a P-matrix (rho(Phi) = {self.rho_phi:.6g})")
        if self.rho_psi_inv_upsilon is None:
            notes.append(PSI_SINGULAR)
        elif self.rho_psi_inv_upsilon >= 1:
            notes.append(f"rho(Psi^-1 Upsilon) = {self.rho_psi_inv_upsilon:.6g} >= 1")
        if not self.psi_pd:
            notes.append("symmetric part of Psi is not positive definite")
        return notes

    def to_dict(self) -> dict:
        return {
            'psi': self.psi.tolist(),
            'phi': self.phi.tolist(),
            'upsilon': self.upsilon.tolist(),
            'xi': self.xi.tolist(),
            'rho_phi': self.rho_phi,
            'rho_psi_inv_upsilon': PSI_SINGULAR if self.rho_psi_inv_upsilon is None else self.rho_psi_inv_upsilon,
            'psi_is_P': self.psi_is_P,
            'psi_is_P_by_minors': self.psi_is_P_by_minors,
            'psi_pd': self.psi_pd,
            'psi_pd_test': 'symmetric part',
            'psi_psd': self.psi_psd,
            'psi_diag_dominant': self.psi_diag_dominant,
            'tau_psi': self.tau_psi,
            'lambda_min_psi': self.lambda_min_psi,
            'lambda_min_psi_minus_upsilon': self.lambda_min_psi_minus_upsilon,
            'lambda_min_note': 'Psi - Upsilon symmetrized as (A + A^T)/2',
            'L_lip': self.L_lip,
        }


def compute_tau_psi(psi: np.ndarray) -> float:
    """max of row excess sum_{j != i} |Psi_ij| - Psi_ii and column excess sum_i |Psi_ij| - Psi_jj"""
    absolute = np.abs(psi)
    diag = np.diag(psi)
    row = absolute.sum(axis=1) - np.abs(diag) - diag
    column = absolute.sum(axis=0) - diag
    return float(max(row.max(), column.max()))


def _rho_psi_inv_upsilon(psi: np.ndarray, upsilon: np.ndarray) -> Optional[float]:
    if np.linalg.cond(psi) > 1.0 / np.finfo(float).eps:
        return None
    try:
        return spectral_radius(scipy.linalg.solve(psi, upsilon))
    except scipy.linalg.LinAlgError:
        return None


def build_certificates(gains: ChannelGains, budgets: Budgets) -> Certificates:
    return certificates_from_matrices(build_psi(gains, budgets), build_upsilon(gains, budgets), build_xi(gains))


def certificates_from_matrices(psi: np.ndarray, upsilon: np.ndarray, xi: np.ndarray) -> Certificates:
    psi = np.asarray(psi, dtype=float)
    upsilon = np.asarray(upsilon, dtype=float)
    xi = np.asarray(xi, dtype=float)
    try:
        phi = build_phi(psi)
        rho_phi = spectral_radius(phi)
    except CertificateError as e:
        logger.warning(f"Phi unavailable: {e}")
        phi = np.full_like(psi, np.inf)
        rho_phi = float('inf')

    by_minors = is_p_matrix(psi) if psi.shape[0] <= P_MATRIX_MINOR_LIMIT else None
    psi_is_P = by_minors if by_minors is not None else rho_phi < 1
    if by_minors is not None and by_minors != (rho_phi < 1):
        logger.warning(f"P-matrix minors ({by_minors}) disagree with rho(Phi) = {rho_phi!r}")

    lambda_min_psi = _lambda_min_sym(psi)
    off = np.abs(psi - np.diag(np.diag(psi)))
    diag = np.diag(psi)
    certs = Certificates(
        psi=psi,
        phi=phi,
        upsilon=upsilon,
        xi=xi,
        rho_phi=rho_phi,
        rho_psi_inv_upsilon=_rho_psi_inv_upsilon(psi, upsilon),
        psi_is_P=bool(psi_is_P),
        psi_is_P_by_minors=by_minors,
        psi_pd=lambda_min_psi > 0,
        psi_psd=lambda_min_psi >= -1e-12 * max(1.0, float(np.max(np.abs(psi)))),
        psi_diag_dominant=bool(np.all(diag > off.sum(axis=1)) and np.all(diag > off.sum(axis=0))),
        tau_psi=compute_tau_psi(psi),
        lambda_min_psi=lambda_min_psi,
        lambda_min_psi_minus_upsilon=_lambda_min_sym(psi - upsilon),
        L_lip=float(scipy.linalg.svdvals(xi)[0] + scipy.linalg.svdvals(upsilon)[0]),
    )
    for note in certs.warnings():
        logger.info(f"Certificate: {note}")
    return certs


def derived_constants(certs: Certificates, tau: float) -> DerivedConstants:
    lam = certs.lambda_min_psi_minus_upsilon
    lower = max(abs(lam), certs.tau_psi)
    l_sc = certs.l_sc(tau)
    if l_sc <= 0:
        kappa_bound = 0.0
    else:
        kappa_bound = l_sc / (tau + lam + tau)
        if certs.L_lip > 0:
            kappa_bound = min(2.0 * l_sc / certs.L_lip, kappa_bound)
    tau_ok = tau >= lower
    if not tau_ok:
        logger.warning(f"tau = {tau:.6g} below max(|lambda_min(Psi - Upsilon)|, tau_Psi) = {lower:.6g}")

    size = certs.psi.shape[0]
    try:
        contraction = spectral_radius(scipy.linalg.solve(tau * np.eye(size) + certs.psi, certs.upsilon))
    except scipy.linalg.LinAlgError:
        contraction = None
    return DerivedConstants(
        tau=float(tau),
        tau_psi=certs.tau_psi,
        tau_lower_bound=float(lower),
        tau_ok=bool(tau_ok),
        L_sc=float(l_sc),
        L_lip=certs.L_lip,
        eta3_bound=2.0,
        kappa_bound=float(kappa_bound),
        contraction_rho=contraction,
    )
