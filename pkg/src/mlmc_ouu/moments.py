"""Unbiased moment and moment-product estimators from power sums.

Everything here is a pure function of :class:`PowerSums`, the per-level
sufficient statistics of a coupled sample pair. Sums are accumulated in
extended precision so the alternating-sign product formulas stay accurate
at large sample counts, and they merge across batches, so estimates never
require revisiting raw draws.

Unless noted otherwise the estimators are exactly unbiased, including the
products of means and the covariance of the two sample variances; ``n``
must be at least the estimator's polynomial degree for the distinct-index
normalizations to exist (2 for variances, 3 for third moments, 4 for the
rest).

Fields may be scalars or equal-shape arrays (one entry per independent
replicate), with ``n`` the shared per-replicate sample count.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

__all__ = [
    "PowerSums",
    "sample_mean",
    "sample_variance",
    "third_central_unbiased",
    "fourth_central_unbiased",
    "variance_squared_unbiased",
    "var_of_variance_estimator",
    "var_of_variance_unbiased",
    "var_of_stddev_delta",
    "mean_product_pair",
    "mean_product_triple",
    "mean_product_quad",
    "covariance_unbiased",
    "covariance_squared_unbiased",
    "centered_square_covariance",
    "cov_of_variances_unbiased",
    "cov_mean_variance_same",
    "cov_mean_variance_cross",
]

_SIDES = {"fine": "f", "coarse": "c"}


@dataclass(frozen=True)
class PowerSums:
    """Power sums of one coupled sample pair over shared draws.

    ``f<k>``/``c<k>`` are sums of the k-th powers of the fine and coarse
    values; ``t<a><b>`` are sums of fine^a * coarse^b cross products.
    """

    n: int
    f1: np.ndarray
    f2: np.ndarray
    f3: np.ndarray
    f4: np.ndarray
    c1: np.ndarray
    c2: np.ndarray
    c3: np.ndarray
    c4: np.ndarray
    t11: np.ndarray
    t21: np.ndarray
    t12: np.ndarray
    t22: np.ndarray

    @classmethod
    def from_pair(cls, fine: np.ndarray, coarse: np.ndarray) -> "PowerSums":
        """Accumulate sums over the last axis of a coupled value pair."""
        qf = np.asarray(fine, float)
        qc = np.asarray(coarse, float)
        if qf.shape != qc.shape:
            raise ValueError("fine and coarse must have equal shape")
        if qf.ndim < 1 or qf.shape[-1] < 1:
            raise ValueError("at least one draw is required")
        s = lambda a: np.sum(a, axis=-1, dtype=np.longdouble)
        return cls(
            n=qf.shape[-1],
            f1=s(qf), f2=s(qf**2), f3=s(qf**3), f4=s(qf**4),
            c1=s(qc), c2=s(qc**2), c3=s(qc**3), c4=s(qc**4),
            t11=s(qf * qc), t21=s(qf**2 * qc), t12=s(qf * qc**2),
            t22=s(qf**2 * qc**2),
        )

    @classmethod
    def from_values(cls, values: np.ndarray) -> "PowerSums":
        """Sums of a single sample, paired against the constant 0."""
        values = np.asarray(values, float)
        return cls.from_pair(values, np.zeros_like(values))

    def merge(self, other: "PowerSums") -> "PowerSums":
        """Combine sums of two disjoint batches of the same pair."""
        merged = {
            f.name: getattr(self, f.name) + getattr(other, f.name)
            for f in fields(self)
        }
        return PowerSums(**merged)

    def require(self, n_min: int, what: str) -> None:
        if self.n < n_min:
            raise ValueError(f"{what} needs at least {n_min} draws, got {self.n}")


def _side(ps: PowerSums, side: str, k: int) -> np.ndarray:
    try:
        return getattr(ps, _SIDES[side] + str(k))
    except KeyError:
        raise ValueError(f"side must be 'fine' or 'coarse', got {side!r}") from None


def sample_mean(ps: PowerSums, side: str = "fine") -> np.ndarray:
    ps.require(1, "sample_mean")
    return _side(ps, side, 1) / ps.n


def sample_variance(ps: PowerSums, side: str = "fine") -> np.ndarray:
    """Unbiased sample variance."""
    ps.require(2, "sample_variance")
    n, s1, s2 = ps.n, _side(ps, side, 1), _side(ps, side, 2)
    return (s2 - s1**2 / n) / (n - 1)


def third_central_unbiased(ps: PowerSums, side: str = "fine") -> np.ndarray:
    """Unbiased third central moment, n^2 m3 / ((n-1)(n-2))."""
    ps.require(3, "third_central_unbiased")
    n = ps.n
    s1, s2, s3 = (_side(ps, side, k) for k in (1, 2, 3))
    m = s1 / n
    c3 = s3 - 3 * m * s2 + 2 * n * m**3
    return n / ((n - 1) * (n - 2)) * c3


def fourth_central_unbiased(ps: PowerSums, side: str = "fine") -> np.ndarray:
    """Unbiased fourth central moment (h-statistic form)."""
    ps.require(4, "fourth_central_unbiased")
    n = ps.n
    s1, s2, s3, s4 = (_side(ps, side, k) for k in (1, 2, 3, 4))
    m = s1 / n
    c4 = s4 - 4 * m * s3 + 6 * m**2 * s2 - 3 * n * m**4
    m4 = c4 / n
    mu2 = sample_variance(ps, side)
    corr = (6 * n - 9) * (n**2 - n) / (n**2 - 2 * n + 3)
    num = n**3 / (n - 1) * m4 - corr * mu2**2
    den = (n**2 - 3 * n + 3) - corr / n
    return num / den


def var_of_variance_unbiased(ps: PowerSums, side: str = "fine") -> np.ndarray:
    """Unbiased estimate of Var[sample variance] at the sums' own n."""
    ps.require(4, "var_of_variance_unbiased")
    n = ps.n
    mu2 = sample_variance(ps, side)
    mu4 = fourth_central_unbiased(ps, side)
    return (n - 1) / (n**2 - 2 * n + 3) * (mu4 - (n - 3) / (n - 1) * mu2**2)


def variance_squared_unbiased(ps: PowerSums, side: str = "fine") -> np.ndarray:
    """Unbiased estimate of (population variance)^2.

    E[mu2hat^2] = mu2^2 + Var[mu2hat], so subtracting the unbiased
    variance-of-variance de-biases the square.
    """
    ps.require(4, "variance_squared_unbiased")
    return sample_variance(ps, side) ** 2 - var_of_variance_unbiased(ps, side)


def var_of_variance_estimator(mu2: float, mu4: float, n: int) -> float:
    """Exact Var[sample variance] from population moments.

    Var[mu2hat] = mu4/n - (n-3) mu2^2 / (n (n-1)).
    """
    if n < 2:
        raise ValueError("var_of_variance_estimator needs n >= 2")
    return mu4 / n - (n - 3) * mu2**2 / (n * (n - 1))


def var_of_stddev_delta(mu2: float, var_of_var: float) -> float:
    """Delta-method variance of the sample standard deviation.

    Var[sqrt(mu2hat)] ~= Var[mu2hat] / (4 mu2); requires mu2 > 0.
    """
    if mu2 <= 0:
        raise ValueError("var_of_stddev_delta needs a positive variance")
    return var_of_var / (4.0 * mu2)


# ---------------------------------------------------------------------------
# Unbiased products of means over distinct draw indices

def _pair(n, sa, sb, sab):
    # E = E[a] E[b]; sum over i != j of a_i b_j, normalized.
    return (sa * sb - sab) / (n * (n - 1))


def _triple(n, sa, sb, sc, sab, sac, sbc, sabc):
    # E = E[a] E[b] E[c]; inclusion-exclusion over coincident indices.
    d = sa * sb * sc - sab * sc - sac * sb - sbc * sa + 2 * sabc
    return d / (n * (n - 1) * (n - 2))


def _mixed(ps: PowerSums, p: int, q: int) -> np.ndarray:
    # Sum over draws of qf^p * qc^q, total degree at most three.
    if q == 0:
        return getattr(ps, f"f{p}")
    if p == 0:
        return getattr(ps, f"c{q}")
    return getattr(ps, f"t{p}{q}")


def _quad(ps: PowerSums):
    # E = E[qf]^2 E[qc]^2 over distinct (i,j,k,l); the product of the two
    # distinct-pair sums decomposes as D + 4G + 2H by how fine indices
    # collide with coarse ones (one shared index: G, both shared: H).
    n = ps.n
    a = ps.f1**2 - ps.f2
    b = ps.c1**2 - ps.c2
    g = (ps.t11 * ps.f1 * ps.c1 - ps.t21 * ps.c1 - ps.t12 * ps.f1
         - ps.t11**2 + 2 * ps.t22)
    h = ps.t11**2 - ps.t22
    return (a * b - 4 * g - 2 * h) / (n * (n - 1) * (n - 2) * (n - 3))


def mean_product_pair(ps: PowerSums) -> np.ndarray:
    """Unbiased estimate of E[Qf] E[Qc]."""
    ps.require(2, "mean_product_pair")
    return _pair(ps.n, ps.f1, ps.c1, ps.t11)


def mean_product_triple(
    ps: PowerSums, sides: tuple = ("fine", "fine", "coarse")
) -> np.ndarray:
    """Unbiased estimate of E[Q_a] E[Q_b] E[Q_c] for a chosen side pattern.

    Each entry of ``sides`` selects the fine or coarse member of the pair,
    so ("fine", "fine", "coarse") estimates E[Qf]^2 E[Qc].
    """
    ps.require(3, "mean_product_triple")
    if len(sides) != 3:
        raise ValueError("sides must name exactly three factors")
    for side in sides:
        if side not in _SIDES:
            raise ValueError(f"side must be 'fine' or 'coarse', got {side!r}")

    def joint(*idx):
        p = sum(1 for i in idx if sides[i] == "fine")
        return _mixed(ps, p, len(idx) - p)

    return _triple(
        ps.n,
        joint(0), joint(1), joint(2),
        joint(0, 1), joint(0, 2), joint(1, 2),
        joint(0, 1, 2),
    )


def mean_product_quad(ps: PowerSums) -> np.ndarray:
    """Unbiased estimate of E[Qf]^2 E[Qc]^2."""
    ps.require(4, "mean_product_quad")
    return _quad(ps)


def covariance_unbiased(ps: PowerSums) -> np.ndarray:
    """Unbiased sample covariance of the pair."""
    ps.require(2, "covariance_unbiased")
    return (ps.t11 - ps.f1 * ps.c1 / ps.n) / (ps.n - 1)


def covariance_squared_unbiased(ps: PowerSums) -> np.ndarray:
    """Unbiased estimate of (Cov[Qf, Qc])^2.

    Expands c^2 = E[W]^2 - 2 E[W] E[Qf] E[Qc] + (E[Qf] E[Qc])^2 with
    W = Qf Qc and replaces each product of expectations by its
    distinct-index estimator. The naive square of the sample covariance
    is biased upward by Var[covhat], which matters at pilot-sized n.
    """
    ps.require(4, "covariance_squared_unbiased")
    n = ps.n
    p_ww = _pair(n, ps.t11, ps.t11, ps.t22)
    t_w_f_c = _triple(n, ps.t11, ps.f1, ps.c1, ps.t21, ps.t12, ps.t11, ps.t22)
    return p_ww - 2 * t_w_f_c + _quad(ps)


def centered_square_covariance(ps: PowerSums) -> np.ndarray:
    """Unbiased estimate of K = Cov[(Qf - E Qf)^2, (Qc - E Qc)^2].

    K expands into raw cross moments up to degree (2,2); each product of
    expectations is replaced by its distinct-index estimator so the whole
    combination stays exactly unbiased.
    """
    ps.require(4, "centered_square_covariance")
    n = ps.n
    mean_t22 = ps.t22 / n
    p_f2c2 = _pair(n, ps.f2, ps.c2, ps.t22)
    p_f2c_c = _pair(n, ps.t21, ps.c1, ps.t22)
    p_fc2_f = _pair(n, ps.t12, ps.f1, ps.t22)
    t_cc_f2 = _triple(n, ps.c1, ps.c1, ps.f2, ps.c2, ps.t21, ps.t21, ps.t22)
    t_ff_c2 = _triple(n, ps.f1, ps.f1, ps.c2, ps.f2, ps.t12, ps.t12, ps.t22)
    t_f_c_fc = _triple(n, ps.f1, ps.c1, ps.t11, ps.t11, ps.t21, ps.t12, ps.t22)
    return (mean_t22 - p_f2c2 - 2 * p_f2c_c - 2 * p_fc2_f
            + 2 * t_cc_f2 + 2 * t_ff_c2 + 4 * t_f_c_fc - 4 * _quad(ps))


def cov_of_variances_unbiased(ps: PowerSums) -> np.ndarray:
    """Unbiased estimate of Cov[mu2hat_fine, mu2hat_coarse] at the sums' n.

    For sample variances over n shared draws,
    Cov = K/n + 2 c^2 / (n (n-1)); with fine == coarse this reduces
    algebraically to var_of_variance_unbiased.
    """
    ps.require(4, "cov_of_variances_unbiased")
    n = ps.n
    return (centered_square_covariance(ps) / n
            + 2 * covariance_squared_unbiased(ps) / (n * (n - 1)))


def cov_mean_variance_same(ps: PowerSums, side: str = "fine") -> np.ndarray:
    """Unbiased estimate of Cov[mean, variance] of one side: mu3 / n."""
    ps.require(3, "cov_mean_variance_same")
    return third_central_unbiased(ps, side) / ps.n


def cov_mean_variance_cross(ps: PowerSums, mean_side: str = "fine") -> np.ndarray:
    """Plug-in estimate of Cov[mean of one side, variance of the other].

    The population kernel is
    g = E[Qa Qb^2] - E[Qa] E[Qb^2] - 2 E[Qb] E[Qa Qb] + 2 E[Qa] E[Qb]^2
    with the mean on side a; the covariance at the sums' n is g/n. Raw
    moments enter as plain sample averages (a deliberate plug-in: this
    feeds an approximation-grade covariance model, not an unbiased one).
    """
    ps.require(3, "cov_mean_variance_cross")
    n = ps.n
    if mean_side == "fine":
        ma, mb = ps.f1 / n, ps.c1 / n
        e_ab2, e_b2, e_ab = ps.t12 / n, ps.c2 / n, ps.t11 / n
    elif mean_side == "coarse":
        ma, mb = ps.c1 / n, ps.f1 / n
        e_ab2, e_b2, e_ab = ps.t21 / n, ps.f2 / n, ps.t11 / n
    else:
        raise ValueError(f"mean_side must be 'fine' or 'coarse', got {mean_side!r}")
    g = e_ab2 - ma * e_b2 - 2 * mb * e_ab + 2 * ma * mb**2
    return g / n
