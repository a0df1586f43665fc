"""Arbitrary-precision reference for the finite-key formulas.

Every closed-form quantity used by the finite-key calculator is re-derived
here with 50-digit Decimal arithmetic and no shared code, so the float
implementation can be checked against an independent evaluation path.

Run as a script to print the reference table used in the tests:

    python tests/fk_oracle.py
"""

from decimal import Decimal, getcontext

getcontext().prec = 50

_LN2 = Decimal(2).ln()


def ln(x) -> Decimal:
    return Decimal(x).ln()


def log2(x) -> Decimal:
    return Decimal(x).ln() / _LN2


def sqrt(x) -> Decimal:
    return Decimal(x).sqrt()


def exp(x) -> Decimal:
    return Decimal(x).exp()


def delta_v(eps_pe_v, n_v) -> Decimal:
    eps, n = Decimal(eps_pe_v), Decimal(n_v)
    return sqrt((ln(1 / eps) + 2 * ln(n + 1)) / 2 / n)


def delta_q_subsampling(eps_pe, eta_pe, n_pe) -> Decimal:
    eps, eta, n = Decimal(eps_pe), Decimal(eta_pe), Decimal(n_pe)
    return sqrt((1 + eta * (n - 1)) / (eta * n) ** 2 * ln(1 / eps))


def f_smooth(eps_smooth, n_pe) -> Decimal:
    return 7 * sqrt(log2(2 / Decimal(eps_smooth)) / Decimal(n_pe))


def f_ec(eps_ec, n_pe) -> Decimal:
    return log2(2 / Decimal(eps_ec)) / Decimal(n_pe)


def f_pa(eps_pa, n_pe) -> Decimal:
    return 2 * log2(1 / Decimal(eps_pa)) / Decimal(n_pe)


def overlap(v_eff, mu) -> Decimal:
    v, m = Decimal(v_eff), Decimal(mu)
    return (2 * v - 1) * exp(-m) - 2 * sqrt(1 - exp(-2 * m)) * sqrt(v * (1 - v))


def binary_entropy(x) -> Decimal:
    x = Decimal(x)
    if x <= 0 or x >= 1:
        return Decimal(0)
    return -x * log2(x) - (1 - x) * log2(1 - x)


def monitor_count(n_sift, p_decoy, t_bob) -> Decimal:
    n, p, t = Decimal(n_sift), Decimal(p_decoy), Decimal(t_bob)
    return n * (p + (1 + p) ** 2 / 4) / (1 - p) * (1 - t) / t


def _fmt(x: Decimal) -> str:
    return f"{x:.12E}"


if __name__ == "__main__":
    rows = [
        ("delta_v(1e-9, 143853)", delta_v("1e-9", 143853)),
        ("delta_v(1e-9, 143854)", delta_v("1e-9", 143854)),
        ("delta_q_sub(1e-10, 0.125, 995328)", delta_q_subsampling("1e-10", "0.125", 995328)),
        ("f_smooth(1e-9, 995328)", f_smooth("1e-9", 995328)),
        ("f_ec(8e-11, 995328)", f_ec("8e-11", 995328)),
        ("f_pa(1.28e-9, 995328)", f_pa("1.28e-9", 995328)),
        ("overlap(0.98, 0.089)", overlap("0.98", "0.089")),
        ("overlap(0.5, 0.1)", overlap("0.5", "0.1")),
        ("monitor_count(995328, 0.155, 0.8)", monitor_count(995328, "0.155", "0.8")),
        ("h((1+overlap(0.974, 0.089))/2)", binary_entropy((1 + overlap("0.974", "0.089")) / 2)),
    ]
    width = max(len(name) for name, _ in rows)
    for name, value in rows:
        print(f"{name:<{width}}  {_fmt(value)}")
