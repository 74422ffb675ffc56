"""Extended-precision evaluation of the exponential noise schedule.

Produces the frozen constants used by tests/schedule_test.cpp and tests/trainer_test.cpp.
"""
from mpmath import mp, mpf, exp, sqrt

mp.dps = 40


def one_minus_alpha_bar(T, eta, amin, amax, t):
    T = mpf(T)
    s = mpf(1) + (t - 1) * 2 * T / (T - 1) if T > 1 else T + 1
    return eta * (1 - exp(-amin / T - s * (amax - amin) / (2 * T * T)))


def coeffs(T, eta, amin, amax, t):
    ab = lambda k: mpf(1) if k == 0 else 1 - one_minus_alpha_bar(T, eta, amin, amax, k)
    a_t = ab(t) / ab(t - 1)
    b_t = 1 - a_t
    c0 = sqrt(ab(t - 1)) * b_t / (1 - ab(t))
    ct = sqrt(a_t) * (1 - ab(t - 1)) / (1 - ab(t))
    var = (1 - ab(t - 1)) / (1 - ab(t)) * b_t
    return c0, ct, var


if __name__ == "__main__":
    eta, amin, amax = mpf("0.1"), mpf("0.1"), mpf(10)
    print("oma[200] =", mp.nstr(one_minus_alpha_bar(200, eta, amin, amax, 200), 25))
    print("oma[1]   =", mp.nstr(one_minus_alpha_bar(200, eta, amin, amax, 1), 25))
    for t in (2, 5, 10):
        c0, ct, var = coeffs(10, mpf("0.5"), amin, amax, t)
        print(f"T=10 eta=0.5 t={t}: c0={mp.nstr(c0, 20)} ct={mp.nstr(ct, 20)} var={mp.nstr(var, 20)}")
    c0, ct, var = coeffs(50, eta, amin, amax, 5)
    ab4 = 1 - one_minus_alpha_bar(50, eta, amin, amax, 4)
    print(f"T=50 eta=0.1 t=5: c0={mp.nstr(c0, 20)} ct={mp.nstr(ct, 20)} var={mp.nstr(var, 20)} ab4={mp.nstr(ab4, 20)}")
    print("T=1:", mp.nstr(one_minus_alpha_bar(1, eta, amin, amax, 1), 20))
