"""Slow, independent reference computations used to check the fast code paths."""
from fractions import Fraction
import math


def ranks_bruteforce(xs):
    out = []
    for v in xs:
        less = sum(1 for w in xs if w < v)
        equal = sum(1 for w in xs if w == v)
        out.append(Fraction(2 * less + equal + 1, 2))
    return out


def pearson_exact(a, b):
    """Pearson correlation from exact rationals; returns (numerator, denominator-squared)."""
    n = len(a)
    ma = sum(a, Fraction(0)) / n
    mb = sum(b, Fraction(0)) / n
    cov = sum(((x - ma) * (y - mb) for x, y in zip(a, b)), Fraction(0))
    va = sum(((x - ma) ** 2 for x in a), Fraction(0))
    vb = sum(((y - mb) ** 2 for y in b), Fraction(0))
    return cov, va * vb


def spearman_bruteforce(x, y):
    cov, den2 = pearson_exact(ranks_bruteforce(list(x)), ranks_bruteforce(list(y)))
    if den2 == 0:
        return None
    return float(cov) / math.sqrt(float(den2))


def spearman_distinct_formula(x, y):
    """Textbook rank-difference formula; valid only without ties."""
    rx, ry = ranks_bruteforce(list(x)), ranks_bruteforce(list(y))
    n = len(rx)
    d2 = sum((a - b) ** 2 for a, b in zip(rx, ry))
    return 1 - Fraction(6) * d2 / (n * (n * n - 1))


def r2_exact(y, y_hat):
    y = [Fraction(v) for v in y]
    y_hat = [Fraction(v) for v in y_hat]
    m = sum(y, Fraction(0)) / len(y)
    ss_tot = sum(((v - m) ** 2 for v in y), Fraction(0))
    if ss_tot == 0:
        return None
    return 1 - sum(((a - b) ** 2 for a, b in zip(y, y_hat)), Fraction(0)) / ss_tot


def mape_exact(y, y_hat, eps):
    eps = Fraction(eps)
    terms = [abs(Fraction(a) - Fraction(b)) / max(eps, abs(Fraction(a))) for a, b in zip(y, y_hat)]
    return sum(terms, Fraction(0)) / len(terms)


def f1_bruteforce(y, y_hat, num_classes):
    total = Fraction(0)
    for c in range(num_classes):
        tp = sum(1 for a, b in zip(y, y_hat) if a == c and b == c)
        fp = sum(1 for a, b in zip(y, y_hat) if a != c and b == c)
        fn = sum(1 for a, b in zip(y, y_hat) if a == c and b != c)
        if tp == 0:
            continue
        p = Fraction(tp, tp + fp)
        r = Fraction(tp, tp + fn)
        total += 2 * p * r / (p + r)
    return total / num_classes
