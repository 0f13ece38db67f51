"""Brute-force reference implementations for the test suite.

Nothing here imports the main-path modules. Everything works on plain
Python floats or float64 numpy arrays with explicit loops, so it is slow
and only meant for small instances (MN up to about 64).
"""
from __future__ import annotations

import cmath
import json
import math
from dataclasses import asdict, dataclass

import numpy as np


@dataclass
class OracleReport:
    case: str
    main: float
    oracle: float
    abs_dev: float
    rel_dev: float

    @classmethod
    def compare(cls, case: str, main, oracle) -> "OracleReport":
        """Worst-case deviation between two arrays (or scalars)."""
        a = np.asarray(main, dtype=np.float64).ravel()
        b = np.asarray(oracle, dtype=np.float64).ravel()
        if a.shape != b.shape:
            raise ValueError(f"{case}: shapes {a.shape} and {b.shape} differ")
        diff = np.abs(a - b)
        i = int(np.argmax(diff)) if diff.size else 0
        scale = max(float(np.abs(b).max(initial=0.0)), 1e-300)
        return cls(case, float(a[i]) if a.size else 0.0, float(b[i]) if b.size else 0.0,
                   float(diff.max(initial=0.0)), float(diff.max(initial=0.0)) / scale)

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


def oracle_transition(f) -> np.ndarray:
    """Row softmax of the Gram matrix via explicit loops.

    ``f`` is ``(M, N, K)``. The only stabilisation is one global shift by
    the largest Gram entry.
    """
    f = np.asarray(f, dtype=np.float64)
    m, n, k = f.shape
    rows = [[f[i // n, i % n, c] for c in range(k)] for i in range(m * n)]
    size = len(rows)
    g = [[0.0] * size for _ in range(size)]
    for i in range(size):
        for j in range(size):
            acc = 0.0
            for c in range(k):
                acc += rows[i][c] * rows[j][c]
            g[i][j] = acc
    shift = max(max(r) for r in g)
    out = np.empty((size, size))
    for i in range(size):
        e = [math.exp(v - shift) for v in g[i]]
        total = math.fsum(e)
        for j in range(size):
            out[i, j] = e[j] / total
    return out


def oracle_grad(loss_fn, params, step: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a scalar ``loss_fn`` at ``params``."""
    if step <= 0:
        raise ValueError("step must be positive")
    theta = np.array(params, dtype=np.float64)
    grad = np.zeros_like(theta)
    flat, gflat = theta.reshape(-1), grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        up = float(loss_fn(theta.copy()))
        flat[i] = orig - step
        down = float(loss_fn(theta.copy()))
        flat[i] = orig
        gflat[i] = (up - down) / (2 * step)
    return grad


def _eig2(a) -> list[complex]:
    tr = a[0][0] + a[1][1]
    det = a[0][0] * a[1][1] - a[0][1] * a[1][0]
    disc = cmath.sqrt(tr * tr / 4 - det)
    return [tr / 2 + disc, tr / 2 - disc]


def _eig3(a) -> list[complex]:
    # characteristic polynomial l^3 - c2 l^2 + c1 l - c0
    c2 = a[0][0] + a[1][1] + a[2][2]
    c1 = (a[0][0] * a[1][1] - a[0][1] * a[1][0]
          + a[0][0] * a[2][2] - a[0][2] * a[2][0]
          + a[1][1] * a[2][2] - a[1][2] * a[2][1])
    c0 = (a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1])
          - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
          + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0]))
    # depressed cubic t^3 + p t + q with l = t + c2/3
    p = c1 - c2 * c2 / 3
    q = -2 * c2 ** 3 / 27 + c2 * c1 / 3 - c0
    shift = c2 / 3
    if abs(p) < 1e-14:
        r = -q
        root = math.copysign(abs(r) ** (1 / 3), r)
        w = cmath.exp(2j * math.pi / 3)
        return [root + shift, root * w + shift, root * w * w + shift]
    disc = (q / 2) ** 2 + (p / 3) ** 3
    if disc <= 1e-14 * max(abs(p / 3) ** 3, 1e-300):
        # three real roots (a tiny positive disc is rounding on a repeated root)
        rho = 2 * math.sqrt(-p / 3)
        arg = max(-1.0, min(1.0, 3 * q / (p * rho)))
        theta = math.acos(arg) / 3
        return [complex(rho * math.cos(theta - 2 * math.pi * j / 3) + shift) for j in range(3)]
    s = math.sqrt(disc)
    u = math.copysign(abs(-q / 2 + s) ** (1 / 3), -q / 2 + s)
    v = math.copysign(abs(-q / 2 - s) ** (1 / 3), -q / 2 - s)
    w = cmath.exp(2j * math.pi / 3)
    return [u + v + shift, u * w + v * w.conjugate() + shift, u * w.conjugate() + v * w + shift]


def jacobi_eig(s, tol: float = 1e-13, max_sweeps: int = 100) -> tuple[np.ndarray, np.ndarray]:
    """Cyclic Jacobi rotations for a symmetric matrix; returns ascending eigenpairs."""
    a = np.array(s, dtype=np.float64)
    if a.shape[0] != a.shape[1] or not np.allclose(a, a.T, atol=1e-12):
        raise ValueError("Jacobi rotations need a symmetric matrix")
    n = a.shape[0]
    v = np.eye(n)
    for _ in range(max_sweeps):
        off = math.sqrt(sum(a[i, j] ** 2 for i in range(n) for j in range(n) if i != j))
        if off < tol:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                if abs(a[p, q]) < 1e-300:
                    continue
                theta = (a[q, q] - a[p, p]) / (2 * a[p, q])
                t = math.copysign(1.0, theta) / (abs(theta) + math.sqrt(theta * theta + 1))
                c = 1 / math.sqrt(t * t + 1)
                sn = t * c
                for k in range(n):
                    akp, akq = a[k, p], a[k, q]
                    a[k, p], a[k, q] = c * akp - sn * akq, sn * akp + c * akq
                for k in range(n):
                    apk, aqk = a[p, k], a[q, k]
                    a[p, k], a[q, k] = c * apk - sn * aqk, sn * apk + c * aqk
                for k in range(n):
                    vkp, vkq = v[k, p], v[k, q]
                    v[k, p], v[k, q] = c * vkp - sn * vkq, sn * vkp + c * vkq
    vals = np.diag(a).copy()
    order = np.argsort(vals)
    return vals[order], v[:, order]


def oracle_eig(matrix) -> np.ndarray:
    """Eigenvalues in descending order of real part.

    2x2 and 3x3 matrices use the characteristic polynomial in closed form.
    Larger matrices must be similar to a symmetric one through a positive
    diagonal (``P = D^-1 W`` with symmetric ``W``); the symmetric form is
    recovered from ``P`` and diagonalised with Jacobi rotations.
    """
    a = np.asarray(matrix, dtype=np.float64)
    n = a.shape[0]
    if a.shape != (n, n):
        raise ValueError(f"expected a square matrix, got {a.shape}")
    if n == 1:
        vals = [complex(a[0, 0])]
    elif n == 2:
        vals = _eig2(a.tolist())
    elif n == 3:
        vals = _eig3(a.tolist())
    elif np.array_equal(a, a.T):
        return jacobi_eig(a)[0][::-1]
    else:
        # for P = D^-1 W the entries satisfy d_i p_ij = d_j p_ji; fix d_0 = 1
        d = np.ones(n)
        for i in range(1, n):
            d[i] = a[0, i] / a[i, 0]
        half = np.sqrt(d)
        s = half[:, None] * a / half[None, :]
        s = (s + s.T) / 2
        return jacobi_eig(s)[0][::-1]
    out = np.array(sorted(vals, key=lambda z: (-z.real, -z.imag)))
    if np.all(np.abs(out.imag) < 1e-12):
        return out.real
    return out
