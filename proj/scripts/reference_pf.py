#!/usr/bin/env python3
"""Standalone reference AC power flow used to cross-check the C++ solver.

Dense complex-matrix Newton-Raphson over S(V) = V * conj(Ybus @ V), kept
deliberately independent of the C++ implementation (different language,
dense instead of sparse, complex-form instead of trigonometric Jacobian).

Usage: reference_pf.py CASE.m [--tol 1e-10] [--flat] [--json]
"""

import argparse
import json
import re
import sys

import numpy as np


def parse_matpower(path):
    text = open(path).read()
    text = re.sub(r"%.*", "", text)

    def matrix(name):
        m = re.search(r"mpc\.%s\s*=\s*\[(.*?)\];" % name, text, re.S)
        if m is None:
            raise ValueError("section %s not found" % name)
        rows = []
        for line in m.group(1).split(";"):
            vals = line.split()
            if vals:
                rows.append([float(v) for v in vals])
        return np.array(rows)

    base = float(re.search(r"mpc\.baseMVA\s*=\s*([0-9eE.+-]+)\s*;", text).group(1))
    return base, matrix("bus"), matrix("gen"), matrix("branch")


def build_ybus(base, bus, branch):
    n = bus.shape[0]
    id2ix = {int(b[0]): i for i, b in enumerate(bus)}
    Y = np.zeros((n, n), dtype=complex)
    for row in branch:
        if row[10] == 0:
            continue
        f, t = id2ix[int(row[0])], id2ix[int(row[1])]
        ys = 1.0 / complex(row[2], row[3])
        bc = row[4]
        tap = row[8] if row[8] != 0 else 1.0
        shift = np.deg2rad(row[9])
        tcplx = tap * np.exp(1j * shift)
        Y[f, f] += (ys + 0.5j * bc) / (tcplx * np.conj(tcplx))
        Y[t, t] += ys + 0.5j * bc
        Y[f, t] += -ys / np.conj(tcplx)
        Y[t, f] += -ys / tcplx
    for i, row in enumerate(bus):
        Y[i, i] += complex(row[4], row[5]) / base
    return Y


def solve(base, bus, gen, branch, tol=1e-10, max_iter=30, flat=False):
    n = bus.shape[0]
    id2ix = {int(b[0]): i for i, b in enumerate(bus)}
    Y = build_ybus(base, bus, branch)

    kinds = bus[:, 1].astype(int)
    slack = [i for i in range(n) if kinds[i] == 3]
    assert len(slack) == 1, "expected exactly one slack bus"
    slack = slack[0]
    pv = [i for i in range(n) if kinds[i] == 2]
    pq = [i for i in range(n) if kinds[i] == 1]
    pvpq = sorted(pv + [i for i in pq if i != slack])
    pvpq = [i for i in range(n) if i != slack]

    # net specified injections
    sbus = -(bus[:, 2] + 1j * bus[:, 3]) / base
    vg = {}
    for row in gen:
        if row[7] <= 0:
            continue
        b = id2ix[int(row[0])]
        sbus[b] += (row[1] + 1j * row[2]) / base
        vg.setdefault(b, row[5])

    vm = np.ones(n) if flat else bus[:, 7].copy()
    va = np.zeros(n) if flat else np.deg2rad(bus[:, 8])
    for b, v in vg.items():
        vm[b] = v
    V = vm * np.exp(1j * va)

    for it in range(max_iter):
        I = Y @ V
        S = V * np.conj(I)
        mis = S - sbus
        F = np.concatenate([mis[pvpq].real, mis[pq].imag])
        norm = np.max(np.abs(F)) if F.size else 0.0
        if norm < tol:
            return V, it, True
        dV = np.diag(V / np.abs(V))
        dS_dVa = 1j * np.diag(V) @ np.conj(np.diag(I) - Y @ np.diag(V))
        dS_dVm = np.diag(V) @ np.conj(Y @ dV) + np.conj(np.diag(I)) @ dV
        J = np.block(
            [
                [dS_dVa[np.ix_(pvpq, pvpq)].real, dS_dVm[np.ix_(pvpq, pq)].real],
                [dS_dVa[np.ix_(pq, pvpq)].imag, dS_dVm[np.ix_(pq, pq)].imag],
            ]
        )
        dx = np.linalg.solve(J, -F)
        va[pvpq] += dx[: len(pvpq)]
        vm[pq] += dx[len(pvpq):]
        V = vm * np.exp(1j * va)
    return V, max_iter, False


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("case")
    ap.add_argument("--tol", type=float, default=1e-10)
    ap.add_argument("--flat", action="store_true")
    ap.add_argument("--json", action="store_true")
    args = ap.parse_args()

    base, bus, gen, branch = parse_matpower(args.case)
    V, iters, ok = solve(base, bus, gen, branch, tol=args.tol, flat=args.flat)
    n = bus.shape[0]
    slack = int(np.where(bus[:, 1] == 3)[0][0])
    va = np.angle(V) - np.angle(V[slack])

    if not ok:
        print("did not converge", file=sys.stderr)
        sys.exit(1)

    if args.json:
        print(
            json.dumps(
                {
                    "iterations": iters,
                    "vm": list(np.abs(V)),
                    "va_rad": list(va),
                },
                indent=1,
            )
        )
    else:
        print("converged in %d iterations" % iters)
        print("stored-vs-solved |dVm| max: %.3e" % np.max(np.abs(np.abs(V) - bus[:, 7])))
        for i in range(n):
            print(
                "bus %4d  Vm %.9f (file %.4f)   Va %9.4f deg (file %9.4f)"
                % (int(bus[i, 0]), abs(V[i]), bus[i, 7], np.rad2deg(va[i]), bus[i, 8])
            )


if __name__ == "__main__":
    main()
