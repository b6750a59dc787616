"""Compiled core of the collision quadrature (d = 2).

One fused pass accumulates gain, bbar-convolution loss, angle-quadrature
loss and the raw dissipation density.  Output nodes are independent, so the
parallel loop is race-free and bit-deterministic.
"""

import numba
import numpy as np
from numba import njit, prange


@njit(inline="always")
def _bilin(fx, ix, n, v_min, h_v, u1, u2):
    t1 = (u1 - v_min) / h_v - 0.5
    t2 = (u2 - v_min) / h_v - 0.5
    i1 = int(np.floor(t1))
    i2 = int(np.floor(t2))
    w1 = t1 - i1
    w2 = t2 - i2
    acc = 0.0
    for a in range(2):
        ia = i1 + a
        if ia < 0 or ia >= n:
            continue
        wa = w1 if a == 1 else 1.0 - w1
        row = ia * n
        for c in range(2):
            ic = i2 + c
            if ic < 0 or ic >= n:
                continue
            wc = w2 if c == 1 else 1.0 - w2
            acc += wa * wc * fx[ix, row + ic]
    return acc


@njit(parallel=True, cache=True)
def eval_core_2d(fx, n, v_min, h_v, theta, b_diff, bbar_diff, w_theta,
                 hv_d, want_d0, dlog_floor, gain, loss, loss_quad, d0_raw):
    n_x, n_v = fx.shape
    n_diff = 2 * n - 1
    n_theta = theta.shape[0]
    for out in prange(n_x * n_v):
        ix = out // n_v
        iv = out % n_v
        i1 = iv // n
        i2 = iv % n
        v1 = v_min + h_v * (i1 + 0.5)
        v2 = v_min + h_v * (i2 + 0.5)
        f_v = fx[ix, iv]
        acc_gain = 0.0
        acc_loss = 0.0
        acc_lq = 0.0
        acc_d0 = 0.0
        for ivs in range(n_v):
            j1 = ivs // n
            j2 = ivs % n
            di = (i1 - j1 + n - 1) * n_diff + (i2 - j2 + n - 1)
            bb = bbar_diff[di]
            if bb == 0.0:
                continue  # kernel support: all angles vanish with bbar
            f_s = fx[ix, ivs]
            acc_loss += bb * f_s
            vs1 = v_min + h_v * (j1 + 0.5)
            vs2 = v_min + h_v * (j2 + 0.5)
            z1 = v1 - vs1
            z2 = v2 - vs2
            post = f_v * f_s
            for it in range(n_theta):
                b = b_diff[it, di]
                if b == 0.0:
                    continue
                th1 = theta[it, 0]
                th2 = theta[it, 1]
                zdt = z1 * th1 + z2 * th2
                f_p = _bilin(fx, ix, n, v_min, h_v, v1 - zdt * th1,
                             v2 - zdt * th2)
                f_q = _bilin(fx, ix, n, v_min, h_v, vs1 + zdt * th1,
                             vs2 + zdt * th2)
                pre = f_p * f_q
                acc_gain += pre * b
                acc_lq += post * b
                if want_d0 and pre != post:
                    num = pre if pre > dlog_floor else dlog_floor
                    den = post if post > dlog_floor else dlog_floor
                    if num != den:
                        acc_d0 += (pre - post) * np.log(num / den) * b
        gain[ix, iv] = acc_gain * w_theta * hv_d
        loss[ix, iv] = f_v * acc_loss * hv_d
        loss_quad[ix, iv] = acc_lq * w_theta * hv_d
        if want_d0:
            d0_raw[ix, iv] = acc_d0 * w_theta * hv_d
