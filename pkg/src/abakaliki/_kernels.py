"""Compiled hot loops for the augmented likelihood.

Arrays follow one convention throughout: cases are indexed 0..m-1,
confession is 0 (FTC) or 1 (non-FTC), compound 0 means outside, and
group sizes are looked up as ``gsize[compound, confession]``.
"""

import math

import numpy as np
from numba import njit

NEG_INF = -np.inf


@njit(cache=True)
def overlap(a, b, lo, hi):
    x = min(b, hi) - max(a, lo)
    return x if x > 0.0 else 0.0


@njit(cache=True)
def global_rate(conf_k, conf_j, la, lf, N, n):
    if conf_k == 0:
        r = la / (N - 1.0)
        if conf_j == 0:
            r += lf / (n - 1.0)
        return r
    return (la + lf) / (N - 1.0)


@njit(cache=True)
def household_rate(lh, comp_k, conf_k, comp_j, conf_j, size):
    if comp_k == 0 or comp_k != comp_j or conf_k != conf_j or size <= 1:
        return 0.0
    return lh / (size - 1.0)


@njit(cache=True)
def gamma_logpdf(x, shape, scale):
    if not x > 0.0:
        return NEG_INF
    return (shape - 1.0) * math.log(x) - x / scale - math.lgamma(shape) - shape * math.log(scale)


@njit(cache=True)
def integrated_pressure_upto(u, conf_j, cb_j, ca_j, skip, i, r, tau, q,
                             case_conf, case_cb, case_ca, la, lf, lh, b,
                             gsize_b, gsize_a, N, n, move_day):
    """Exact integral of the pressure on a target over (-inf, u]."""
    total = 0.0
    up_pre = min(u, move_day)
    for k in range(i.shape[0]):
        if k == skip:
            continue
        end_k = min(tau[k], q[k])
        fp = overlap(i[k], r[k], -np.inf, up_pre)
        rp = overlap(r[k], end_k, -np.inf, up_pre)
        fa = overlap(i[k], r[k], move_day, u)
        ra = overlap(r[k], end_k, move_day, u)
        if fp + rp + fa + ra == 0.0:
            continue
        ck = case_conf[k]
        total += global_rate(ck, conf_j, la, lf, N, n) * (b * (fp + fa) + rp + ra)
        hb = household_rate(lh, case_cb[k], ck, cb_j, conf_j, gsize_b[case_cb[k], ck])
        ha = household_rate(lh, case_ca[k], ck, ca_j, conf_j, gsize_a[case_ca[k], ck])
        total += hb * (b * fp + rp) + ha * (b * fa + ra)
    return total


@njit(cache=True)
def exposure_pressure(j, e, i, r, tau, q, case_conf, case_cb, case_ca,
                      la, lf, lh, b, gsize_b, gsize_a, N, n, move_day):
    """Pressure on case j just before its exposure time."""
    t = e[j]
    after = t > move_day
    conf_j = case_conf[j]
    comp_j = case_ca[j] if after else case_cb[j]
    lam = 0.0
    for k in range(e.shape[0]):
        if k == j:
            continue
        end_k = min(tau[k], q[k])
        if i[k] < t and t <= r[k]:
            mult = b
        elif r[k] < t and t <= end_k:
            mult = 1.0
        else:
            continue
        ck = case_conf[k]
        rate = global_rate(ck, conf_j, la, lf, N, n)
        if after:
            rate += household_rate(lh, case_ca[k], ck, comp_j, conf_j, gsize_a[case_ca[k], ck])
        else:
            rate += household_rate(lh, case_cb[k], ck, comp_j, conf_j, gsize_b[case_cb[k], ck])
        lam += mult * rate
    return lam


@njit(cache=True)
def stage_log_density(e, i, r, tau, q, tq, shapes, scales):
    total = 0.0
    for j in range(e.shape[0]):
        total += gamma_logpdf(i[j] - e[j], shapes[0], scales[0])
        total += gamma_logpdf(r[j] - i[j], shapes[1], scales[1])
        total += gamma_logpdf(tau[j] - r[j], shapes[2], scales[2])
        total += gamma_logpdf(q[j] - max(r[j], tq), shapes[3], scales[3])
        if total == NEG_INF:
            return NEG_INF
    return total


@njit(cache=True)
def cell_log_terms(out, e, i, r, tau, q, la, lf, lh, v, b, case_conf, case_cb, case_ca,
                   cell_cb, cell_ca, cell_conf, cell_vax, cell_count,
                   gsize_b, gsize_a, N, n, move_day, T):
    """Marginal avoidance/protection term of every never-infected cell."""
    for c in range(cell_cb.shape[0]):
        cnt = cell_count[c]
        if cnt == 0:
            out[c] = 0.0
            continue
        E = integrated_pressure_upto(T, cell_conf[c], cell_cb[c], cell_ca[c], -1, i, r, tau, q,
                                     case_conf, case_cb, case_ca, la, lf, lh, b,
                                     gsize_b, gsize_a, N, n, move_day)
        if cell_vax[c]:
            if v >= 1.0:
                out[c] = 0.0
            else:
                out[c] = cnt * math.log(v + (1.0 - v) * math.exp(-E))
        else:
            out[c] = -cnt * E


@njit(cache=True)
def loglik_parts(e, i, r, tau, q, kappa, la, lf, lh, v, b, tq,
                 case_conf, case_cb, case_ca, case_vax,
                 cell_cb, cell_ca, cell_conf, cell_vax, cell_count,
                 gsize_b, gsize_a, N, n, move_day, T, shapes, scales):
    """Return (exposure, avoidance, protection, stage density) log terms.

    Any impossible state yields -inf in the first slot; callers add the
    four parts.
    """
    m = e.shape[0]
    ek = e[kappa]
    for j in range(m):
        if e[j] < ek:
            return NEG_INF, 0.0, 0.0, 0.0
        if not (e[j] < i[j] and i[j] < r[j] and r[j] < tau[j] and q[j] > max(r[j], tq)):
            return NEG_INF, 0.0, 0.0, 0.0
    dens = stage_log_density(e, i, r, tau, q, tq, shapes, scales)
    if dens == NEG_INF:
        return NEG_INF, 0.0, 0.0, 0.0

    expo = 0.0
    for j in range(m):
        if j == kappa:
            continue
        lam = exposure_pressure(j, e, i, r, tau, q, case_conf, case_cb, case_ca,
                                la, lf, lh, b, gsize_b, gsize_a, N, n, move_day)
        if lam <= 0.0:
            return NEG_INF, 0.0, 0.0, 0.0
        expo += math.log(lam)

    avoid = 0.0
    prot = 0.0
    for j in range(m):
        if j != kappa:
            avoid -= integrated_pressure_upto(e[j], case_conf[j], case_cb[j], case_ca[j], j,
                                              i, r, tau, q, case_conf, case_cb, case_ca,
                                              la, lf, lh, b, gsize_b, gsize_a, N, n, move_day)
        if case_vax[j]:
            if v >= 1.0:
                return NEG_INF, 0.0, 0.0, 0.0
            prot += math.log(1.0 - v)

    terms = np.empty(cell_cb.shape[0])
    cell_log_terms(terms, e, i, r, tau, q, la, lf, lh, v, b, case_conf, case_cb, case_ca,
                   cell_cb, cell_ca, cell_conf, cell_vax, cell_count,
                   gsize_b, gsize_a, N, n, move_day, T)
    for c in range(terms.shape[0]):
        avoid += terms[c]
    return expo, avoid, prot, dens


# -- forward simulation ------------------------------------------------------


@njit(cache=True)
def seed(s):
    np.random.seed(s)


@njit(cache=True)
def _gamma(shape, scale):
    return np.random.gamma(shape, scale)


@njit(cache=True)
def _current_mult(k, t, ci, cr, cend, b):
    if ci[k] <= t and t < cr[k]:
        return b
    if cr[k] <= t and t < cend[k]:
        return 1.0
    return 0.0


@njit(cache=True)
def simulate_core(cell_cb, cell_ca, cell_conf, cell_vax, cell_total, index_cell,
                  la, lf, lh, v, b, tq, gsize_b, gsize_a, N, n, move_day,
                  shapes, scales, stop_above, e0):
    """One outbreak from a single exposure at time ``e0``.

    A NaN ``e0`` places the exposure so that the index rash falls on day 0,
    the time origin of the observed data.

    Returns (n_cases, times[n, 5] as e, i, r, tau, q, cell of each case,
    infector of each case (-1 for the index), protected count per cell,
    aborted flag).  ``stop_above`` > 0 aborts as soon as the outbreak grows
    past that many cases.
    """
    n_cells = cell_cb.shape[0]
    S = np.empty(n_cells, dtype=np.int64)
    protected = np.zeros(n_cells, dtype=np.int64)
    for c in range(n_cells):
        if cell_vax[c] and cell_total[c] > 0:
            protected[c] = np.random.binomial(cell_total[c], v)
        S[c] = cell_total[c] - protected[c]
    cap = 1
    for c in range(n_cells):
        cap += S[c]
    if stop_above > 0 and stop_above + 1 < cap:
        cap = stop_above + 1
    ce = np.empty(cap)
    ci = np.empty(cap)
    cr = np.empty(cap)
    ctau = np.empty(cap)
    cq = np.empty(cap)
    cend = np.empty(cap)
    ccell = np.empty(cap, dtype=np.int64)
    cinf = np.empty(cap, dtype=np.int64)

    n_comp = gsize_b.shape[0]
    H = np.zeros((n_comp, 2))
    rates = np.empty(n_cells)

    # index case
    if S[index_cell] <= 0:
        # the chosen cell has no susceptible: nothing happens
        return 0, np.empty((0, 5)), ccell[:0], cinf[:0], protected, False
    S[index_cell] -= 1
    nc = 0
    d_inc = _gamma(shapes[0], scales[0])
    d_fev = _gamma(shapes[1], scales[1])
    t = -(d_inc + d_fev) if np.isnan(e0) else e0
    ce[0] = t
    ci[0] = t + d_inc
    cr[0] = ci[0] + d_fev
    ctau[0] = cr[0] + _gamma(shapes[2], scales[2])
    cq[0] = (max(cr[0], tq) + _gamma(shapes[3], scales[3])) if tq < np.inf else np.inf
    cend[0] = min(ctau[0], cq[0])
    ccell[0] = index_cell
    cinf[0] = -1
    nc = 1
    aborted = False

    while True:
        next_t = np.inf
        active = False
        for k in range(nc):
            if cend[k] > t:
                active = True
                if ci[k] > t and ci[k] < next_t:
                    next_t = ci[k]
                if cr[k] > t and cr[k] < next_t:
                    next_t = cr[k]
                if cend[k] < next_t:
                    next_t = cend[k]
        if not active:
            break
        if t < move_day and move_day < next_t:
            next_t = move_day
        after = t >= move_day

        A0 = 0.0  # global pressure on an FTC target
        A1 = 0.0  # on a non-FTC target
        H[:, :] = 0.0
        for k in range(nc):
            mult = _current_mult(k, t, ci, cr, cend, b)
            if mult == 0.0:
                continue
            c = ccell[k]
            conf = cell_conf[c]
            if conf == 0:
                A0 += mult * (la / (N - 1.0) + lf / (n - 1.0))
                A1 += mult * la / (N - 1.0)
            else:
                A0 += mult * (la + lf) / (N - 1.0)
                A1 += mult * (la + lf) / (N - 1.0)
            comp = cell_ca[c] if after else cell_cb[c]
            if comp != 0:
                size = gsize_a[comp, conf] if after else gsize_b[comp, conf]
                if size > 1:
                    H[comp, conf] += mult * lh / (size - 1.0)
        total = 0.0
        for c in range(n_cells):
            if S[c] == 0:
                rates[c] = 0.0
                continue
            conf = cell_conf[c]
            comp = cell_ca[c] if after else cell_cb[c]
            lam = A0 if conf == 0 else A1
            if comp != 0:
                lam += H[comp, conf]
            rates[c] = S[c] * lam
            total += rates[c]
        dt = np.random.exponential(1.0 / total) if total > 0.0 else np.inf
        if t + dt >= next_t:
            t = next_t
            continue
        t = t + dt
        u = np.random.random() * total
        target = n_cells - 1
        acc = 0.0
        for c in range(n_cells):
            acc += rates[c]
            if u < acc and rates[c] > 0.0:
                target = c
                break
        while rates[target] == 0.0:
            target -= 1
        if nc >= cap:
            aborted = True
            break
        # infector, in proportion to its contribution to this cell
        tconf = cell_conf[target]
        tcomp = cell_ca[target] if after else cell_cb[target]
        weight_total = rates[target] / S[target]
        u = np.random.random() * weight_total
        acc = 0.0
        who = -1
        for k in range(nc):
            mult = _current_mult(k, t, ci, cr, cend, b)
            if mult == 0.0:
                continue
            c = ccell[k]
            conf = cell_conf[c]
            w = global_rate(conf, tconf, la, lf, N, n)
            comp = cell_ca[c] if after else cell_cb[c]
            size = gsize_a[comp, conf] if after else gsize_b[comp, conf]
            w += household_rate(lh, comp, conf, tcomp, tconf, size)
            acc += mult * w
            who = k
            if u < acc:
                break
        S[target] -= 1
        ce[nc] = t
        ci[nc] = t + _gamma(shapes[0], scales[0])
        cr[nc] = ci[nc] + _gamma(shapes[1], scales[1])
        ctau[nc] = cr[nc] + _gamma(shapes[2], scales[2])
        cq[nc] = (max(cr[nc], tq) + _gamma(shapes[3], scales[3])) if tq < np.inf else np.inf
        cend[nc] = min(ctau[nc], cq[nc])
        ccell[nc] = target
        cinf[nc] = who
        nc += 1
        if stop_above > 0 and nc > stop_above:
            aborted = True
            break

    times = np.empty((nc, 5))
    for k in range(nc):
        times[k, 0] = ce[k]
        times[k, 1] = ci[k]
        times[k, 2] = cr[k]
        times[k, 3] = ctau[k]
        times[k, 4] = cq[k]
    return nc, times, ccell[:nc].copy(), cinf[:nc].copy(), protected, aborted
