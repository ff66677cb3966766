"""Pure-Python kernels. Same algorithms, same random-draw order as the compiled core."""
import heapq
import math

import numpy as np

from ..errors import QueueExplosion

OK, INFEASIBLE, UNSTABLE = 0, 1, 2
_ETA_MIN = 1e-14
_BISECT_STEPS = 60


def _rate(distance, s):
    if math.isinf(s):
        return 0.0 if distance > 0 else (0.5 if distance == 0 else 1.0)
    return 0.5 * math.erfc(distance * s)


def _pout(pf, alpha, s):
    m = len(pf)
    keep = 1.0
    delivered = 1.0 - pf[0]
    for i in range(1, m):
        keep *= 1.0 - _rate(1.0 + alpha[i - 1], s)
        delivered += (pf[i - 1] - pf[i]) * keep
    return min(max(1.0 - delivered, 0.0), 1.0)


def evaluate(T, pf, alpha, s, lam0, fb_delay):
    """Return ``(avg_delay, p_out, stable)``; ``avg_delay`` is inf when unstable."""
    m = len(T)
    pn = [0.0] * m
    pa = [0.0] * m
    for j in range(1, m):
        a = alpha[j - 1]
        pn[j] = _rate(1.0 + a, s)
        pa[j] = _rate(1.0 - a, s)
    keep = [1.0] * m
    for d in range(1, m):
        keep[d] = keep[d - 1] * (1.0 - pn[d])
    pf0 = [1.0] + list(pf)

    delivered = 0.0
    for i in range(1, m + 1):
        delivered += (pf0[i - 1] - pf0[i]) * keep[i - 1]
    p_out = min(max(1.0 - delivered, 0.0), 1.0)

    sum_p = 1.0
    s1 = T[0]
    s2 = T[0] * T[0]
    for i in range(2, m + 1):
        tot = pf0[i - 1] * keep[i - 1]
        prod_a = 1.0
        for d in range(i - 1, 0, -1):
            prod_a *= pa[d]
            tot += (pf0[d - 1] - pf0[d]) * keep[d - 1] * prod_a
        tot = min(max(tot, 0.0), 1.0)
        sum_p += tot
        t = T[i - 1]
        s1 += t * tot
        s2 += t * t * tot

    w = 0.0
    wt = 0.0
    for i in range(m):
        w += pf0[i]
        wt += T[i] * pf0[i]
    t_mean = wt / w

    d_ok = 1.0 - p_out
    if d_ok <= 0.0:
        return math.inf, p_out, False
    util = t_mean * lam0 * sum_p / d_ok
    denom = d_ok / lam0 - s1
    load = lam0 * s1 / d_ok
    if not (util < 1.0 - 1e-9 and load < 1.0 - 1e-9 and denom > 0.0):
        return math.inf, p_out, False
    t_ub = s2 / (2.0 * denom) + t_mean + fb_delay
    succ = 0.0
    for i in range(m - 1):
        succ += 1.0 - pf[i]
    return (m + 1 - succ) / d_ok * t_ub, p_out, True


def _clamp(a, lo, hi):
    return [min(max(x, lo), hi) for x in a]


def _restore(a, pf, s, eps, hi):
    """Pull ``a`` toward the all-``hi`` corner until the outage constraint holds."""
    if eps >= 1.0 or _pout(pf, a, s) <= eps:
        return a
    top = [hi] * len(a)
    if _pout(pf, top, s) > eps:
        return None
    t_lo, t_hi = 0.0, 1.0
    for _ in range(_BISECT_STEPS):
        mid = 0.5 * (t_lo + t_hi)
        if _pout(pf, [x + mid * (hi - x) for x in a], s) <= eps:
            t_hi = mid
        else:
            t_lo = mid
    return [x + t_hi * (hi - x) for x in a]


def pgd(T, pf, start, s, lam0, fb_delay, eps, lo, hi, eta0, armijo, fd_step, tol, max_iter):
    """Projected gradient descent over detection indices for one fixed n.

    Returns ``(status, alpha, objective, iterations)``.
    """
    k = len(start)
    if k == 0:
        f, p_out, stable = evaluate(T, pf, [], s, lam0, fb_delay)
        if p_out > eps:
            return INFEASIBLE, [], math.inf, 0
        return (OK if stable else UNSTABLE), [], f, 0
    a = _restore(_clamp(list(start), lo, hi), pf, s, eps, hi)
    if a is None:
        return INFEASIBLE, list(start), math.inf, 0
    f_ref = evaluate(T, pf, a, s, lam0, fb_delay)[0]
    if not math.isfinite(f_ref):
        return UNSTABLE, a, math.inf, 0

    def phi(x):
        return evaluate(T, pf, x, s, lam0, fb_delay)[0] / f_ref

    fa = 1.0
    it = 0
    while it < max_iter:
        it += 1
        g = [0.0] * k
        for i in range(k):
            xp = list(a)
            xm = list(a)
            xp[i] += fd_step
            xm[i] -= fd_step
            fp = phi(xp)
            fm = phi(xm)
            if math.isfinite(fp) and math.isfinite(fm):
                g[i] = (fp - fm) / (2.0 * fd_step)
            elif math.isfinite(fm):
                g[i] = (fa - fm) / fd_step
            elif math.isfinite(fp):
                g[i] = (fp - fa) / fd_step
        eta = eta0
        cand = None
        while eta >= _ETA_MIN:
            c = _restore(_clamp([a[i] - eta * g[i] for i in range(k)], lo, hi), pf, s, eps, hi)
            fc = phi(c)
            decrease = 0.0
            for i in range(k):
                decrease += g[i] * (c[i] - a[i])
            if fc <= fa + armijo * decrease:
                cand = c
                break
            eta *= 0.5
        if cand is None:
            break
        step = math.sqrt(sum((cand[i] - a[i]) ** 2 for i in range(k)))
        a = cand
        fa = phi(a)
        if step < tol:
            break
    f = evaluate(T, pf, a, s, lam0, fb_delay)[0]
    return OK, a, f, it


def pgd_batch(T2, pf2, starts, s, lam0, fb_delay, eps, lo, hi, eta0, armijo, fd_step, tol, max_iter):
    n = T2.shape[0]
    k = starts.shape[1]
    status = np.zeros(n, dtype=np.int64)
    alpha = np.zeros((n, k))
    obj = np.full(n, math.inf)
    iters = np.zeros(n, dtype=np.int64)
    for r in range(n):
        st, a, f, it = pgd(list(T2[r]), list(pf2[r]), list(starts[r]), s, lam0, fb_delay, eps, lo, hi,
                           eta0, armijo, fd_step, tol, max_iter)
        status[r] = st
        alpha[r, :] = a if len(a) else 0.0
        obj[r] = f
        iters[r] = it
    return status, alpha, obj, iters


class _Draws:
    """Sequential reader over one random stream refilled in blocks."""

    __slots__ = ("stream", "buf", "pos")

    def __init__(self, stream):
        self.stream = stream
        self.buf = stream.refill()
        self.pos = 0

    def next(self):
        if self.pos >= len(self.buf):
            self.buf = self.stream.refill()
            self.pos = 0
        v = self.buf[self.pos]
        self.pos += 1
        return float(v)


def simulate(T, u, alpha, snr_d, payload, mi_mean, mi_std, use_gaussian, noise_std, fb_delay,
             occupy, lam0, num_packets, warmup, n_batches, arrivals, fading, feedback, trace,
             max_queue):
    """Event loop over transmission jobs. Returns a dict of raw counters."""
    m = len(T)
    arr = _Draws(arrivals)
    fad = _Draws(fading)
    fbk = _Draws(feedback)
    n_stat = num_packets - warmup

    fail = np.zeros(m, dtype=np.int64)
    occur = np.zeros(m, dtype=np.int64)
    att_hist = np.zeros(m, dtype=np.int64)
    rounds = 0
    outages = 0
    b_jobs = np.zeros(n_batches)
    b_wait = np.zeros(n_batches)
    b_serv = np.zeros(n_batches)
    b_pkts = np.zeros(n_batches)
    b_delay = np.zeros(n_batches)
    b_rtt = np.zeros(n_batches)
    b_qlen = np.zeros(n_batches)
    b_qn = np.zeros(n_batches)
    b_rounds = np.zeros(n_batches)
    b_outage = np.zeros(n_batches)

    heap = []
    seq = 0
    ring = []  # start times of jobs still waiting
    ring_head = 0
    free = 0.0
    next_pkt = 0
    next_arrival = arr.next() / lam0 if num_packets > 0 else math.inf
    max_q = 0
    fades = [0.0] * m
    ln2 = math.log(2.0)

    while next_pkt < num_packets or heap:
        if heap and (next_pkt >= num_packets or heap[0][0] <= next_arrival):
            job = heapq.heappop(heap)
            (t, _, pkt, arrival, attempt, n_att, delivered, rnd, att_total, r_wait, r_serv) = job
            fresh = False
        else:
            t = next_arrival
            pkt = next_pkt
            arrival = t
            attempt = 0
            n_att = 0
            delivered = 0
            rnd = 1
            att_total = 0
            r_wait = 0.0
            r_serv = 0.0
            fresh = True
            next_pkt += 1
            if next_pkt < num_packets:
                next_arrival = t + arr.next() / lam0
        counted = pkt >= warmup
        batch = (pkt - warmup) * n_batches // n_stat if counted else 0

        if attempt == 0:
            acc = 0.0
            dec = m
            for i in range(m):
                if use_gaussian:
                    fades[i] = u[i] * (mi_mean + mi_std * fad.next())
                else:
                    fades[i] = u[i] * math.log1p(fad.next() * snr_d) / ln2
            for i in range(m):
                acc += fades[i]
                if acc < payload:
                    if counted:
                        fail[i] += 1
                elif dec == m:
                    dec = i
            i = 0
            delivered = 0
            while True:
                if counted:
                    occur[i] += 1
                if i == m - 1:
                    delivered = 1 if dec <= i else 0
                    for _ in range(i, m - 1):
                        fbk.next()
                    break
                decodable = dec <= i
                r = (1.0 if decodable else -1.0) + noise_std * fbk.next()
                if r > alpha[i]:
                    delivered = 1 if decodable else 0
                    for _ in range(i + 1, m - 1):
                        fbk.next()
                    break
                i += 1
            n_att = i + 1
            if counted:
                rounds += 1
                att_hist[i] += 1
                b_rounds[batch] += 1
                if not delivered:
                    outages += 1
                    b_outage[batch] += 1
            r_wait = 0.0
            r_serv = 0.0

        start = t if t > free else free
        wait = start - t
        while ring_head < len(ring) and ring[ring_head] <= t:
            ring_head += 1
        if fresh and counted:
            b_qlen[batch] += len(ring) - ring_head
            b_qn[batch] += 1
        if start > t:
            ring.append(start)
            q = len(ring) - ring_head
            if q > max_q:
                max_q = q
                if q > max_queue:
                    raise QueueExplosion(f"queue length {q} exceeded {max_queue} at t={t:.6g}s", t, q)
        if ring_head > 4096 and ring_head * 2 > len(ring):
            del ring[:ring_head]
            ring_head = 0
        service = T[attempt] + (fb_delay if occupy else 0.0)
        free = start + service
        done = free if occupy else free + fb_delay
        att_total += 1
        r_wait += wait
        r_serv += service
        if counted:
            b_jobs[batch] += 1
            b_wait[batch] += wait
            b_serv[batch] += service

        if attempt + 1 < n_att:
            seq += 1
            heapq.heappush(heap, (done, seq, pkt, arrival, attempt + 1, n_att, delivered, rnd, att_total,
                                  r_wait, r_serv))
            continue
        if trace is not None:
            trace(pkt, rnd, n_att, delivered, r_wait, r_serv)
        if delivered:
            if counted:
                b_pkts[batch] += 1
                b_delay[batch] += done - arrival
                b_rtt[batch] += att_total
        else:
            seq += 1
            heapq.heappush(heap, (done, seq, pkt, arrival, 0, 0, 0, rnd + 1, att_total, 0.0, 0.0))

    return {
        "fail": fail, "occur": occur, "attempts_hist": att_hist, "rounds": rounds, "outages": outages,
        "b_jobs": b_jobs, "b_wait": b_wait, "b_serv": b_serv, "b_pkts": b_pkts, "b_delay": b_delay,
        "b_rtt": b_rtt, "b_qlen": b_qlen, "b_qn": b_qn, "b_rounds": b_rounds, "b_outage": b_outage,
        "max_queue": max_q, "end_time": free,
    }
