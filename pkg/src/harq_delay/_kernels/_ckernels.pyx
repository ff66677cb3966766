# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels: analytic objective, per-cell PGD, and the job-level event loop.

Every routine mirrors ``_pykernels`` operation for operation; the simulator
consumes random draws in the same order so both backends agree bit for bit.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport erfc, sqrt, log1p, isinf, isfinite, INFINITY
from libc.stdlib cimport malloc, realloc, free

from ..errors import QueueExplosion

cnp.import_array()

cdef enum:
    MAXM = 32
    BISECT_STEPS = 60

cdef double ETA_MIN = 1e-14

cdef enum:
    OK = 0
    INFEASIBLE = 1
    UNSTABLE = 2


cdef inline double _rate(double distance, double s) nogil:
    if isinf(s):
        if distance > 0:
            return 0.0
        return 0.5 if distance == 0 else 1.0
    return 0.5 * erfc(distance * s)


cdef double _pout(int m, const double* pf, const double* alpha, double s) nogil:
    cdef double keep = 1.0
    cdef double delivered = 1.0 - pf[0]
    cdef int i
    for i in range(1, m):
        keep *= 1.0 - _rate(1.0 + alpha[i - 1], s)
        delivered += (pf[i - 1] - pf[i]) * keep
    delivered = 1.0 - delivered
    if delivered < 0.0:
        return 0.0
    if delivered > 1.0:
        return 1.0
    return delivered


cdef double _evaluate(int m, const double* T, const double* pf, const double* alpha, double s,
                      double lam0, double fb_delay, double* p_out_out, int* stable_out) nogil:
    cdef double pn[MAXM]
    cdef double pa[MAXM]
    cdef double keep[MAXM]
    cdef double pf0[MAXM + 1]
    cdef int i, j, d
    cdef double a, delivered, p_out, sum_p, s1, s2, tot, prod_a, t, w, wt, t_mean
    cdef double d_ok, util, denom, load, t_ub, succ
    pn[0] = 0.0
    pa[0] = 0.0
    for j in range(1, m):
        a = alpha[j - 1]
        pn[j] = _rate(1.0 + a, s)
        pa[j] = _rate(1.0 - a, s)
    keep[0] = 1.0
    for d in range(1, m):
        keep[d] = keep[d - 1] * (1.0 - pn[d])
    pf0[0] = 1.0
    for i in range(m):
        pf0[i + 1] = pf[i]

    delivered = 0.0
    for i in range(1, m + 1):
        delivered += (pf0[i - 1] - pf0[i]) * keep[i - 1]
    p_out = 1.0 - delivered
    if p_out < 0.0:
        p_out = 0.0
    if p_out > 1.0:
        p_out = 1.0
    p_out_out[0] = p_out

    sum_p = 1.0
    s1 = T[0]
    s2 = T[0] * T[0]
    for i in range(2, m + 1):
        tot = pf0[i - 1] * keep[i - 1]
        prod_a = 1.0
        d = i - 1
        while d > 0:
            prod_a *= pa[d]
            tot += (pf0[d - 1] - pf0[d]) * keep[d - 1] * prod_a
            d -= 1
        if tot < 0.0:
            tot = 0.0
        if tot > 1.0:
            tot = 1.0
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
    stable_out[0] = 0
    if d_ok <= 0.0:
        return INFINITY
    util = t_mean * lam0 * sum_p / d_ok
    denom = d_ok / lam0 - s1
    load = lam0 * s1 / d_ok
    if not (util < 1.0 - 1e-9 and load < 1.0 - 1e-9 and denom > 0.0):
        return INFINITY
    stable_out[0] = 1
    t_ub = s2 / (2.0 * denom) + t_mean + fb_delay
    succ = 0.0
    for i in range(m - 1):
        succ += 1.0 - pf[i]
    return (m + 1 - succ) / d_ok * t_ub


cdef inline double _obj(int m, const double* T, const double* pf, const double* alpha, double s,
                        double lam0, double fb_delay) nogil:
    cdef double p_out
    cdef int stable
    return _evaluate(m, T, pf, alpha, s, lam0, fb_delay, &p_out, &stable)


cdef inline void _clamp(int k, double* a, double lo, double hi) nogil:
    cdef int i
    for i in range(k):
        if a[i] < lo:
            a[i] = lo
        elif a[i] > hi:
            a[i] = hi


cdef int _restore(int m, double* a, const double* pf, double s, double eps, double hi) nogil:
    """In-place pull toward the all-``hi`` corner; returns 0 when no feasible point exists."""
    cdef int k = m - 1
    cdef double top[MAXM]
    cdef double x[MAXM]
    cdef double t_lo = 0.0, t_hi = 1.0, mid
    cdef int i, it
    if eps >= 1.0 or _pout(m, pf, a, s) <= eps:
        return 1
    for i in range(k):
        top[i] = hi
    if _pout(m, pf, top, s) > eps:
        return 0
    for it in range(BISECT_STEPS):
        mid = 0.5 * (t_lo + t_hi)
        for i in range(k):
            x[i] = a[i] + mid * (hi - a[i])
        if _pout(m, pf, x, s) <= eps:
            t_hi = mid
        else:
            t_lo = mid
    for i in range(k):
        a[i] = a[i] + t_hi * (hi - a[i])
    return 1


cdef int _pgd(int m, const double* T, const double* pf, const double* start, double s, double lam0,
              double fb_delay, double eps, double lo, double hi, double eta0, double armijo,
              double fd_step, double tol, int max_iter, double* a, double* f_out, int* it_out) nogil:
    cdef int k = m - 1
    cdef int i, it = 0, accepted
    cdef double c[MAXM]
    cdef double g[MAXM]
    cdef double x[MAXM]
    cdef double f_ref, fa, fp, fm, fc, eta, decrease, step, p_out
    cdef int stable
    it_out[0] = 0
    if k == 0:
        f_out[0] = _evaluate(m, T, pf, a, s, lam0, fb_delay, &p_out, &stable)
        if p_out > eps:
            f_out[0] = INFINITY
            return INFEASIBLE
        return OK if stable else UNSTABLE
    for i in range(k):
        a[i] = start[i]
    _clamp(k, a, lo, hi)
    if not _restore(m, a, pf, s, eps, hi):
        for i in range(k):
            a[i] = start[i]
        f_out[0] = INFINITY
        return INFEASIBLE
    f_ref = _obj(m, T, pf, a, s, lam0, fb_delay)
    if not isfinite(f_ref):
        f_out[0] = INFINITY
        return UNSTABLE

    fa = 1.0
    while it < max_iter:
        it += 1
        for i in range(k):
            x[i] = a[i]
        for i in range(k):
            x[i] = a[i] + fd_step
            fp = _obj(m, T, pf, x, s, lam0, fb_delay) / f_ref
            x[i] = a[i] - fd_step
            fm = _obj(m, T, pf, x, s, lam0, fb_delay) / f_ref
            x[i] = a[i]
            if isfinite(fp) and isfinite(fm):
                g[i] = (fp - fm) / (2.0 * fd_step)
            elif isfinite(fm):
                g[i] = (fa - fm) / fd_step
            elif isfinite(fp):
                g[i] = (fp - fa) / fd_step
            else:
                g[i] = 0.0
        eta = eta0
        accepted = 0
        while eta >= ETA_MIN:
            for i in range(k):
                c[i] = a[i] - eta * g[i]
            _clamp(k, c, lo, hi)
            _restore(m, c, pf, s, eps, hi)
            fc = _obj(m, T, pf, c, s, lam0, fb_delay) / f_ref
            decrease = 0.0
            for i in range(k):
                decrease += g[i] * (c[i] - a[i])
            if fc <= fa + armijo * decrease:
                accepted = 1
                break
            eta *= 0.5
        if not accepted:
            break
        step = 0.0
        for i in range(k):
            step += (c[i] - a[i]) * (c[i] - a[i])
            a[i] = c[i]
        step = sqrt(step)
        fa = _obj(m, T, pf, a, s, lam0, fb_delay) / f_ref
        if step < tol:
            break
    f_out[0] = _obj(m, T, pf, a, s, lam0, fb_delay)
    it_out[0] = it
    return OK


def evaluate(T, pf, alpha, double s, double lam0, double fb_delay):
    cdef double[::1] Tv = np.ascontiguousarray(T, dtype=np.float64)
    cdef double[::1] pv = np.ascontiguousarray(pf, dtype=np.float64)
    cdef double[::1] av = np.ascontiguousarray(np.concatenate([np.asarray(alpha, dtype=np.float64), [0.0]]))
    cdef int m = Tv.shape[0]
    cdef double p_out
    cdef int stable
    if m > MAXM:
        raise ValueError(f"at most {MAXM} attempts supported")
    f = _evaluate(m, &Tv[0], &pv[0], &av[0], s, lam0, fb_delay, &p_out, &stable)
    return f, p_out, bool(stable)


def pgd(T, pf, start, double s, double lam0, double fb_delay, double eps, double lo, double hi,
        double eta0, double armijo, double fd_step, double tol, int max_iter):
    st, a, f, it = pgd_batch(np.asarray([T], dtype=np.float64), np.asarray([pf], dtype=np.float64),
                             np.asarray([start], dtype=np.float64).reshape(1, -1), s, lam0, fb_delay,
                             eps, lo, hi, eta0, armijo, fd_step, tol, max_iter)
    return int(st[0]), list(a[0]), float(f[0]), int(it[0])


def pgd_batch(T2, pf2, starts, double s, double lam0, double fb_delay, double eps, double lo,
              double hi, double eta0, double armijo, double fd_step, double tol, int max_iter):
    cdef double[:, ::1] Tv = np.ascontiguousarray(T2, dtype=np.float64)
    cdef double[:, ::1] pv = np.ascontiguousarray(pf2, dtype=np.float64)
    cdef double[:, ::1] sv = np.ascontiguousarray(starts, dtype=np.float64)
    cdef Py_ssize_t n = Tv.shape[0], r
    cdef int m = Tv.shape[1]
    cdef int k = sv.shape[1]
    if m > MAXM:
        raise ValueError(f"at most {MAXM} attempts supported")
    if k != m - 1:
        raise ValueError("starts must have M-1 columns")
    status_a = np.zeros(n, dtype=np.int64)
    alpha_a = np.zeros((n, k if k > 0 else 0), dtype=np.float64)
    obj_a = np.full(n, np.inf)
    iters_a = np.zeros(n, dtype=np.int64)
    cdef long long[::1] status = status_a
    cdef double[::1] obj = obj_a
    cdef long long[::1] iters = iters_a
    cdef double a[MAXM]
    cdef double zero[MAXM]
    cdef double f
    cdef int it, i
    cdef double[:, ::1] av
    cdef double* sp
    if k > 0:
        av = alpha_a
    for i in range(MAXM):
        zero[i] = 0.0
    with nogil:
        for r in range(n):
            sp = &sv[r, 0] if k > 0 else &zero[0]
            status[r] = _pgd(m, &Tv[r, 0], &pv[r, 0], sp, s, lam0, fb_delay,
                             eps, lo, hi, eta0, armijo, fd_step, tol, max_iter, a, &f, &it)
            obj[r] = f
            iters[r] = it
            for i in range(k):
                av[r, i] = a[i]
    return status_a, alpha_a, obj_a, iters_a


# ----------------------------------------------------------------------------------------------
# event loop

cdef struct Job:
    double entry
    long long seq
    long long pkt
    double arrival
    int attempt
    int n_att
    int delivered
    int rnd
    long long att_total
    double r_wait
    double r_serv


cdef inline bint _less(Job* x, Job* y) nogil:
    return x.entry < y.entry or (x.entry == y.entry and x.seq < y.seq)


cdef class _Heap:
    cdef Job* data
    cdef Py_ssize_t size, cap

    def __cinit__(self):
        self.cap = 1024
        self.size = 0
        self.data = <Job*> malloc(self.cap * sizeof(Job))
        if self.data == NULL:
            raise MemoryError()

    def __dealloc__(self):
        free(self.data)

    cdef void push(self, Job j) except *:
        cdef Py_ssize_t i, p
        cdef Job* nd
        if self.size == self.cap:
            nd = <Job*> realloc(self.data, 2 * self.cap * sizeof(Job))
            if nd == NULL:
                raise MemoryError()
            self.data = nd
            self.cap *= 2
        i = self.size
        self.size += 1
        while i > 0:
            p = (i - 1) >> 1
            if _less(&j, &self.data[p]):
                self.data[i] = self.data[p]
                i = p
            else:
                break
        self.data[i] = j

    cdef Job pop(self):
        cdef Job top = self.data[0]
        cdef Job last
        cdef Py_ssize_t i = 0, c
        self.size -= 1
        if self.size > 0:
            last = self.data[self.size]
            while True:
                c = 2 * i + 1
                if c >= self.size:
                    break
                if c + 1 < self.size and _less(&self.data[c + 1], &self.data[c]):
                    c += 1
                if _less(&self.data[c], &last):
                    self.data[i] = self.data[c]
                    i = c
                else:
                    break
            self.data[i] = last
        return top


cdef class _Draws:
    cdef object stream
    cdef double[::1] buf
    cdef Py_ssize_t pos, n

    def __init__(self, stream):
        self.stream = stream
        self._refill()

    cdef void _refill(self) except *:
        self.buf = np.ascontiguousarray(self.stream.refill(), dtype=np.float64)
        self.n = self.buf.shape[0]
        self.pos = 0

    cdef inline double next(self) except? -1.0:
        if self.pos >= self.n:
            self._refill()
        self.pos += 1
        return self.buf[self.pos - 1]


def simulate(T, u, alpha, double snr_d, double payload, double mi_mean, double mi_std, bint use_gaussian,
             double noise_std, double fb_delay, bint occupy, double lam0, long long num_packets,
             long long warmup, int n_batches, arrivals, fading, feedback, trace, long long max_queue):
    cdef double[::1] Tv = np.ascontiguousarray(T, dtype=np.float64)
    cdef double[::1] uv = np.ascontiguousarray(u, dtype=np.float64)
    cdef double[::1] av = np.ascontiguousarray(np.concatenate([np.asarray(alpha, dtype=np.float64), [0.0]]))
    cdef int m = Tv.shape[0]
    cdef _Draws arr = _Draws(arrivals)
    cdef _Draws fad = _Draws(fading)
    cdef _Draws fbk = _Draws(feedback)
    cdef long long n_stat = num_packets - warmup
    cdef double ln2 = 0.6931471805599453

    fail_a = np.zeros(m, dtype=np.int64)
    occur_a = np.zeros(m, dtype=np.int64)
    hist_a = np.zeros(m, dtype=np.int64)
    cdef long long[::1] fail = fail_a
    cdef long long[::1] occur = occur_a
    cdef long long[::1] att_hist = hist_a
    names = ("b_jobs", "b_wait", "b_serv", "b_pkts", "b_delay", "b_rtt", "b_qlen", "b_qn", "b_rounds",
             "b_outage")
    barrays = {k: np.zeros(n_batches) for k in names}
    cdef double[::1] b_jobs = barrays["b_jobs"]
    cdef double[::1] b_wait = barrays["b_wait"]
    cdef double[::1] b_serv = barrays["b_serv"]
    cdef double[::1] b_pkts = barrays["b_pkts"]
    cdef double[::1] b_delay = barrays["b_delay"]
    cdef double[::1] b_rtt = barrays["b_rtt"]
    cdef double[::1] b_qlen = barrays["b_qlen"]
    cdef double[::1] b_qn = barrays["b_qn"]
    cdef double[::1] b_rounds = barrays["b_rounds"]
    cdef double[::1] b_outage = barrays["b_outage"]

    cdef _Heap heap = _Heap()
    cdef long long seq = 0
    # ring of start times of waiting jobs; monotone, so a growing array with a head index
    cdef Py_ssize_t ring_cap = 1 << 16
    ring_store = np.empty(ring_cap, dtype=np.float64)
    cdef double[::1] ring = ring_store
    cdef Py_ssize_t ring_head = 0, ring_len = 0, q
    cdef double free_t = 0.0
    cdef long long next_pkt = 0
    cdef double next_arrival = arr.next() / lam0 if num_packets > 0 else INFINITY
    cdef long long max_q = 0
    cdef long long rounds = 0, outages = 0
    cdef double fades[MAXM]
    cdef Job job, nj
    cdef bint fresh, counted, decodable
    cdef Py_ssize_t batch
    cdef int i, dec, ii
    cdef double acc, r, start, wait, service, done, t

    if m > MAXM:
        raise ValueError(f"at most {MAXM} attempts supported")

    while next_pkt < num_packets or heap.size > 0:
        if heap.size > 0 and (next_pkt >= num_packets or heap.data[0].entry <= next_arrival):
            job = heap.pop()
            fresh = False
        else:
            job.entry = next_arrival
            job.seq = 0
            job.pkt = next_pkt
            job.arrival = next_arrival
            job.attempt = 0
            job.n_att = 0
            job.delivered = 0
            job.rnd = 1
            job.att_total = 0
            job.r_wait = 0.0
            job.r_serv = 0.0
            fresh = True
            next_pkt += 1
            if next_pkt < num_packets:
                next_arrival = job.entry + arr.next() / lam0
        t = job.entry
        counted = job.pkt >= warmup
        batch = <Py_ssize_t> ((job.pkt - warmup) * n_batches // n_stat) if counted else 0

        if job.attempt == 0:
            acc = 0.0
            dec = m
            for i in range(m):
                if use_gaussian:
                    fades[i] = uv[i] * (mi_mean + mi_std * fad.next())
                else:
                    fades[i] = uv[i] * log1p(fad.next() * snr_d) / ln2
            for i in range(m):
                acc += fades[i]
                if acc < payload:
                    if counted:
                        fail[i] += 1
                elif dec == m:
                    dec = i
            i = 0
            while True:
                if counted:
                    occur[i] += 1
                if i == m - 1:
                    job.delivered = 1 if dec <= i else 0
                    break
                decodable = dec <= i
                r = (1.0 if decodable else -1.0) + noise_std * fbk.next()
                if r > av[i]:
                    job.delivered = 1 if decodable else 0
                    for ii in range(i + 1, m - 1):
                        fbk.next()
                    break
                i += 1
            job.n_att = i + 1
            if counted:
                rounds += 1
                att_hist[i] += 1
                b_rounds[batch] += 1
                if not job.delivered:
                    outages += 1
                    b_outage[batch] += 1
            job.r_wait = 0.0
            job.r_serv = 0.0

        start = t if t > free_t else free_t
        wait = start - t
        while ring_head < ring_len and ring[ring_head] <= t:
            ring_head += 1
        if fresh and counted:
            b_qlen[batch] += ring_len - ring_head
            b_qn[batch] += 1
        if start > t:
            if ring_len == ring_cap:
                if ring_head > 0:
                    for q in range(ring_len - ring_head):
                        ring[q] = ring[ring_head + q]
                    ring_len -= ring_head
                    ring_head = 0
                if ring_len == ring_cap:
                    ring_cap *= 2
                    grown = np.empty(ring_cap, dtype=np.float64)
                    grown[:ring_len] = ring_store[:ring_len]
                    ring_store = grown
                    ring = ring_store
            ring[ring_len] = start
            ring_len += 1
            q = ring_len - ring_head
            if q > max_q:
                max_q = q
                if q > max_queue:
                    raise QueueExplosion(f"queue length {q} exceeded {max_queue} at t={t:.6g}s", t, q)
        service = Tv[job.attempt] + (fb_delay if occupy else 0.0)
        free_t = start + service
        done = free_t if occupy else free_t + fb_delay
        job.att_total += 1
        job.r_wait += wait
        job.r_serv += service
        if counted:
            b_jobs[batch] += 1
            b_wait[batch] += wait
            b_serv[batch] += service

        if job.attempt + 1 < job.n_att:
            seq += 1
            nj = job
            nj.entry = done
            nj.seq = seq
            nj.attempt = job.attempt + 1
            heap.push(nj)
            continue
        if trace is not None:
            trace(job.pkt, job.rnd, job.n_att, job.delivered, job.r_wait, job.r_serv)
        if job.delivered:
            if counted:
                b_pkts[batch] += 1
                b_delay[batch] += done - job.arrival
                b_rtt[batch] += job.att_total
        else:
            seq += 1
            nj = job
            nj.entry = done
            nj.seq = seq
            nj.attempt = 0
            nj.n_att = 0
            nj.delivered = 0
            nj.rnd = job.rnd + 1
            nj.r_wait = 0.0
            nj.r_serv = 0.0
            heap.push(nj)

    out = {"fail": fail_a, "occur": occur_a, "attempts_hist": hist_a, "rounds": rounds,
           "outages": outages, "max_queue": max_q, "end_time": free_t}
    out.update(barrays)
    return out
