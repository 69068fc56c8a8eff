# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled round loop for homogeneous ALKY worlds.

Mirrors ``netforge.abm.core.python_round`` operation for operation so both
backends produce identical traces from the same random stream.
"""

from libc.math cimport exp, log, pow, fabs

import numpy as np

cdef double XMAX = 700.0
cdef double TINY = 5e-324
cdef double CAP = 1.0 - 1e-9


cdef inline double _sigmoid(double x) noexcept nogil:
    if x > XMAX:
        x = XMAX
    elif x < -XMAX:
        x = exp(x)
        return x if x > TINY else TINY
    return 1.0 / (1.0 + exp(-x))


cdef inline double _step(double alpha, double du, double floor) noexcept nogil:
    cdef double p
    if alpha <= 0.0:
        p = floor
    elif alpha < CAP:
        p = alpha
    else:
        p = CAP
    cdef double out = _sigmoid(log(p / (1.0 - p)) + du)
    return out if out < CAP else CAP


cdef struct Params:
    double kappa, gamma, delta, lam, omega_cap, omega_min, varpi, temperature, zero_floor
    int signed_varpi, mem_size, depth, mem_ttl


cdef inline double _row_sum(double[:, ::1] W, Py_ssize_t i, Py_ssize_t n) noexcept nogil:
    cdef double s = 0.0
    cdef Py_ssize_t j
    for j in range(n):
        s += W[i, j]
    return s


cdef inline double _grad(double[:, ::1] W, const double[:, ::1] C, Py_ssize_t i, Py_ssize_t j,
                         double shift, Params* p) noexcept nogil:
    cdef double a = W[i, j]
    cdef double x = pow(a, p.gamma)
    cdef double d = 1.0 - x
    return p.kappa * C[i, j] - p.gamma * pow(a, p.gamma - 1.0) / (d * d) + shift


cdef inline double _shift(double[:, ::1] W, Py_ssize_t i, Py_ssize_t n, Params* p) noexcept nogil:
    return -p.delta * pow(_row_sum(W, i, n), p.delta - 1.0)


cdef inline void _link(long long[:, ::1] nbr, long long[::1] deg, Py_ssize_t i, Py_ssize_t k) noexcept nogil:
    nbr[i, deg[i]] = k
    deg[i] += 1


cdef inline void _unlink(long long[:, ::1] nbr, long long[::1] deg, Py_ssize_t i, Py_ssize_t j) noexcept nogil:
    cdef Py_ssize_t q, d = deg[i]
    for q in range(d):
        if nbr[i, q] == j:
            nbr[i, q] = nbr[i, d - 1]
            nbr[i, d - 1] = -1
            deg[i] = d - 1
            return


cdef inline void _set(double[:, ::1] W, long long[:, ::1] nbr, long long[::1] deg,
                      Py_ssize_t i, Py_ssize_t k, double new) noexcept nogil:
    cdef double old = W[i, k]
    W[i, k] = new
    W[k, i] = new
    if old == 0.0 and new > 0.0:
        _link(nbr, deg, i, k)
        _link(nbr, deg, k, i)
    elif old > 0.0 and new == 0.0:
        _unlink(nbr, deg, i, k)
        _unlink(nbr, deg, k, i)


cdef inline int _in_memory(long long[:, ::1] mem, long long[::1] start, long long[::1] count,
                           Py_ssize_t i, Py_ssize_t j) noexcept nogil:
    cdef Py_ssize_t q, cap = mem.shape[1]
    for q in range(count[i]):
        if mem[i, (start[i] + q) % cap] == j:
            return 1
    return 0


cdef inline void _remember(long long[:, ::1] mem, long long[::1] start, long long[::1] count,
                           long long[:, ::1] stamp, long long t,
                           Py_ssize_t i, Py_ssize_t k, int size) noexcept nogil:
    cdef Py_ssize_t slot
    if size == 0:
        return
    if count[i] == size:
        start[i] = (start[i] + 1) % size
        count[i] -= 1
    slot = (start[i] + count[i]) % size
    mem[i, slot] = k
    stamp[i, slot] = t
    count[i] += 1


cdef inline void _expire(long long[::1] start, long long[::1] count, long long[:, ::1] stamp,
                         long long t, Py_ssize_t i, int ttl) noexcept nogil:
    cdef Py_ssize_t cap = stamp.shape[1]
    if ttl <= 0:
        return
    while count[i] > 0 and t - stamp[i, start[i]] > ttl:
        start[i] = (start[i] + 1) % cap
        count[i] -= 1


cdef Py_ssize_t _scope(long long[:, ::1] nbr, long long[::1] deg, Py_ssize_t i, Py_ssize_t n,
                       int depth, long long[::1] mark, long long stamp,
                       long long[::1] queue, long long[::1] ids) noexcept nogil:
    """Fill ``ids`` with the scope of ``i`` in ascending order; return its size."""
    cdef Py_ssize_t j, q, v, w, head, tail, level_end, m = 0
    cdef int level
    if depth < 0:
        for j in range(n):
            if j != i:
                ids[m] = j
                m += 1
        return m
    mark[i] = stamp
    queue[0] = i
    head = 0
    tail = 1
    level = 0
    while level <= depth and head < tail:
        level_end = tail
        while head < level_end:
            v = queue[head]
            head += 1
            for q in range(deg[v]):
                w = nbr[v, q]
                if mark[w] != stamp:
                    mark[w] = stamp
                    queue[tail] = w
                    tail += 1
        level += 1
    for j in range(n):
        if j != i and mark[j] == stamp:
            ids[m] = j
            m += 1
    return m


cdef int _respond(double[:, ::1] W, const double[:, ::1] C, long long[:, ::1] nbr, long long[::1] deg,
                  Py_ssize_t k, Py_ssize_t i, Py_ssize_t n, double a, Params* p) noexcept nogil:
    cdef double g = _grad(W, C, k, i, _shift(W, k, n, p), p)
    cdef double old = W[i, k], own, offer, new
    if g > 0.0:
        own = _step(old, p.lam * g, p.zero_floor)
        offer = a if a < own else own
        if offer > p.omega_min:
            if old > 0.0:
                new = offer if offer < old + p.omega_cap else old + p.omega_cap
            else:
                new = p.omega_cap
            _set(W, nbr, deg, i, k, new)
            return new != old
        return 0
    if g < 0.0:
        if old == 0.0:
            return 0
        new = _step(old, p.lam * g, p.zero_floor)
        if new < old - p.omega_cap:
            new = old - p.omega_cap
        if new < 0.0:
            new = 0.0
        _set(W, nbr, deg, i, k, new)
        return new != old
    return 0


def run_round(double[:, ::1] W, const double[:, ::1] C, long long[:, ::1] nbr, long long[::1] deg,
              long long[:, ::1] mem, long long[::1] mem_start, long long[::1] mem_count,
              long long[:, ::1] mem_time, long long t,
              const long long[::1] order, const double[::1] u, dict params, bint prune):
    """One protocol round over ``order``; returns the number of agents that acted."""
    cdef Params p
    p.kappa = params["kappa"]
    p.gamma = params["gamma"]
    p.delta = params["delta"]
    p.lam = params["lam"]
    p.omega_cap = params["omega_cap"]
    p.omega_min = params["omega_min"]
    p.varpi = params["varpi"]
    p.temperature = params["temperature"]
    p.zero_floor = params["zero_floor"]
    p.signed_varpi = params["signed_varpi"]
    p.mem_size = params["mem_size"]
    p.depth = params["depth"]
    p.mem_ttl = params["mem_ttl"]

    cdef Py_ssize_t n = W.shape[0]
    cdef long long[::1] mark = np.full(n, -1, dtype=np.int64)
    cdef long long[::1] queue = np.empty(n, dtype=np.int64)
    cdef long long[::1] ids = np.empty(n, dtype=np.int64)
    cdef double[::1] grad = np.empty(n, dtype=np.float64)
    cdef double[::1] wts = np.empty(n, dtype=np.float64)
    cdef Py_ssize_t pos, i, j, q, m, k, pick
    cdef double shift, gq, mx, total, target, cum, gk, old, new
    cdef int acted = 0, did

    with nogil:
        for pos in range(order.shape[0]):
            i = order[pos]
            did = 0
            _expire(mem_start, mem_count, mem_time, t, i, p.mem_ttl)
            m = _scope(nbr, deg, i, n, p.depth, mark, pos, queue, ids)
            if m > 0:
                shift = _shift(W, i, n, &p)
                for q in range(m):
                    j = ids[q]
                    gq = _grad(W, C, i, j, shift, &p)
                    if _in_memory(mem, mem_start, mem_count, i, j):
                        gq = 0.0
                    elif p.signed_varpi:
                        if gq <= p.varpi:
                            gq = 0.0
                    elif fabs(gq) <= p.varpi:
                        gq = 0.0
                    if gq < 0.0 and W[i, j] == 0.0:
                        gq = 0.0
                    grad[q] = gq
                # softargmax over |grad|
                mx = fabs(grad[0])
                for q in range(1, m):
                    if fabs(grad[q]) > mx:
                        mx = fabs(grad[q])
                for q in range(m):
                    wts[q] = exp((fabs(grad[q]) - mx) / p.temperature)
                total = 0.0
                for q in range(m):
                    total += wts[q]
                target = u[pos] * total
                cum = 0.0
                pick = m - 1
                for q in range(m):
                    cum += wts[q]
                    if cum > target:
                        pick = q
                        break
                k = ids[pick]
                gk = grad[pick]
                if gk > 0.0:
                    _remember(mem, mem_start, mem_count, mem_time, t, i, k, p.mem_size)
                    did = _respond(W, C, nbr, deg, k, i, n, _step(W[i, k], p.lam * gk, p.zero_floor), &p)
                elif gk < 0.0:
                    old = W[i, k]
                    if old != 0.0:
                        _remember(mem, mem_start, mem_count, mem_time, t, i, k, p.mem_size)
                        new = _step(old, p.lam * gk, p.zero_floor)
                        if new < old - p.omega_cap:
                            new = old - p.omega_cap
                        _set(W, nbr, deg, i, k, new)
                        did = new != old
            if did:
                acted += 1
        if prune:
            for i in range(n):
                for j in range(i + 1, n):
                    if W[i, j] > 0.0 and W[i, j] < p.omega_min:
                        _set(W, nbr, deg, i, j, 0.0)
    return acted
