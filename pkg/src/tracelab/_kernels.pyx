# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot loops. Must stay bit-identical to ``_kernels_py``."""

from libc.math cimport log, log1p, expm1, floor, ceil
from libc.stdint cimport uint64_t, int64_t
from libc.stdlib cimport calloc, free

cdef uint64_t GOLDEN = 0x9E3779B97F4A7C15ULL
cdef double TWO_M53 = 1.0 / 9007199254740992.0


cdef inline uint64_t _mix(uint64_t z) nogil:
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL
    return z ^ (z >> 31)


cdef inline double _uniform(uint64_t* state) nogil:
    # (0, 1]
    state[0] += GOLDEN
    return ((_mix(state[0]) >> 11) + 1) * TWO_M53


def mix64(uint64_t z):
    return _mix(z)


def uniforms(uint64_t seed, Py_ssize_t count):
    """First ``count`` draws of the (0, 1] stream for ``seed``."""
    cdef uint64_t state = seed
    cdef Py_ssize_t i
    return [_uniform(&state) for i in range(count)]


cdef inline int _bad_pairs(int64_t* c, int d, int n) nogil:
    cdef int b = 0
    if d > 1 and c[d - 1] <= c[d]:
        b += 1
    if d < n and c[d] <= c[d + 1]:
        b += 1
    return b


cdef int64_t _trial(int n, double p, uint64_t seed, int64_t max_packets,
                    bint need_all, bint need_order, int64_t* counts) nogil:
    cdef uint64_t state = seed
    cdef double log_q, marked, log_unmarked, gap
    cdef int64_t received = 0
    cdef int d, bad, zeros, before

    if p <= 0.0:
        return -1
    if p >= 1.0:
        # only R_1 ever marks
        if n >= 2 and (need_all or n >= 3):
            return -1
        log_q = 0.0
        marked = 1.0
    else:
        log_q = log1p(-p)
        marked = -expm1(n * log_q)
    log_unmarked = log1p(-marked) if marked < 1.0 else 0.0

    bad = n - 1
    zeros = n
    while True:
        if marked >= 1.0:
            gap = 1.0
        else:
            gap = floor(log(_uniform(&state)) / log_unmarked) + 1.0
        if gap > <double>(max_packets - received):
            return -1
        received += <int64_t>gap

        if marked >= 1.0 and log_q == 0.0:
            d = 1
        else:
            d = <int>ceil(log1p(-_uniform(&state) * marked) / log_q)
            if d < 1:
                d = 1
            elif d > n:
                d = n

        before = _bad_pairs(counts, d, n)
        if counts[d] == 0:
            zeros -= 1
        counts[d] += 1
        bad += _bad_pairs(counts, d, n) - before
        if (not need_all or zeros == 0) and (not need_order or bad == 0):
            return received


def convergence_trial(int n, double p, uint64_t seed, int64_t max_packets,
                      bint require_all_routers=True, bint require_strict_order=True):
    """Packets received until the tally satisfies the criteria, or -1 if exhausted."""
    cdef int64_t out
    cdef int64_t* counts
    if n < 1:
        raise ValueError("n must be >= 1")
    counts = <int64_t*> calloc(n + 2, sizeof(int64_t))
    if counts == NULL:
        raise MemoryError()
    with nogil:
        out = _trial(n, p, seed, max_packets, require_all_routers,
                     require_strict_order, counts)
    free(counts)
    return out
