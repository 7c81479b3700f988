# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels; drop-in replacements for the functions in ``_pure``."""
from cpython.bytes cimport PyBytes_FromStringAndSize
from libc.stdint cimport uint64_t
from libc.stdlib cimport calloc, free

IMPLEMENTATION = "cython"

cdef uint64_t FNV_OFFSET = 0xCBF29CE484222325ULL
cdef uint64_t FNV_PRIME = 0x100000001B3ULL


cdef inline bint _is_space(unsigned char c) nogil:
    return c == 32 or (9 <= c <= 13)


cdef inline uint64_t _fnv(const unsigned char* p, Py_ssize_t n) nogil:
    cdef uint64_t h = FNV_OFFSET
    cdef Py_ssize_t i
    for i in range(n):
        h = (h ^ p[i]) * FNV_PRIME
    return h


def fnv1a64(bytes word):
    cdef const unsigned char* p = <const unsigned char*> word
    return _fnv(p, len(word))


def count_tokens(const unsigned char[::1] data):
    cdef Py_ssize_t n = data.shape[0]
    cdef Py_ssize_t i = 0, start
    cdef dict counts = {}
    cdef object word
    cdef const unsigned char* base
    if n == 0:
        return counts
    base = &data[0]
    while i < n:
        while i < n and _is_space(base[i]):
            i += 1
        if i >= n:
            break
        start = i
        while i < n and not _is_space(base[i]):
            i += 1
        word = PyBytes_FromStringAndSize(<const char*> (base + start), i - start)
        counts[word] = counts.get(word, 0) + 1
    return counts


def partition_counts(dict counts, Py_ssize_t n_partitions):
    cdef list parts = [{} for _ in range(n_partitions)]
    cdef bytes word
    cdef const unsigned char* p
    for word, c in counts.items():
        p = <const unsigned char*> word
        (<dict> parts[_fnv(p, len(word)) % n_partitions])[word] = c
    return parts


def kmeans_assign(const double[::1] points, Py_ssize_t dim, const double[::1] centroids):
    cdef Py_ssize_t n = points.shape[0] // dim if dim else 0
    cdef Py_ssize_t k = centroids.shape[0] // dim if dim else 0
    cdef Py_ssize_t i, c, j, best, base, cb
    cdef double d, diff, best_d, sse = 0.0
    cdef double* sums
    cdef Py_ssize_t* cnt
    if k == 0 and n:
        raise ValueError("no centroids")
    sums = <double*> calloc(k * dim + 1, sizeof(double))
    cnt = <Py_ssize_t*> calloc(k + 1, sizeof(Py_ssize_t))
    if sums == NULL or cnt == NULL:
        free(sums)
        free(cnt)
        raise MemoryError()
    try:
        for i in range(n):
            base = i * dim
            best = -1
            best_d = 0.0
            for c in range(k):
                cb = c * dim
                d = 0.0
                for j in range(dim):
                    diff = points[base + j] - centroids[cb + j]
                    d += diff * diff
                if best < 0 or d < best_d:
                    best = c
                    best_d = d
            cb = best * dim
            for j in range(dim):
                sums[cb + j] += points[base + j]
            cnt[best] += 1
            sse += best_d
        return [sums[j] for j in range(k * dim)], [cnt[c] for c in range(k)], sse
    finally:
        free(sums)
        free(cnt)
