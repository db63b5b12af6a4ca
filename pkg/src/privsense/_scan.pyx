# cython: language_level=3, boundscheck=False, wraparound=False, initializedcheck=False
"""Compiled multi-pattern substring scan.

One pass over the haystack. Needles of length >= 2 are bucketed by their
first two bytes; at each position the matching bucket's candidates are
verified with memcmp. Length-1 needles use a per-byte bucket. Matches the
pure fallback in privsense.leakscan exactly: first offset per needle,
empty needles never reported.
"""

from libc.stdlib cimport calloc, free, malloc
from libc.string cimport memcmp


def scan(haystack: bytes, needles):
    cdef const unsigned char[::1] hay = haystack if len(haystack) else b"\x00"
    cdef Py_ssize_t n = len(haystack)
    cdef Py_ssize_t m = len(needles)
    if m == 0 or n == 0:
        return []

    cdef bytes cat_py = b"".join(needles)
    cdef const unsigned char[::1] cat = cat_py if len(cat_py) else b"\x00"

    cdef Py_ssize_t *noff = <Py_ssize_t *> malloc(m * sizeof(Py_ssize_t))
    cdef Py_ssize_t *nlen = <Py_ssize_t *> malloc(m * sizeof(Py_ssize_t))
    cdef Py_ssize_t *found = <Py_ssize_t *> malloc(m * sizeof(Py_ssize_t))
    # two-byte buckets: counts -> prefix offsets -> flat item arrays
    cdef Py_ssize_t *bucket_start = <Py_ssize_t *> calloc(65537, sizeof(Py_ssize_t))
    cdef Py_ssize_t *byte_start = <Py_ssize_t *> calloc(257, sizeof(Py_ssize_t))
    cdef Py_ssize_t *bucket_items = NULL
    cdef Py_ssize_t *byte_items = NULL
    cdef Py_ssize_t *cursor = NULL
    cdef Py_ssize_t *bcursor = NULL

    if noff is NULL or nlen is NULL or found is NULL or bucket_start is NULL or byte_start is NULL:
        free(noff); free(nlen); free(found); free(bucket_start); free(byte_start)
        raise MemoryError()

    cdef Py_ssize_t i, off = 0, length, wide = 0, narrow = 0, searchable = 0
    cdef int key
    try:
        for i in range(m):
            length = len(needles[i])
            noff[i] = off
            nlen[i] = length
            found[i] = -1
            off += length
            if length >= 2:
                key = (cat[noff[i]] << 8) | cat[noff[i] + 1]
                bucket_start[key + 1] += 1
                wide += 1
            elif length == 1:
                byte_start[cat[noff[i]] + 1] += 1
                narrow += 1
        searchable = wide + narrow

        for key in range(1, 65537):
            bucket_start[key] += bucket_start[key - 1]
        for key in range(1, 257):
            byte_start[key] += byte_start[key - 1]

        bucket_items = <Py_ssize_t *> malloc((wide if wide else 1) * sizeof(Py_ssize_t))
        byte_items = <Py_ssize_t *> malloc((narrow if narrow else 1) * sizeof(Py_ssize_t))
        cursor = <Py_ssize_t *> malloc(65537 * sizeof(Py_ssize_t))
        bcursor = <Py_ssize_t *> malloc(257 * sizeof(Py_ssize_t))
        if bucket_items is NULL or byte_items is NULL or cursor is NULL or bcursor is NULL:
            raise MemoryError()

        for key in range(65537):
            cursor[key] = bucket_start[key]
        for key in range(257):
            bcursor[key] = byte_start[key]
        for i in range(m):
            if nlen[i] >= 2:
                key = (cat[noff[i]] << 8) | cat[noff[i] + 1]
                bucket_items[cursor[key]] = i
                cursor[key] += 1
            elif nlen[i] == 1:
                key = cat[noff[i]]
                byte_items[bcursor[key]] = i
                bcursor[key] += 1

        _scan_loop(hay, n, cat, noff, nlen, found, searchable,
                   bucket_start, bucket_items, byte_start, byte_items, narrow)

        hits = []
        for i in range(m):
            if found[i] >= 0:
                hits.append((i, found[i]))
        return hits
    finally:
        free(noff); free(nlen); free(found)
        free(bucket_start); free(bucket_items)
        free(byte_start); free(byte_items)
        free(cursor); free(bcursor)


cdef void _scan_loop(const unsigned char[::1] hay, Py_ssize_t n,
                     const unsigned char[::1] cat,
                     Py_ssize_t *noff, Py_ssize_t *nlen, Py_ssize_t *found,
                     Py_ssize_t searchable,
                     Py_ssize_t *bucket_start, Py_ssize_t *bucket_items,
                     Py_ssize_t *byte_start, Py_ssize_t *byte_items,
                     Py_ssize_t narrow) noexcept nogil:
    cdef Py_ssize_t pos, k, i, length, remaining = searchable
    cdef int key
    for pos in range(n):
        if remaining == 0:
            return
        if narrow:
            key = hay[pos]
            for k in range(byte_start[key], byte_start[key + 1]):
                i = byte_items[k]
                if found[i] < 0:
                    found[i] = pos
                    remaining -= 1
        if pos + 1 < n:
            key = (hay[pos] << 8) | hay[pos + 1]
            for k in range(bucket_start[key], bucket_start[key + 1]):
                i = bucket_items[k]
                if found[i] >= 0:
                    continue
                length = nlen[i]
                if pos + length <= n and memcmp(&hay[pos], &cat[noff[i]], length) == 0:
                    found[i] = pos
                    remaining -= 1
