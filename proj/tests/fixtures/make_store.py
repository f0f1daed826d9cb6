#!/usr/bin/env python3
"""Writes embedding_store.bin: an independent writer for the criteria embedding store.

Values are chosen to be exactly representable at 32-bit:
    v(level, row, col) = 0.25 * (100 * level + 10 * row + col) - 8
"""
import struct
import sys
import zlib

D_LLM = 6
RECORDS = [("NCT00000001", 2), ("NCT00000002", 3), ("NCT00000003", 1)]


def value(level, row, col):
    return 0.25 * (100 * level + 10 * row + col) - 8.0


def record(n_c):
    body = struct.pack("<I", n_c)
    for level in range(4):
        for r in range(n_c):
            body += struct.pack("<%df" % D_LLM, *(value(level, r, c) for c in range(D_LLM)))
    return body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)


def main(path):
    header_size = 16 + sum(4 + len(i.encode()) + 8 for i, _ in RECORDS)
    records = [record(n) for _, n in RECORDS]
    out = b"CLDMEMB1" + struct.pack("<II", D_LLM, len(RECORDS))
    offset = header_size
    for (trial_id, _), rec in zip(RECORDS, records):
        raw = trial_id.encode()
        out += struct.pack("<I", len(raw)) + raw + struct.pack("<Q", offset)
        offset += len(rec)
    out += b"".join(records)
    with open(path, "wb") as f:
        f.write(out)


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else "embedding_store.bin")
