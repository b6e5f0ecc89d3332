#!/usr/bin/env python3
"""Writes the checkpoint fixtures under tests/fixtures with an independent encoder."""

import pathlib
import struct
import sys

F64, F32, U8, U64, I64 = 0, 1, 2, 3, 4
CODES = {F64: "d", F32: "f", U8: "B", U64: "Q", I64: "q"}


def record(name, dtype, dims, values):
    raw = name.encode("utf-8")
    out = struct.pack("<I", len(raw)) + raw + struct.pack("<BB", dtype, len(dims))
    out += b"".join(struct.pack("<I", d) for d in dims)
    out += b"".join(struct.pack("<" + CODES[dtype], v) for v in values)
    return out


def golden():
    body = b"CDON" + struct.pack("<I", 1)
    body += record("meta/step", U64, [1], [1234567890123])
    body += record("meta/config", U8, [5], list(b"k = 1"))
    body += record("param/w", F64, [1, 2, 2, 3], [0.5, -1.25, 3.0e-300, 1.0 / 3.0, -0.0, 7.0,
                                                  2.0 ** -40, -123456.789, 1e300, 0.1, -2.5, 42.0])
    body += record("param/f", F32, [1, 1, 1, 3], [1.5, -0.25, 3.0])
    body += record("meta/offset", I64, [2], [-5, 9007199254740993])
    return body


def main():
    root = pathlib.Path(sys.argv[1]) if len(sys.argv) > 1 else pathlib.Path(__file__).parent.parent / "tests" / "fixtures"
    root.mkdir(parents=True, exist_ok=True)
    data = golden()
    (root / "golden.ckpt").write_bytes(data)
    (root / "bad_magic.ckpt").write_bytes(b"CDOM" + data[4:])
    (root / "truncated.ckpt").write_bytes(data[:-5])


if __name__ == "__main__":
    main()
