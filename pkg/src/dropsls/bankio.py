"""Versioned controller-bank files.

Binary layout::

    b"DSLSBANK" | uint32 version | uint64 header length | JSON header | float64 blocks

Blocks are little-endian, row-major, in the order listed under
``header["blocks"]``: the plant ``A`` and ``B`` first, then ``phiX`` and
``phiU`` of every stored column.  The text variant carries the same header
on its second line and one line of 17-significant-digit values per array.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .dropout import CommTopology, DropoutDistribution
from .operators import ColumnResponse, SystemModel
from .synthesis import ControllerBank

MAGIC = b"DSLSBANK"
TEXT_MAGIC = "DSLSBANK-TEXT"
VERSION = 1


def _header(bank: ControllerBank) -> tuple[dict, list]:
    sys, dist = bank.sys, bank.dist
    blocks = [{"kind": "A", "shape": list(sys.A.shape)}, {"kind": "B", "shape": list(sys.B.shape)}]
    arrays = [sys.A, sys.B]
    for i, col in sorted(bank.offline.items()):
        blocks.append({"kind": "offline", "owner": i, "support": sorted(col.support),
                       "shape_x": list(col.phiX.shape), "shape_u": list(col.phiU.shape)})
        arrays += [col.phiX, col.phiU]
    for (i, S), col in sorted(bank.online.items(), key=lambda kv: (kv[0][0], dist.index_of(*kv[0]))):
        blocks.append({"kind": "online", "owner": i, "pattern": dist.index_of(i, S),
                       "support": sorted(col.support),
                       "shape_x": list(col.phiX.shape), "shape_u": list(col.phiU.shape)})
        arrays += [col.phiX, col.phiU]
    header = {
        "format": "dropsls-bank",
        "version": VERSION,
        "n": sys.n, "p": sys.p, "N": sys.N, "T": bank.T,
        "state_partition": [list(r) for r in sys.state_partition],
        "input_partition": [list(r) for r in sys.input_partition],
        "out_max": [sorted(s) for s in dist.topology.out_max],
        "out_min": [sorted(s) for s in dist.topology.out_min],
        "patterns": [[[sorted(S), q] for S, q in dist.support[i]] for i in range(dist.N)],
        "lambda": bank.lam, "bound": bank.bound,
        "worst_residual": bank.worst_residual, "certified": bank.certified,
        "blocks": blocks,
    }
    return header, arrays


def _rebuild(header, arrays) -> ControllerBank:
    if header.get("version") != VERSION:
        raise ValueError(f"unsupported bank version {header.get('version')!r}")
    A, B = arrays[0], arrays[1]
    sys = SystemModel(A, B, header["state_partition"], header["input_partition"])
    topo = CommTopology(header["out_max"], header["out_min"])
    dist = DropoutDistribution(topo, tuple(
        tuple((frozenset(S), float(q)) for S, q in pmf) for pmf in header["patterns"]))
    bank = ControllerBank(sys, dist, int(header["T"]), lam=float(header["lambda"]),
                          bound=float(header["bound"]), worst_residual=float(header["worst_residual"]),
                          certified=bool(header["certified"]))
    k = 2
    for blk in header["blocks"][2:]:
        phiX, phiU = arrays[k], arrays[k + 1]
        k += 2
        col = ColumnResponse(blk["owner"], phiX, phiU, frozenset(blk["support"]))
        if blk["kind"] == "offline":
            bank.offline[blk["owner"]] = col
        else:
            S = dist.patterns(blk["owner"])[blk["pattern"]]
            bank.online[(blk["owner"], S)] = col
    return bank


def _shapes(header):
    out = []
    for blk in header["blocks"]:
        if "shape" in blk:
            out.append(tuple(blk["shape"]))
        else:
            out += [tuple(blk["shape_x"]), tuple(blk["shape_u"])]
    return out


def save_bank(bank: ControllerBank, path, text=False):
    header, arrays = _header(bank)
    path = Path(path)
    if text:
        lines = [f"{TEXT_MAGIC} {VERSION}", json.dumps(header, sort_keys=True)]
        for a in arrays:
            lines.append(" ".join(format(float(v), ".17g") for v in np.ravel(a)))
        path.write_text("\n".join(lines) + "\n")
        return path
    hbytes = json.dumps(header, sort_keys=True).encode()
    with path.open("wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IQ", VERSION, len(hbytes)))
        fh.write(hbytes)
        for a in arrays:
            fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())
    return path


def load_bank(path) -> ControllerBank:
    raw = Path(path).read_bytes()
    # the text magic shares the binary prefix, so test it first
    if raw.startswith(MAGIC) and not raw.startswith(TEXT_MAGIC.encode()):
        version, hlen = struct.unpack_from("<IQ", raw, len(MAGIC))
        if version != VERSION:
            raise ValueError(f"unsupported bank version {version}")
        off = len(MAGIC) + struct.calcsize("<IQ")
        header = json.loads(raw[off: off + hlen])
        off += hlen
        arrays = []
        for shape in _shapes(header):
            count = int(np.prod(shape))
            arrays.append(np.frombuffer(raw, dtype="<f8", count=count, offset=off).reshape(shape).copy())
            off += 8 * count
        if off != len(raw):
            raise ValueError(f"bank file has {len(raw) - off} trailing bytes")
        return _rebuild(header, arrays)
    text = raw.decode()
    lines = text.splitlines()
    if not lines or not lines[0].startswith(TEXT_MAGIC):
        raise ValueError(f"{path} is not a bank file")
    header = json.loads(lines[1])
    shapes = _shapes(header)
    if len(lines) - 2 != len(shapes):
        raise ValueError(f"expected {len(shapes)} array lines, found {len(lines) - 2}")
    arrays = []
    for shape, line in zip(shapes, lines[2:]):
        vals = np.array([float(v) for v in line.split()], dtype=float)
        arrays.append(vals.reshape(shape))
    return _rebuild(header, arrays)
