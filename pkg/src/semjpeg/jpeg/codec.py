"""Baseline sequential-DCT JPEG (JFIF) encoder and decoder.

The encoder emits exactly SOI, APP0, DQT, SOF0, DHT, SOS, EOI with 4:2:0
chroma subsampling and the Annex K Huffman tables. Entropy coding is
vectorized with numpy; decoding walks the Huffman stream in Python with
16-bit lookup tables.

The decoder reconstructs 4:2:0 and 4:2:2 chroma with the same triangular
("fancy") upsampling and fixed-point YCbCr->RGB conversion as the IJG
library, so its output tracks common off-the-shelf decoders to within the
rounding latitude of the IDCT.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .dct import fdct8x8, idct8x8_islow
from .tables import (AC_CHROMA, AC_LUMA, DC_CHROMA, DC_LUMA, UNZIGZAG, ZIGZAG, code_arrays,
                     quant_tables_for_quality)

SOI, EOI, SOS, DQT, DHT, DRI = 0xD8, 0xD9, 0xDA, 0xDB, 0xC4, 0xDD
SOF0, SOF1, APP0, COM = 0xC0, 0xC1, 0xE0, 0xFE
RST0, RST7 = 0xD0, 0xD7
_UNSUPPORTED_SOF = set(range(0xC2, 0xD0)) - {DHT, 0xC8, 0xCC}


class JpegError(ValueError):
    """Malformed or unsupported stream; ``offset`` is the byte position of the fault."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


# ---------------------------------------------------------------- encoder

_BITLEN = np.array([int(i).bit_length() for i in range(1 << 12)], dtype=np.int64)


def rgb_to_ycbcr(rgb: np.ndarray) -> np.ndarray:
    """JFIF (BT.601 full range) conversion; returns float (H, W, 3)."""
    rgb = np.asarray(rgb, dtype=np.float64)
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    y = 0.299 * r + 0.587 * g + 0.114 * b
    cb = -0.168735892 * r - 0.331264108 * g + 0.5 * b + 128.0
    cr = 0.5 * r - 0.418687589 * g - 0.081312411 * b + 128.0
    return np.stack([y, cb, cr], axis=-1)


def _pad_to(plane: np.ndarray, mh: int, mw: int) -> np.ndarray:
    h, w = plane.shape
    return np.pad(plane, ((0, -h % mh), (0, -w % mw)), mode="edge")


def _to_blocks(plane: np.ndarray) -> np.ndarray:
    h, w = plane.shape
    return plane.reshape(h // 8, 8, w // 8, 8).swapaxes(1, 2)


def _from_blocks(blocks: np.ndarray) -> np.ndarray:
    bh, bw = blocks.shape[:2]
    return blocks.swapaxes(1, 2).reshape(bh * 8, bw * 8)


def _quantize(plane: np.ndarray, table: np.ndarray) -> np.ndarray:
    """Level-shift, DCT and quantize a plane whose dims are multiples of 8.

    Returns (bh, bw, 64) integer coefficients in zigzag order.
    """
    coefs = fdct8x8(_to_blocks(plane - 128.0)) / table
    q = (np.sign(coefs) * np.floor(np.abs(coefs) + 0.5)).astype(np.int64)
    bh, bw = q.shape[:2]
    return q.reshape(bh, bw, 64)[..., ZIGZAG]


def _magnitude(values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(size category, appended bits) for signed coefficient values."""
    size = _BITLEN[np.abs(values)]
    extra = np.where(values >= 0, values, values + (1 << size) - 1)
    return size, extra


def _build_scan(coefs: np.ndarray, comp: np.ndarray, table_of_comp: list[int]) -> bytes:
    """Entropy-coded segment for blocks in scan order, byte-stuffed, 1-padded."""
    nb = coefs.shape[0]
    table = np.asarray(table_of_comp)[comp]
    dc_code = np.stack([code_arrays(*DC_LUMA)[0], code_arrays(*DC_CHROMA)[0]])
    dc_len = np.stack([code_arrays(*DC_LUMA)[1], code_arrays(*DC_CHROMA)[1]])
    ac_code = np.stack([code_arrays(*AC_LUMA)[0], code_arrays(*AC_CHROMA)[0]])
    ac_len = np.stack([code_arrays(*AC_LUMA)[1], code_arrays(*AC_CHROMA)[1]])

    # DC differences against the previous block of the same component
    dc = coefs[:, 0]
    diff = np.empty(nb, dtype=np.int64)
    for c in np.unique(comp):
        sel = np.flatnonzero(comp == c)
        diff[sel] = np.diff(dc[sel], prepend=0)
    size, extra = _magnitude(diff)
    keys = [np.arange(nb, dtype=np.int64) * 66 * 4]
    vals = [(dc_code[table, size] << size) | extra]
    lens = [dc_len[table, size] + size]

    ac = coefs[:, 1:]
    rows, cols = np.nonzero(ac)
    k = cols + 1
    prev = np.zeros_like(k)
    if len(k):
        prev[1:] = np.where(rows[1:] == rows[:-1], k[:-1], 0)
    run = k - prev - 1
    zrl = run // 16
    size, extra = _magnitude(ac[rows, cols])
    sym = ((run % 16) << 4) | size
    t = table[rows]
    keys.append(((rows * 66 + k) * 4) + zrl)
    vals.append((ac_code[t, sym] << size) | extra)
    lens.append(ac_len[t, sym] + size)

    if zrl.any():
        idx = np.repeat(np.arange(len(k)), zrl)
        sub = np.arange(len(idx)) - np.repeat(np.cumsum(zrl) - zrl, zrl)
        tz = table[rows[idx]]
        keys.append((rows[idx] * 66 + k[idx]) * 4 + sub)
        vals.append(ac_code[tz, 0xF0])
        lens.append(ac_len[tz, 0xF0])

    last = np.zeros(nb, dtype=np.int64)
    if len(k):
        last[rows] = k  # rows ascending, so the final write per row is its last nonzero
    eob = np.flatnonzero(last < 63)
    keys.append((eob * 66 + 64) * 4)
    vals.append(ac_code[table[eob], 0x00])
    lens.append(ac_len[table[eob], 0x00])

    order = np.argsort(np.concatenate(keys), kind="stable")
    values = np.concatenate(vals)[order]
    lengths = np.concatenate(lens)[order]
    return _pack_bits(values, lengths)


def _pack_bits(values: np.ndarray, lengths: np.ndarray) -> bytes:
    total = int(lengths.sum())
    starts = np.cumsum(lengths) - lengths
    owner = np.repeat(np.arange(len(lengths)), lengths)
    within = np.arange(total) - starts[owner]
    bits = (values[owner] >> (lengths[owner] - 1 - within)) & 1
    bits = np.concatenate([bits, np.ones(-total % 8, dtype=np.int64)]).astype(np.uint8)
    packed = np.packbits(bits)
    ff = np.flatnonzero(packed == 0xFF)
    return np.insert(packed, ff + 1, 0).tobytes()


def _segment(marker: int, payload: bytes) -> bytes:
    return struct.pack(">BBH", 0xFF, marker, len(payload) + 2) + payload


def _dht_payload() -> bytes:
    out = b""
    for cls, ident, (bits, vals) in ((0, 0, DC_LUMA), (1, 0, AC_LUMA), (0, 1, DC_CHROMA), (1, 1, AC_CHROMA)):
        out += bytes([(cls << 4) | ident]) + bytes(bits) + bytes(vals)
    return out


def encode(image: np.ndarray, quality: int) -> bytes:
    """Encode an (H, W, 3) RGB or (H, W) grayscale uint8 image as baseline JFIF."""
    image = np.asarray(image)
    if image.ndim not in (2, 3) or (image.ndim == 3 and image.shape[2] != 3):
        raise ValueError(f"expected (H, W, 3) or (H, W) image, got shape {image.shape}")
    height, width = image.shape[:2]
    if height < 1 or width < 1:
        raise ValueError(f"image dimensions must be positive, got {width}x{height}")
    if height > 0xFFFF or width > 0xFFFF:
        raise ValueError(f"image dimensions {width}x{height} exceed JPEG limits")
    luma_q, chroma_q = quant_tables_for_quality(quality)

    if image.ndim == 2:
        y = _pad_to(image.astype(np.float64), 8, 8)
        qy = _quantize(y, luma_q)
        coefs = qy.reshape(-1, 64)
        comp = np.zeros(len(coefs), dtype=np.int64)
        comps = [(1, 1, 1, 0)]
        tables_used = [luma_q]
    else:
        ycc = rgb_to_ycbcr(image)
        y = _pad_to(ycc[..., 0], 16, 16)
        chroma = [_pad_to(ycc[..., i], 16, 16) for i in (1, 2)]
        chroma = [c.reshape(c.shape[0] // 2, 2, c.shape[1] // 2, 2).mean(axis=(1, 3)) for c in chroma]
        qy = _quantize(y, luma_q)
        qcb, qcr = (_quantize(c, chroma_q) for c in chroma)
        my, mx = qcb.shape[:2]
        # MCU: Y00 Y01 Y10 Y11 Cb Cr
        ymcu = qy.reshape(my, 2, mx, 2, 64).transpose(0, 2, 1, 3, 4).reshape(my, mx, 4, 64)
        mcu = np.concatenate([ymcu, qcb[:, :, None], qcr[:, :, None]], axis=2)
        coefs = mcu.reshape(-1, 64)
        comp = np.tile(np.array([0, 0, 0, 0, 1, 2]), my * mx)
        comps = [(1, 2, 2, 0), (2, 1, 1, 1), (3, 1, 1, 1)]
        tables_used = [luma_q, chroma_q]

    scan = _build_scan(coefs, comp, [c[3] for c in comps])
    out = bytearray(b"\xff\xd8")
    out += _segment(APP0, b"JFIF\x00" + struct.pack(">BBBHHBB", 1, 1, 0, 1, 1, 0, 0))
    out += _segment(DQT, b"".join(bytes([i]) + bytes(t.reshape(-1)[ZIGZAG].astype(np.uint8))
                                  for i, t in enumerate(tables_used)))
    sof = struct.pack(">BHHB", 8, height, width, len(comps))
    sof += b"".join(bytes([cid, (h << 4) | v, tq]) for cid, h, v, tq in comps)
    out += _segment(SOF0, sof)
    out += _segment(DHT, _dht_payload())
    sos = bytes([len(comps)]) + b"".join(bytes([cid, (tq << 4) | tq]) for cid, _, _, tq in comps) + b"\x00\x3f\x00"
    out += _segment(SOS, sos)
    out += scan
    out += b"\xff\xd9"
    return bytes(out)


# ---------------------------------------------------------------- decoder

@dataclass
class _Component:
    cid: int
    h: int
    v: int
    tq: int
    td: int = 0
    ta: int = 0
    coefs: np.ndarray | None = field(default=None, repr=False)


@dataclass
class _Frame:
    height: int
    width: int
    components: list[_Component]

    @property
    def hmax(self) -> int:
        return max(c.h for c in self.components)

    @property
    def vmax(self) -> int:
        return max(c.v for c in self.components)

    @property
    def mcus(self) -> tuple[int, int]:
        return -(-self.height // (8 * self.vmax)), -(-self.width // (8 * self.hmax))

    def comp_size(self, c: _Component) -> tuple[int, int]:
        return -(-self.height * c.v // self.vmax), -(-self.width * c.h // self.hmax)


def _lookup_table(bits: list[int], values: list[int], offset: int) -> list[int]:
    """65536-entry list: peeked 16 bits -> (code length << 8) | symbol, 0 if invalid."""
    lut = [0] * 65536
    code = 0
    k = 0
    for length in range(1, 17):
        for _ in range(bits[length - 1]):
            if code >= (1 << length):
                raise JpegError("Huffman table has too many codes", offset)
            lo = code << (16 - length)
            hi = (code + 1) << (16 - length)
            lut[lo:hi] = [(length << 8) | values[k]] * (hi - lo)
            code += 1
            k += 1
        code <<= 1
    return lut


def parse_markers(data: bytes) -> list[tuple[int, int]]:
    """(marker, offset) for every marker segment outside entropy-coded data."""
    found = []
    _walk(data, found)
    return found


def _walk(data: bytes, found: list | None = None) -> np.ndarray:
    n = len(data)
    if n < 2 or data[0] != 0xFF or data[1] != SOI:
        raise JpegError("missing SOI marker", 0)
    if found is not None:
        found.append((SOI, 0))
    pos = 2
    qtables: dict[int, np.ndarray] = {}
    dc_luts: dict[int, list[int]] = {}
    ac_luts: dict[int, list[int]] = {}
    frame: _Frame | None = None
    restart = 0
    scans = 0
    while True:
        if pos >= n:
            raise JpegError("stream ended before EOI", pos)
        if data[pos] != 0xFF:
            raise JpegError(f"expected marker, found byte 0x{data[pos]:02X}", pos)
        while pos < n and data[pos] == 0xFF:
            pos += 1
        if pos >= n:
            raise JpegError("stream ended inside marker", pos)
        marker = data[pos]
        mpos = pos - 1
        pos += 1
        if found is not None:
            found.append((marker, mpos))
        if marker == EOI:
            break
        if RST0 <= marker <= RST7 or marker == 0x01:
            continue
        if marker == 0x00 or marker == SOI:
            raise JpegError(f"unexpected marker 0xFF{marker:02X}", mpos)
        if pos + 2 > n:
            raise JpegError("truncated marker length", pos)
        (length,) = struct.unpack_from(">H", data, pos)
        if length < 2 or pos + length > n:
            raise JpegError(f"marker 0xFF{marker:02X} segment of length {length} runs past end of stream", pos)
        seg = data[pos + 2:pos + length]
        seg_off = pos + 2
        pos += length
        if marker == DQT:
            i = 0
            while i < len(seg):
                pq, tq = seg[i] >> 4, seg[i] & 15
                width = 2 if pq else 1
                if i + 1 + 64 * width > len(seg):
                    raise JpegError("truncated DQT table", seg_off + i)
                fmt = ">64H" if pq else "64B"
                qtables[tq] = np.array(struct.unpack_from(fmt, seg, i + 1), dtype=np.int64)
                i += 1 + 64 * width
        elif marker == DHT:
            i = 0
            while i < len(seg):
                if i + 17 > len(seg):
                    raise JpegError("truncated DHT table", seg_off + i)
                tc, th = seg[i] >> 4, seg[i] & 15
                bits = list(seg[i + 1:i + 17])
                count = sum(bits)
                if i + 17 + count > len(seg):
                    raise JpegError("truncated DHT symbols", seg_off + i)
                values = list(seg[i + 17:i + 17 + count])
                lut = _lookup_table(bits, values, seg_off + i)
                (ac_luts if tc else dc_luts)[th] = lut
                i += 17 + count
        elif marker in (SOF0, SOF1):
            if len(seg) < 6:
                raise JpegError("truncated SOF", seg_off)
            precision, height, width, ncomp = struct.unpack_from(">BHHB", seg, 0)
            if precision != 8:
                raise JpegError(f"unsupported sample precision {precision}", seg_off)
            if height == 0 or width == 0:
                raise JpegError("zero image dimension (DNL not supported)", seg_off + 1)
            if len(seg) < 6 + 3 * ncomp or ncomp not in (1, 3):
                raise JpegError(f"bad component count {ncomp}", seg_off + 5)
            comps = []
            for k in range(ncomp):
                cid, hv, tq = seg[6 + 3 * k:9 + 3 * k]
                h, v = hv >> 4, hv & 15
                if not (1 <= h <= 4 and 1 <= v <= 4):
                    raise JpegError(f"bad sampling factors {h}x{v}", seg_off + 7 + 3 * k)
                comps.append(_Component(cid, h, v, tq))
            frame = _Frame(height, width, comps)
            my, mx = frame.mcus
            for c in comps:
                c.coefs = np.zeros((my * c.v, mx * c.h, 64), dtype=np.int64)
        elif marker in _UNSUPPORTED_SOF:
            raise JpegError(f"unsupported frame type 0xFF{marker:02X} (baseline only)", mpos)
        elif marker == DRI:
            if len(seg) < 2:
                raise JpegError("truncated DRI", seg_off)
            (restart,) = struct.unpack_from(">H", seg, 0)
        elif marker == SOS:
            if frame is None:
                raise JpegError("SOS before SOF", mpos)
            if not seg or len(seg) < 1 + 2 * seg[0] + 3:
                raise JpegError("truncated SOS header", seg_off)
            scan_comps = []
            for k in range(seg[0]):
                cid, tt = seg[1 + 2 * k], seg[2 + 2 * k]
                match = [c for c in frame.components if c.cid == cid]
                if not match:
                    raise JpegError(f"scan references unknown component {cid}", seg_off + 1 + 2 * k)
                match[0].td, match[0].ta = tt >> 4, tt & 15
                scan_comps.append(match[0])
            end = _scan_end(data, pos)
            _decode_scan(data, pos, end, frame, scan_comps, dc_luts, ac_luts, restart)
            scans += 1
            pos = end
        # APPn, COM and other known-length segments are skipped
    if found is not None:
        return None
    if frame is None or not scans:
        raise JpegError("no frame or scan before EOI", pos)
    return _reconstruct(frame, qtables, pos)


def _scan_end(data: bytes, pos: int) -> int:
    n = len(data)
    while True:
        j = data.find(b"\xff", pos)
        if j < 0 or j + 1 >= n:
            raise JpegError("entropy-coded data runs past end of stream", n)
        nxt = data[j + 1]
        if nxt == 0x00 or RST0 <= nxt <= RST7 or nxt == 0xFF:
            pos = j + 1 if nxt == 0xFF else j + 2
            continue
        return j


def _decode_scan(data, start, end, frame, comps, dc_luts, ac_luts, restart):
    # split into restart intervals (marker bytes removed), then unstuff
    intervals = []
    seg_start = start
    i = start
    while True:
        j = data.find(b"\xff", i, end)
        if j < 0:
            break
        if RST0 <= data[j + 1] <= RST7:
            intervals.append((seg_start, data[seg_start:j]))
            seg_start = j + 2
        i = j + 2
    intervals.append((seg_start, data[seg_start:end]))

    tables = []
    for c in comps:
        if c.td not in dc_luts or c.ta not in ac_luts:
            raise JpegError(f"component {c.cid} uses an undefined Huffman table", start)
        tables.append((dc_luts[c.td], ac_luts[c.ta], c.coefs.reshape(-1, 64), c.coefs.shape[1]))

    if len(comps) == 1:
        c = comps[0]
        ch, cw = frame.comp_size(c)
        by, bx = -(-ch // 8), -(-cw // 8)
        width = c.coefs.shape[1]
        units = [[(0, r * width + col)] for r in range(by) for col in range(bx)]
    else:
        my, mx = frame.mcus
        units = []
        for r in range(my):
            for col in range(mx):
                unit = []
                for ci, c in enumerate(comps):
                    width = c.coefs.shape[1]
                    for v in range(c.v):
                        for h in range(c.h):
                            unit.append((ci, (r * c.v + v) * width + col * c.h + h))
                units.append(unit)

    per = restart if restart else len(units)
    chunks = [units[k:k + per] for k in range(0, len(units), per)]
    if len(chunks) > len(intervals):
        raise JpegError("missing restart marker", end)
    for (offset, raw), chunk in zip(intervals, chunks):
        _decode_interval(raw.replace(b"\xff\x00", b"\xff"), offset, chunk, tables)


def _decode_interval(seg: bytes, offset: int, units, tables) -> None:
    data = seg + b"\x00\x00\x00\x00"
    limit = len(data)
    acc = 0
    nbits = 0
    i = 0
    preds = [0] * len(tables)
    try:
        for unit in units:
            for ci, b in unit:
                dc_lut, ac_lut, out, _ = tables[ci]
                while nbits < 16:
                    acc = ((acc & 0xFFFFFF) << 8) | data[i]
                    i += 1
                    nbits += 8
                e = dc_lut[(acc >> (nbits - 16)) & 0xFFFF]
                if not e:
                    raise JpegError("invalid DC Huffman code", offset + min(i, len(seg)))
                nbits -= e >> 8
                s = e & 0xFF
                if s:
                    while nbits < s:
                        acc = ((acc & 0xFFFFFF) << 8) | data[i]
                        i += 1
                        nbits += 8
                    val = (acc >> (nbits - s)) & ((1 << s) - 1)
                    nbits -= s
                    if val < (1 << (s - 1)):
                        val -= (1 << s) - 1
                    preds[ci] += val
                row = out[b]
                row[0] = preds[ci]
                k = 1
                while k < 64:
                    while nbits < 16:
                        acc = ((acc & 0xFFFFFF) << 8) | data[i]
                        i += 1
                        nbits += 8
                    e = ac_lut[(acc >> (nbits - 16)) & 0xFFFF]
                    if not e:
                        raise JpegError("invalid AC Huffman code", offset + min(i, len(seg)))
                    nbits -= e >> 8
                    rs = e & 0xFF
                    s = rs & 15
                    if not s:
                        if rs == 0xF0:
                            k += 16
                            continue
                        break
                    k += rs >> 4
                    if k > 63:
                        raise JpegError("AC coefficient index overrun", offset + min(i, len(seg)))
                    while nbits < s:
                        acc = ((acc & 0xFFFFFF) << 8) | data[i]
                        i += 1
                        nbits += 8
                    val = (acc >> (nbits - s)) & ((1 << s) - 1)
                    nbits -= s
                    if val < (1 << (s - 1)):
                        val -= (1 << s) - 1
                    row[k] = val
                    k += 1
                if k > 64:
                    raise JpegError("zero run past end of block", offset + min(i, len(seg)))
    except IndexError:
        raise JpegError("Huffman data overrun", offset + len(seg)) from None
    if i * 8 - nbits > len(seg) * 8:
        raise JpegError("Huffman data overrun", offset + len(seg))


# IJG fixed-point YCbCr -> RGB tables
_SCALE = 16
_HALF = 1 << (_SCALE - 1)


def _fix(x: float) -> int:
    return int(x * (1 << _SCALE) + 0.5)


_X = np.arange(256, dtype=np.int64) - 128
_CR_R = (_fix(1.40200) * _X + _HALF) >> _SCALE
_CB_B = (_fix(1.77200) * _X + _HALF) >> _SCALE
_CR_G = -_fix(0.71414) * _X
_CB_G = -_fix(0.34414) * _X + _HALF


def ycbcr_to_rgb(y: np.ndarray, cb: np.ndarray, cr: np.ndarray) -> np.ndarray:
    y = y.astype(np.int64)
    r = y + _CR_R[cr]
    g = y + ((_CB_G[cb] + _CR_G[cr]) >> _SCALE)
    b = y + _CB_B[cb]
    return np.clip(np.stack([r, g, b], axis=-1), 0, 255).astype(np.uint8)


def _fancy_h2(rows: np.ndarray, bias_even: int, bias_odd: int, shift: int, weight_edge: int) -> np.ndarray:
    """Horizontal triangular 2x upsample of (already vertically weighted) rows."""
    h, w = rows.shape
    out = np.empty((h, 2 * w), dtype=np.int64)
    left = np.concatenate([rows[:, :1], rows[:, :-1]], axis=1)
    right = np.concatenate([rows[:, 1:], rows[:, -1:]], axis=1)
    out[:, 0::2] = (rows * 3 + left + bias_even) >> shift
    out[:, 1::2] = (rows * 3 + right + bias_odd) >> shift
    out[:, 0] = (rows[:, 0] * weight_edge + bias_even) >> shift
    out[:, -1] = (rows[:, -1] * weight_edge + bias_odd) >> shift
    return out


def upsample_h2v2(plane: np.ndarray) -> np.ndarray:
    p = plane.astype(np.int64)
    above = np.concatenate([p[:1], p[:-1]], axis=0)
    below = np.concatenate([p[1:], p[-1:]], axis=0)
    upper = _fancy_h2(p * 3 + above, 8, 7, 4, 4)
    lower = _fancy_h2(p * 3 + below, 8, 7, 4, 4)
    out = np.empty((2 * p.shape[0], upper.shape[1]), dtype=np.int64)
    out[0::2] = upper
    out[1::2] = lower
    return out


def upsample_h2v1(plane: np.ndarray) -> np.ndarray:
    p = plane.astype(np.int64)
    out = _fancy_h2(p, 1, 2, 2, 4)
    out[:, 0] = p[:, 0]
    out[:, -1] = p[:, -1]
    return out


def _reconstruct(frame: _Frame, qtables: dict[int, np.ndarray], offset: int) -> np.ndarray:
    planes = []
    for c in frame.components:
        if c.tq not in qtables:
            raise JpegError(f"component {c.cid} uses undefined quantization table {c.tq}", offset)
        zz = c.coefs * qtables[c.tq]
        plane = idct8x8_islow(zz[..., UNZIGZAG].reshape(*zz.shape[:2], 8, 8))
        ch, cw = frame.comp_size(c)
        plane = _from_blocks(plane)[:ch, :cw]
        fy, fx = frame.vmax // c.v, frame.hmax // c.h
        if (fy, fx) == (2, 2) and frame.vmax * c.v == 2:
            plane = upsample_h2v2(plane)
        elif (fy, fx) == (1, 2):
            plane = upsample_h2v1(plane)
        elif (fy, fx) != (1, 1):
            plane = np.repeat(np.repeat(plane, fy, axis=0), fx, axis=1)
        planes.append(plane[:frame.height, :frame.width])
    if len(planes) == 1:
        return planes[0].astype(np.uint8)
    return ycbcr_to_rgb(*planes)


def decode(data: bytes) -> np.ndarray:
    """Decode a baseline JFIF stream to (H, W, 3) RGB or (H, W) gray uint8."""
    return _walk(bytes(data))
