'''
LoRa CSS modulation, dechirping and FFT demodulation, plus the coding
chain standard LoRa puts in front of it (Hamming(8,4), diagonal
interleaving, Gray mapping, CRC-16).

All signal math is in normalized chip units: one sample per chip at the
LoRa bandwidth, so the chirp rate k = 2^SF/BW collapses to 1 and a
symbol is N = 2^SF samples long.

Sign convention: gen_upchirp uses a positive exponent so that
dechirp + DFT peaks at bin +s (not N - s).

Example:
    >>> params = LoraParams(sf=10)
    >>> rx = gen_upchirp(params, 513)
    >>> demod_fft(dechirp(rx, gen_downchirp(params)))[0]
    513
'''

import binascii
import logging
import math
from dataclasses import dataclass

import numpy as np

from errors import ConfigInvalid, FramingError, InvalidSymbol, LengthMismatch, PayloadTooLong


logger = logging.getLogger(__name__)

SF_MIN = 7
SF_MAX = 12
# SX1280 bandwidth class; only the time axis (chip duration) depends on it
DEFAULT_BW_HZ = 812.5e3
MAX_PAYLOAD_BYTES = 255
CRC_BYTES = 2
CODEWORD_BITS = 8


@dataclass(frozen=True)
class LoraParams:
    sf: int
    bw_hz: float = DEFAULT_BW_HZ
    f0: int = 0

    def __post_init__(self):
        if int(self.sf) != self.sf or not SF_MIN <= self.sf <= SF_MAX:
            raise ConfigInvalid(f'sf must be an integer in [{SF_MIN}, {SF_MAX}], got {self.sf}')
        if not self.bw_hz > 0:
            raise ConfigInvalid(f'bw_hz must be positive, got {self.bw_hz}')
        if not 0 <= self.f0 < self.n_chips:
            raise ConfigInvalid(f'f0 must be in [0, {self.n_chips}), got {self.f0}')

    @property
    def n_chips(self):
        return 1 << int(self.sf)

    @property
    def chip_time_s(self):
        return 1.0 / self.bw_hz

    @property
    def symbol_time_s(self):
        return self.n_chips / self.bw_hz


@dataclass(frozen=True, eq=False)
class CodedPacket:
    payload: bytes
    symbols: np.ndarray
    crc: int
    crc_symbols: np.ndarray

    @property
    def all_symbols(self):
        # on-air order: data block(s) then the CRC block
        return np.concatenate([self.symbols, self.crc_symbols])


@dataclass(frozen=True)
class DecodeResult:
    payload: bytes
    crc_ok: bool
    corrected: int
    detected: int


def _chirp_phase_index(params, values):
    # exact integer phase: 2*pi*((f0 + s)*n + n^2/2)/N == 2*pi*k/(2N)
    n = np.arange(params.n_chips, dtype=np.int64)
    values = np.asarray(values, dtype=np.int64)[..., None]
    return (2 * (params.f0 + values) * n + n * n) % (2 * params.n_chips)


def gen_upchirp(params, s):
    s = int(s)
    if not 0 <= s < params.n_chips:
        raise InvalidSymbol(f'symbol {s} out of range [0, {params.n_chips})')
    k = _chirp_phase_index(params, s)
    return np.exp(1j * np.pi * k / params.n_chips)


def gen_downchirp(params):
    return np.conj(gen_upchirp(params, 0))


def dechirp(rx, down):
    rx = np.asarray(rx)
    down = np.asarray(down)
    if rx.shape != down.shape:
        raise LengthMismatch(f'received buffer has {rx.shape[-1]} chips, downchirp has {down.shape[-1]}')
    return rx * down


def demod_fft(dechirped):
    magnitudes = np.abs(np.fft.fft(np.asarray(dechirped)))
    # np.argmax returns the lowest index on ties
    return int(np.argmax(magnitudes)), magnitudes


def modulate(symbols, params):
    symbols = np.asarray(symbols, dtype=np.int64)
    if symbols.size and (symbols.min() < 0 or symbols.max() >= params.n_chips):
        raise InvalidSymbol(f'symbols must be in [0, {params.n_chips})')
    k = _chirp_phase_index(params, symbols)
    return np.exp(1j * np.pi * k / params.n_chips).reshape(-1)


def demod_stream(rx, params):
    '''
    Standard demodulation of a symbol-aligned stream.
    Returns (symbols, peak magnitude per symbol).
    '''
    rx = np.asarray(rx)
    n = params.n_chips
    if rx.size % n:
        raise LengthMismatch(f'stream of {rx.size} samples is not a whole number of {n}-chip symbols')
    spectra = np.abs(np.fft.fft(rx.reshape(-1, n) * gen_downchirp(params), axis=1))
    symbols = np.argmax(spectra, axis=1)
    return symbols, spectra[np.arange(len(symbols)), symbols]


# ---------------------------------------------------------------------------
# coding chain

def gray(x):
    return x ^ (x >> 1)


def gray_inverse(g):
    b = g
    for shift in (1, 2, 4, 8):
        b = b ^ (b >> shift)
    return b


def _hamming84_codeword(nibble):
    d0, d1, d2, d3 = (nibble >> 3) & 1, (nibble >> 2) & 1, (nibble >> 1) & 1, nibble & 1
    p1 = d0 ^ d1 ^ d3
    p2 = d0 ^ d2 ^ d3
    p4 = d1 ^ d2 ^ d3
    bits = [p1, p2, d0, p4, d1, d2, d3]
    bits.append(sum(bits) % 2)
    value = 0
    for bit in bits:
        value = (value << 1) | bit
    return value


def _popcount8(values):
    return np.unpackbits(values.astype(np.uint8)[..., None], axis=-1).sum(axis=-1)


HAMMING84_ENCODE = np.array([_hamming84_codeword(d) for d in range(16)], dtype=np.uint8)
_distances = _popcount8(np.arange(256, dtype=np.uint8)[:, None] ^ HAMMING84_ENCODE[None, :])
# nearest codeword per received byte; distance 0 = clean, 1 = corrected, 2 = detected only
HAMMING84_DECODE = np.argmin(_distances, axis=1).astype(np.uint8)
HAMMING84_DISTANCE = _distances.min(axis=1)
del _distances


def n_data_symbols(payload_len, sf):
    return math.ceil(CODEWORD_BITS * 2 * payload_len / sf)


def n_crc_symbols(sf):
    return math.ceil(CODEWORD_BITS * 2 * CRC_BYTES / sf)


def crc16(payload):
    # CRC-16/CCITT-FALSE
    return binascii.crc_hqx(bytes(payload), 0xFFFF)


def _to_nibbles(data):
    raw = np.frombuffer(bytes(data), dtype=np.uint8)
    nibbles = np.empty(2 * raw.size, dtype=np.uint8)
    nibbles[0::2] = raw >> 4
    nibbles[1::2] = raw & 0x0F
    return nibbles


def _diagonal_index(sf):
    # symbol j, bit i <- codeword (i + j) % sf, bit j
    return (np.arange(sf)[None, :] + np.arange(CODEWORD_BITS)[:, None]) % sf, np.arange(CODEWORD_BITS)[:, None]


def _interleave(codewords, sf):
    bits = np.unpackbits(codewords.astype(np.uint8)[:, None], axis=1)
    n_full = len(codewords) // sf
    rows = []
    if n_full:
        rows_idx, cols = _diagonal_index(sf)
        blocks = bits[:n_full * sf].reshape(n_full, sf, CODEWORD_BITS)
        rows.append(blocks[:, rows_idx, cols].reshape(-1, sf))
    tail = bits[n_full * sf:]
    if len(tail):
        # short block: transpose so each codeword's bits spread over symbols
        flat = tail.T.reshape(-1)
        flat = np.concatenate([flat, np.zeros(-flat.size % sf, dtype=np.uint8)])
        rows.append(flat.reshape(-1, sf))
    if not rows:
        return np.zeros(0, dtype=np.int64)
    weights = 1 << np.arange(sf - 1, -1, -1, dtype=np.int64)
    return gray_inverse(np.concatenate(rows).astype(np.int64) @ weights)


def _deinterleave(symbols, n_codewords, sf):
    shifts = np.arange(sf - 1, -1, -1, dtype=np.int64)
    bits = ((gray(np.asarray(symbols, dtype=np.int64))[:, None] >> shifts) & 1).astype(np.uint8)
    n_full = n_codewords // sf
    codeword_bits = np.zeros((n_codewords, CODEWORD_BITS), dtype=np.uint8)
    if n_full:
        rows_idx, cols = _diagonal_index(sf)
        blocks = np.zeros((n_full, sf, CODEWORD_BITS), dtype=np.uint8)
        blocks[:, rows_idx, cols] = bits[:CODEWORD_BITS * n_full].reshape(n_full, CODEWORD_BITS, sf)
        codeword_bits[:n_full * sf] = blocks.reshape(-1, CODEWORD_BITS)
    remaining = n_codewords - n_full * sf
    if remaining:
        flat = bits[CODEWORD_BITS * n_full:].reshape(-1)[:CODEWORD_BITS * remaining]
        codeword_bits[n_full * sf:] = flat.reshape(CODEWORD_BITS, remaining).T
    return np.packbits(codeword_bits, axis=1).reshape(-1)


def encode_payload(payload, params):
    payload = bytes(payload)
    if len(payload) > MAX_PAYLOAD_BYTES:
        raise PayloadTooLong(f'payload is {len(payload)} bytes, limit is {MAX_PAYLOAD_BYTES}')
    crc = crc16(payload)
    data_codewords = HAMMING84_ENCODE[_to_nibbles(payload)]
    crc_codewords = HAMMING84_ENCODE[_to_nibbles(crc.to_bytes(CRC_BYTES, 'big'))]
    return CodedPacket(
        payload=payload,
        symbols=_interleave(data_codewords, params.sf),
        crc=crc,
        crc_symbols=_interleave(crc_codewords, params.sf),
    )


def infer_payload_len(n_symbols, sf):
    n_data = n_symbols - n_crc_symbols(sf)
    for payload_len in range(MAX_PAYLOAD_BYTES + 1):
        if n_data_symbols(payload_len, sf) == n_data:
            return payload_len
    raise FramingError(f'{n_symbols} symbols do not frame any payload length at sf={sf}')


def decode_payload_verbose(symbols, params, payload_len=None):
    symbols = np.asarray(symbols, dtype=np.int64).reshape(-1)
    if symbols.size and (symbols.min() < 0 or symbols.max() >= params.n_chips):
        raise InvalidSymbol(f'symbols must be in [0, {params.n_chips})')
    if payload_len is None:
        payload_len = infer_payload_len(symbols.size, params.sf)
    n_data = n_data_symbols(payload_len, params.sf)
    expected = n_data + n_crc_symbols(params.sf)
    if symbols.size != expected:
        raise FramingError(f'expected {expected} symbols for a {payload_len}-byte payload, got {symbols.size}')

    codewords = np.concatenate([
        _deinterleave(symbols[:n_data], 2 * payload_len, params.sf),
        _deinterleave(symbols[n_data:], 2 * CRC_BYTES, params.sf),
    ])
    nibbles = HAMMING84_DECODE[codewords]
    distance = HAMMING84_DISTANCE[codewords]
    data = ((nibbles[0::2] << 4) | nibbles[1::2]).astype(np.uint8).tobytes()
    payload, crc_rx = data[:payload_len], int.from_bytes(data[payload_len:], 'big')
    result = DecodeResult(
        payload=payload,
        crc_ok=crc_rx == crc16(payload),
        corrected=int(np.count_nonzero(distance == 1)),
        detected=int(np.count_nonzero(distance >= 2)),
    )
    logger.debug('decoded %d bytes: crc_ok=%s corrected=%d detected=%d',
                 payload_len, result.crc_ok, result.corrected, result.detected)
    return result


def decode_payload(symbols, params, payload_len=None):
    result = decode_payload_verbose(symbols, params, payload_len)
    return result.payload, result.crc_ok
