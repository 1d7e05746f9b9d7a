'''
Read and write complex baseband traces.

File layout, all little-endian:

    offset  size  field
    0       4     magic "PSRQ"
    4       2     version (u16)
    6       1     sf (u8)
    7       1     reserved (u8, 0)
    8       8     sample_count (u64)
    16      8*n   samples, interleaved float32 (re, im)

One sample per chip, no oversampling.
'''

import logging
from dataclasses import dataclass

import numpy as np

from errors import BadMagic, ConfigInvalid, IoError, IqFormatError, TruncatedFile, VersionUnsupported


logger = logging.getLogger(__name__)

MAGIC = b'PSRQ'
VERSION = 1
HEADER_DTYPE = np.dtype([
    ('magic', 'S4'),
    ('version', '<u2'),
    ('sf', 'u1'),
    ('reserved', 'u1'),
    ('sample_count', '<u8'),
])
SAMPLE_DTYPE = np.dtype('<c8')


@dataclass(frozen=True)
class IqFileHeader:
    sf: int
    sample_count: int
    version: int = VERSION
    magic: bytes = MAGIC
    reserved: int = 0

    def __post_init__(self):
        # every field must fit its slot in HEADER_DTYPE
        for name in ('sf', 'reserved', 'version', 'sample_count'):
            value = getattr(self, name)
            limit = 1 << (8 * HEADER_DTYPE.fields[name][0].itemsize)
            if int(value) != value or not 0 <= value < limit:
                raise ConfigInvalid(f'header {name} must be an integer in [0, {limit}), got {value}')
        if len(self.magic) != len(MAGIC):
            raise ConfigInvalid(f'header magic must be {len(MAGIC)} bytes, got {self.magic!r}')

    @classmethod
    def for_samples(cls, sf, samples):
        return cls(sf=int(sf), sample_count=len(samples))

    def to_bytes(self):
        record = np.array([(self.magic, self.version, self.sf, self.reserved, self.sample_count)], dtype=HEADER_DTYPE)
        return record.tobytes()

    @classmethod
    def from_bytes(cls, raw):
        if len(raw) < HEADER_DTYPE.itemsize:
            raise TruncatedFile(f'header needs {HEADER_DTYPE.itemsize} bytes, file has {len(raw)}')
        record = np.frombuffer(raw, dtype=HEADER_DTYPE, count=1)[0]
        if record['magic'] != MAGIC:
            raise BadMagic(f'bad magic {bytes(record["magic"])!r}, expected {MAGIC!r}')
        if record['version'] != VERSION:
            raise VersionUnsupported(f'iq file version {int(record["version"])} is not supported (expected {VERSION})')
        return cls(
            sf=int(record['sf']),
            sample_count=int(record['sample_count']),
            version=int(record['version']),
            magic=bytes(record['magic']),
            reserved=int(record['reserved']),
        )


def write_iq(path, header, samples):
    samples = np.asarray(samples, dtype=SAMPLE_DTYPE).reshape(-1)
    if header.sample_count != samples.size:
        raise IqFormatError(f'header announces {header.sample_count} samples, got {samples.size}')
    try:
        with open(path, 'wb') as f:
            f.write(header.to_bytes())
            f.write(samples.tobytes())
    except OSError as e:
        raise IoError(path, e.strerror or str(e))
    logger.debug('wrote %d samples (sf=%d) to %s', samples.size, header.sf, path)


def read_iq(path):
    try:
        with open(path, 'rb') as f:
            raw = f.read()
    except OSError as e:
        raise IoError(path, e.strerror or str(e))

    header = IqFileHeader.from_bytes(raw)
    payload = raw[HEADER_DTYPE.itemsize:]
    expected = header.sample_count * SAMPLE_DTYPE.itemsize
    if len(payload) < expected:
        raise TruncatedFile(f'{path}: header claims {header.sample_count} samples, '
                            f'payload holds {len(payload) // SAMPLE_DTYPE.itemsize}')
    if len(payload) > expected:
        raise IqFormatError(f'{path}: {len(payload) - expected} trailing bytes after {header.sample_count} samples')
    samples = np.frombuffer(payload, dtype=SAMPLE_DTYPE).copy()
    return header, samples
