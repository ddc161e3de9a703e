"""Little-endian binary blocks for exemplar storage.

A grid block holds ``C`` classes of ``m`` rows of ``d`` features:

    <u4 C, m, d> <i8 class ids [C]> <f8 grid [C, m, d]>

A rows block holds ``n`` labelled rows with their source indices:

    <u4 n, d> <i8 labels [n]> <i8 indices [n]> <f8 rows [n, d]>
"""
import typing as T

import numpy as np

from ..errors import ParseError


FORMAT_VERSION = 1


def write_header(f: T.BinaryIO, magic: bytes):
    f.write(magic)
    f.write(np.asarray([FORMAT_VERSION], '<u4').tobytes())


def read_header(buf: bytes, magic: bytes) -> int:
    if buf[:len(magic)] != magic:
        raise ParseError(f'Bad magic {buf[:len(magic)]!r}, expected {magic!r}')
    offset = len(magic)
    (version,) = np.frombuffer(buf, '<u4', count=1, offset=offset)
    if version != FORMAT_VERSION:
        raise ParseError(f'Unsupported format version {version}')
    return offset + 4


def write_grid(f: T.BinaryIO, classes: T.Sequence[int], grid: np.ndarray):
    grid = np.asarray(grid, dtype='<f8')
    c, m, d = grid.shape
    f.write(np.asarray([c, m, d], '<u4').tobytes())
    f.write(np.asarray(classes, '<i8').tobytes())
    f.write(grid.tobytes())


def read_grid(buf: bytes, offset: int) -> T.Tuple[np.ndarray, np.ndarray, int]:
    c, m, d = (int(v) for v in np.frombuffer(buf, '<u4', count=3, offset=offset))
    offset += 12
    classes = np.frombuffer(buf, '<i8', count=c, offset=offset)
    offset += 8 * c
    grid = np.frombuffer(buf, '<f8', count=c * m * d, offset=offset)
    offset += 8 * c * m * d
    return classes.astype(np.int64), grid.reshape(c, m, d).astype(np.float64), offset


def write_rows(
        f: T.BinaryIO, labels: np.ndarray,
        indices: np.ndarray, rows: np.ndarray):
    rows = np.asarray(rows, dtype='<f8')
    n, d = rows.shape
    f.write(np.asarray([n, d], '<u4').tobytes())
    f.write(np.asarray(labels, '<i8').tobytes())
    f.write(np.asarray(indices, '<i8').tobytes())
    f.write(rows.tobytes())


def read_rows(
        buf: bytes, offset: int,
        ) -> T.Tuple[np.ndarray, np.ndarray, np.ndarray, int]:
    n, d = (int(v) for v in np.frombuffer(buf, '<u4', count=2, offset=offset))
    offset += 8
    labels = np.frombuffer(buf, '<i8', count=n, offset=offset)
    offset += 8 * n
    indices = np.frombuffer(buf, '<i8', count=n, offset=offset)
    offset += 8 * n
    rows = np.frombuffer(buf, '<f8', count=n * d, offset=offset)
    offset += 8 * n * d
    return (labels.astype(np.int64), indices.astype(np.int64),
            rows.reshape(n, d).astype(np.float64), offset)
