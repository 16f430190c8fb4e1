"""
SKT1 tensor files and named-tensor bundles

SKT1 layout (little-endian):
    8 bytes   magic "SKTENS01"
    u32       rank
    rank*u32  extents
    u8        dtype code (0 = float32, 1 = float64)
    payload   C-order values

A bundle is a directory holding one SKT1 file per tensor plus manifest.txt,
whose lines are "<key>\\t<file>", the key being the parameter path.
"""

import os
import struct
from pathlib import Path

import numpy as np
from loguru import logger

from skeattn_utils.errors import FormatError

SKT_MAGIC = b"SKTENS01"
DTYPE_CODES = {np.dtype("<f4"): 0, np.dtype("<f8"): 1}
CODE_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
MANIFEST = "manifest.txt"


def encode_tensor(array):
    """
    Serialise an array to SKT1 bytes
    """
    array = np.asarray(array)
    dtype = array.dtype.newbyteorder("<")
    if dtype not in DTYPE_CODES:
        raise FormatError(f"SKT1 stores float32 or float64, not {array.dtype}")
    header = SKT_MAGIC + struct.pack("<I", array.ndim)
    header += struct.pack(f"<{array.ndim}I", *array.shape)
    header += struct.pack("<B", DTYPE_CODES[dtype])
    return header + np.ascontiguousarray(array, dtype=dtype).tobytes()


def decode_tensor(buffer, offset=0):
    """
    Parse one SKT1 tensor starting at offset

    :return: (array, offset just past the payload)
    """
    if buffer[offset : offset + 8] != SKT_MAGIC:
        raise FormatError("bad SKT1 magic", offset)
    offset += 8
    if len(buffer) < offset + 4:
        raise FormatError("truncated SKT1 rank", offset)
    (rank,) = struct.unpack_from("<I", buffer, offset)
    offset += 4
    if len(buffer) < offset + 4 * rank + 1:
        raise FormatError("truncated SKT1 header", offset)
    shape = struct.unpack_from(f"<{rank}I", buffer, offset)
    offset += 4 * rank
    code = buffer[offset]
    if code not in CODE_DTYPES:
        raise FormatError(f"unknown SKT1 dtype code {code}", offset)
    offset += 1
    dtype = CODE_DTYPES[code]
    nbytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
    if len(buffer) < offset + nbytes:
        raise FormatError(
            f"truncated SKT1 payload: expected {nbytes} bytes, found {len(buffer) - offset}",
            offset,
        )
    array = np.frombuffer(buffer, dtype=dtype, count=nbytes // dtype.itemsize, offset=offset)
    return array.reshape(shape).astype(dtype.newbyteorder("="), copy=True), offset + nbytes


def write_tensor(path, array):
    with open(path, "wb") as handle:
        handle.write(encode_tensor(array))
    logger.debug(f"tensor of shape {np.shape(array)} written to {path}")


def read_tensor(path):
    with open(path, "rb") as handle:
        buffer = handle.read()
    array, end = decode_tensor(buffer)
    if end != len(buffer):
        raise FormatError("trailing bytes after SKT1 payload", end)
    return array


def save_bundle(directory, tensors):
    """
    Save a mapping of key -> array as a named-tensor bundle directory
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    lines = []
    for index, (key, array) in enumerate(tensors.items()):
        if "\t" in key or "\n" in key:
            raise FormatError(f"bundle keys cannot contain tabs or newlines: {key!r}")
        file_name = f"{index:04d}.skt"
        write_tensor(directory / file_name, array)
        lines.append(f"{key}\t{file_name}")
    with open(directory / MANIFEST, "w") as handle:
        handle.write("\n".join(lines) + "\n")
    logger.info(f"{len(lines)} tensors saved to {directory}")


def load_bundle(directory):
    """
    Load a named-tensor bundle directory

    :return: dict of key -> array in manifest order
    """
    directory = Path(directory)
    manifest = directory / MANIFEST
    if not os.path.isfile(manifest):
        raise FormatError(f"{directory} has no {MANIFEST}")
    tensors = {}
    with open(manifest, "r") as handle:
        for line_number, line in enumerate(handle, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            try:
                key, file_name = line.split("\t")
            except ValueError:
                raise FormatError(f"malformed manifest line {line_number}: {line!r}")
            tensors[key] = read_tensor(directory / file_name)
    return tensors
