"""
Parameter checkpoints.

Layout: an 8-byte little-endian unsigned header length, a UTF-8 JSON header
(tensor names, shapes and byte offsets plus seed, config hash and any extra
metadata), then the raw little-endian float64 payloads in header order.
"""
import json

import numpy as np

from nncore.exceptions import CheckpointError
from nncore.layers import Parameters

MAGIC = 'nncore-checkpoint'
VERSION = 1
LENGTH_DTYPE = np.dtype('<u8')
VALUE_DTYPE = np.dtype('<f8')


def encode(params, config_hash=None, extra=None):
    tensors = []
    payloads = []
    offset = 0
    for name in params.names():
        data = np.ascontiguousarray(params[name].data, dtype=VALUE_DTYPE)
        tensors.append({'name': name, 'shape': list(data.shape), 'offset': offset})
        payloads.append(data.tobytes())
        offset += data.nbytes
    header = {
        'format': MAGIC,
        'version': VERSION,
        'seed': params.seed,
        'config_hash': config_hash,
        'extra': extra or {},
        'tensors': tensors,
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(',', ':')).encode('utf8')
    return np.array([len(header_bytes)], dtype=LENGTH_DTYPE).tobytes() + header_bytes + b''.join(payloads)


def decode(raw):
    if len(raw) < LENGTH_DTYPE.itemsize:
        raise CheckpointError('checkpoint is truncated')
    length = int(np.frombuffer(raw[:LENGTH_DTYPE.itemsize], dtype=LENGTH_DTYPE)[0])
    start = LENGTH_DTYPE.itemsize + length
    try:
        header = json.loads(raw[LENGTH_DTYPE.itemsize:start].decode('utf8'))
    except ValueError as e:
        raise CheckpointError('checkpoint header is not valid JSON (%s)' % e)
    if not isinstance(header, dict):
        raise CheckpointError('checkpoint header is not a JSON object')
    if header.get('format') != MAGIC or header.get('version') != VERSION:
        raise CheckpointError('not an nncore checkpoint (format %r, version %r)'
                              % (header.get('format'), header.get('version')))

    params = Parameters(seed=header['seed'])
    for entry in header['tensors']:
        count = int(np.prod(entry['shape'], dtype=np.int64))
        begin = start + entry['offset']
        end = begin + count * VALUE_DTYPE.itemsize
        if end > len(raw):
            raise CheckpointError('payload of %s runs past the end of the file' % entry['name'])
        values = np.frombuffer(raw[begin:end], dtype=VALUE_DTYPE).astype(np.float64).reshape(entry['shape'])
        params.add(entry['name'], values)
    return params, header


def save(path, params, config_hash=None, extra=None):
    with open(path, 'wb') as f:
        f.write(encode(params, config_hash=config_hash, extra=extra))


def load(path):
    """Return (Parameters, header) read from a checkpoint file."""
    try:
        with open(path, 'rb') as f:
            raw = f.read()
    except FileNotFoundError:
        raise CheckpointError('checkpoint %s does not exist' % path)
    return decode(raw)
