"""Deterministic seed derivation.

Every random stream in the package is keyed by ``(master_seed, label,
index)``.  The mixing function is BLAKE2b with an 8-byte digest over

    master_seed (8 bytes, little endian) || index (8 bytes, little endian,
    two's complement) || label (UTF-8)

and personalisation ``b"stripwalk-v1"``.  Changing the function requires
bumping ``SEED_SCHEME_VERSION``.
"""

import hashlib

import numpy as np

SEED_SCHEME_VERSION = 1
_PERSON = b"stripwalk-v1"
_MASK = (1 << 64) - 1


def derive_seed(master_seed, stream_label, replica_index=0):
    """Return a 64-bit seed for one named, indexed stream."""
    h = hashlib.blake2b(digest_size=8, person=_PERSON)
    h.update((int(master_seed) & _MASK).to_bytes(8, "little"))
    h.update((int(replica_index) & _MASK).to_bytes(8, "little"))
    h.update(str(stream_label).encode("utf-8"))
    return int.from_bytes(h.digest(), "little")


def rng_for(master_seed, stream_label, replica_index=0):
    return np.random.default_rng(derive_seed(master_seed, stream_label, replica_index))
