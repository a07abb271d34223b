"""
Seeded random streams

Every stream is a NumPy Generator over the counter-based Philox bit
generator. Substreams are addressed by name, so the draws of one component
never depend on how many draws another component made.
"""
import hashlib

import numpy as np

from ..app_settings import RNG_ALGORITHM


def _stream_key(name):
    if isinstance(name, (int, np.integer)):
        return int(name)
    digest = hashlib.blake2b(str(name).encode('utf-8'), digest_size=8).digest()
    return int.from_bytes(digest, 'little')


class Rng(object):
    """ Splittable generator: Rng(seed).substream('negatives', epoch) """
    algorithm = RNG_ALGORITHM

    def __init__(self, seed, path=()):
        self.seed = int(seed)
        self.path = tuple(path)
        sequence = np.random.SeedSequence(self.seed, spawn_key=self.path)
        self.generator = np.random.Generator(np.random.Philox(sequence))

    def substream(self, *names):
        return Rng(self.seed, self.path + tuple(_stream_key(name) for name in names))

    def __getattr__(self, attr):
        # integers, random, choice, permutation, normal, uniform, exponential...
        if attr == 'generator':
            raise AttributeError(attr)
        return getattr(self.generator, attr)

    def __repr__(self):
        return '<Rng %s seed=%s path=%s>' % (self.algorithm, self.seed, self.path)
