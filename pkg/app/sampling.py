'''Reproducible i.i.d. sampling from p dmu and deterministic evaluation grids.

Random streams come from numpy's counter-based Philox generator keyed by
seed XOR task index; the numpy version is echoed into every output so a
stream can be pinned.
'''

import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor

import numpy as np

try:
    from app.display import read_csv, write_csv
    from app.exceptions import DomainException, InvalidConfigException
    from app.manifolds import get_density, get_manifold
except ImportError:
    from display import read_csv, write_csv
    from exceptions import DomainException, InvalidConfigException
    from manifolds import get_density, get_manifold

logger = logging.getLogger(__name__)

SEED_MASK = (1 << 64) - 1
BLOCK_SIZE = 4096


def make_rng(seed, task=0):
    '''Returns the generator of substream task for seed.'''
    if int(seed) != seed or not 0 <= seed <= SEED_MASK:
        raise DomainException(f"Seed must be an unsigned 64-bit integer, got {seed}.")
    return np.random.Generator(np.random.Philox(key=(int(seed) ^ int(task)) & SEED_MASK))


class SampleCloud:
    '''n ambient points drawn from p dmu with their provenance.'''

    def __init__(self, points, manifold, density, seed, proposals=None):
        self.points = np.array(points, dtype=float)
        self.points.setflags(write=False)
        self.manifold = manifold
        self.density = density
        self.seed = int(seed)
        self.proposals = proposals

    def __repr__(self):
        return f"SampleCloud(n={self.n}, manifold='{self.manifold.get_id()}', density='{self.density.get_id()}', seed={self.seed})"

    def __len__(self):
        return self.n

    @property
    def n(self):
        return self.points.shape[0]

    def get_points(self):
        return self.points

    def get_acceptance_rate(self):
        '''Returns accepted / proposed draws of the rejection sampler.'''
        if not self.proposals:
            return None
        return self.n / self.proposals

    def get_metadata(self):
        return {
            "manifold": self.manifold.name,
            "radii": list(self.manifold.radii),
            "density": self.density.name,
            "density_params": self.density.params,
            "seed": self.seed,
            "n": self.n,
            "numpy": np.__version__
        }


def _sample_block(manifold, density, size, seed, task):
    '''Fills one block of accepted points from its own substream.'''
    rng = make_rng(seed, task)
    p_max = density.get_p_max()
    acceptance = density.get_expected_acceptance()
    accepted = []
    count = 0
    proposals = 0
    while count < size:
        batch = int(math.ceil((size - count) / acceptance * 1.1)) + 16
        candidates = manifold.uniform_sample(rng, batch)
        uniforms = rng.uniform(size=batch)
        keep = np.flatnonzero(uniforms * p_max < density.value(candidates))[:size - count]
        # proposals past the last accepted point of the final batch are unused
        proposals += int(keep[-1]) + 1 if keep.size == size - count else batch
        chosen = candidates[keep]
        accepted.append(chosen)
        count += chosen.shape[0]
    return np.concatenate(accepted), proposals


def sample(manifold, density, n, seed, workers=1):
    '''Draws n i.i.d. points from p dmu by rejection from the uniform law.

    The cloud is cut into fixed blocks, each with its own substream, so the
    result does not depend on the number of workers.

    Args:
        manifold: catalog manifold
        density: Density with an upper bound p_max
        n: number of points
        seed: unsigned 64-bit seed
        workers: number of threads

    Returns:
        SampleCloud: the cloud
    '''
    if n < 1 or int(n) != n:
        raise DomainException(f"Sample size must be a positive integer, got {n}.")
    try:
        p_max = density.get_p_max()
    except NotImplementedError:
        p_max = None
    if p_max is None or not math.isfinite(p_max) or p_max <= 0:
        raise DomainException(f"Density {density.get_id()} has no usable upper bound p_max.")
    make_rng(seed)
    sizes = [BLOCK_SIZE] * (int(n) // BLOCK_SIZE)
    if n % BLOCK_SIZE:
        sizes.append(int(n) % BLOCK_SIZE)
    tasks = list(enumerate(sizes))
    run = lambda task: _sample_block(manifold, density, task[1], seed, task[0])
    if workers > 1 and len(tasks) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            blocks = list(pool.map(run, tasks))
    else:
        blocks = [run(task) for task in tasks]
    points = np.concatenate([block for block, _ in blocks])
    proposals = sum(count for _, count in blocks)
    logger.debug("Sampled %d points on %s (seed %d, %d proposals)", n, manifold.get_id(), seed, proposals)
    return SampleCloud(points, manifold, density, seed, proposals)


def eval_grid(manifold, count):
    '''Returns count deterministic quasi-uniform points on the manifold.'''
    return manifold.eval_grid(count)


def write_cloud_csv(cloud, path):
    '''Writes one point per row under a metadata header.'''
    columns = [f"x{i + 1}" for i in range(cloud.manifold.m)]
    write_csv(path, columns, cloud.points.tolist(), cloud.get_metadata())


def read_cloud_csv(path):
    '''Reads a cloud written by write_cloud_csv.'''
    metadata, columns, rows = read_csv(path)
    try:
        manifold = get_manifold(metadata["manifold"], json.loads(metadata["radii"]))
        density_spec = dict(json.loads(metadata.get("density_params", "{}")), name=metadata["density"])
        density = get_density(manifold, density_spec)
        seed = int(metadata["seed"])
    except (KeyError, ValueError) as e:
        raise InvalidConfigException(f"Cloud file {path} has an incomplete header: {e}")
    if len(columns) != manifold.m:
        raise InvalidConfigException(f"Cloud file {path} has {len(columns)} columns, expected {manifold.m}.")
    points = np.array([[float(value) for value in row] for row in rows], dtype=float).reshape(-1, manifold.m)
    return SampleCloud(points, manifold, density, seed)
