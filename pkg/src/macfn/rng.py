"""Seed stream splitting.

Every random draw in a run comes from a generator derived from the root seed
and a tuple of integer keys::

    stream(seed, INIT, agent)          parameter initialisation
    stream(seed, ROLLOUT, episode)     behaviour episodes during training
    stream(seed, BATCH, update)        replay-buffer batch selection
    stream(seed, LOSS, update)         Monte-Carlo candidates for the loss
    stream(seed, INVERSE, update)      inverse-model minibatches
    stream(seed, EVAL, round, chunk)   evaluation rollouts
    stream(seed, DIVERSITY, chunk)     diversity collection

Keys go into ``numpy.random.SeedSequence.spawn_key`` so streams are
statistically independent and do not depend on the order in which they are
created. That is what keeps evaluation reproducible when chunks run in
parallel.
"""

import numpy as np

INIT = 1
ROLLOUT = 2
BATCH = 3
LOSS = 4
INVERSE = 5
EVAL = 6
DIVERSITY = 7
ENV = 8
ORACLE = 9


def stream(seed, *keys):
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in keys))
    return np.random.Generator(np.random.PCG64(ss))


def generator_state(rng):
    return rng.bit_generator.state


def restore_generator(state):
    bg = np.random.PCG64()
    bg.state = state
    return np.random.Generator(bg)
