"""Named, independent random streams derived from one master seed.

Each stream is a Philox (counter-based) generator keyed by
``SeedSequence(master_seed, spawn_key=(stream_id,))``, so a run's draws do
not depend on which other runs share the process or in what order they are
scheduled.
"""

import numpy as np

STREAM_IDS = {
    "init": 0,         # network initialization
    "explore": 1,      # warmup actions and exploration noise
    "train": 2,        # minibatch sampling and target smoothing noise
    "env": 3,          # training episode resets
    "eval": 4,         # evaluation episode resets
    "diagnostics": 5,  # state sampling and Monte-Carlo keys for bias probes
}


def stream(seed: int, name: str) -> np.random.Generator:
    try:
        sid = STREAM_IDS[name]
    except KeyError:
        raise KeyError(f"unknown stream {name!r}") from None
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(int(seed), spawn_key=(sid,))))


def streams(seed: int) -> dict:
    return {name: stream(seed, name) for name in STREAM_IDS}
