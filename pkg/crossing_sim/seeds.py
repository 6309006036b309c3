"""
Seed derivation for independent random streams.

Plain integer arithmetic keeps streams stable across numpy and torch versions.
"""

STREAM_OFFSETS = {
    "train": 0,
    "eval": 1_000_000,
    "calibration": 2_000_000,
    "synthesize": 3_000_000,
}
SEED_SPACING = 10_000_000


def derive_seed(master: int, stream: str, index: int = 0) -> int:
    """Seed of item ``index`` in a named stream"""
    try:
        offset = STREAM_OFFSETS[stream]
    except KeyError:
        raise ValueError(f"Unknown seed stream {stream!r}")
    return (int(master) * SEED_SPACING + offset + int(index)) % (2 ** 63)
