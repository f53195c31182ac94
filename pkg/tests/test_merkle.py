"""Merkle summary of block bodies, checked against a recursive reference.

The production code builds the tree iteratively with level-size arithmetic;
the reference here recurses level by level with the pairing rule written out
directly: hash adjacent pairs, carry an odd trailing node up unchanged.
"""

import random

from loraledger.crypto import hash_bytes
from loraledger.ledger import build_merkle


def merkle_reference(leaves: list[bytes]) -> bytes:
    if len(leaves) == 1:
        return leaves[0]
    level = []
    for i in range(0, len(leaves) - 1, 2):
        level.append(hash_bytes(leaves[i] + leaves[i + 1]))
    if len(leaves) % 2:
        level.append(leaves[-1])
    return merkle_reference(level)


def _leaves(rng: random.Random, count: int) -> list[bytes]:
    return [rng.randbytes(64) for _ in range(count)]


def test_single_leaf_is_the_root():
    """A one-tx block commits to the signature itself: 64 bytes, unhashed."""
    leaf = bytes(range(64))
    assert build_merkle([leaf]) == leaf
    assert len(build_merkle([leaf])) == 64


def test_two_leaves():
    a, b = bytes(64), bytes(range(64))
    assert build_merkle([a, b]) == hash_bytes(a + b)


def test_three_leaves_structure():
    """Odd leaf pairs with the combined hash of the first two."""
    rng = random.Random(0)
    a, b, c = _leaves(rng, 3)
    assert build_merkle([a, b, c]) == hash_bytes(hash_bytes(a + b) + c)


def test_four_leaves_structure():
    rng = random.Random(1)
    a, b, c, d = _leaves(rng, 4)
    expected = hash_bytes(hash_bytes(a + b) + hash_bytes(c + d))
    assert build_merkle([a, b, c, d]) == expected


def test_five_leaves_structure():
    """The odd node survives two levels before pairing in."""
    rng = random.Random(2)
    a, b, c, d, e = _leaves(rng, 5)
    expected = hash_bytes(hash_bytes(hash_bytes(a + b) + hash_bytes(c + d)) + e)
    assert build_merkle([a, b, c, d, e]) == expected


def test_matches_reference_for_all_small_sizes():
    rng = random.Random(3)
    for count in range(1, 65):
        leaves = _leaves(rng, count)
        assert build_merkle(leaves) == merkle_reference(leaves), "size %d" % count


def test_matches_reference_random_sizes():
    rng = random.Random(4)
    for _ in range(100):
        leaves = _leaves(rng, rng.randint(1, 300))
        assert build_merkle(leaves) == merkle_reference(leaves)


def test_root_lengths():
    rng = random.Random(5)
    assert len(build_merkle(_leaves(rng, 1))) == 64
    for count in (2, 3, 7, 20):
        assert len(build_merkle(_leaves(rng, count))) == 32


def test_order_sensitivity():
    rng = random.Random(6)
    leaves = _leaves(rng, 6)
    swapped = leaves[:]
    swapped[0], swapped[1] = swapped[1], swapped[0]
    assert build_merkle(leaves) != build_merkle(swapped)
