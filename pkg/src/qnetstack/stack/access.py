"""Network access layer: robust entanglement distribution over a noisy channel."""
from __future__ import annotations

from typing import Callable

from ..primitives import EprPair, make_epr, qec5_correct_decode, qec5_encode
from ..qsim import PHI_PLUS


def entanglement_distribution(world, link, count: int, *, inject: Callable | None = None,
                              max_attempts: int | None = None) -> int:
    """Create ``count`` pairs on ``link`` and register them in its pool.

    The far half travels inside a [[5,1,3]] block and is corrected on
    arrival.  A block that loses any qubit is an erasure: the pair is
    abandoned and retried.  ``inject(registry, block)`` runs just before
    transmission and lets tests plant specific errors.

    Returns the number of pairs added.
    """
    reg = world.registry
    limit = max_attempts if max_attempts is not None else 20 * count + 20
    made = attempts = 0
    while made < count and attempts < limit:
        attempts += 1
        pair = make_epr(reg, world.now)
        block = qec5_encode(reg, pair.right)
        if inject is not None:
            inject(reg, block)
        arrived, _ = world.transmit(link, link.a, block, plane="distribution")
        if arrived is None:
            reg.discard([pair.left])
            world.log(link.label, "epr-abort", "block lost")
            continue
        right = qec5_correct_decode(reg, arrived)
        for q in arrived:
            world.owner.pop(q, None)
        fidelity = reg.fidelity([pair.left, right], PHI_PLUS)
        pos = world.register_pair(link, EprPair(pair.left, right))
        world.distribution_log.append((link.key, pos, fidelity))
        world.log(link.label, "epr-new", f"pos={pos} fidelity={fidelity:.9f}")
        made += 1
    if made < count:
        world.log(link.label, "epr-shortfall", f"made={made} wanted={count}")
    return made
