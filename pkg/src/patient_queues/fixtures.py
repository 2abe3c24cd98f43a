"""Named instances and profiles used throughout the tests and the CLI."""

from __future__ import annotations

import numpy as np

from .instances import Instance, symmetric_instance


def example_two_servers():
    """Two queues at 0.51 and servers (1, 0.49), both queues sending only to the fast server."""
    inst = Instance([0.51, 0.51], [1.0, 0.49])
    return inst, np.array([[1.0, 0.0], [1.0, 0.0]])


def example_two_servers_deviation(q: float = 0.05):
    """As ``example_two_servers`` but queue 2 puts mass ``q`` on the slow server."""
    inst, p = example_two_servers()
    p[1] = [1.0 - q, q]
    return inst, p


def single_unstable():
    return Instance([0.6], [0.3]), np.array([[1.0]])


def single_stable():
    return Instance([0.3], [0.6]), np.array([[1.0]])


def two_group():
    """Two queues on their own servers; queue 2 ages faster and is peeled first."""
    return Instance([0.9, 0.5], [0.6, 0.2]), np.array([[1.0, 0.0], [0.0, 1.0]])


def four_queue_levels():
    """Four queues, three servers: a tight inner pair and two outer singletons.

    Server 0 is the shared inner server; servers 1 and 2 are the outer ones.
    Queues 0 and 1 (the inner pair) split evenly between the inner server and
    one outer server each; queues 2 and 3 send only to their own outer server.
    The tight sets are {0,1}, {0,1,2}, {0,1,3} and {0,1,2,3}, all with ratio 0.9.
    The profile was picked by hand (inner split 1/2, inner server 0.8, outer
    servers 0.5) with the arrivals solved so both tightness equations hold.
    """
    inst = Instance([11 / 18, 11 / 18, 5 / 18, 5 / 18], [0.8, 0.5, 0.5])
    p = np.array([
        [0.5, 0.5, 0.0],
        [0.5, 0.0, 0.5],
        [0.0, 1.0, 0.0],
        [0.0, 0.0, 1.0],
    ])
    return inst, p


def symmetric(n: int, eps: float = 0.05):
    return symmetric_instance(n, eps)


NAMED = {
    "example": example_two_servers,
    "example-deviation": example_two_servers_deviation,
    "single-unstable": single_unstable,
    "single-stable": single_stable,
    "two-group": two_group,
    "four-queue-levels": four_queue_levels,
}
