import math

import numpy as np
import pytest

from hostcap import FeederModel, parse_feeder

TWO_BUS_BASIC = """
[base]
kv=10.0
kva=1000.0

[nodes]
sub,0,0,0
n2,100,50,0

[edges]
sub,n2,1.0,1.0,
"""


@pytest.fixture
def two_bus_basic() -> FeederModel:
    """r = x = 0.01 pu, load 0.1 + j0.05 pu, no PV."""
    return parse_feeder(TWO_BUS_BASIC)


def two_bus_closed_form(v1, r, x, p_net, q_net):
    """Single-edge DistFlow fixed point solved as a quadratic in l.

    Independent of the sweep implementation: returns (P, Q, l, v2) with l the
    small (physical) root of (r^2+x^2) l^2 + (2rP+2xQ-v1) l + (P^2+Q^2) = 0.
    """
    a = r * r + x * x
    b = 2 * r * p_net + 2 * x * q_net - v1
    c = p_net * p_net + q_net * q_net
    disc = b * b - 4 * a * c
    if disc < 0:
        raise ValueError("no real operating point")
    l = 2 * c / (-b + math.sqrt(disc))
    big_p = p_net + r * l
    big_q = q_net + x * l
    v2 = v1 - 2 * (r * big_p + x * big_q) + a * l
    return big_p, big_q, l, v2


def random_feeder(rng: np.random.Generator, n_nodes: int, with_pv: bool = False) -> FeederModel:
    """Random radial feeder with moderate loading (sweep-convergent)."""
    lines = ["[base]", "kv=10.0", "kva=1000.0", "", "[nodes]", "sub,0,0,0"]
    total_kw = rng.uniform(50.0, 400.0)
    shares = rng.dirichlet(np.ones(n_nodes - 1))
    for i in range(1, n_nodes):
        kw = total_kw * shares[i - 1]
        kvar = kw * rng.uniform(0.2, 0.6)
        pv = rng.uniform(0.0, 300.0) if with_pv else 0.0
        lines.append("n%d,%.6f,%.6f,%.6f" % (i, kw, kvar, pv))
    lines += ["", "[edges]"]
    names = ["sub"] + ["n%d" % i for i in range(1, n_nodes)]
    for i in range(1, n_nodes):
        parent = names[rng.integers(0, i)]
        r_ohm = rng.uniform(0.2, 2.0)
        x_ohm = rng.uniform(0.2, 2.0)
        lines.append("%s,n%d,%.6f,%.6f," % (parent, i, r_ohm, x_ohm))
    return parse_feeder("\n".join(lines))
