import numpy as np
import pytest

from causalrec.models import SemSpec
from causalrec.pag import EdgeMark, NodeId, Pag

ARROW = EdgeMark.ARROW
TAIL = EdgeMark.TAIL
CIRCLE = EdgeMark.CIRCLE


def make_nodes(*labels: str) -> list[NodeId]:
    return [NodeId(i, lab) for i, lab in enumerate(labels)]


@pytest.fixture
def confounded_session_pag():
    """Hand-built five-item graph: a direct cause of the recommendation, a
    confounded sibling, and an item reachable only through a collider.

        I1 o-> I3 <-> I5 <-o I2      (I4 isolated; I5 is the recommendation)
    """
    i1, i2, i3, i4, i5 = make_nodes("I1", "I2", "I3", "I4", "I5")
    g = Pag([i1, i2, i3, i4, i5])
    g.add_edge(i1, i3, CIRCLE, ARROW)
    g.add_edge(i3, i5, ARROW, ARROW)
    g.add_edge(i2, i5, CIRCLE, ARROW)
    return g


@pytest.fixture
def confounded_sem_spec():
    """Structural model that projects to the confounded_session_pag shape:
    X0 -> X3, H2 -> X3, H2 -> X5, X1 -> X5, X4 isolated; H2 latent."""
    return SemSpec(
        n_vars=6,
        latent=(2,),
        edges=((0, 3, 0.8), (1, 5, 0.8), (2, 3, 0.7), (2, 5, 0.9)),
        noise_variances=(1.0, 1.0, 1.0, 1.0, 1.0, 1.0),
        seed=7,
    )


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
