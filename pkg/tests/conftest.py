import numpy as np
import pytest

from specdim.ztrans import RationalZ


def random_stable_rational(rng, max_deg=4):
    """Real rational with all poles of modulus in (1.1, 3), conjugate pairs allowed."""
    nd = int(rng.integers(1, max_deg + 1))
    roots = []
    while len(roots) < nd:
        if nd - len(roots) >= 2 and rng.random() < 0.5:
            p = rng.uniform(1.1, 3) * np.exp(1j * rng.uniform(0, np.pi))
            roots += [p, np.conj(p)]
        else:
            roots.append(rng.choice([-1.0, 1.0]) * rng.uniform(1.1, 3))
    # np.poly of the reciprocal roots, read in ascending order, vanishes at the roots
    den = np.real(np.poly(1 / np.array(roots)))
    num = rng.normal(size=int(rng.integers(1, max_deg + 2)))
    return RationalZ(num, den)


@pytest.fixture(scope="session")
def rational_pair():
    def make(seed, max_deg=4):
        rng = np.random.default_rng(seed)
        return random_stable_rational(rng, max_deg), random_stable_rational(rng, max_deg)

    return make
