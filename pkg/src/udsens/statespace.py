"""Plain system matrices of a linear Gaussian state-space model."""

from dataclasses import dataclass, fields

import numpy as np

from .errors import ShapeError


@dataclass(frozen=True)
class StateSpace:
    """System matrices ``F, G, H, Q, R, Pi0``.

    The same container holds the derivative of every matrix with respect to
    one parameter; :meth:`zeros_like` builds the derivative of a constant model.
    """

    f: np.ndarray
    g: np.ndarray
    h: np.ndarray
    q: np.ndarray
    r: np.ndarray
    pi0: np.ndarray

    def __post_init__(self):
        for fld in fields(self):
            arr = np.atleast_2d(np.asarray(getattr(self, fld.name), dtype=float))
            object.__setattr__(self, fld.name, arr)
        n, m, q = self.n, self.m, self.q_dim
        expected = {
            "f": (n, n), "g": (n, q), "h": (m, n),
            "q": (q, q), "r": (m, m), "pi0": (n, n),
        }
        for name, shape in expected.items():
            if getattr(self, name).shape != shape:
                raise ShapeError(f"{name} has shape {getattr(self, name).shape}, expected {shape}")

    @property
    def n(self):
        return self.f.shape[0]

    @property
    def m(self):
        return self.h.shape[0]

    @property
    def q_dim(self):
        return self.g.shape[1]

    def zeros_like(self):
        return StateSpace(*(np.zeros_like(getattr(self, fld.name)) for fld in fields(self)))
