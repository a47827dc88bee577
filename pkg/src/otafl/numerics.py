"""Dense Hermitian linear algebra and seeded random sampling.

All matrix operations act on plain ``numpy`` arrays in double precision
(complex128 for Hermitian matrices). Hermitian symmetry is enforced by
symmetrization on entry, so callers may pass any square array whose
Hermitian part is the intended operand.
"""

import hashlib

import numpy as np

from .errors import InvalidInput, NotPsd

# Relative tolerance below which a negative eigenvalue is treated as a
# numerically-zero eigenvalue of a PSD matrix. Zero-sum covariances are
# rank deficient by construction, so exact zeros must be tolerated.
PSD_REL_TOL = 1e-10


class RngStream:
    """A labelled, reproducible random stream.

    Identical ``(seed, label)`` pairs reproduce identical draw sequences.
    Distinct labels give statistically independent streams. A stream is
    single-owner mutable state: never share one instance across
    concurrent callers, derive substreams instead.
    """

    def __init__(self, seed, label=""):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self.label = str(label)
        digest = hashlib.sha256(self.label.encode("utf-8")).digest()
        words = np.frombuffer(digest, dtype=np.uint32)
        entropy = [self.seed & 0xFFFFFFFF, self.seed >> 32] + [int(w) for w in words]
        self._gen = np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))

    def substream(self, label):
        """Derive an independent stream with a hierarchical label."""
        return RngStream(self.seed, f"{self.label}/{label}")

    @property
    def generator(self):
        return self._gen

    def standard_normal(self, shape):
        return self._gen.standard_normal(shape)

    def uniform(self, low=0.0, high=1.0, size=None):
        return self._gen.uniform(low, high, size)

    def dirichlet(self, alpha):
        return self._gen.dirichlet(alpha)

    def __repr__(self):
        return f"RngStream(seed={self.seed}, label={self.label!r})"


def _check_finite(m):
    if not np.all(np.isfinite(m)):
        raise InvalidInput("non-finite entries")


def hermitian_part(m):
    """Return the Hermitian part (m + m^H)/2 of a square array."""
    m = np.asarray(m, dtype=np.complex128)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise InvalidInput(f"expected a square matrix, got shape {m.shape}")
    return 0.5 * (m + m.conj().T)


def eig_hermitian(m):
    """Eigendecomposition of a Hermitian matrix.

    Returns ``(eigenvalues, eigenvectors)`` with eigenvalues real and
    sorted descending, eigenvectors as unitary columns matching the
    eigenvalue order.
    """
    m = hermitian_part(m)
    _check_finite(m)
    vals, vecs = np.linalg.eigh(m)
    return vals[::-1], vecs[:, ::-1]


def psd_sqrt(m):
    """Hermitian PSD square root S with S @ S = m.

    Eigenvalues within ``PSD_REL_TOL`` of zero (relative to the largest)
    are clamped to zero; more negative ones raise :class:`NotPsd`.
    """
    m = hermitian_part(m)
    _check_finite(m)
    vals, vecs = np.linalg.eigh(m)
    top = max(vals[-1], 0.0)
    if vals[0] < -PSD_REL_TOL * max(top, 1e-300):
        raise NotPsd(f"min eigenvalue {vals[0]:.3e} below tolerance for max {top:.3e}")
    root = np.sqrt(np.clip(vals, 0.0, None))
    s = (vecs * root) @ vecs.conj().T
    return hermitian_part(s)


def psd_project(m):
    """Frobenius-nearest PSD matrix: clamp negative eigenvalues to zero."""
    m = hermitian_part(m)
    _check_finite(m)
    vals, vecs = np.linalg.eigh(m)
    clipped = np.clip(vals, 0.0, None)
    return hermitian_part((vecs * clipped) @ vecs.conj().T)


def sample_complex_gaussian(rng, dim, variance_per_element=1.0, shape=None):
    """Draw circularly-symmetric complex Gaussians CN(0, variance * I).

    Real and imaginary parts each carry ``variance_per_element / 2``.
    ``shape`` overrides ``dim`` for matrix-valued draws.
    """
    if variance_per_element < 0:
        raise InvalidInput("variance must be nonnegative")
    shp = shape if shape is not None else (int(dim),)
    scale = np.sqrt(variance_per_element / 2.0)
    z = rng.standard_normal((2,) + tuple(shp))
    return scale * (z[0] + 1j * z[1])
