import numpy as np
import pytest

from bevxform import Camera, Rig
from bevxform.rigs import make_camera, reference_rig


@pytest.fixture
def simple_camera():
    """Axis-aligned camera: f=500, principal point at the center of 704x256."""
    K = np.array([[500.0, 0.0, 352.0], [0.0, 500.0, 128.0], [0.0, 0.0, 1.0]])
    return Camera(
        name="simple",
        width=704,
        height=256,
        intrinsics=K,
        rotation=np.eye(3),
        translation=np.zeros(3),
        feature_stride=16,
    )


@pytest.fixture(scope="session")
def ref_rig() -> Rig:
    return reference_rig()


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Uniform-ish random rotation via QR of a Gaussian matrix."""
    q, r = np.linalg.qr(rng.normal(size=(3, 3)))
    q *= np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


def random_camera(rng: np.random.Generator, name: str = "rand") -> Camera:
    fx = rng.uniform(300.0, 1400.0)
    fy = rng.uniform(300.0, 1400.0)
    K = np.array([[fx, 0.0, 352.0], [0.0, fy, 128.0], [0.0, 0.0, 1.0]])
    return Camera(
        name=name,
        width=704,
        height=256,
        intrinsics=K,
        rotation=random_rotation(rng),
        translation=rng.normal(0.0, 2.0, 3),
        feature_stride=16,
    )


def forward_camera(name="fwd", fx=500.0, position=(0.0, 0.0, 0.0), **kw):
    """Camera looking down ego +x, convenient for hand-computed scenes."""
    return make_camera(name, 0.0, position, fx=fx, **kw)
