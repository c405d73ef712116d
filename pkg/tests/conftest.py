import numpy as np
import pytest

from geometry.core import PinholeCamera, PointCloud, TriangleMesh

# checker levels that survive 8-bit quantization unchanged
LOW = 102 / 255
HIGH = 153 / 255

# (normal, u axis, v axis) with u x v = normal, so triangles wind outward
CUBE_FACES = (
    ((1, 0, 0), (0, 1, 0), (0, 0, 1)),
    ((-1, 0, 0), (0, 0, 1), (0, 1, 0)),
    ((0, 1, 0), (0, 0, 1), (1, 0, 0)),
    ((0, -1, 0), (1, 0, 0), (0, 0, 1)),
    ((0, 0, 1), (1, 0, 0), (0, 1, 0)),
    ((0, 0, -1), (0, 1, 0), (1, 0, 0)),
)


def front_camera(width: int = 64, height: int = 64, f: float = 60.0, distance: float = 3.0) -> PinholeCamera:
    """Camera at (0, 0, -distance) looking down +Z; camera axes coincide with world axes."""
    pose = np.eye(4)
    pose[2, 3] = -distance
    return PinholeCamera(fx=f, fy=f, cx=width / 2.0, cy=height / 2.0, width=width, height=height,
                         world_from_camera=pose)


def make_quad(z: float = 0.0, half: float = 1.0, texture=None, vertex_colors=None) -> TriangleMesh:
    """Square in the plane Z = z; UV v follows world +Y, i.e. image rows of front_camera."""
    vertices = np.array([[-half, -half, z], [half, -half, z], [half, half, z], [-half, half, z]])
    triangles = np.array([[0, 1, 2], [0, 2, 3]])
    uv = (vertices[:, :2] + half) / (2 * half)
    return TriangleMesh(vertices=vertices, triangles=triangles, uvs=uv[triangles],
                        texture=texture, vertex_colors=vertex_colors)


def checker_texture(res: int, cols: int = 3, rows: int = 2, squares: int = 2) -> np.ndarray:
    """`squares` x `squares` checker inside every atlas cell of a cols x rows grid."""
    t = (np.arange(res) + 0.5) / res
    lu = (t * cols) % 1.0
    lv = (t * rows) % 1.0
    su = np.floor(lu * squares).astype(int)
    sv = np.floor(lv * squares).astype(int)
    parity = (sv[:, None] + su[None, :]) % 2
    value = np.where(parity == 0, LOW, HIGH)
    return np.repeat(value[..., None], 3, axis=2)


def make_cube(size: float = 1.0, texture_res: int = 512, gutter_texels: int = 4) -> TriangleMesh:
    """Unit cube with one chart per face on a 3 x 2 atlas grid and a checker texture."""
    half = size / 2.0
    gutter = gutter_texels / texture_res
    vertices, triangles, uvs = [], [], []
    for k, (n, u, v) in enumerate(CUBE_FACES):
        n, u, v = (np.array(a, dtype=np.float64) for a in (n, u, v))
        center = half * n
        corners = [center - half * u - half * v, center + half * u - half * v,
                   center + half * u + half * v, center - half * u + half * v]
        col, row = k % 3, k // 3
        x0, x1 = col / 3 + gutter, (col + 1) / 3 - gutter
        y0, y1 = row / 2 + gutter, (row + 1) / 2 - gutter
        corner_uv = [(x0, y0), (x1, y0), (x1, y1), (x0, y1)]
        base = len(vertices)
        vertices.extend(corners)
        triangles.extend([[base, base + 1, base + 2], [base, base + 2, base + 3]])
        uvs.extend([[corner_uv[0], corner_uv[1], corner_uv[2]], [corner_uv[0], corner_uv[2], corner_uv[3]]])
    return TriangleMesh(vertices=np.array(vertices), triangles=np.array(triangles), uvs=np.array(uvs),
                        texture=checker_texture(texture_res))


def brute_chamfer(a: np.ndarray, b: np.ndarray) -> float:
    d = ((a[:, None, :] - b[None, :, :]) ** 2).sum(axis=-1)
    return float(d.min(axis=1).mean() + d.min(axis=0).mean())


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def camera():
    return front_camera()


@pytest.fixture
def cube():
    return make_cube()


@pytest.fixture
def blob(rng):
    """Anisotropic random cloud around the origin."""
    return PointCloud(points=rng.normal(size=(400, 3)) * np.array([0.4, 0.25, 0.15]))
