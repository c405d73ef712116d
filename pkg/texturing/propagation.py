"""
View-by-view texture propagation: project what earlier views established into
the next view, mark it as known, and ask an external generator to complete
the rest.

Mask convention: 1 = already seen in a known view, 0 = unknown.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterator, List, Optional

import numpy as np

from formats.images import read_image, write_image
from geometry.core import PinholeCamera, TriangleMesh
from geometry.errors import GeneratorFailure, ShapeError
from rendering.conditioning import DEFAULT_EDGE_THRESHOLD, ConditionTensor, edge_map, pack_condition
from rendering.rasterizer import GBuffer, rasterize
from rendering.rig import ViewRig
from rendering.textured import sample_bilinear
from rendering.visibility import DEFAULT_DEPTH_TOL, project_into, visible_in_view

from .baking import DEFAULT_ALPHA_DEG, confidence_weight


@dataclass(frozen=True, eq=False)
class KnownView:
    camera: PinholeCamera
    image: np.ndarray
    gbuf: GBuffer
    weight: float = 1.0
    name: str = ""
    edges: Optional[np.ndarray] = None

    def __post_init__(self):
        image = np.array(self.image, dtype=np.float64)
        if image.shape != (self.camera.height, self.camera.width, 3):
            raise ShapeError(f"view {self.name or '?'}: image {image.shape} does not match camera "
                             f"{self.camera.width}x{self.camera.height}")
        image.setflags(write=False)
        object.__setattr__(self, "image", image)
        if self.edges is None:
            object.__setattr__(self, "edges", edge_map(self.gbuf))


@dataclass
class KnownViewSet:
    """Views in generation order."""
    views: List[KnownView] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.views)

    def __iter__(self) -> Iterator[KnownView]:
        return iter(self.views)

    def __getitem__(self, i: int) -> KnownView:
        return self.views[i]

    def append(self, view: KnownView) -> None:
        self.views.append(view)

    def prefix(self, count: int) -> "KnownViewSet":
        return KnownViewSet(list(self.views[:count]))

    @property
    def images(self) -> List[np.ndarray]:
        return [v.image for v in self.views]


@dataclass(frozen=True, eq=False)
class PropagationPacket:
    """Everything the external generator receives for one view. The first view carries no mask."""
    index: int
    name: str
    camera: PinholeCamera
    condition: ConditionTensor
    partial: Optional[np.ndarray] = None
    mask: Optional[np.ndarray] = None
    prompt: str = ""

    @property
    def is_full_generation(self) -> bool:
        return self.mask is None


def _target_gbuf(mesh: TriangleMesh, target: PinholeCamera, gbuf: Optional[GBuffer]) -> GBuffer:
    return gbuf if gbuf is not None else rasterize(mesh, target)


def visibility_mask(mesh: TriangleMesh, target: PinholeCamera, known: KnownViewSet,
                    depth_tol: float = DEFAULT_DEPTH_TOL,
                    target_gbuf: Optional[GBuffer] = None) -> np.ndarray:
    """Covered target pixels visible in at least one known view."""
    gbuf = _target_gbuf(mesh, target, target_gbuf)
    mask = np.zeros(gbuf.shape, dtype=bool)
    covered = gbuf.coverage
    if not len(known) or not covered.any():
        return mask
    points = gbuf.position[covered]
    tri = gbuf.tri_id[covered]
    seen = np.zeros(len(points), dtype=bool)
    for view in known:
        todo = np.flatnonzero(~seen)
        if todo.size == 0:
            break
        seen[todo] = visible_in_view(mesh, view.gbuf, points[todo], tri[todo], depth_tol)
    mask[covered] = seen
    return mask


def project_known(mesh: TriangleMesh, target: PinholeCamera, known: KnownViewSet,
                  depth_tol: float = DEFAULT_DEPTH_TOL, alpha_deg: float = DEFAULT_ALPHA_DEG,
                  cosine_weighting: bool = True, target_gbuf: Optional[GBuffer] = None,
                  mask: Optional[np.ndarray] = None) -> np.ndarray:
    """
    Partial image of the target view: each known pixel is the confidence-weighted
    blend of bilinear samples from the views that see it; the rest stays black.
    Pixels seen only at zero confidence take the plain mean of their samples.
    """
    gbuf = _target_gbuf(mesh, target, target_gbuf)
    partial = np.zeros(gbuf.shape + (3,))
    covered = gbuf.coverage
    if not len(known) or not covered.any():
        return partial
    points = gbuf.position[covered]
    normals = gbuf.normal[covered]
    tri = gbuf.tri_id[covered]

    weighted = np.zeros((len(points), 3))
    weight_sum = np.zeros(len(points))
    plain = np.zeros((len(points), 3))
    count = np.zeros(len(points))
    for view in known:
        seen = visible_in_view(mesh, view.gbuf, points, tri, depth_tol)
        sel = np.flatnonzero(seen)
        if sel.size == 0:
            continue
        uv, pix, _ = project_into(view.gbuf, points[sel])
        colors = sample_bilinear(view.image, uv, valid=view.gbuf.coverage)
        conf = confidence_weight(normals[sel], view.camera.center - points[sel], view.weight,
                                 alpha_deg, cosine_weighting)
        conf = np.where(view.edges[pix[:, 0], pix[:, 1]], 0.0, conf)
        weighted[sel] += conf[:, None] * colors
        weight_sum[sel] += conf
        plain[sel] += colors
        count[sel] += 1

    out = np.zeros((len(points), 3))
    has_conf = weight_sum > 0
    out[has_conf] = weighted[has_conf] / weight_sum[has_conf, None]
    fallback = ~has_conf & (count > 0)
    out[fallback] = plain[fallback] / count[fallback, None]
    partial[covered] = out
    if mask is not None:
        partial[~np.asarray(mask, dtype=bool)] = 0.0
    return partial


def masked_blend(known: np.ndarray, random: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """known * mask + random * (1 - mask), elementwise; the mask broadcasts over trailing channels."""
    known = np.asarray(known)
    random = np.asarray(random)
    mask = np.asarray(mask)
    if known.shape != random.shape:
        raise ShapeError(f"known {known.shape} and random {random.shape} differ in shape")
    if mask.shape != known.shape:
        if mask.shape == known.shape[:mask.ndim]:
            mask = mask.reshape(mask.shape + (1,) * (known.ndim - mask.ndim))
        else:
            raise ShapeError(f"mask {mask.shape} does not match {known.shape}")
    m = mask.astype(known.dtype if np.issubdtype(known.dtype, np.floating) else np.float64)
    return np.where(m == 1, known, np.where(m == 0, random, known * m + random * (1 - m)))


def build_packet(mesh: TriangleMesh, index: int, view, known: KnownViewSet,
                 bounds, gbuf: GBuffer, edges: np.ndarray, depth_tol: float = DEFAULT_DEPTH_TOL,
                 alpha_deg: float = DEFAULT_ALPHA_DEG, cosine_weighting: bool = True,
                 prompt: str = "") -> PropagationPacket:
    """Pure function of the mesh, the view and the images accepted so far."""
    condition = pack_condition(gbuf, edges, bounds)
    if index == 0 or not len(known):
        return PropagationPacket(index=index, name=view.name, camera=view.camera,
                                 condition=condition, prompt=prompt)
    # edge pixels are treated as unknown
    mask = visibility_mask(mesh, view.camera, known, depth_tol, target_gbuf=gbuf) & ~edges
    partial = project_known(mesh, view.camera, known, depth_tol, alpha_deg, cosine_weighting,
                            target_gbuf=gbuf, mask=mask)
    return PropagationPacket(index=index, name=view.name, camera=view.camera, condition=condition,
                             partial=partial, mask=mask, prompt=prompt)


def quantize(image: np.ndarray) -> np.ndarray:
    """Round to 8-bit levels so accepted views equal what is persisted on disk."""
    return np.round(np.clip(image, 0.0, 1.0) * 255.0) / 255.0


async def propagation_loop(mesh: TriangleMesh, rig: ViewRig, generator,
                           workdir: Optional[Path] = None, prompt: str = "",
                           depth_tol: float = DEFAULT_DEPTH_TOL,
                           edge_threshold: float = DEFAULT_EDGE_THRESHOLD,
                           alpha_deg: float = DEFAULT_ALPHA_DEG, cosine_weighting: bool = True,
                           smooth_normals: bool = False,
                           on_packet: Optional[Callable[[PropagationPacket], None]] = None,
                           logger: Optional[logging.Logger] = None) -> KnownViewSet:
    """
    Generate one image per rig view in order. View 1 is a full generation;
    later views receive the projected known texture and its mask. Accepted
    images are stored under `workdir/packet_<i>/accepted.png` and reused on a
    re-run, so a failed run resumes where it stopped.
    """
    logger = logger or logging.getLogger(__name__)
    bounds = mesh.bounds()
    known = KnownViewSet()
    for i, view in enumerate(rig):
        gbuf = rasterize(mesh, view.camera, smooth_normals=smooth_normals)
        edges = edge_map(gbuf, edge_threshold)
        packet_dir = Path(workdir) / f"packet_{i}" if workdir is not None else None
        accepted_path = packet_dir / "accepted.png" if packet_dir is not None else None

        if accepted_path is not None and accepted_path.exists():
            image = read_image(accepted_path)
            logger.info(f"[propagate] view {i + 1}/{len(rig)} ({view.name}) resumed from {accepted_path}")
        else:
            packet = build_packet(mesh, i, view, known, bounds, gbuf, edges, depth_tol,
                                  alpha_deg, cosine_weighting, prompt)
            if on_packet is not None:
                on_packet(packet)
            if packet.mask is not None:
                logger.info(f"[propagate] view {i + 1}/{len(rig)} ({view.name}): "
                            f"{int(packet.mask.sum())} known / {int(gbuf.coverage.sum())} covered pixels")
            else:
                logger.info(f"[propagate] view {i + 1}/{len(rig)} ({view.name}): full generation")
            image = await generator.generate(packet, packet_dir)
            image = np.asarray(image, dtype=np.float64)
            if image.shape != (view.camera.height, view.camera.width, 3) or not np.all(np.isfinite(image)):
                raise GeneratorFailure(f"generator returned an image of shape {image.shape} for view "
                                       f"{view.name}, expected {view.camera.height}x{view.camera.width}x3",
                                       view_index=i)
            image = quantize(image)
            if accepted_path is not None:
                packet_dir.mkdir(parents=True, exist_ok=True)
                write_image(accepted_path, image)
        known.append(KnownView(camera=view.camera, image=image, gbuf=gbuf, weight=view.weight,
                               name=view.name, edges=edges))
    return known
