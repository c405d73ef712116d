"""
Per-instance pose optimization.

Each epoch runs `iters_per_epoch` Adam steps on (T, r, log_s). The first
`warmup_3d_iters` steps of every epoch use only the 3D Chamfer term, the rest
use the joint 3D + 2D loss. The pose of the epoch with the lowest end-of-epoch
joint loss is returned.
"""

import logging
import math
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Any, Callable, Dict, List, Mapping, Optional, Tuple

import numpy as np

from geometry.chamfer import RegistrationTarget, loss_and_grad
from geometry.core import PinholeCamera, PointCloud, PoseParams
from geometry.errors import DegenerateCloud, EmptyInput, InvalidInput, NonFiniteLoss

LOSS_MODES = ("joint", "3d", "2d")


@dataclass(frozen=True)
class OptimConfig:
    """Optimization schedule; defaults are the published layout settings."""
    lambda1: float = 1.0
    lambda2: float = 5e-2
    epochs: int = 20
    iters_per_epoch: int = 2000
    warmup_3d_iters: int = 1200
    lr: float = 0.01
    lr_translation: Optional[float] = None
    lr_rotation: Optional[float] = None
    lr_scale: Optional[float] = None
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    max_points: int = 4096
    seed: int = 0
    min_target_points: int = 50
    loss_mode: str = "joint"
    record_iterations: bool = False

    def __post_init__(self):
        if self.epochs < 1 or self.iters_per_epoch < 1:
            raise InvalidInput("epochs and iters_per_epoch must be >= 1")
        if not 0 <= self.warmup_3d_iters <= self.iters_per_epoch:
            raise InvalidInput(
                f"warmup_3d_iters ({self.warmup_3d_iters}) must be within [0, iters_per_epoch]")
        for rate in [self.lr, *self.learning_rates()]:
            if not (rate > 0 and math.isfinite(rate)):
                raise InvalidInput(f"learning rates must be positive, got {rate}")
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise InvalidInput("loss weights must be non-negative")
        if not (0 <= self.adam_beta1 < 1 and 0 <= self.adam_beta2 < 1) or self.adam_eps <= 0:
            raise InvalidInput("invalid Adam hyperparameters")
        if self.max_points < 1:
            raise InvalidInput("max_points must be >= 1")
        if self.loss_mode not in LOSS_MODES:
            raise InvalidInput(f"loss_mode must be one of {LOSS_MODES}, got {self.loss_mode!r}")

    @classmethod
    def from_mapping(cls, data: Mapping[str, Any]) -> "OptimConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise InvalidInput(f"Unknown optimizer config keys: {sorted(unknown)}")
        return cls(**dict(data))

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    def scaled(self, epochs: int, iters_per_epoch: int) -> "OptimConfig":
        """Shorter schedule keeping the warmup fraction."""
        warmup = round(self.warmup_3d_iters * iters_per_epoch / self.iters_per_epoch)
        return replace(self, epochs=epochs, iters_per_epoch=iters_per_epoch, warmup_3d_iters=warmup)

    def learning_rates(self) -> np.ndarray:
        lr_t = self.lr if self.lr_translation is None else self.lr_translation
        lr_r = self.lr if self.lr_rotation is None else self.lr_rotation
        lr_s = self.lr if self.lr_scale is None else self.lr_scale
        return np.array([lr_t] * 3 + [lr_r] * 3 + [lr_s])

    def final_weights(self) -> Tuple[float, float]:
        """(3D weight, 2D weight) of the loss used for epoch selection."""
        if self.loss_mode == "3d":
            return self.lambda1, 0.0
        if self.loss_mode == "2d":
            return 0.0, self.lambda2
        return self.lambda1, self.lambda2

    def weights(self, iteration: int) -> Tuple[float, float]:
        """(3D weight, 2D weight) in effect at `iteration` within an epoch."""
        if self.loss_mode == "joint" and iteration < self.warmup_3d_iters:
            return self.lambda1, 0.0
        return self.final_weights()


class Adam:
    """Adam over a flat parameter vector with per-component learning rates."""

    def __init__(self, lr: np.ndarray, beta1: float = 0.9, beta2: float = 0.999, epsilon: float = 1e-8):
        self.lr = np.asarray(lr, dtype=np.float64)
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.reset()

    def reset(self) -> None:
        self.m = np.zeros_like(self.lr)
        self.v = np.zeros_like(self.lr)
        self.t = 0

    def step(self, params: np.ndarray, grad: np.ndarray) -> np.ndarray:
        self.t += 1
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * (grad * grad)
        m_hat = self.m / (1.0 - self.beta1 ** self.t)
        v_hat = self.v / (1.0 - self.beta2 ** self.t)
        return params - self.lr * m_hat / (np.sqrt(v_hat) + self.epsilon)


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    pose: PoseParams


@dataclass
class OptimTrace:
    initial_loss: float
    epochs: List[EpochRecord] = field(default_factory=list)
    iteration_losses: Optional[List[float]] = None

    @property
    def best_epoch(self) -> int:
        return int(np.argmin([rec.loss for rec in self.epochs]))

    @property
    def best(self) -> EpochRecord:
        return self.epochs[self.best_epoch]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "initial_loss": self.initial_loss,
            "best_epoch": self.best_epoch,
            "best_loss": self.best.loss,
            "epochs": [{"epoch": r.epoch, "loss": r.loss, "pose": r.pose.to_dict()} for r in self.epochs],
        }


def subsample(cloud: PointCloud, max_points: int, rng: np.random.Generator) -> PointCloud:
    """Uniform random subset of at most `max_points`, original order kept."""
    if len(cloud) <= max_points:
        return cloud
    idx = np.sort(rng.choice(len(cloud), size=max_points, replace=False))
    return cloud.subset(idx)


def init_pose(M: PointCloud, PC: PointCloud) -> PoseParams:
    """Centroid offset and bounding-box diagonal ratio; no rotation."""
    if M.is_empty or PC.is_empty:
        raise EmptyInput("init_pose needs non-empty clouds")
    diag_m = M.bbox_diagonal()
    diag_pc = PC.bbox_diagonal()
    if diag_m <= 0 or diag_pc <= 0:
        raise DegenerateCloud("cloud bounding box has zero diagonal")
    return PoseParams(T=PC.centroid() - M.centroid(), r=np.zeros(3), log_s=math.log(diag_pc / diag_m))


def optimize_pose(M: PointCloud, PC: PointCloud, cam: PinholeCamera, cfg: OptimConfig,
                  logger: Optional[logging.Logger] = None, init: Optional[PoseParams] = None,
                  on_epoch: Optional[Callable[[EpochRecord], None]] = None,
                  tag: str = "instance") -> Tuple[PoseParams, OptimTrace]:
    """Run the staged Adam schedule and return the lowest-loss epoch's pose."""
    logger = logger or logging.getLogger(__name__)
    rng = np.random.default_rng(cfg.seed)
    M = subsample(M, cfg.max_points, rng)
    PC = subsample(PC, cfg.max_points, rng)
    if M.is_empty or PC.is_empty:
        raise EmptyInput("optimize_pose needs non-empty clouds")
    target = RegistrationTarget(PC, cam)

    def evaluate(pose_vec: np.ndarray, w3: float, w2: float):
        return loss_and_grad(PoseParams.from_vector(pose_vec), M, PC, cam, w3, w2,
                             use2d=w2 > 0, target=target)

    pose = init or init_pose(M, PC)
    final_w3, final_w2 = cfg.final_weights()
    initial_loss, _ = evaluate(pose.as_vector(), final_w3, final_w2)
    trace = OptimTrace(initial_loss=initial_loss,
                       iteration_losses=[] if cfg.record_iterations else None)
    logger.info(f"[optimize] [{tag}] start: {len(M)} source / {len(PC)} target points, "
                f"initial loss={initial_loss:.6g}, mode={cfg.loss_mode}")

    adam = Adam(cfg.learning_rates(), cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)
    vec = pose.as_vector()
    for epoch in range(cfg.epochs):
        # moments restart every epoch
        adam.reset()
        for it in range(cfg.iters_per_epoch):
            w3, w2 = cfg.weights(it)
            loss, grad = evaluate(vec, w3, w2)
            grad_vec = grad.as_vector()
            new_vec = adam.step(vec, grad_vec)
            if not (math.isfinite(loss) and np.all(np.isfinite(grad_vec)) and np.all(np.isfinite(new_vec))):
                raise NonFiniteLoss(
                    f"non-finite loss or update at epoch {epoch}, iteration {it}",
                    diagnostics={"epoch": epoch, "iteration": it, "loss": loss,
                                 "pose": vec.tolist(), "gradient": grad_vec.tolist()})
            vec = new_vec
            if trace.iteration_losses is not None:
                trace.iteration_losses.append(loss)

        end_loss, _ = evaluate(vec, final_w3, final_w2)
        if not math.isfinite(end_loss):
            raise NonFiniteLoss(f"non-finite end-of-epoch loss at epoch {epoch}",
                                diagnostics={"epoch": epoch, "pose": vec.tolist()})
        record = EpochRecord(epoch=epoch, loss=end_loss, pose=PoseParams.from_vector(vec))
        trace.epochs.append(record)
        if on_epoch is not None:
            on_epoch(record)
        logger.info(f"[optimize] [{tag}] epoch {epoch + 1}/{cfg.epochs} loss={end_loss:.6g}")

    best = trace.best
    logger.info(f"[optimize] [{tag}] best epoch {best.epoch + 1} loss={best.loss:.6g}")
    return best.pose, trace
