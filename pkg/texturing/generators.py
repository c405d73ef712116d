"""
External image generator interface.
All generator adapters inherit from ExternalGenerator.

The command adapter hands a packet over through a directory: it writes
partial.png, mask.png, condition/ and prompt.txt into packet_<i>/, runs the
configured command and reads packet_<i>/generated.png back.
"""

import asyncio
import json
import logging
import os
import shlex
import tempfile
from abc import ABC, abstractmethod
from pathlib import Path
from typing import Optional, Tuple, Type, Union

import numpy as np
from PIL import Image
from tenacity import RetryCallState, retry, retry_if_exception_type, stop_after_attempt, wait_exponential

from formats.conditions import write_condition
from formats.images import read_image, write_image, write_mask
from geometry.core import TriangleMesh
from geometry.errors import GeneratorFailure, InvalidInput
from rendering.textured import render_textured

from .propagation import PropagationPacket

DEFAULT_TIMEOUT = 600.0
DEFAULT_RETRIES = 3


def generator_timeout() -> float:
    return float(os.getenv('SCENEKIT_GENERATOR_TIMEOUT', DEFAULT_TIMEOUT))


def generator_retries() -> int:
    return int(os.getenv('SCENEKIT_GENERATOR_RETRIES', DEFAULT_RETRIES))


def generator_retry(
    max_attempts: int = DEFAULT_RETRIES,
    exception_type: Union[Type[Exception], Tuple[Type[Exception], ...]] = (GeneratorFailure,),
    min_wait: float = 1,
    max_wait: float = 10,
    logger: Optional[logging.Logger] = None,
):
    """Retry an external call with exponential backoff; the last failure is re-raised."""
    logger = logger or logging.getLogger(__name__)

    def before_sleep(retry_state: RetryCallState):
        logger.warning(f"Operation: [{retry_state.fn.__name__}] attempt {retry_state.attempt_number} "
                       f"failed, exception: {str(retry_state.outcome.exception())}")

    return retry(
        stop=stop_after_attempt(max(1, max_attempts)),
        wait=wait_exponential(multiplier=1, min=min_wait, max=max_wait),
        retry=retry_if_exception_type(exception_type),
        before_sleep=before_sleep,
        reraise=True
    )


async def run_command(command: str, timeout: float, label: str,
                      view_index: Optional[int] = None) -> None:
    """Run a shell command, failing with GeneratorFailure on timeout or non-zero exit."""
    try:
        proc = await asyncio.create_subprocess_shell(
            command, stdout=asyncio.subprocess.PIPE, stderr=asyncio.subprocess.PIPE)
    except OSError as e:
        raise GeneratorFailure(f"{label}: cannot start command: {e}", view_index) from e
    try:
        _, stderr = await asyncio.wait_for(proc.communicate(), timeout=timeout)
    except asyncio.TimeoutError:
        proc.kill()
        await proc.wait()
        raise GeneratorFailure(f"{label}: command timed out after {timeout:.0f}s", view_index)
    if proc.returncode != 0:
        tail = stderr.decode(errors="replace").strip()[-500:]
        raise GeneratorFailure(f"{label}: command exited with code {proc.returncode}: {tail}", view_index)


def format_command(template: str, **values: str) -> str:
    """Fill {name} placeholders with shell-quoted values; other braces are left alone."""
    command = template
    for key, value in values.items():
        command = command.replace("{" + key + "}", shlex.quote(str(value)))
    return command


class ExternalGenerator(ABC):
    """Base class for image generators completing one view per packet."""

    name = "generator"

    @abstractmethod
    async def generate(self, packet: PropagationPacket, workdir: Optional[Path] = None) -> np.ndarray:
        """Return a full (H, W, 3) image in [0, 1] for the packet's camera."""
        pass


def write_packet(packet: PropagationPacket, directory: Path) -> Path:
    directory.mkdir(parents=True, exist_ok=True)
    if packet.partial is not None:
        write_image(directory / "partial.png", packet.partial)
    if packet.mask is not None:
        write_mask(directory / "mask.png", packet.mask)
    write_condition(directory / "condition", packet.condition)
    (directory / "prompt.txt").write_text(packet.prompt, encoding="utf-8")
    with open(directory / "packet.json", "w", encoding="utf-8") as f:
        json.dump({"index": packet.index, "name": packet.name,
                   "full_generation": packet.is_full_generation,
                   "camera": packet.camera.to_dict()}, f, indent=2)
    return directory


class CommandGenerator(ExternalGenerator):
    """Runs an external command per packet. `{packet_dir}` and `{index}` are substituted."""

    name = "command"

    def __init__(self, command: str, timeout: Optional[float] = None, retries: Optional[int] = None,
                 logger: Optional[logging.Logger] = None, min_wait: float = 1, max_wait: float = 10):
        if not command.strip():
            raise InvalidInput("generator command is empty")
        self.command = command
        self.timeout = generator_timeout() if timeout is None else timeout
        self.retries = generator_retries() if retries is None else retries
        self.logger = logger or logging.getLogger(__name__)
        self.min_wait = min_wait
        self.max_wait = max_wait

    async def generate(self, packet: PropagationPacket, workdir: Optional[Path] = None) -> np.ndarray:
        directory = Path(workdir) if workdir is not None else Path(tempfile.mkdtemp(prefix="scenekit_packet_"))
        write_packet(packet, directory)
        attempt = generator_retry(self.retries, min_wait=self.min_wait, max_wait=self.max_wait,
                                  logger=self.logger)(self._run_once)
        return await attempt(packet, directory)

    async def _run_once(self, packet: PropagationPacket, directory: Path) -> np.ndarray:
        output = directory / "generated.png"
        if output.exists():
            output.unlink()
        if "{packet_dir}" in self.command:
            command = format_command(self.command, packet_dir=directory, index=packet.index)
        else:
            command = f"{self.command} {shlex.quote(str(directory))}"
        self.logger.info(f"[propagate] view {packet.index + 1}: running generator")
        await run_command(command, self.timeout, f"generator (view {packet.index + 1})", packet.index)
        if not output.exists():
            raise GeneratorFailure(f"generator wrote no {output}", packet.index)
        try:
            return read_image(output)
        except InvalidInput as e:
            raise GeneratorFailure(f"unreadable generator output: {e}", packet.index) from e


class OracleGenerator(ExternalGenerator):
    """In-process generator that renders a textured ground-truth mesh."""

    name = "oracle"

    def __init__(self, mesh: TriangleMesh):
        self.mesh = mesh

    async def generate(self, packet: PropagationPacket, workdir: Optional[Path] = None) -> np.ndarray:
        image = render_textured(self.mesh, packet.camera)
        if workdir is not None:
            write_packet(packet, Path(workdir))
            write_image(Path(workdir) / "generated.png", image)
        return image


class CommandHook:
    """
    Per-image preprocessing command (delighting, super-resolution). Runs with
    `{input}` and `{output}` placeholders; outputs of another size are resized
    back to the view resolution.
    """

    def __init__(self, command: str, label: str, timeout: Optional[float] = None,
                 retries: Optional[int] = None, logger: Optional[logging.Logger] = None,
                 min_wait: float = 1, max_wait: float = 10):
        self.command = command
        self.label = label
        self.timeout = generator_timeout() if timeout is None else timeout
        self.retries = generator_retries() if retries is None else retries
        self.logger = logger or logging.getLogger(__name__)
        self.min_wait = min_wait
        self.max_wait = max_wait

    async def __call__(self, index: int, image: np.ndarray, directory: Path) -> np.ndarray:
        directory.mkdir(parents=True, exist_ok=True)
        source = directory / f"{self.label}_input.png"
        target = directory / f"{self.label}_output.png"
        write_image(source, image)
        attempt = generator_retry(self.retries, min_wait=self.min_wait, max_wait=self.max_wait,
                                  logger=self.logger)(self._run_once)
        return await attempt(index, image.shape, source, target)

    async def _run_once(self, index: int, shape, source: Path, target: Path) -> np.ndarray:
        if target.exists():
            target.unlink()
        command = format_command(self.command, input=source, output=target, index=index)
        await run_command(command, self.timeout, f"{self.label} hook (view {index + 1})", index)
        if not target.exists():
            raise GeneratorFailure(f"{self.label} hook wrote no {target}", index)
        with Image.open(target) as img:
            img = img.convert("RGB")
            if img.size != (shape[1], shape[0]):
                self.logger.info(f"[propagate] {self.label} output {img.size} resized to {shape[1]}x{shape[0]}")
                img = img.resize((shape[1], shape[0]), Image.LANCZOS)
            data = np.asarray(img, dtype=np.float64) / 255.0
        return data
