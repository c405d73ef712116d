import asyncio
import json
import shlex
import sys
import textwrap
import time

import numpy as np
import pytest

from conftest import front_camera, make_quad
from formats.images import read_image
from geometry.errors import GeneratorFailure, InvalidInput
from rendering.conditioning import edge_map, pack_condition
from rendering.rasterizer import rasterize
from texturing.generators import CommandGenerator, CommandHook, OracleGenerator, format_command
from texturing.propagation import PropagationPacket

PYTHON = shlex.quote(sys.executable)

# writes a constant image sized from packet.json; fails until `fail_times` attempts were made
GENERATOR_SCRIPT = textwrap.dedent("""
    import json, sys
    from pathlib import Path
    from PIL import Image

    packet_dir = Path(sys.argv[1])
    fail_times = int(sys.argv[2]) if len(sys.argv) > 2 else 0
    counter = packet_dir / "attempts.txt"
    attempts = int(counter.read_text()) + 1 if counter.exists() else 1
    counter.write_text(str(attempts))
    if attempts <= fail_times:
        sys.exit(1)
    camera = json.loads((packet_dir / "packet.json").read_text())["camera"]
    Image.new("RGB", (camera["width"], camera["height"]), (51, 102, 153)).save(packet_dir / "generated.png")
""")

UPSCALE_SCRIPT = textwrap.dedent("""
    import sys
    from PIL import Image

    with Image.open(sys.argv[1]) as img:
        img.resize((img.width * 2, img.height * 2), Image.NEAREST).save(sys.argv[2])
""")


@pytest.fixture
def packet():
    quad = make_quad()
    cam = front_camera(24, 16, 20.0, 3.0)
    gbuf = rasterize(quad, cam)
    mask = np.zeros(gbuf.shape, dtype=bool)
    mask[:, :12] = True
    return PropagationPacket(index=2, name="right", camera=cam,
                             condition=pack_condition(gbuf, edge_map(gbuf), quad.bounds()),
                             partial=np.where(mask[..., None], 0.4, 0.0), mask=mask, prompt="a wooden chair")


@pytest.fixture
def script(tmp_path):
    path = tmp_path / "generate.py"
    path.write_text(GENERATOR_SCRIPT)
    return shlex.quote(str(path))


def test_command_generator_round_trip(packet, script, tmp_path):
    gen = CommandGenerator(f"{PYTHON} {script} {{packet_dir}}", timeout=60, retries=1)
    image = asyncio.run(gen.generate(packet, tmp_path / "packet_2"))
    assert image.shape == (16, 24, 3)
    np.testing.assert_allclose(image[0, 0], [0.2, 0.4, 0.6])
    directory = tmp_path / "packet_2"
    assert (directory / "prompt.txt").read_text() == "a wooden chair"
    np.testing.assert_array_equal(read_image(directory / "partial.png")[:, :12], 0.4)
    assert (directory / "condition" / "condition.json").exists()
    assert json.loads((directory / "packet.json").read_text())["index"] == 2


def test_packet_dir_is_appended_without_placeholder(packet, script, tmp_path):
    gen = CommandGenerator(f"{PYTHON} {script}", timeout=60, retries=1)
    image = asyncio.run(gen.generate(packet, tmp_path / "p"))
    assert image.shape == (16, 24, 3)


def test_retry_until_success(packet, script, tmp_path):
    gen = CommandGenerator(f"{PYTHON} {script} {{packet_dir}} 2", timeout=60, retries=3, min_wait=0, max_wait=0)
    asyncio.run(gen.generate(packet, tmp_path / "p"))
    assert (tmp_path / "p" / "attempts.txt").read_text() == "3"


def test_retries_exhausted(packet, script, tmp_path):
    gen = CommandGenerator(f"{PYTHON} {script} {{packet_dir}} 5", timeout=60, retries=2, min_wait=0, max_wait=0)
    with pytest.raises(GeneratorFailure) as info:
        asyncio.run(gen.generate(packet, tmp_path / "p"))
    assert info.value.view_index == 2
    assert info.value.exit_code == 3
    assert (tmp_path / "p" / "attempts.txt").read_text() == "2"


def test_timeout(packet, tmp_path):
    gen = CommandGenerator(f'exec {PYTHON} -c "import time; time.sleep(5)"', timeout=0.5, retries=1)
    start = time.monotonic()
    with pytest.raises(GeneratorFailure, match="timed out"):
        asyncio.run(gen.generate(packet, tmp_path / "p"))
    assert time.monotonic() - start < 4.0


def test_missing_output(packet, tmp_path):
    gen = CommandGenerator(f'{PYTHON} -c "pass"', timeout=60, retries=1)
    with pytest.raises(GeneratorFailure, match="generated.png"):
        asyncio.run(gen.generate(packet, tmp_path / "p"))


def test_settings_from_environment(monkeypatch):
    monkeypatch.setenv("SCENEKIT_GENERATOR_TIMEOUT", "7")
    monkeypatch.setenv("SCENEKIT_GENERATOR_RETRIES", "5")
    gen = CommandGenerator("true")
    assert (gen.timeout, gen.retries) == (7.0, 5)
    with pytest.raises(InvalidInput):
        CommandGenerator("   ")


def test_format_command_quotes_values():
    out = format_command("run {input} {output} {keep}", input="a b.png", output="c.png")
    assert out == "run 'a b.png' c.png {keep}"


def test_oracle_writes_packet(packet, tmp_path):
    image = asyncio.run(OracleGenerator(make_quad(texture=np.full((4, 4, 3), 0.6))).generate(packet, tmp_path))
    assert image.shape == (16, 24, 3)
    assert (tmp_path / "mask.png").exists()
    np.testing.assert_allclose(read_image(tmp_path / "generated.png"), np.round(image * 255) / 255)


def test_hook_output_resized_to_view(tmp_path):
    script = tmp_path / "upscale.py"
    script.write_text(UPSCALE_SCRIPT)
    hook = CommandHook(f"{PYTHON} {shlex.quote(str(script))} {{input}} {{output}}", "superres",
                       timeout=60, retries=1)
    image = np.full((10, 14, 3), 0.6)
    out = asyncio.run(hook(0, image, tmp_path / "hooks"))
    assert out.shape == (10, 14, 3)
    np.testing.assert_allclose(out, 153 / 255)
