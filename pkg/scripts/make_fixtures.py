"""Regenerate the bundled test fixtures under tests/fixtures/.

shift03/ holds a rendered scene (seed 7) distorted by a depth shift of 0.3
in normalized units, together with its camera.  ``sceneshape recover`` on
it should report delta_d close to -0.3.
"""

import shutil
import sys
import tempfile
from pathlib import Path

from sceneshape.cli import main

ROOT = Path(__file__).resolve().parents[1]
DEST = ROOT / "tests" / "fixtures" / "shift03"


def run(argv):
    code = main(argv)
    if code != 0:
        sys.exit(f"command failed ({code}): {' '.join(argv)}")


def build(dest: Path = DEST, seed: int = 7) -> Path:
    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        run(["synth", "--out", str(tmp / "synth"), "--seed", str(seed), "--count", "1"])
        scene = tmp / "synth" / "scene_000"
        run(["distort", "--out", str(tmp / "dist"), "--input", str(scene / "depth.pfm"),
             "--camera", str(scene / "camera.json"), "--mode", "shift", "--delta", "0.3"])
        dest.mkdir(parents=True, exist_ok=True)
        for name in ("distorted.pfm", "distorted.pfm.json", "camera.json", "perturbation.json"):
            shutil.copy(tmp / "dist" / name, dest / name)
        shutil.copy(scene / "scene.json", dest / "scene.json")
    return dest


if __name__ == "__main__":
    print(build())
