"""Simulate train/test scenes, train the desk-scale model, track and score the test split.

    python scripts/train_desk.py --out runs/desk
"""
import argparse
import sys
from pathlib import Path

from trajformer.cli import main


def step(*argv) -> None:
    code = main([str(a) for a in argv])
    if code:
        sys.exit(code)


def run(out: Path, train_scenes: int, test_scenes: int, noise: str, epochs: int) -> None:
    step("simulate", "--scenes", train_scenes, "--frames", 30, "--seed", 100, "--noise", noise, "--out", out / "train_scenes")
    step("simulate", "--scenes", test_scenes, "--seed", 20000, "--noise", noise, "--out", out / "test_scenes")
    step("train", "--scenes", out / "train_scenes", "--dim", 32, "--points", 16, "--point-blocks", 1,
         "--rounds", 2, "--epochs", epochs, "--batch", 4, "--out", out / "model")
    step("track", "--scenes", out / "test_scenes", "--checkpoint", out / "model" / "model.npz", "--out", out / "tracks")
    step("eval", "--scenes", out / "test_scenes", "--tracks", out / "tracks", "--label", "desk", "--out", out / "metrics")


if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", type=Path, default=Path("runs/desk"))
    ap.add_argument("--train-scenes", type=int, default=60)
    ap.add_argument("--test-scenes", type=int, default=20)
    ap.add_argument("--noise", default="centerpoint-like")
    ap.add_argument("--epochs", type=int, default=15)
    a = ap.parse_args()
    run(a.out, a.train_scenes, a.test_scenes, a.noise, a.epochs)
