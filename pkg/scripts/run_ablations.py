"""Write one CSV per ablation grid for a trained checkpoint.

    python scripts/run_ablations.py runs/desk/model/model.npz --scenes runs/desk/drop_scenes
"""
import argparse
import sys
from pathlib import Path

from trajformer.cli import GRIDS, main

if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("checkpoint", type=Path)
    ap.add_argument("--scenes", type=Path, required=True)
    ap.add_argument("--max-scenes", type=int)
    ap.add_argument("--grids", nargs="*", default=sorted(GRIDS), choices=sorted(GRIDS))
    ap.add_argument("--out", type=Path, default=Path("runs/ablations"))
    a = ap.parse_args()
    for grid in a.grids:
        argv = ["plotdata", "--scenes", str(a.scenes), "--checkpoint", str(a.checkpoint), "--grid", grid, "--out", str(a.out)]
        if a.max_scenes:
            argv += ["--max-scenes", str(a.max_scenes)]
        if main(argv):
            sys.exit(1)
