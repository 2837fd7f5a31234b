"""
The command line pipeline
=========================

The same steps as the other demos, through the tsdf4d entry point.  Each
call is equivalent to a shell line such as

    tsdf4d train --data demo_out/cli/data --out demo_out/cli/map.ckpt --seed 7 --deterministic

Exit status is 0 on success, 1 on usage errors and 2 on bad input data.
"""

from pathlib import Path

from tsdf4d import synth
from tsdf4d.cli import main

out = Path(__file__).with_name("demo_out") / "cli"
out.mkdir(parents=True, exist_ok=True)

scene = out / "scene.json"
scene.write_text(synth.SceneSpec(azimuth_count=180, elevation_count=12, frames=20,
                                 movers=[synth.Mover("sphere", [0.5], [3.0, 5.0, 1.5], [0.2, 0, 0], 2, 18)]).to_json())

# config file < --set overrides < explicit flags
(out / "map.cfg").write_text("basis_count = 12\ntrain_steps = 800\n")

common = ["--seed", "7", "--deterministic"]
steps = [
    ["synth", "--scene", str(scene), "--out", str(out / "data")],
    ["train", "--data", str(out / "data"), "--out", str(out / "map.ckpt"), "--config", str(out / "map.cfg"),
     "--set", "batch_size=2048", "-v"],
    ["mesh", "--checkpoint", str(out / "map.ckpt"), "--out", str(out / "static.ply")],
    ["mesh", "--checkpoint", str(out / "map.ckpt"), "--out", str(out / "frame10.ply"), "--at-frame", "10"],
    ["slice", "--checkpoint", str(out / "map.ckpt"), "--out", str(out / "slice.csv"), "--axis", "z", "--coord", "1.5"],
    ["segment", "--checkpoint", str(out / "map.ckpt"), "--data", str(out / "data"), "--out", str(out / "labels")],
    ["eval", "--mesh", str(out / "static.ply"), "--gt", str(out / "data" / "gt_static.ply"), "--threshold", "20"],
]
for argv in steps:
    print("$ tsdf4d", " ".join(argv[:1] + argv[1:3]), "...")
    rc = main(argv + common)
    print("exit", rc)

# A usage error and a data error, for the exit codes.
print("bad flag ->", main(["mesh", "--no-such-flag"]))
print("missing checkpoint ->", main(["mesh", "--checkpoint", str(out / "nope.ckpt"), "--out", str(out / "x.ply")]))
