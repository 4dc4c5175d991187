# %% [markdown]
# # Command line and tensor files
#
# Every ``saca`` subcommand is also reachable as ``sacanet.cli.main``. Tensors
# on disk use a one-line JSON header followed by a little-endian payload.

# %%
import json
import tempfile
from pathlib import Path

import numpy as np

from sacanet import stf
from sacanet.cli import main

work = Path(tempfile.mkdtemp())
arr = np.arange(6, dtype=np.float32).reshape(2, 3)
stf.save(work / "a.stf", arr)
print((work / "a.stf").read_bytes().split(b"\n")[0].decode())
print("round trip exact:", stf.load(work / "a.stf").tobytes() == arr.tobytes())

# %%
cfg = {"height": 16, "width": 16, "c_backbone": 4, "c_attn": 4, "epsilon": 2, "patch_h": 2, "patch_w": 2,
       "xi": 1, "steps": 300, "learning_rate": 0.2, "num_images": 4, "eval_images": 2}
(work / "cfg.json").write_text(json.dumps(cfg))
main(["train-toy", "--config", str(work / "cfg.json"), "--out", str(work / "trace.json"),
      "--save-params", str(work / "params.stf")])
main(["make-toy", "--config", str(work / "cfg.json"), "--out", str(work / "data"), "--split", "eval"])

(work / "pred").mkdir()
(work / "gt").mkdir()
for img in sorted((work / "data").glob("*.image.stf")):
    key = img.name.split(".")[0]
    main(["forward", "--image", str(img), "--params", str(work / "params.stf"), "--out", str(work / "pred" / f"{key}.stf")])
    (work / "gt" / f"{key}.stf").write_bytes((work / "data" / f"{key}.label.stf").read_bytes())
main(["eval", "--pred", str(work / "pred"), "--gt", str(work / "gt"), "--report", str(work / "report.json")])
print({k: round(v, 3) for k, v in json.loads((work / "report.json").read_text()).items() if k in ("OA", "mIoU", "AF")})

# %% [markdown]
# Errors map to exit codes: 1 for invalid input, 2 for unreadable files.

# %%
print("missing config ->", main(["profile", "--config", str(work / "missing.json")]))
(work / "bad.json").write_text(json.dumps({"height": 30}))
print("bad config ->", main(["profile", "--config", str(work / "bad.json")]))
