import os
from pathlib import Path


def out_dir(name: str) -> Path:
    d = Path(os.environ.get("GREENMESH_OUT", "out")) / "experiments" / name
    d.mkdir(parents=True, exist_ok=True)
    return d
