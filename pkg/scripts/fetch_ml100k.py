"""Extract MovieLens-100K interactions from the recbole wheel on PyPI.

Writes ``user item rating timestamp`` lines (no header) to the output path.
Usage: python3 scripts/fetch_ml100k.py data/raw/ml-100k.txt
"""

import argparse
import subprocess
import sys
import tempfile
import zipfile
from pathlib import Path

MEMBER = "recbole/dataset_example/ml-100k/ml-100k.inter"


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("output", type=Path)
    ap.add_argument("--version", default="1.2.1", help="recbole wheel version")
    args = ap.parse_args()
    with tempfile.TemporaryDirectory() as tmp:
        subprocess.run([sys.executable, "-m", "pip", "download", "--no-deps", "-q",
                        f"recbole=={args.version}", "-d", tmp], check=True)
        wheel = next(Path(tmp).glob("recbole-*.whl"))
        with zipfile.ZipFile(wheel) as zf:
            lines = zf.read(MEMBER).decode("utf-8").splitlines()
    args.output.parent.mkdir(parents=True, exist_ok=True)
    body = [ln for ln in lines[1:] if ln.strip()]
    args.output.write_text("\n".join(body) + "\n", encoding="utf-8")
    print(f"wrote {len(body)} interactions to {args.output}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
