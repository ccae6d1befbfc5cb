import os
import sys


def output_dir(name: str) -> str:
    """First CLI argument, else ./demo_output/<name>."""
    out = sys.argv[1] if len(sys.argv) > 1 else os.path.join("demo_output", name)
    os.makedirs(out, exist_ok=True)
    return out
