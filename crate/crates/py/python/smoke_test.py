"""Smoke test for the gausshead extension: python python/smoke_test.py"""

import math
import tempfile
from pathlib import Path

import numpy as np

import gausshead


def main():
    avatar = gausshead.Avatar.fixture(seed=7, resolution=64, threads=1)
    assert avatar.gaussian_count == 64 * 64
    assert avatar.expression_dim == 10
    assert avatar.validate() == []

    raw = avatar.render(width=96, height=80)
    image = np.frombuffer(raw, dtype=np.uint8).reshape(80, 96, 4)
    assert image[..., 3].max() > 0, "head should cover some pixels"
    assert image[0, 0, 3] == 0, "corner should be background"

    again = avatar.render(width=96, height=80)
    assert again == raw, "renders are deterministic"
    smiling = avatar.render(psi=[1.5, -1.0], jaw=[0.2, 0.0, 0.0], width=96, height=80)
    assert smiling != raw

    metrics = avatar.metrics(psi=[0.5])
    assert all(math.isfinite(v) for v in metrics.values()), metrics

    with tempfile.TemporaryDirectory() as d:
        path = Path(d) / "avatar.agav"
        avatar.save(str(path))
        loaded = gausshead.Avatar.load(str(path), threads=1)
        assert loaded.render(width=96, height=80) == raw
        try:
            gausshead.Avatar.load(str(Path(d) / "missing.agav"))
        except FileNotFoundError:
            pass
        else:
            raise AssertionError("missing asset should raise")

    try:
        avatar.render(psi=[0.0] * 11)
    except ValueError:
        pass
    else:
        raise AssertionError("too many coefficients should raise")

    print(f"gausshead {gausshead.__version__}: ok")


if __name__ == "__main__":
    main()
