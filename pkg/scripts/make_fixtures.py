"""Write the config/weights fixture pairs used by the test suite.

Weights are packed with ``struct`` directly (no handsoff code involved), so
the fixtures stay an independent check on the loader.

    python scripts/make_fixtures.py [outdir]
"""

import math
import struct
import sys
from pathlib import Path

OUT = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(__file__).resolve().parents[1] / "tests" / "fixtures"


def header(major, minor, revision=0, seen=0):
    head = struct.pack("<3i", major, minor, revision)
    if major * 10 + minor >= 2:
        return head + struct.pack("<q", seen)
    return head + struct.pack("<i", seen)


def floats(values):
    return struct.pack(f"<{len(values)}f", *values)


def pattern(n, seed):
    """Deterministic hand-chosen values in roughly [-0.55, 0.55]."""
    return [(((k + seed) * 37) % 23 - 11) / 20.0 for k in range(n)]


def bn_block(n, seed):
    beta = [0.05 * c - 0.1 + 0.01 * seed for c in range(n)]
    gamma = [1.0 + 0.1 * c for c in range(n)]
    mean = [0.02 * c - 0.01 * seed for c in range(n)]
    var = [0.5 + 0.25 * c for c in range(n)]
    return beta + gamma + mean + var


FIXTURES = {}

FIXTURES["header_only"] = (
    """# no convolutional layers: the weights file is just a header
[net]
width=4
height=4
channels=1

[upsample]
stride=2
""",
    header(0, 2, 0, 32013312),
)

FIXTURES["single_conv"] = (
    """[net]
width=4
height=4
channels=1

[convolutional]
filters=1
size=1
stride=1
pad=0
activation=linear
""",
    # old-style header: 32-bit images_seen
    header(0, 1, 0, 1000) + floats([0.25]) + floats([1.5]),
)

FIXTURES["bn_conv"] = (
    """[net]
width=6
height=6
channels=3

[convolutional]
batch_normalize=1
filters=4
size=3
stride=1
pad=1
activation=leaky
""",
    header(0, 2, 5, 64000) + floats(bn_block(4, 0)) + floats(pattern(4 * 3 * 3 * 3, 1)),
)

TINY_CFG = """# five-layer end-to-end fixture
[net]
width=8
height=8
channels=3

[convolutional]
batch_normalize=1
filters=4
size=3
stride=1
pad=1
activation=leaky

[convolutional]
filters=4
size=1
stride=1
pad=0
activation=linear

[shortcut]
from=-2
activation=linear

[convolutional]
filters=18
size=3
stride=2
pad=1
activation=linear

[yolo]
mask=0,1,2
anchors=3,4, 6,5, 9,9
classes=1
num=3
"""


def tiny_weights():
    body = floats(bn_block(4, 0)) + floats(pattern(4 * 3 * 9, 3))
    body += floats([0.1, -0.05, 0.0, 0.05]) + floats(pattern(4 * 4, 7))
    # head bias: lift objectness (attr 4) and class (attr 5) logits of each slot
    head_bias = []
    for slot in range(3):
        head_bias += [0.0, 0.0, 0.1 * slot, -0.1 * slot, 0.3 - 0.4 * slot, 0.8]
    head_w = [3.0 * math.sin(0.37 * k + 0.5) * 0.3 for k in range(18 * 4 * 9)]
    body += floats(head_bias) + floats(head_w)
    return header(0, 2, 0, 12345) + body


FIXTURES["tiny"] = (TINY_CFG, tiny_weights())

BRANCH_CFG = """[net]
width=16
height=16
channels=3

[convolutional]
batch_normalize=1
filters=8
size=3
stride=1
pad=1
activation=leaky

[convolutional]
batch_normalize=1
filters=8
size=3
stride=2
pad=1
activation=leaky

[upsample]
stride=2

[route]
layers=-1, 0

[convolutional]
filters=18
size=1
stride=1
pad=1
padding=0
activation=linear

[yolo]
mask=0,1,2
anchors=2,3, 4,6, 8,8
classes=1
num=3
"""


def branch_weights():
    body = floats(bn_block(8, 1)) + floats(pattern(8 * 3 * 9, 2))
    body += floats(bn_block(8, 2)) + floats(pattern(8 * 8 * 9, 5))
    body += floats(pattern(18, 11)) + floats(pattern(18 * 16, 13))
    return header(1, 0, 0, 7) + body


FIXTURES["branch"] = (BRANCH_CFG, branch_weights())


def main():
    OUT.mkdir(parents=True, exist_ok=True)
    for name, (cfg, weights) in FIXTURES.items():
        (OUT / f"{name}.cfg").write_text(cfg, encoding="utf-8")
        (OUT / f"{name}.weights").write_bytes(weights)
        print(f"{name}: {len(weights)} bytes")


if __name__ == "__main__":
    main()
