"""Regenerate the shared rasterization fixtures under fixtures/rasterization.

Each fixture records one wire-format geometry payload and the exact set of
foreground pixels the server produces for it. The browser client re-runs
the same geometry through its own rasterizer and must match pixel for
pixel, so these files are the single source of truth for both sides.
"""

import json
from pathlib import Path

import numpy as np

from memseg.rasterize import rasterize_geometry

CASES = [
    ("box_basic", "bounding_box", {"corners": [[2, 3], [5, 7]]}, (12, 12), 0),
    ("box_reversed_corners", "bounding_box", {"corners": [[9, 8], [4, 2]]}, (12, 12), 3),
    ("box_fractional", "bounding_box", {"corners": [[1.5, 1.49], [3.5, 6.51]]}, (10, 10), 1),
    ("box_clipped", "bounding_box", {"corners": [[-4, -2], [5, 20]]}, (10, 10), 2),
    ("scribble_horizontal_t1", "scribble",
     {"points": [[4, 1], [4, 8]], "thickness": 1}, (10, 12), 0),
    ("scribble_diagonal_t1", "scribble",
     {"points": [[0, 0], [7, 5]], "thickness": 1}, (10, 10), 4),
    ("scribble_polyline_t3", "scribble",
     {"points": [[2, 2], [2, 9], [8, 9], [8, 3]], "thickness": 3}, (14, 14), 5),
    ("scribble_fractional_default_thickness", "scribble",
     {"points": [[3.5, 2.49], [6.49, 9.5]]}, (12, 14), 0),
    ("extreme_plus_t1", "extreme_points",
     {"points": [[1, 5], [9, 5], [5, 1], [5, 9]], "thickness": 1}, (11, 11), 0),
    ("extreme_border_t3", "extreme_points",
     {"points": [[0, 0], [0, 10], [10, 0], [10, 10]], "thickness": 3}, (11, 11), 6),
    ("extreme_fractional_default_thickness", "extreme_points",
     {"points": [[2.5, 3.49], [8.5, 3.49], [5.5, 0.5], [5.49, 7.51]]}, (12, 10), 2),
]


def main() -> None:
    out_dir = Path(__file__).resolve().parent.parent / "fixtures" / "rasterization"
    out_dir.mkdir(parents=True, exist_ok=True)
    for name, itype, geometry, shape, slice_index in CASES:
        g = rasterize_geometry(itype, geometry, shape, slice_index)
        fg = sorted(map(tuple, np.argwhere(g.pixels == 1).tolist()))
        payload = {
            "name": name,
            "interaction_type": itype,
            "geometry": geometry,
            "shape": list(shape),
            "slice_index": slice_index,
            "foreground": [list(p) for p in fg],
        }
        path = out_dir / f"{name}.json"
        path.write_text(json.dumps(payload, indent=1) + "\n")
        print(f"wrote {path.name}: {len(fg)} px")


if __name__ == "__main__":
    main()
