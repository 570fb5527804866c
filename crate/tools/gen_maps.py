#!/usr/bin/env python3
"""Regenerates the bundled map fixtures under crates/core/fixtures/maps."""
import json
import os

LANE_W = 3.5
HALF = 10.0  # intersection half-size
EW = [["green", 12.0], ["yellow", 3.0], ["red", 15.0]]
NS = [["red", 15.0], ["green", 12.0], ["yellow", 3.0]]


def grid(name, xs, ys, arm, speed):
    lanes, lights, inters = [], [], []
    light_ids = {}
    for j, y in enumerate(ys):
        for i, x in enumerate(xs):
            odd = (i + j) % 2 == 1
            ew, ns = (NS, EW) if odd else (EW, NS)
            ids = []
            for approach, pos, sched in [
                ("w", (x - HALF, y - LANE_W / 2), ew),
                ("e", (x + HALF, y + LANE_W / 2), ew),
                ("s", (x + LANE_W / 2, y - HALF), ns),
                ("n", (x - LANE_W / 2, y + HALF), ns),
            ]:
                lid = len(lights)
                lights.append({"id": lid, "position": list(pos), "schedule": sched})
                light_ids[(i, j, approach)] = lid
                ids.append(lid)
            inters.append({
                "polygon": [[x - HALF, y - HALF], [x + HALF, y - HALF],
                            [x + HALF, y + HALF], [x - HALF, y + HALF]],
                "lights": ids,
            })

    def add(a, b, heading, end_node):
        lid = len(lanes)
        light = None
        if end_node is not None:
            light = light_ids[end_node]
        lanes.append({
            "id": lid, "centerline": [list(a), list(b)], "width": LANE_W,
            "speed_limit": speed, "left_crossable": False, "right_crossable": False,
            "successors": [], "light": light, "_h": heading, "_end": end_node,
            "_start": None,
        })
        return lid

    # horizontal roads
    for j, y in enumerate(ys):
        stations = [(xs[0] - HALF - arm, None)] + [(x, i) for i, x in enumerate(xs)] + [(xs[-1] + HALF + arm, None)]
        for (xa, ia), (xb, ib) in zip(stations, stations[1:]):
            a0 = xa + HALF if ia is not None else xa
            b0 = xb - HALF if ib is not None else xb
            e = add((a0, y - LANE_W / 2), (b0, y - LANE_W / 2), "E", (ib, j, "w") if ib is not None else None)
            lanes[e]["_start"] = (ia, j) if ia is not None else None
            w = add((b0, y + LANE_W / 2), (a0, y + LANE_W / 2), "W", (ia, j, "e") if ia is not None else None)
            lanes[w]["_start"] = (ib, j) if ib is not None else None
    # vertical roads
    for i, x in enumerate(xs):
        stations = [(ys[0] - HALF - arm, None)] + [(y, j) for j, y in enumerate(ys)] + [(ys[-1] + HALF + arm, None)]
        for (ya, ja), (yb, jb) in zip(stations, stations[1:]):
            a0 = ya + HALF if ja is not None else ya
            b0 = yb - HALF if jb is not None else yb
            n = add((x + LANE_W / 2, a0), (x + LANE_W / 2, b0), "N", (i, jb, "s") if jb is not None else None)
            lanes[n]["_start"] = (i, ja) if ja is not None else None
            s = add((x - LANE_W / 2, b0), (x - LANE_W / 2, a0), "S", (i, ja, "n") if ja is not None else None)
            lanes[s]["_start"] = (i, jb) if jb is not None else None

    reverse = {"E": "W", "W": "E", "N": "S", "S": "N"}
    for l in lanes:
        if l["_end"] is None:
            continue
        node = l["_end"][:2]
        for m in lanes:
            if m["_start"] == node and m["_h"] != reverse[l["_h"]]:
                l["successors"].append(m["id"])
    for l in lanes:
        del l["_h"], l["_end"], l["_start"]
    return {
        "schema_version": 1, "name": name, "waypoint_spacing": 5.0,
        "lanes": lanes, "lights": lights, "intersections": inters,
    }


def straight():
    return {
        "schema_version": 1, "name": "straight", "waypoint_spacing": 5.0,
        "lanes": [
            {"id": 0, "centerline": [[0.0, 0.0], [200.0, 0.0]], "width": LANE_W, "speed_limit": 12.0,
             "left_crossable": True, "right_crossable": False, "successors": [], "light": None},
            {"id": 1, "centerline": [[0.0, LANE_W], [200.0, LANE_W]], "width": LANE_W, "speed_limit": 12.0,
             "left_crossable": False, "right_crossable": True, "successors": [], "light": None},
        ],
        "lights": [], "intersections": [],
    }


def main():
    out = os.path.join(os.path.dirname(__file__), "..", "crates", "core", "fixtures", "maps")
    maps = {
        "straight": straight(),
        "crossmap": grid("crossmap", [0.0], [0.0], 100.0, 10.0),
        "town": grid("town", [0.0, 90.0, 180.0], [0.0, 90.0, 180.0], 50.0, 10.0),
    }
    for name, doc in maps.items():
        with open(os.path.join(out, name + ".json"), "w") as f:
            json.dump(doc, f, indent=1)
            f.write("\n")


if __name__ == "__main__":
    main()
