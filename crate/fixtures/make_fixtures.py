"""Regenerate the grid fixtures in this directory.

Requires `pypower` (for the IEEE 14/118 source data) and numpy. The output
files are committed, so this only needs to run when the conversion rules
below change.

Conversion rules
----------------
* Only generators with non-zero scheduled output in the source case are kept
  (19 units for IEEE-118; for IEEE-14 the bus-6 unit is kept as well).
  Synchronous condensers are dropped.
* A fixed subset of those units is converted to wind. The unit's scheduled
  output becomes the wind forecast at its bus and the unit is removed from the
  controllable set.
* Line limits are absent from the source cases. Each line gets
  f_max = max(ceil10(1.25 * |f_l|), floor) where f_l is the line flow under a
  lossless economic dispatch (line limits ignored, quadratic costs).
"""

import json
import math

import numpy as np
from pypower.api import case14, case118

HERE = __file__.rsplit("/", 1)[0]


def economic_dispatch(c2, c1, pmin, pmax, demand):
    lo, hi = 0.0, 1e4
    for _ in range(200):
        lam = 0.5 * (lo + hi)
        p = np.clip(np.where(c2 > 0, (lam - c1) / (2 * c2 + 1e-300), pmax), pmin, pmax)
        if p.sum() < demand:
            lo = lam
        else:
            hi = lam
    return p


def ptdf(nb, lines, slack):
    b = np.zeros((nb, nb))
    for f, t, x in lines:
        y = 1.0 / x
        b[f, f] += y
        b[t, t] += y
        b[f, t] -= y
        b[t, f] -= y
    keep = [i for i in range(nb) if i != slack]
    binv = np.zeros((nb, nb))
    binv[np.ix_(keep, keep)] = np.linalg.inv(b[np.ix_(keep, keep)])
    h = np.zeros((len(lines), nb))
    for l, (f, t, x) in enumerate(lines):
        h[l] = (binv[f] - binv[t]) / x
    return h


def convert(src, wind_buses, extra_wind, keep, floor, name):
    bus = src["bus"]
    gen = src["gen"]
    cost = src["gencost"]
    ids = [int(b) for b in bus[:, 0]]
    index = {b: i for i, b in enumerate(ids)}
    slack = int(bus[bus[:, 1] == 3][0, 0])

    wind = {b: 0.0 for b in ids}
    gens = []
    for g in range(len(gen)):
        b = int(gen[g, 0])
        pg = float(gen[g, 1])
        if pg <= 0 and b not in keep:
            continue
        if b in wind_buses:
            wind[b] += pg
            continue
        gens.append(
            {
                "id": len(gens) + 1,
                "bus": b,
                "p_min": float(gen[g, 9]),
                "p_max": float(gen[g, 8]),
                "c1": float(cost[g, 5]),
                "c2": float(cost[g, 4]),
            }
        )
    for b, w in extra_wind.items():
        wind[b] += w

    lines = [(index[int(r[0])], index[int(r[1])], float(r[3])) for r in src["branch"]]
    h = ptdf(len(ids), lines, index[slack])

    load = np.array([float(r[2]) for r in bus])
    w = np.array([wind[b] for b in ids])
    demand = load.sum() - w.sum()
    c2 = np.array([g["c2"] for g in gens])
    c1 = np.array([g["c1"] for g in gens])
    pmin = np.array([g["p_min"] for g in gens])
    pmax = np.array([g["p_max"] for g in gens])
    p = economic_dispatch(c2, c1, pmin, pmax, demand)
    inj = w - load
    for g, pg in zip(gens, p):
        inj[index[g["bus"]]] += pg
    flows = h @ inj

    case = {
        "name": name,
        "base_mva": float(src["baseMVA"]),
        "slack_bus": slack,
        "buses": [
            {"id": b, "load": float(load[i]), "wind_forecast": float(w[i])}
            for i, b in enumerate(ids)
        ],
        "lines": [
            {
                "id": l + 1,
                "from": ids[f],
                "to": ids[t],
                "reactance": x,
                "f_max": float(max(10 * math.ceil(1.25 * abs(flows[l]) / 10), floor)),
            }
            for l, (f, t, x) in enumerate(lines)
        ],
        "generators": gens,
    }
    with open(f"{HERE}/{name}.json", "w") as fh:
        json.dump(case, fh, indent=1)
        fh.write("\n")
    print(name, len(ids), "buses", len(lines), "lines", len(gens), "gens",
          sum(1 for v in w if v > 0), "wind", "wind MW", w.sum())


if __name__ == "__main__":
    convert(case118(), {12, 25, 26, 46, 49, 54, 59, 61, 100, 103}, {}, set(), 50.0, "case118_wind")
    convert(case14(), {3, 8}, {3: 40.0, 8: 30.0, 14: 20.0}, {6}, 30.0, "case14_wind")
