"""Generate the bundled synthetic case files.

The distribution feeder mirrors a 37-node layout with 21 PV systems and 7
storage units (capacities as in the reference deployment table); loads and
line impedances are synthetic.  The transmission case is a 16-bus analog
with three wind farms (500/500/800 MW feed-in, error std 200/200/300 MW)
and five corridor lines singled out for distributionally robust treatment,
one of them the 600 MW tie between buses 8 and 9.

Run from the repo root:  python3 tools/gen_cases.py
"""

import math
import os

import numpy as np

OUT = os.path.join(os.path.dirname(__file__), "..", "src", "droopf", "cases")

PV_TABLE = [   # (bus, s_max kVA)
    (4, 150), (7, 300), (9, 300), (10, 600), (11, 660), (13, 360), (16, 600),
    (17, 360), (20, 450), (22, 150), (23, 750), (26, 300), (28, 750),
    (29, 300), (30, 360), (31, 600), (32, 330), (33, 750), (34, 450),
    (35, 450), (36, 450),
]
BAT_TABLE = [  # (bus, b_max kWh)
    (9, 100), (10, 100), (28, 50), (29, 250), (32, 250), (35, 120), (36, 200),
]
PV_ZONES = {   # irradiance zone per PV bus (error components 0..6)
    4: 0, 7: 0, 9: 1, 10: 1, 11: 1, 13: 1, 16: 2, 17: 2, 20: 2,
    22: 3, 23: 3, 26: 3, 28: 4, 29: 4, 30: 4, 31: 5, 32: 5, 33: 5,
    34: 6, 35: 6, 36: 6,
}

FEEDER_EDGES = [
    (0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (5, 6),
    (2, 7), (7, 8), (8, 9), (9, 10), (10, 11),
    (3, 12), (12, 13), (13, 14),
    (4, 15), (15, 16), (16, 17), (17, 18),
    (5, 19), (19, 20), (20, 21), (21, 22),
    (6, 23), (23, 24), (24, 25), (25, 26),
    (6, 27), (27, 28), (28, 29), (29, 30),
    (1, 31), (31, 32), (32, 33), (33, 34), (34, 35), (35, 36),
]

LOAD_BUSES = {      # bus -> p_kw (q = p/3)
    2: 40, 3: 35, 5: 30, 6: 25, 7: 30, 8: 25, 10: 45, 12: 30, 13: 35,
    15: 30, 16: 40, 18: 35, 19: 25, 21: 30, 23: 45, 24: 30, 26: 35,
    27: 25, 29: 40, 30: 30, 31: 35, 33: 45, 34: 30, 36: 40,
}


def day_profiles(steps=288):
    hours = np.arange(steps) * 24.0 / steps
    solar = np.maximum(0.0, np.sin(math.pi * (hours - 6.0) / 12.0)) ** 1.5
    load = (0.62 + 0.18 * np.exp(-0.5 * ((hours - 8.5) / 2.2) ** 2)
            + 0.30 * np.exp(-0.5 * ((hours - 19.0) / 2.6) ** 2))
    return solar, load


def fmt_profile(values):
    return ",".join(f"{v:.4f}" for v in values)


def write_feeder37():
    rng = np.random.default_rng(37)
    lines = []
    for f, t in FEEDER_EDGES:
        r = float(rng.uniform(0.0045, 0.0085))
        lines.append((f, t, r, 0.6 * r))
    solar, load = day_profiles()
    out = ["# Synthetic 37-node feeder: 21 PV systems, 7 storage units."]
    out += ["[meta]", "schema = droopf-case-1", "kind = distribution",
            "name = feeder37", "n_xi = 9", "sbase_kva = 1000",
            "v_slack = 1.0", "vmax = 1.05", "vmin = 0.95",
            "prices = 10,3,3,6", "", "[buses]", "0 slack"]
    out += [str(b) for b in range(1, 37)]
    out += ["", "[lines]"]
    out += [f"{f} {t} {r:.6f} {x:.6f}" for f, t, r, x in lines]
    out += ["", "[devices]"]
    for bus, p in sorted(LOAD_BUSES.items()):
        extra = ""
        if bus == 13:
            extra = " perr=7 pscale=10"
        if bus == 24:
            extra = " perr=8 pscale=12"
        out.append(f"load {bus} p={p} q={p / 3.0:.2f}{extra}")
    for bus, smax in PV_TABLE:
        pav = 0.8 * smax
        scale = 0.35 * pav
        out.append(f"pv {bus} smax={smax} pav={pav:.0f} pf=0.9 "
                   f"err={PV_ZONES[bus]} scale={scale:.0f}")
    for bus, bmax in BAT_TABLE:
        out.append(f"storage {bus} bmax={bmax}")
    out += ["", "[profiles]", "solar = " + fmt_profile(solar),
            "load = " + fmt_profile(load), ""]
    return "\n".join(out)


def write_stressed2():
    solar, load = day_profiles()
    out = ["# Two-bus stressed feeder: one oversized PV plus a small battery."]
    out += ["[meta]", "schema = droopf-case-1", "kind = distribution",
            "name = stressed2", "n_xi = 1", "sbase_kva = 100",
            "v_slack = 1.0", "vmax = 1.05", "vmin = 0.95",
            "prices = 10,3,3,6", "", "[buses]", "0 slack", "1", "2",
            "", "[lines]",
            "0 1 0.030 0.015", "1 2 0.030 0.015",
            "", "[devices]",
            "load 1 p=10 q=3",
            "pv 2 smax=100 pav=60 pf=none err=0 scale=20",
            "storage 2 bmax=40 b0=10",
            "", "[profiles]",
            "solar = " + fmt_profile(solar),
            "load = " + fmt_profile(load), ""]
    return "\n".join(out)


TRANS_LINES = [   # (from, to, x_pu, limit_mw)
    (1, 2, 0.06, 800), (1, 3, 0.06, 800), (2, 3, 0.05, 800), (2, 4, 0.06, 800),
    (3, 5, 0.06, 800), (4, 5, 0.05, 800), (4, 8, 0.05, 800), (5, 6, 0.06, 800),
    (6, 8, 0.05, 800),
    (8, 9, 0.04, 600),                      # DRO line (fifth entry below)
    (9, 11, 0.05, 900),
    (26, 8, 0.04, 900), (26, 2, 0.06, 900),
    (8, 10, 0.05, 500),                     # DRO
    (26, 10, 0.05, 500),                    # DRO
    (10, 11, 0.05, 900),
    (10, 12, 0.05, 500),                    # DRO
    (11, 13, 0.05, 900), (12, 13, 0.05, 900),
    (12, 14, 0.05, 300),                    # DRO
    (13, 15, 0.05, 900), (14, 15, 0.05, 900),
    (6, 7, 0.08, 200),                      # islanding stub feeding bus 7
]

TRANS_GENS = [
    # (bus, c1, c2, pnom, outage flag)
    (3, 0.004, 8.0, 400, 1),
    (13, 0.010, 25.0, 300, 0),
    (15, 0.012, 30.0, 300, 0),
]
TRANS_LOADS = [
    # (bus, p_mw, outage flag)
    (5, 150, 0), (6, 150, 0), (7, 80, 0), (11, 350, 0),
    (12, 450, 1), (13, 450, 0), (14, 400, 1), (15, 370, 0),
]
# error components are MW-valued (persistence residuals rescaled to std
# 200/200/300 MW), so the per-component injection scale is 1.
TRANS_WINDS = [(1, 500, 0, 1), (9, 500, 1, 1), (26, 800, 2, 1)]


def write_trans16():
    out = ["# 16-bus transmission analog: three wind farms feeding a",
           "# west-east corridor; five corridor lines are the DRO set."]
    buses = [1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15, 26]
    out += ["[meta]", "schema = droopf-case-1", "kind = transmission",
            "name = trans16", "n_xi = 3", "", "[buses]"]
    out += [f"{b} slack" if b == 13 else str(b) for b in buses]
    out += ["", "[lines]"]
    out += [f"{f} {t} {x} {lim}" for f, t, x, lim in TRANS_LINES]
    out += ["", "[devices]"]
    for bus, c1, c2, pnom, flag in TRANS_GENS:
        out.append(f"gen {bus} c1={c1} c2={c2} pnom={pnom} pmin=0 outage={flag}")
    for bus, pnom, err, scale in TRANS_WINDS:
        out.append(f"wind {bus} pnom={pnom} err={err} scale={scale}")
    for bus, p, flag in TRANS_LOADS:
        out.append(f"load {bus} p={p} outage={flag}")
    out.append("")
    return "\n".join(out)


def main():
    os.makedirs(OUT, exist_ok=True)
    for name, text in (("feeder37", write_feeder37()),
                       ("stressed2", write_stressed2()),
                       ("trans16", write_trans16())):
        path = os.path.join(OUT, f"{name}.case")
        with open(path, "w") as fh:
            fh.write(text)
        print("wrote", path)


if __name__ == "__main__":
    main()
