#!/usr/bin/env python3
"""Convert a MATPOWER .m case into IEEE Common Data Format text.

Used to produce the bundled files under crates/core/data/ from the MATPOWER
copies of the IEEE test systems (which were themselves converted from the
original CDF archive). Only the fields the CDF card layout defines are
written; generator rows are summed per bus.

    python3 scripts/matpower_to_cdf.py case118.m "IEEE 118 Bus Test Case" > ieee118.cdf
"""
import re
import sys


def matrix(text, name):
    m = re.search(r"mpc\.%s\s*=\s*\[(.*?)\];" % name, text, re.S)
    rows = []
    for line in m.group(1).splitlines():
        line = line.split("%")[0].strip().rstrip(";")
        if line:
            rows.append([float(v) for v in line.split()])
    return rows


def scalar(text, name):
    return float(re.search(r"mpc\.%s\s*=\s*([0-9.eE+-]+)" % name, text).group(1))


def fmt(value, width, decimals):
    s = f"{value:.{decimals}f}"
    while len(s) > width and decimals > 0:
        decimals -= 1
        s = f"{value:.{decimals}f}"
    if len(s) > width:
        raise ValueError(f"{value} does not fit in {width} columns")
    return s.rjust(width)


def main():
    path, title = sys.argv[1], sys.argv[2]
    text = open(path).read()
    base = scalar(text, "baseMVA")
    bus = matrix(text, "bus")
    gen = matrix(text, "gen")
    branch = matrix(text, "branch")

    pg, qg = {}, {}
    for g in gen:
        b = int(g[0])
        if len(g) > 7 and g[7] <= 0:
            continue
        pg[b] = pg.get(b, 0.0) + g[1]
        qg[b] = qg.get(b, 0.0) + g[2]

    out = []
    out.append(" 01/01/00 MATPOWER CONVERSION  " + fmt(base, 6, 1) + " 2000 S " + title[:28])
    out.append(f"BUS DATA FOLLOWS                            {len(bus)} ITEMS")
    for b in bus:
        num = int(b[0])
        cdf_type = {1: 0, 2: 2, 3: 3, 4: 0}[int(b[1])]
        card = (
            f"{num:>4} "
            + f"Bus {num}".ljust(12)
            + " "
            + f"{int(b[6]):>2}"
            + f"{int(b[10]):>3}"
            + " "
            + f"{cdf_type:>2}"
            + " "
            + fmt(b[7], 6, 3)
            + fmt(b[8], 7, 2)
            + fmt(b[2], 9, 2)
            + fmt(b[3], 10, 2)
            + fmt(pg.get(num, 0.0), 8, 2)
            + fmt(qg.get(num, 0.0), 8, 2)
            + " "
            + fmt(b[9], 7, 2)
            + " "
            + fmt(b[7], 6, 3)
            + fmt(0.0, 8, 1)
            + fmt(0.0, 8, 1)
            + fmt(b[4] / base, 8, 4)
            + fmt(b[5] / base, 8, 4)
            + " "
            + f"{0:>4}"
        )
        out.append(card)
    out.append("-999")
    out.append(f"BRANCH DATA FOLLOWS                         {len(branch)} ITEMS")
    seen = {}
    for br in branch:
        f, t = int(br[0]), int(br[1])
        key = (min(f, t), max(f, t))
        seen[key] = seen.get(key, 0) + 1
        tap = br[8]
        kind = 1 if tap != 0.0 or br[9] != 0.0 else 0
        card = (
            f"{f:>4} "
            + f"{t:>4} "
            + f"{1:>2}"
            + f"{1:>2}"
            + "  "
            + f"{seen[key]:>1}"
            + " "
            + f"{kind:>1}"
            + fmt(br[2], 10, 6)
            + fmt(br[3], 11, 6)
            + fmt(br[4], 10, 5)
            + f"{int(br[5]):>5}"
            + f"{0:>6}"
            + f"{0:>6}"
            + " "
            + f"{0:>4}"
            + " "
            + "0"
            + "  "
            + fmt(tap, 6, 3)
            + " "
            + fmt(br[9], 7, 2)
            + fmt(0.0, 7, 1)
            + fmt(0.0, 7, 1)
            + " "
            + fmt(0.0, 6, 1)
            + " "
            + fmt(0.0, 7, 1)
            + fmt(0.0, 7, 1)
        )
        out.append(card)
    out.append("-999")
    out.append("LOSS ZONES FOLLOWS                     1 ITEMS")
    out.append("  1 IEEE")
    out.append("-99")
    out.append("INTERCHANGE DATA FOLLOWS                 1 ITEMS")
    out.append(" 1    1 Bus 1        0.0  999.99  IEEE      IEEE TEST CASE")
    out.append("-9")
    out.append("TIE LINES FOLLOWS                     0 ITEMS")
    out.append("-999")
    out.append("END OF DATA")
    sys.stdout.write("\n".join(out) + "\n")


if __name__ == "__main__":
    main()
