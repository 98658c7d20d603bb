"""Regenerates the static fixtures in this directory.

The density oracle is evaluated with 60-digit arithmetic and written with
12 significant digits in the same notation as Rust's `{:.11e}`.
"""
import re
from pathlib import Path

import mpmath

HERE = Path(__file__).resolve().parent
mpmath.mp.dps = 60

MEANS = [(0.0, 0.0), (1.5, -0.5), (-2.0, 1.0), (0.25, 3.0), (-0.75, -2.5)]
VARS = [(1.0, 1.0), (0.5, 2.0), (1.5, 0.25), (0.1, 0.8), (3.0, 1.2)]
POINTS = [
    (0.0, 0.0),
    (1.5, -0.5),
    (-1.0, 0.5),
    (0.3, 2.7),
    (-3.2, -4.1),
    (2.2, 2.2),
    (-0.6, -2.4),
    (5.0, -5.0),
    (-40.0, 30.0),
    (0.125, -0.375),
]


def rust_exp(x, digits=12):
    sign = "-" if x < 0 else ""
    a = abs(mpmath.mpf(x))
    e = int(mpmath.floor(mpmath.log10(a)))
    q = int(mpmath.nint(a / mpmath.mpf(10) ** (e - digits + 1)))
    if q >= 10**digits:
        q //= 10
        e += 1
    q = str(q)
    return f"{sign}{q[0]}.{q[1:]}e{e}"


def log_density(g):
    terms = []
    for mu, var in zip(MEANS, VARS):
        t = mpmath.mpf(0)
        for gd, md, vd in zip(g, mu, var):
            t += -(mpmath.mpf(gd) - md) ** 2 / (2 * mpmath.mpf(vd)) - mpmath.log(2 * mpmath.pi * vd) / 2
        terms.append(t)
    m = max(terms)
    return m + mpmath.log(sum(mpmath.exp(t - m) for t in terms)) - mpmath.log(len(terms))


def write_density():
    header = "mu_0,mu_1,var_0,var_1\n"
    rows = "".join(f"{m[0]!r},{m[1]!r},{v[0]!r},{v[1]!r}\n" for m, v in zip(MEANS, VARS))
    (HERE / "encodings_2d.csv").write_text(header + rows)
    (HERE / "points_2d.csv").write_text("x_0,x_1\n" + "".join(f"{a!r},{b!r}\n" for a, b in POINTS))
    out = "point_index,log_density\n"
    for i, p in enumerate(POINTS):
        out += f"{i},{rust_exp(log_density(p))}\n"
    (HERE / "density_2d_oracle.csv").write_text(out)


def pgm(name, side, pixels):
    data = bytes(pixels)
    (HERE / name).write_bytes(f"P5\n{side} {side}\n255\n".encode() + data)


def write_images():
    side = 28
    blank = [0] * side * side
    pgm("blank.pgm", side, blank)
    pgm("white.pgm", side, [255] * side * side)
    rect = list(blank)
    for r in range(5, 11):
        for c in range(3, 13):
            rect[r * side + c] = 255
    pgm("rectangle.pgm", side, rect)
    diag = list(blank)
    for i in range(side):
        diag[(side - 1 - i) * side + i] = 255
    pgm("antidiagonal.pgm", side, diag)
    bump = list(blank)
    bump[400] = 1
    pgm("one_pixel.pgm", side, bump)


if __name__ == "__main__":
    assert re.fullmatch(r"-1\.83787706641e0", rust_exp(-mpmath.log(2 * mpmath.pi)))
    write_density()
    write_images()
