"""Independent 40-digit evaluation of the dipole coupling constant C/A.

Prints Rust constant tables: values at fixed distances for two
orientations, the limit at small distance and the sign changes of Re C
and Im C on kr in [2, 35] at theta = pi/2.
"""
import mpmath as mp

mp.mp.dps = 40


def c_over_a(kr, theta):
    x = mp.mpf(kr)
    cos2 = mp.cos(theta) ** 2
    i = mp.mpc(0, 1)
    bracket = (1 - cos2) / (i * x) + (1 / x**2 - 1 / (i * x**3)) * (1 - 3 * cos2)
    return mp.mpf(3) / 2 * mp.exp(i * x) * bracket


def zeros(f, lo, hi, step=mp.mpf("0.01")):
    out = []
    x = mp.mpf(lo)
    while x < hi:
        a, b = f(x), f(x + step)
        if a == 0 or a * b < 0:
            out.append(mp.findroot(f, (x, x + step), solver="anderson"))
        x += step
    return out


def main():
    half_pi = mp.pi / 2
    points = ["0.001", "0.5", "1", "2", "2.354", "3.7", "5", "7.7", "10", "15.3", "20", "31.4", "35"]
    print("// kr, theta, Re C/A, Im C/A")
    print("pub const VALUES: &[(f64, f64, f64, f64)] = &[")
    for theta, name in [(half_pi, "FRAC_PI_2"), (mp.mpf(0), "0.0"), (mp.mpf("0.7"), "0.7")]:
        for p in points:
            c = c_over_a(mp.mpf(p), theta)
            print(f"    ({p}, {name}, {mp.nstr(c.real, 20)}, {mp.nstr(c.imag, 20)}),")
    print("];")
    re_zeros = zeros(lambda x: c_over_a(x, half_pi).real, 2, 35)
    im_zeros = zeros(lambda x: c_over_a(x, half_pi).imag, 2, 35)
    for name, zs in [("RE_ZEROS", re_zeros), ("IM_ZEROS", im_zeros)]:
        print(f"pub const {name}: &[f64] = &[")
        for z in zs:
            print(f"    {mp.nstr(z, 20)},")
        print("];")


if __name__ == "__main__":
    main()
