"""Run the 2x2 quadratic example and print every rate certificate.

    python3 scripts/certify_2x2.py --sweeps 50 --out runs/2x2
"""

import argparse
import os

from cavi_mf import CertKind, GaussianState, SweepSchedule, make_quadratic, rate_certificate, solve
from cavi_mf import jsonio
from cavi_mf.marginal import ProductState, gaussian_marginal


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sweeps", type=int, default=50)
    ap.add_argument("--out", default=None, help="directory for certificates.json")
    args = ap.parse_args()

    p = make_quadratic([[2.0, 1.0], [1.0, 2.0]], [0.0, 0.0])
    sched = SweepSchedule(sweeps=args.sweeps, tol=1e-300)
    grid = solve(p, ProductState([gaussian_marginal(1.0, 1.0)] * 2), sched, record_half_sweeps=True)
    gauss = solve(p, GaussianState([1.0, 1.0], [1.0, 1.0]), sched)

    certs = [rate_certificate(grid, k) for k in CertKind if k is not CertKind.GAUSSIAN_DIMFREE]
    certs += [rate_certificate(gauss, k) for k in CertKind]
    for label, group in (("grid", certs[:4]), ("gaussian", certs[4:])):
        print(f"-- {label} backend")
        for c in group:
            print("  " + c.summary())

    c = rate_certificate(grid, CertKind.EXPONENTIAL)
    print(f"\n{'n':>3} {'gap_n':>12} {'bound':>12}")
    for row in c.rows[:12]:
        print(f"{row.n:3d} {row.observed:12.4e} {row.bound:12.4e}")

    if args.out:
        os.makedirs(args.out, exist_ok=True)
        jsonio.dump_file({"certificates": [c.to_dict() for c in certs]},
                         os.path.join(args.out, "certificates.json"))


if __name__ == "__main__":
    main()
