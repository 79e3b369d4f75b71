"""Second-order remainder along eta + t*h for each functional with a closed form."""
from ifkit.simlab import remainder_scaling

CASES = [
    ("mean_treated", "ate-smooth-1d"),
    ("ate_contrast", "ate-smooth-1d"),
    ("expected_cond_cov", "ecc-randomized"),
    ("expected_density", "density-gauss-mix"),
]

if __name__ == "__main__":
    for functional, dgp in CASES:
        rec = remainder_scaling(functional, dgp)
        rems = ", ".join(f"{r:+.3e}" for r in rec.remainders)
        ratios = ", ".join(f"{r:.4f}" for r in rec.ratios)
        print(f"{functional:>18} on {dgp:<18} R2(t={rec.ts}) = [{rems}]  ratios = [{ratios}]")
