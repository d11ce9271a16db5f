"""
Abrasion and noise
==================

Missing material (spherical defects) and point jitter are applied to both
fragments before matching. Coverage falls slowly with the number of defects;
strong noise is where the descriptor stops being repeatable.
"""
from fragmatch import RunConfig, SynthConfig, compute_resolution, generate_fragment_pair, run_pipeline
from fragmatch.synth import add_gaussian_noise, apply_abrasion

a, b, truth = generate_fragment_pair(SynthConfig(seed=0))
r = compute_resolution(a)
cfg = RunConfig(threads=1)


def show(label, src, dst):
    res = run_pipeline(src, dst, cfg)
    if res.accepted:
        rot = res.alignment.transform.rotation_error_deg(truth.transform)
        print(f"{label:>12}: PoC {res.report.poc:6.2f}  rot {rot:7.3f} deg  inliers {res.ransac_inliers}")
    else:
        print(f"{label:>12}: rejected ({res.reject_reason})")


for n in (1, 5, 10, 20):
    show(f"{n} defects", apply_abrasion(a, n, 3 * r, seed=1), apply_abrasion(b, n, 3 * r, seed=2))

for f in (0.1, 0.5, 1.5):
    show(f"noise {f}r", add_gaussian_noise(a, f * r, seed=1), add_gaussian_noise(b, f * r, seed=2))
