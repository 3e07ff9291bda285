use std::sync::Arc;

use chcda::diagnostics::{estimate_constants, verify_grad_split, SpectralContext};
use chcda::forms::{Assembler, Penalty};
use chcda::observation::{CellAverageNudging, CoarseGrid};
use chcda::projection::random_field;
use chcda::space::Space;

fn assembler(n: usize) -> Assembler {
    Assembler::new(Arc::new(Space::uniform(n).unwrap()))
}

#[test]
fn coercivity_is_mesh_independent() {
    let sigma = Penalty::DEFAULT;
    let mut lows = Vec::new();
    for n in [4, 8, 16] {
        let asm = assembler(n);
        let e = SpectralContext::new(&asm, sigma).coercivity_continuity().unwrap();
        assert!(e.min > 0.0 && e.min <= 1.0 + 1e-10, "n = {n}: {e:?}");
        assert!(e.max >= 1.0 - 1e-10, "n = {n}: {e:?}");
        lows.push(e.min);
    }
    let hi = lows.iter().cloned().fold(f64::MIN, f64::max);
    let lo = lows.iter().cloned().fold(f64::MAX, f64::min);
    assert!((hi - lo) / hi < 0.2, "{lows:?}");
}

#[test]
fn sampled_gradient_split_respects_the_exact_supremum() {
    let sigma = Penalty::DEFAULT;
    let asm = assembler(8);
    let report = verify_grad_split(&asm, sigma, 200, 7);
    assert!(report.holds(), "{report:?}");
    assert!(report.samples_used > 0);
    let sup = SpectralContext::new(&asm, sigma).grad_split_supremum().unwrap();
    assert!(report.max_ratio <= sup * (1.0 + 1e-8), "{} > {sup}", report.max_ratio);
    // The worst case sits above the sampled bound; frozen from the Lanczos estimate.
    assert!((sup - 1.544205).abs() < 1e-4, "{sup}");
}

#[test]
fn constants_are_finite_and_positive() {
    let sigma = Penalty::DEFAULT;
    let asm = assembler(8);
    let space = asm.space().clone();
    let ctx = SpectralContext::new(&asm, sigma);
    let nud = CellAverageNudging::new(&space, CoarseGrid::new(&space, 4).unwrap()).unwrap();
    let traj = vec![random_field(&space, 1), space.constant_field(-0.9)];
    let c = estimate_constants(&ctx, Some(&nud), &traj).unwrap();
    for (name, v) in [("c_coer", c.c_coer), ("c_cont", c.c_cont), ("c_p", c.c_p), ("c_i", c.c_i)] {
        assert!(v.is_finite() && v > 0.0, "{name} = {v}");
    }
    assert!(c.c_inf >= 0.9 && c.c_data > 0.0);
    assert_eq!(c.c_data_prime, c.c_inf);
    // I_H is an L2 projection, so its stability part is at most one; the total stays moderate.
    assert!(c.c_i < 2.0, "{}", c.c_i);
}
