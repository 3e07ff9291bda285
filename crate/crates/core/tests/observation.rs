use std::f64::consts::PI;
use std::sync::Arc;

use chcda::diagnostics;
use chcda::forms::Assembler;
use chcda::observation::{nearest_aligned_cells, CellAverageNudging, CoarseGrid, IndicatorNudging};
use chcda::space::{Field, Space};

fn slope(hs: &[f64], errs: &[f64]) -> f64 {
    let n = hs.len() as f64;
    let xs: Vec<f64> = hs.iter().map(|h| h.ln()).collect();
    let ys: Vec<f64> = errs.iter().map(|e| e.ln()).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[test]
fn cell_average_error_is_first_order_in_h() {
    let space = Arc::new(Space::uniform(32).unwrap());
    let asm = Assembler::new(space.clone());
    let mass = asm.assemble_mass();
    let stiff = asm.assemble_stiffness();
    let v = space.interpolate(|p| (2.0 * PI * p[0]).sin() * (2.0 * PI * p[1]).sin());
    let grad = stiff.matrix.bilinear(v.coeffs(), v.coeffs()).sqrt();
    let l2 = diagnostics::l2_norm(&mass, &v).powi(2);
    let mut hs = Vec::new();
    let mut errs = Vec::new();
    for cells in [8, 16, 32] {
        let nud = CellAverageNudging::new(&space, CoarseGrid::new(&space, cells).unwrap()).unwrap();
        // Orthogonal projection: ||I_H v - v||^2 = ||v||^2 - (N v, v).
        let err = (l2 - dot(&nud.apply(v.coeffs()), v.coeffs())).max(0.0).sqrt();
        let h = 1.0 / cells as f64;
        let c = err / (h * grad);
        assert!(c > 0.05 && c < 1.0, "H = {h}: constant {c}");
        hs.push(h);
        errs.push(err);
    }
    let s = slope(&hs, &errs);
    assert!((s - 1.0).abs() <= 0.15, "slope {s}, errors {errs:?}");
}

#[test]
fn cell_average_reproduces_mass_on_constants() {
    let space = Arc::new(Space::uniform(8).unwrap());
    let asm = Assembler::new(space.clone());
    let mass = asm.assemble_mass();
    let ones = vec![1.0; space.n_dofs()];
    let m1 = mass.apply(&ones);
    for cells in [1, 2, 4, 8] {
        let nud = CellAverageNudging::new(&space, CoarseGrid::new(&space, cells).unwrap()).unwrap();
        let n1 = nud.apply(&ones);
        let worst = n1.iter().zip(&m1).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(worst < 1e-14, "cells {cells}: {worst}");
    }
}

#[test]
fn cell_averages_match_exact_integrals() {
    let space = Arc::new(Space::uniform(16).unwrap());
    let grid = CoarseGrid::new(&space, 4).unwrap();
    let nud = CellAverageNudging::new(&space, grid.clone()).unwrap();
    // Quadratics are reproduced exactly by the P2 interpolant.
    let v: Field = space.interpolate(|p| p[0] * p[0] + 2.0 * p[1]);
    let avgs = nud.project(v.coeffs());
    let h = grid.spacing();
    for i in 0..4 {
        for j in 0..4 {
            let (x0, y0) = (i as f64 * h, j as f64 * h);
            let exact = ((x0 + h).powi(3) - x0.powi(3)) / (3.0 * h) + (2.0 * y0 + h);
            let got = avgs[grid.cell_index(i, j)];
            assert!((got - exact).abs() < 1e-13, "cell ({i},{j}): {got} vs {exact}");
        }
    }
}

#[test]
fn indicator_points_sit_at_cell_centers() {
    let space = Arc::new(Space::uniform(16).unwrap());
    let asm = Assembler::new(space.clone());
    let grid = CoarseGrid::new(&space, 4).unwrap();
    let ind = IndicatorNudging::at_cell_centers(&space, &grid, asm.pattern().clone()).unwrap();
    assert_eq!(ind.points().len(), 16);
    for (c, p) in ind.points().iter().enumerate() {
        assert_eq!(*p, grid.cell_center(c));
    }
    let on: usize = ind.indicator().coeffs().iter().filter(|v| **v != 0.0).count();
    assert_eq!(on, 16);
    assert!(ind.indicator().coeffs().iter().all(|v| *v == 0.0 || *v == 1.0));
}

#[test]
fn requested_spacings_map_to_aligned_grids() {
    assert_eq!(nearest_aligned_cells(64, 0.011049), 64);
    assert_eq!(nearest_aligned_cells(64, 0.015625), 64);
    assert_eq!(nearest_aligned_cells(64, 0.03125), 32);
    assert_eq!(nearest_aligned_cells(64, 0.0625), 16);
    assert_eq!(nearest_aligned_cells(64, 0.125), 8);
    assert_eq!(nearest_aligned_cells(32, 0.011049), 32);
    assert_eq!(nearest_aligned_cells(30, 0.1), 10);
    let space = Space::uniform(8).unwrap();
    assert!(CoarseGrid::new(&space, 3).is_err());
    assert!(CoarseGrid::new(&space, 0).is_err());
}
