use voxfield_core::closedform::{
    solve_1d, solve_2d, solve_3d, verify_1d, EdgeTolerance, LinearBoundary, SharpSurfaceSpec1D,
};

/// Opacity of a segment, straight from the definition.
fn s_direct(a: f64, b: f64, delta: f64, x: f64) -> f64 {
    1.0 - (1.0 + (a * (1.0 - x) + b * x).exp()).powf(-delta)
}

fn tied_b(a: f64, c: f64, delta: f64) -> f64 {
    let half = (2f64.powf(1.0 / delta) - 1.0).ln();
    a * (c - 1.0) / c + half / c
}

/// Root of `f` on `[lo, hi]` by bisection; `f` must change sign.
fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    let flo = f(lo);
    assert!(flo * f(hi) <= 0.0, "no sign change");
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if (f(mid) > 0.0) == (flo > 0.0) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Numerically finds where each band-edge constraint binds and keeps the
/// tighter one.
fn oracle_1d(c: f64, eps: f64, tol: f64, delta: f64) -> (f64, f64) {
    let left = |a: f64| s_direct(a, tied_b(a, c, delta), delta, c - tol) - eps;
    let right = |a: f64| 1.0 - s_direct(a, tied_b(a, c, delta), delta, c + tol) - eps;
    let a_left = bisect(left, -1e5, 1e5);
    let a_right = bisect(right, -1e5, 1e5);
    let a = if c > 0.0 {
        a_left.min(a_right)
    } else {
        a_left.max(a_right)
    };
    (a, tied_b(a, c, delta))
}

const ONE_D: [(f64, f64, f64); 6] = [
    (0.1, -172.1, 1560.1),
    (0.5, -865.0, 867.2),
    (0.7, -1211.4, 520.8),
    (-0.6, 1040.4, 2772.6),
    (1.3, -2250.8, -518.6),
    (1.5, -2597.2, -865.0),
];

#[test]
fn oracle_reproduces_one_d_table() {
    for (c, a, b) in ONE_D {
        let (oa, ob) = oracle_1d(c, 1e-4, 1e-2, 0.5);
        assert!(
            (oa - a).abs() <= 0.1 && (ob - b).abs() <= 0.1,
            "c={c}: {oa} {ob}"
        );
    }
}

#[test]
fn solver_matches_oracle() {
    for c in [0.05, 0.1, 0.33, 0.5, 0.7, 0.9, -0.6, -0.2, 1.3, 1.5] {
        for delta in [0.25, 0.5, 1.0, 2.0] {
            for (eps, tol) in [(1e-4, 1e-2), (1e-3, 0.04), (1e-2, 0.02)] {
                let spec = SharpSurfaceSpec1D::new(c, eps, tol, delta).unwrap();
                let (a, b) = solve_1d(&spec).unwrap();
                let (oa, ob) = oracle_1d(c, eps, tol, delta);
                let scale = 1.0 + oa.abs().max(ob.abs());
                assert!(
                    (a - oa).abs() < 1e-7 * scale && (b - ob).abs() < 1e-7 * scale,
                    "c={c} d={delta}: {a} {oa}"
                );
            }
        }
    }
}

#[test]
fn interior_table_entries_verify() {
    for (c, _, _) in ONE_D.iter().filter(|e| e.0 > 0.0 && e.0 < 1.0) {
        let spec = SharpSurfaceSpec1D::new(*c, 1e-4, 1e-2, 0.5).unwrap();
        let (a, b) = solve_1d(&spec).unwrap();
        assert!(verify_1d(a, b, &spec, 4001).unwrap().passed());
    }
}

#[test]
fn center_cell_switches_within_band() {
    let d = 0.5;
    let post = |x: f64| s_direct(-865.0, 867.2, d, x);
    assert!(post(0.49) <= 1e-4);
    assert!(post(0.51) >= 1.0 - 1e-4);
}

fn assert_corners(cell: voxfield_core::closedform::GridCell2D, expect: [f64; 4]) {
    let got = [cell.v_tl, cell.v_tr, cell.v_bl, cell.v_br];
    for (g, e) in got.iter().zip(expect) {
        assert!((g - e).abs() <= 0.1, "{got:?} vs {expect:?}");
    }
}

#[test]
fn wide_band_corner_tables() {
    let tol = EdgeTolerance::new(1e-4, 0.2, 0.5).unwrap();
    assert_corners(
        solve_2d(0.3, 0.8, tol, tol).unwrap(),
        [-24.9, 61.7, -68.2, 18.4],
    );
    assert_corners(
        solve_2d(0.2, 1.3, tol, tol).unwrap(),
        [-16.2, 70.4, -111.5, -24.9],
    );
}

#[test]
fn narrow_band_corner_values_at_one_hundredth() {
    let tol = EdgeTolerance::new(1e-4, 0.01, 0.5).unwrap();
    assert_corners(
        solve_2d(0.3, 0.8, tol, tol).unwrap(),
        [-518.6, 1213.6, -1384.7, 347.5],
    );
    assert_corners(
        solve_2d(0.2, 1.3, tol, tol).unwrap(),
        [-345.3, 1386.9, -2250.8, -518.6],
    );
}

#[test]
fn horizontal_slices_verify() {
    for tol_w in [0.2, 0.05] {
        let tol = EdgeTolerance::new(1e-4, tol_w, 0.5).unwrap();
        for (c0, c1) in [(0.3, 0.8), (0.2, 1.3)] {
            let cell = solve_2d(c0, c1, tol, tol).unwrap();
            let line = LinearBoundary { c0, c1 };
            for t in [0.0, 0.25, 0.5, 0.75, 1.0] {
                let c = line.at(t);
                // Slices whose boundary leaves the cell, or whose band no longer fits, are checked
                // only for the centering constraint.
                let (a, b) = cell.slice(t);
                let spec = SharpSurfaceSpec1D::with_tolerance(c, tol);
                let r = verify_1d(a, b, &spec, 2001).unwrap();
                assert!((r.s_at_c - 0.5).abs() < 1e-9, "t={t}");
                if c - tol_w >= 0.0 && c + tol_w <= 1.0 + 1e-12 {
                    assert!(
                        r.passed(),
                        "c0={c0} c1={c1} tol={tol_w} t={t}: {}",
                        r.max_error
                    );
                }
            }
        }
    }
}

#[test]
fn boundary_constant_across_faces() {
    let tol = EdgeTolerance::new(1e-4, 0.05, 0.5).unwrap();
    let line = LinearBoundary { c0: 0.4, c1: 0.6 };
    let [top, bottom] = solve_3d(line, line, tol).unwrap();
    assert_eq!(top, bottom);
}

#[test]
fn axis_aligned_plane_slices_verify() {
    let tol = EdgeTolerance::new(1e-3, 0.05, 1.0).unwrap();
    let plane = LinearBoundary { c0: 0.45, c1: 0.45 };
    let faces = solve_3d(plane, plane, tol).unwrap();
    let spec = SharpSurfaceSpec1D::with_tolerance(0.45, tol);
    for face in faces {
        for t in [0.0, 0.3, 0.6, 1.0] {
            let (a, b) = face.slice(t);
            assert!(verify_1d(a, b, &spec, 1001).unwrap().passed());
        }
    }
}
