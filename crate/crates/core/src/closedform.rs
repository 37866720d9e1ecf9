//! Closed-form grid values that make a post-activated cell reproduce a sharp
//! linear occupancy boundary.
//!
//! In 1D a cell spans `x in [0, 1]` with raw values `a` (at 0) and `b` (at 1).
//! After post-activation the opacity of a segment of length `delta` is
//! `S(x) = 1 - (1 + exp(a (1 - x) + b x))^(-delta)`, which should approximate
//! the step `T(x) = [x > c]` to within `eps` outside the band `|x - c| < tol`.

use alloc::vec::Vec;

use crate::error::{invalid, Error, Result};

/// Error bound and band width shared by one cell edge.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdgeTolerance {
    pub eps: f64,
    pub delta_tol: f64,
    pub delta_render: f64,
}

impl EdgeTolerance {
    pub fn new(eps: f64, delta_tol: f64, delta_render: f64) -> Result<Self> {
        if !(eps > 0.0 && eps < 1.0) {
            return Err(invalid("eps must lie in (0, 1)"));
        }
        if !(delta_tol > 0.0 && delta_tol.is_finite()) {
            return Err(invalid("boundary tolerance must be positive"));
        }
        if !(delta_render > 0.0 && delta_render.is_finite()) {
            return Err(invalid("rendering step must be positive"));
        }
        Ok(Self {
            eps,
            delta_tol,
            delta_render,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SharpSurfaceSpec1D {
    pub c: f64,
    pub eps: f64,
    pub delta_tol: f64,
    pub delta_render: f64,
}

impl SharpSurfaceSpec1D {
    pub fn new(c: f64, eps: f64, delta_tol: f64, delta_render: f64) -> Result<Self> {
        let tol = EdgeTolerance::new(eps, delta_tol, delta_render)?;
        Ok(Self::with_tolerance(c, tol))
    }

    pub fn with_tolerance(c: f64, tol: EdgeTolerance) -> Self {
        Self {
            c,
            eps: tol.eps,
            delta_tol: tol.delta_tol,
            delta_render: tol.delta_render,
        }
    }

    pub fn tolerance(&self) -> EdgeTolerance {
        EdgeTolerance {
            eps: self.eps,
            delta_tol: self.delta_tol,
            delta_render: self.delta_render,
        }
    }

    /// Whether the boundary lies strictly inside the cell.
    pub fn is_interior(&self) -> bool {
        self.c > 0.0 && self.c < 1.0
    }
}

/// `log(p^(-1/delta) - 1)`, evaluated without cancellation.
fn log_inv_pow_minus_one(p: f64, delta: f64) -> f64 {
    libm::log(libm::expm1(-libm::log(p) / delta))
}

/// `(a, b)` for a boundary at `spec.c`, with `a` at the tighter bound and
/// `S(c) = 1/2`. Boundaries outside the cell (`c < 0` or `c > 1`) use the
/// same expressions.
pub fn solve_1d(spec: &SharpSurfaceSpec1D) -> Result<(f64, f64)> {
    let SharpSurfaceSpec1D {
        c,
        eps,
        delta_tol,
        delta_render,
    } = *spec;
    if !c.is_finite() {
        return Err(invalid("boundary position must be finite"));
    }
    if c == 0.0 {
        return Err(Error::Singular("boundary at c = 0"));
    }
    EdgeTolerance::new(eps, delta_tol, delta_render)?;
    if spec.is_interior() && delta_tol > c.min(1.0 - c) + 1e-12 {
        return Err(invalid("tolerance band must fit inside the cell"));
    }
    let half = log_inv_pow_minus_one(0.5, delta_render);
    let a = if delta_render < 1.0 {
        let hi = log_inv_pow_minus_one(eps, delta_render);
        half * (c + delta_tol) / delta_tol - hi * c / delta_tol
    } else {
        let lo = log_inv_pow_minus_one(1.0 - eps, delta_render);
        lo * c / delta_tol - half * (c - delta_tol) / delta_tol
    };
    let b = a * (c - 1.0) / c + half / c;
    Ok((a, b))
}

/// `1 - S(x)`, accurate where `S` is close to 1.
pub fn one_minus_sharp_alpha(a: f64, b: f64, delta: f64, x: f64) -> f64 {
    let z = a * (1.0 - x) + b * x;
    libm::exp(-delta * crate::math::softplus(z))
}

/// `S(x) = 1 - (1 + exp(a (1 - x) + b x))^(-delta)`.
pub fn sharp_alpha(a: f64, b: f64, delta: f64, x: f64) -> f64 {
    let z = a * (1.0 - x) + b * x;
    -libm::expm1(-delta * crate::math::softplus(z))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Verify1DReport {
    /// `true` when occupancy lies at `x > c` (S increasing).
    pub occupied_right: bool,
    /// Largest `|S - T|` over probes with `|x - c| >= tol`.
    pub max_error: f64,
    pub s_at_c: f64,
    pub monotone: bool,
    pub sharp: bool,
    pub centered: bool,
    /// `(x, S(x), T(x))` per probe.
    pub probes: Vec<(f64, f64, f64)>,
}

impl Verify1DReport {
    pub fn passed(&self) -> bool {
        self.sharp && self.centered && self.monotone
    }
}

/// Checks `(a, b)` against the step at `spec.c` on `n_probe` evenly spaced
/// points of `[0, 1]` plus the two band edges when they fall inside the cell.
/// The occupied side follows the sign of `b - a`.
pub fn verify_1d(
    a: f64,
    b: f64,
    spec: &SharpSurfaceSpec1D,
    n_probe: usize,
) -> Result<Verify1DReport> {
    if n_probe < 3 {
        return Err(invalid("need at least 3 probes"));
    }
    let SharpSurfaceSpec1D {
        c,
        eps,
        delta_tol,
        delta_render: delta,
    } = *spec;
    let occupied_right = b >= a;
    let mut xs: Vec<f64> = (0..n_probe)
        .map(|i| i as f64 / (n_probe - 1) as f64)
        .collect();
    for edge in [c - delta_tol, c + delta_tol] {
        if (0.0..=1.0).contains(&edge) {
            xs.push(edge);
        }
    }
    xs.sort_by(f64::total_cmp);

    let mut probes = Vec::with_capacity(xs.len());
    let mut max_error: f64 = 0.0;
    for &x in &xs {
        let s = sharp_alpha(a, b, delta, x);
        let target = if occupied_right == (x > c) { 1.0 } else { 0.0 };
        if libm::fabs(x - c) >= delta_tol * (1.0 - 1e-12) {
            let err = if target == 1.0 {
                one_minus_sharp_alpha(a, b, delta, x)
            } else {
                s
            };
            max_error = max_error.max(err);
        }
        probes.push((x, s, target));
    }
    let monotone = probes.windows(2).all(|w| {
        if occupied_right {
            w[1].1 >= w[0].1 - 1e-15
        } else {
            w[1].1 <= w[0].1 + 1e-15
        }
    });
    let s_at_c = sharp_alpha(a, b, delta, c);
    Ok(Verify1DReport {
        occupied_right,
        max_error,
        s_at_c,
        monotone,
        sharp: max_error <= eps * (1.0 + 1e-9),
        centered: libm::fabs(s_at_c - 0.5) <= 1e-9,
        probes,
    })
}

/// Raw values at the four corners of a 2D cell; top is `t = 0`, left is `x = 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridCell2D {
    pub v_tl: f64,
    pub v_tr: f64,
    pub v_bl: f64,
    pub v_br: f64,
}

impl GridCell2D {
    /// The 1D pair `(a, b)` seen on the horizontal line at `t`.
    pub fn slice(&self, t: f64) -> (f64, f64) {
        (
            (1.0 - t) * self.v_tl + t * self.v_bl,
            (1.0 - t) * self.v_tr + t * self.v_br,
        )
    }

    /// Post-activated opacity at `(x, t)` inside the cell.
    pub fn alpha_at(&self, x: f64, t: f64, delta: f64) -> f64 {
        let (a, b) = self.slice(t);
        sharp_alpha(a, b, delta, x)
    }
}

/// Boundary `c(t) = (1 - t) c0 + t c1` along one face.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearBoundary {
    pub c0: f64,
    pub c1: f64,
}

impl LinearBoundary {
    pub fn at(&self, t: f64) -> f64 {
        (1.0 - t) * self.c0 + t * self.c1
    }
}

/// Corner values for a linear boundary crossing the top edge at `c0` and the
/// bottom edge's line at `c1` (`c1` may lie outside the cell). Each edge has
/// its own tolerances; unequal bands bend the boundary.
pub fn solve_2d(c0: f64, c1: f64, top: EdgeTolerance, bottom: EdgeTolerance) -> Result<GridCell2D> {
    if c0 == 0.0 {
        return Err(Error::Singular("boundary at c = 0"));
    }
    if !(c0 > 0.0 && c0 < 1.0) {
        return Err(invalid(
            "the boundary must cross the top edge inside the cell",
        ));
    }
    let (v_tl, v_tr) = solve_1d(&SharpSurfaceSpec1D::with_tolerance(c0, top))?;
    let (v_bl, v_br) = solve_1d(&SharpSurfaceSpec1D::with_tolerance(c1, bottom))?;
    Ok(GridCell2D {
        v_tl,
        v_tr,
        v_bl,
        v_br,
    })
}

/// The eight corners of a 3D cell: the `u = 0` face and the `u = 1` face.
pub fn solve_3d(
    top: LinearBoundary,
    bottom: LinearBoundary,
    tol: EdgeTolerance,
) -> Result<[GridCell2D; 2]> {
    Ok([
        solve_2d(top.c0, top.c1, tol, tol)?,
        solve_2d(bottom.c0, bottom.c1, tol, tol)?,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(c: f64) -> SharpSurfaceSpec1D {
        SharpSurfaceSpec1D::new(c, 1e-4, 1e-2, 0.5).unwrap()
    }

    #[test]
    fn center_boundary_values() {
        let (a, b) = solve_1d(&spec(0.5)).unwrap();
        assert!((a + 865.0).abs() < 0.1, "{a}");
        assert!((b - 867.2).abs() < 0.1, "{b}");
        assert!(verify_1d(a, b, &spec(0.5), 1001).unwrap().passed());
    }

    #[test]
    fn flat_cell_is_not_sharp() {
        let r = verify_1d(0.0, 0.0, &spec(0.5), 101).unwrap();
        assert!(!r.sharp);
        assert!((r.probes[0].1 - (1.0 - libm::pow(2.0, -0.5))).abs() < 1e-15);
    }

    #[test]
    fn mirrored_cell_passes_mirrored_check() {
        let (a, b) = solve_1d(&spec(0.5)).unwrap();
        // Swapping ends mirrors x -> 1 - x; the boundary stays at 0.5.
        let r = verify_1d(b, a, &spec(0.5), 1001).unwrap();
        assert!(!r.occupied_right);
        assert!(r.passed());
    }

    #[test]
    fn singular_and_invalid() {
        assert!(matches!(solve_1d(&spec(0.0)), Err(Error::Singular(_))));
        assert!(solve_1d(&SharpSurfaceSpec1D::new(0.005, 1e-4, 1e-2, 0.5).unwrap()).is_err());
        assert!(SharpSurfaceSpec1D::new(0.5, 1.5, 1e-2, 0.5).is_err());
        let tol = EdgeTolerance::new(1e-4, 1e-2, 0.5).unwrap();
        assert!(solve_2d(1.2, 0.5, tol, tol).is_err());
        let top = LinearBoundary { c0: 0.0, c1: 0.5 };
        assert!(matches!(solve_3d(top, top, tol), Err(Error::Singular(_))));
    }

    #[test]
    fn slices_are_affine_in_t() {
        let tol = EdgeTolerance::new(1e-4, 0.2, 0.5).unwrap();
        let cell = solve_2d(0.3, 0.8, tol, tol).unwrap();
        assert_eq!(cell.slice(0.0), (cell.v_tl, cell.v_tr));
        assert_eq!(cell.slice(1.0), (cell.v_bl, cell.v_br));
    }
}
