#[path = "support/gradsuite.rs"]
#[allow(dead_code)]
mod gradsuite;

fn check(report: gradsuite::GradReport) {
    assert!(
        report.passed(),
        "{}: max relative error {:.3e} over {} instances (tolerance {:.0e})",
        report.name,
        report.max_rel_err,
        report.instances,
        report.tol
    );
}

#[test]
fn trilinear_matches_differences() {
    check(gradsuite::trilinear(100, 11));
}

#[test]
fn softplus_matches_differences() {
    check(gradsuite::softplus(100, 12));
}

#[test]
fn alpha_matches_differences() {
    check(gradsuite::alpha(100, 13));
}

#[test]
fn compositing_matches_differences() {
    check(gradsuite::composite_path(100, 14));
}

#[test]
fn mlp_matches_differences() {
    check(gradsuite::mlp(100, 15));
}

#[test]
fn coarse_ray_loss_matches_differences() {
    check(gradsuite::coarse_ray(100, 16));
}

#[test]
fn fine_ray_loss_matches_differences() {
    check(gradsuite::fine_ray(100, 17));
}
