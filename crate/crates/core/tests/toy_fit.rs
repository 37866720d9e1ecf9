use voxfield_core::render::ActivationMode;
use voxfield_core::toy::{toy_image_fit, ToyTarget};

#[test]
fn empty_target_is_fitted_in_every_mode() {
    let img = ToyTarget::Zeros.render(24, 24);
    for mode in ActivationMode::ALL {
        let fit = toy_image_fit(&img, 24, 24, 3.0, mode, 1000, 1).unwrap();
        assert!(fit.psnr >= 60.0, "{}: {}", mode.name(), fit.psnr);
    }
}

#[test]
fn half_plane_at_stride_five() {
    let img = ToyTarget::HalfPlane { angle: 0.3 }.render(64, 64);
    let psnr = |m| toy_image_fit(&img, 64, 64, 5.0, m, 2000, 7).unwrap().psnr;
    let (pre, inn, post) = (
        psnr(ActivationMode::Pre),
        psnr(ActivationMode::In),
        psnr(ActivationMode::Post),
    );
    assert!(post > pre && post > inn, "{pre} {inn} {post}");
    assert!(post >= 40.0, "{post}");
}

#[test]
fn single_cell_separates_modes() {
    // A 2x2 grid over a 16x16 image: one cell, one straight boundary.
    let img = ToyTarget::HalfPlane { angle: 0.7 }.render(16, 16);
    let mse = |m| toy_image_fit(&img, 16, 16, 15.0, m, 3000, 3).unwrap().mse;
    let post = mse(ActivationMode::Post);
    assert!(post <= 0.2 * mse(ActivationMode::Pre), "{post}");
    assert!(post <= 0.2 * mse(ActivationMode::In), "{post}");
}

#[test]
fn fits_are_deterministic() {
    let img = ToyTarget::Disk { radius: 0.3 }.render(20, 16);
    let a = toy_image_fit(&img, 20, 16, 2.5, ActivationMode::Post, 50, 11).unwrap();
    let b = toy_image_fit(&img, 20, 16, 2.5, ActivationMode::Post, 50, 11).unwrap();
    assert_eq!(a, b);
    let c = toy_image_fit(&img, 20, 16, 2.5, ActivationMode::Post, 50, 12).unwrap();
    assert_ne!(a.grid, c.grid);
}

#[test]
fn oversized_stride_is_rejected() {
    let img = ToyTarget::Zeros.render(8, 8);
    assert!(toy_image_fit(&img, 8, 8, 9.0, ActivationMode::Post, 1, 0).is_err());
    assert!(toy_image_fit(&img, 8, 8, 0.5, ActivationMode::Post, 1, 0).is_err());
}
