//! Curved sharp boundaries from a single 2D cell.
//!
//! The boundary crosses the top edge at 0.2 and the bottom edge at 0.9. Giving
//! the two edges different tolerance bands bends the level set between them.
//! For each pair of bands this prints the corner values and where the opacity
//! crosses one half on a few rows, and writes the opacity field as a PNG.
//!
//! `cargo run --release --example beyond_linear -- [OUT_DIR]`

use std::path::PathBuf;

use voxfield::image_io::write_gray_png;
use voxfield_core::closedform::{solve_2d, EdgeTolerance, LinearBoundary};

const SIZE: usize = 128;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = PathBuf::from(
        std::env::args()
            .nth(1)
            .unwrap_or_else(|| "beyond_linear".into()),
    );
    std::fs::create_dir_all(&out)?;
    let (eps, delta) = (1e-4, 0.5);
    let line = LinearBoundary { c0: 0.2, c1: 0.9 };
    let half = (2f64.powf(1.0 / delta) - 1.0).ln();
    for top in [1e-3, 1e-2, 1e-1] {
        for bottom in [5e-4, 5e-3, 5e-2] {
            let cell = solve_2d(
                line.c0,
                line.c1,
                EdgeTolerance::new(eps, top, delta)?,
                EdgeTolerance::new(eps, bottom, delta)?,
            )?;
            println!("top {top:e}  bottom {bottom:e}");
            println!(
                "  corners tl {:.1} tr {:.1} bl {:.1} br {:.1}",
                cell.v_tl, cell.v_tr, cell.v_bl, cell.v_br
            );
            let mut bend: f64 = 0.0;
            for i in 0..=4 {
                let t = i as f64 / 4.0;
                let (a, b) = cell.slice(t);
                let x = (half - a) / (b - a);
                bend = bend.max((x - line.at(t)).abs());
                println!(
                    "  t {t:.2}: crossing at x {x:.4} (straight line {:.4})",
                    line.at(t)
                );
            }
            println!("  largest departure from the straight line {bend:.4}");

            let mut img = Vec::with_capacity(SIZE * SIZE);
            for row in 0..SIZE {
                let t = (row as f64 + 0.5) / SIZE as f64;
                for col in 0..SIZE {
                    let x = (col as f64 + 0.5) / SIZE as f64;
                    img.push(cell.alpha_at(x, t, delta));
                }
            }
            write_gray_png(
                &out.join(format!("top{top:e}_bottom{bottom:e}.png")),
                SIZE,
                SIZE,
                &img,
            )?;
        }
    }
    println!("wrote {}", out.display());
    Ok(())
}
