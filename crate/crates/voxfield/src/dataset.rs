//! Posed image sets in the `transforms_{train,test}.json` layout used by the
//! NeRF synthetic scenes.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use voxfield_core::image::RgbImage;
use voxfield_core::render::Camera;

use crate::error::{format_err, io_err, Error, Result};
use crate::image_io::{read_png, write_png, write_png_rgba};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub const ALL: [Split; 2] = [Split::Train, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PosedImage {
    pub camera: Camera,
    /// Colour already composited onto the dataset background.
    pub image: RgbImage,
    pub alpha: Option<Vec<f64>>,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub train: Vec<PosedImage>,
    pub test: Vec<PosedImage>,
    pub near: f64,
    pub far: f64,
    pub white_bg: bool,
}

impl Dataset {
    pub fn background(&self) -> [f64; 3] {
        if self.white_bg {
            [1.0; 3]
        } else {
            [0.0; 3]
        }
    }

    pub fn split(&self, split: Split) -> &[PosedImage] {
        match split {
            Split::Train => &self.train,
            Split::Test => &self.test,
        }
    }

    pub fn train_cameras(&self) -> Vec<Camera> {
        self.train.iter().map(|p| p.camera.clone()).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.train.is_empty() {
            return Err(Error::Config("dataset has no training views".into()));
        }
        for split in Split::ALL {
            let views = self.split(split);
            for (i, v) in views.iter().enumerate() {
                let (w, h) = (v.camera.width as usize, v.camera.height as usize);
                if v.image.width != w || v.image.height != h {
                    return Err(Error::Config(format!(
                        "{} view {i}: image size does not match camera",
                        split.name()
                    )));
                }
                if (v.image.width, v.image.height) != (views[0].image.width, views[0].image.height)
                {
                    return Err(Error::Config(format!(
                        "{} view {i}: image sizes differ within the split",
                        split.name()
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Options for [`load_nerf_synthetic`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoadOptions {
    pub white_bg: bool,
    pub near: f64,
    pub far: f64,
}

impl Default for LoadOptions {
    fn default() -> Self {
        Self {
            white_bg: true,
            near: 2.0,
            far: 6.0,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct TransformsFile {
    camera_angle_x: f64,
    /// Exact focal length; written so a saved dataset reloads bit-exactly.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    fl_x: Option<f64>,
    frames: Vec<Frame>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Frame {
    file_path: String,
    transform_matrix: [[f64; 4]; 4],
}

/// Focal length in pixels for a horizontal field of view.
pub fn focal_from_angle(width: u32, camera_angle_x: f64) -> f64 {
    0.5 * width as f64 / (0.5 * camera_angle_x).tan()
}

fn composite(img: &RgbImage, alpha: &[f64], bg: [f64; 3]) -> RgbImage {
    let pixels = img
        .pixels
        .iter()
        .zip(alpha)
        .map(|(p, &a)| [0, 1, 2].map(|c| p[c] * a + bg[c] * (1.0 - a)))
        .collect();
    RgbImage {
        width: img.width,
        height: img.height,
        pixels,
    }
}

fn load_split(root: &Path, split: Split, opts: &LoadOptions) -> Result<Vec<PosedImage>> {
    let path = root.join(format!("transforms_{}.json", split.name()));
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    let tf: TransformsFile =
        serde_json::from_str(&text).map_err(|e| format_err(&path, e.to_string()))?;
    if !(tf.camera_angle_x > 0.0 && tf.camera_angle_x < std::f64::consts::PI) {
        return Err(format_err(&path, "camera_angle_x must lie in (0, pi)"));
    }
    let bg = if opts.white_bg { [1.0; 3] } else { [0.0; 3] };
    let views: Vec<PosedImage> = tf
        .frames
        .par_iter()
        .enumerate()
        .map(|(i, frame)| {
            let mut rel = PathBuf::from(&frame.file_path);
            if rel.extension().is_none() {
                rel.set_extension("png");
            }
            let loaded = read_png(&root.join(&rel))?;
            let (w, h) = (loaded.rgb.width as u32, loaded.rgb.height as u32);
            let fx = tf
                .fl_x
                .unwrap_or_else(|| focal_from_angle(w, tf.camera_angle_x));
            let camera = Camera::new(
                frame.transform_matrix,
                fx,
                fx,
                w as f64 / 2.0,
                h as f64 / 2.0,
                w,
                h,
                opts.near,
                opts.far,
            )
            .map_err(|e| format_err(&path, format!("frame {i}: {e}")))?;
            if let Some(a) = &loaded.alpha {
                if a.iter().any(|v| !(0.0..=1.0).contains(v)) {
                    return Err(format_err(
                        &path,
                        format!("frame {i}: alpha outside [0, 1]"),
                    ));
                }
            }
            let image = match &loaded.alpha {
                Some(a) => composite(&loaded.rgb, a, bg),
                None => loaded.rgb.clone(),
            };
            Ok(PosedImage {
                camera,
                image,
                alpha: loaded.alpha,
                split,
            })
        })
        .collect::<Result<_>>()?;
    if let Some(first) = views.first() {
        let dims = (first.image.width, first.image.height);
        if views
            .iter()
            .any(|v| (v.image.width, v.image.height) != dims)
        {
            return Err(format_err(&path, "image sizes differ within the split"));
        }
    }
    Ok(views)
}

/// Loads `transforms_train.json` and `transforms_test.json` under `root`.
/// Frame paths without an extension get `.png`; RGBA images are composited
/// onto the background.
pub fn load_nerf_synthetic(root: &Path, opts: &LoadOptions) -> Result<Dataset> {
    let train = load_split(root, Split::Train, opts)?;
    let test = load_split(root, Split::Test, opts)?;
    let ds = Dataset {
        train,
        test,
        near: opts.near,
        far: opts.far,
        white_bg: opts.white_bg,
    };
    ds.validate()?;
    Ok(ds)
}

/// Straight colour that composites back to `composited` over `bg` with coverage `a`.
fn uncomposite(composited: [f64; 3], a: f64, bg: [f64; 3]) -> [f64; 3] {
    if a <= 0.0 {
        return [0.0; 3];
    }
    [0, 1, 2].map(|c| ((composited[c] - bg[c] * (1.0 - a)) / a).clamp(0.0, 1.0))
}

/// Writes the dataset in the layout [`load_nerf_synthetic`] reads. Views with
/// alpha are stored as RGBA.
pub fn save_nerf_synthetic(ds: &Dataset, root: &Path) -> Result<()> {
    let bg = ds.background();
    for split in Split::ALL {
        let views = ds.split(split);
        let dir = root.join(split.name());
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        let mut frames = Vec::with_capacity(views.len());
        for (i, v) in views.iter().enumerate() {
            let rel = format!("./{}/r_{i}", split.name());
            let file = root.join(format!("{rel}.png"));
            match &v.alpha {
                Some(a) => {
                    let straight = RgbImage {
                        width: v.image.width,
                        height: v.image.height,
                        pixels: v
                            .image
                            .pixels
                            .iter()
                            .zip(a)
                            .map(|(&p, &a)| uncomposite(p, a, bg))
                            .collect(),
                    };
                    write_png_rgba(&file, &straight, a)?;
                }
                None => write_png(&file, &v.image)?,
            }
            frames.push(Frame {
                file_path: rel,
                transform_matrix: *v.camera.c2w(),
            });
        }
        let (angle, fl_x) = match views.first() {
            Some(v) => (
                2.0 * (0.5 * v.camera.width as f64 / v.camera.fx).atan(),
                Some(v.camera.fx),
            ),
            None => (0.6911112070083618, None),
        };
        let tf = TransformsFile {
            camera_angle_x: angle,
            fl_x,
            frames,
        };
        let path = root.join(format!("transforms_{}.json", split.name()));
        let text =
            serde_json::to_string_pretty(&tf).map_err(|e| format_err(&path, e.to_string()))?;
        fs::write(&path, text).map_err(io_err(&path))?;
    }
    Ok(())
}
