//! Binary PPM/PGM images and the scribble segmentation problem built from them.

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;

use super::{ConstraintSpec, Dataset, EdgeSpec};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    /// Row-major `r, g, b` triples.
    pub data: Vec<u8>,
}

impl RgbImage {
    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let k = 3 * (y * self.width + x);
        [self.data[k], self.data[k + 1], self.data[k + 2]]
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    /// Row-major values.
    pub data: Vec<u8>,
}

/// Splits a netpbm header into `magic, width, height, maxval` and returns the
/// offset of the raster.
fn parse_header(bytes: &[u8], path: &Path) -> Result<(String, usize, usize, usize, usize)> {
    let bad = |msg: String| Error::InvalidInput(format!("{}: {msg}", path.display()));
    let mut tokens = Vec::new();
    let mut pos = 0;
    while tokens.len() < 4 {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() && bytes[pos] != b'#' {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated header".into()));
        }
        tokens.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    let num = |s: &str| s.parse::<usize>().map_err(|_| bad(format!("bad header value '{s}'")));
    let (w, h, maxval) = (num(&tokens[1])?, num(&tokens[2])?, num(&tokens[3])?);
    if maxval != 255 {
        return Err(bad(format!("maxval {maxval} unsupported, expected 255")));
    }
    Ok((tokens[0].clone(), w, h, maxval, pos))
}

pub fn read_ppm(path: &Path) -> Result<RgbImage> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let (magic, width, height, _, offset) = parse_header(&bytes, path)?;
    if magic != "P6" {
        return Err(Error::InvalidInput(format!(
            "{}: expected P6 image, found '{magic}'",
            path.display()
        )));
    }
    let len = 3 * width * height;
    if bytes.len() < offset + len {
        return Err(Error::InvalidInput(format!("{}: truncated raster", path.display())));
    }
    Ok(RgbImage {
        width,
        height,
        data: bytes[offset..offset + len].to_vec(),
    })
}

pub fn read_pgm(path: &Path) -> Result<GrayImage> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let (magic, width, height, _, offset) = parse_header(&bytes, path)?;
    if magic != "P5" {
        return Err(Error::InvalidInput(format!(
            "{}: expected P5 image, found '{magic}'",
            path.display()
        )));
    }
    let len = width * height;
    if bytes.len() < offset + len {
        return Err(Error::InvalidInput(format!("{}: truncated raster", path.display())));
    }
    Ok(GrayImage {
        width,
        height,
        data: bytes[offset..offset + len].to_vec(),
    })
}

pub fn write_ppm(path: &Path, image: &RgbImage) -> Result<()> {
    let mut bytes = format!("P6\n{} {}\n255\n", image.width, image.height).into_bytes();
    bytes.extend_from_slice(&image.data);
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn write_pgm(path: &Path, image: &GrayImage) -> Result<()> {
    let mut bytes = format!("P5\n{} {}\n255\n", image.width, image.height).into_bytes();
    bytes.extend_from_slice(&image.data);
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// A pixel-labeling problem; vertex `y * width + x` is pixel `(x, y)`.
#[derive(Clone, Debug)]
pub struct ImageProblem {
    pub dataset: Dataset,
    pub constraints: ConstraintSpec,
    pub width: usize,
    pub height: usize,
    /// Largest scribble value; scribble `k` means label `k - 1`.
    pub n_labels: usize,
}

/// Builds per-pixel features `(r, g, b[, x / width, y / height])` in `[0, 1]`,
/// 4-connected Potts edges of weight `potts_weight`, and one clamp per
/// nonzero scribble pixel.
pub fn load_image_problem(
    image_path: &Path,
    scribbles_path: &Path,
    potts_weight: f64,
    with_coordinates: bool,
) -> Result<ImageProblem> {
    let image = read_ppm(image_path)?;
    let scribbles = read_pgm(scribbles_path)?;
    image_problem(&image, &scribbles, potts_weight, with_coordinates)
}

pub(crate) fn image_problem(
    image: &RgbImage,
    scribbles: &GrayImage,
    potts_weight: f64,
    with_coordinates: bool,
) -> Result<ImageProblem> {
    if (image.width, image.height) != (scribbles.width, scribbles.height) {
        return Err(Error::Dimension(format!(
            "image is {}x{} but scribbles are {}x{}",
            image.width, image.height, scribbles.width, scribbles.height
        )));
    }
    if !(potts_weight.is_finite() && potts_weight >= 0.0) {
        return Err(Error::InvalidInput(format!(
            "Potts weight must be >= 0, got {potts_weight}"
        )));
    }
    let (w, h) = (image.width, image.height);
    let d = if with_coordinates { 5 } else { 3 };
    let features = DMatrix::from_fn(w * h, d, |v, k| {
        let (x, y) = (v % w, v / w);
        match k {
            0..=2 => image.pixel(x, y)[k] as f64 / 255.0,
            3 => x as f64 / w as f64,
            _ => y as f64 / h as f64,
        }
    });
    let mut potts_edges = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let v = y * w + x;
            if x + 1 < w {
                potts_edges.push(EdgeSpec {
                    i: v,
                    j: v + 1,
                    weight: potts_weight,
                });
            }
            if y + 1 < h {
                potts_edges.push(EdgeSpec {
                    i: v,
                    j: v + w,
                    weight: potts_weight,
                });
            }
        }
    }
    let fixed_labels = scribbles
        .data
        .iter()
        .enumerate()
        .filter(|(_, &s)| s > 0)
        .map(|(v, &s)| (v, s as usize - 1))
        .collect();
    let n_labels = scribbles.data.iter().copied().max().unwrap_or(0) as usize;
    let dataset = Dataset {
        features,
        true_labels: None,
        fixed_labels,
    };
    let constraints = ConstraintSpec {
        potts_edges,
        ..Default::default()
    }
    .with_fixed_labels(&dataset.fixed_labels);
    Ok(ImageProblem {
        dataset,
        constraints,
        width: w,
        height: h,
        n_labels,
    })
}
