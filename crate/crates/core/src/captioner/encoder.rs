use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::attributes::cell_bounds;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::rng::{stream, uniform_symmetric, Stream};
use crate::tensor::Matrix;

/// A frozen image encoder producing `rows() x dim()` features.
pub trait ImageEncoderAdapter {
    fn name(&self) -> &str;

    fn rows(&self) -> usize;

    fn dim(&self) -> usize;

    fn encode(&self, image: &Image) -> core::result::Result<Matrix, String>;
}

/// Runs `adapter` and checks the shape and finiteness of its output.
pub fn encode_image(image: &Image, adapter: &dyn ImageEncoderAdapter) -> Result<Matrix> {
    if image.is_empty() {
        return Err(Error::InvalidImage("cannot encode an empty image".into()));
    }
    let wrap = |message: String| Error::Adapter {
        adapter: adapter.name().to_string(),
        message,
    };
    let features = adapter.encode(image).map_err(wrap)?;
    if features.rows() != adapter.rows() || features.cols() != adapter.dim() {
        return Err(wrap(format!(
            "returned {}x{} features, declared {}x{}",
            features.rows(),
            features.cols(),
            adapter.rows(),
            adapter.dim()
        )));
    }
    if !features.is_finite() {
        return Err(wrap("returned non-finite features".into()));
    }
    Ok(features)
}

/// Deterministic stand-in for a pretrained backbone: the image is split
/// into a `grid x grid` layout, each cell's mean RGB (in `[0, 1]`) is
/// multiplied by a fixed random `3 x dim` matrix, and cells are emitted in
/// row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyPatchEncoder {
    grid: usize,
    dim: usize,
    projection: Vec<f64>,
}

impl ToyPatchEncoder {
    /// `m` must be a perfect square.
    pub fn new(m: usize, dim: usize, seed: u64) -> Result<Self> {
        let grid = libm::sqrt(m as f64) as usize;
        let grid = (grid.saturating_sub(1)..=grid + 1)
            .find(|g| g * g == m)
            .ok_or_else(|| Error::InvalidConfig(format!("toy encoder needs a square m, got {m}")))?;
        let mut rng = stream(seed, Stream::EncoderProjection);
        let projection = (0..3 * dim).map(|_| uniform_symmetric(&mut rng, 1.0)).collect();
        Ok(Self {
            grid,
            dim,
            projection,
        })
    }

    pub fn grid(&self) -> usize {
        self.grid
    }

    /// Row-major `3 x dim` projection.
    pub fn projection(&self) -> &[f64] {
        &self.projection
    }
}

impl ImageEncoderAdapter for ToyPatchEncoder {
    fn name(&self) -> &str {
        "toy-patch"
    }

    fn rows(&self) -> usize {
        self.grid * self.grid
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn encode(&self, image: &Image) -> core::result::Result<Matrix, String> {
        if image.width() < self.grid || image.height() < self.grid {
            return Err(format!(
                "image {}x{} is smaller than the {}x{} patch grid",
                image.width(),
                image.height(),
                self.grid,
                self.grid
            ));
        }
        let mut out = Matrix::zeros(self.rows(), self.dim);
        for gy in 0..self.grid {
            let (y0, y1) = cell_bounds(gy, self.grid, image.height());
            for gx in 0..self.grid {
                let (x0, x1) = cell_bounds(gx, self.grid, image.width());
                let mut mean = [0.0f64; 3];
                for y in y0..y1 {
                    for x in x0..x1 {
                        let px = image.pixel(x, y);
                        for ch in 0..3 {
                            mean[ch] += px[ch] as f64;
                        }
                    }
                }
                let n = ((y1 - y0) * (x1 - x0)) as f64 * 255.0;
                let row = out.row_mut(gy * self.grid + gx);
                for (ch, &total) in mean.iter().enumerate() {
                    let m = total / n;
                    for (o, &w) in row.iter_mut().zip(&self.projection[ch * self.dim..(ch + 1) * self.dim]) {
                        *o += m * w;
                    }
                }
            }
        }
        Ok(out)
    }
}
