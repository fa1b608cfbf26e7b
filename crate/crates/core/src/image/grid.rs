use serde::{Deserialize, Serialize};

use super::{ImageError, ImageShape, ImageTensor};
use crate::game::{Coalition, MAX_PLAYERS};

/// Exact tiling of an image into square patches. Player `k` is the patch at
/// row `k / grid_w`, column `k % grid_w`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchGrid {
    patch_size: usize,
    grid_h: usize,
    grid_w: usize,
}

impl PatchGrid {
    pub fn new(height: usize, width: usize, patch_size: usize) -> Result<Self, ImageError> {
        if patch_size == 0 {
            return Err(ImageError::Config("patch size must be positive".into()));
        }
        if height == 0 || width == 0 || !height.is_multiple_of(patch_size) || !width.is_multiple_of(patch_size) {
            return Err(ImageError::Config(format!(
                "{height}x{width} image is not tiled exactly by {patch_size}x{patch_size} patches"
            )));
        }
        let grid = Self { patch_size, grid_h: height / patch_size, grid_w: width / patch_size };
        if grid.num_players() > MAX_PLAYERS {
            return Err(ImageError::Config(format!(
                "{} patches exceed the {MAX_PLAYERS}-player limit",
                grid.num_players()
            )));
        }
        Ok(grid)
    }

    pub fn for_shape(shape: ImageShape, patch_size: usize) -> Result<Self, ImageError> {
        Self::new(shape.height, shape.width, patch_size)
    }

    pub fn patch_size(&self) -> usize {
        self.patch_size
    }

    pub fn grid_h(&self) -> usize {
        self.grid_h
    }

    pub fn grid_w(&self) -> usize {
        self.grid_w
    }

    pub fn num_players(&self) -> usize {
        self.grid_h * self.grid_w
    }

    /// `(row, column)` of a player's patch.
    pub fn position(&self, player: usize) -> (usize, usize) {
        (player / self.grid_w, player % self.grid_w)
    }

    pub fn player_at(&self, row: usize, col: usize) -> usize {
        row * self.grid_w + col
    }

    pub fn player_of_pixel(&self, y: usize, x: usize) -> usize {
        self.player_at(y / self.patch_size, x / self.patch_size)
    }

    pub fn tiles(&self, shape: ImageShape) -> bool {
        self.grid_h * self.patch_size == shape.height && self.grid_w * self.patch_size == shape.width
    }

    fn check(&self, shape: ImageShape) -> Result<(), ImageError> {
        if self.tiles(shape) {
            Ok(())
        } else {
            Err(ImageError::Config(format!(
                "{}x{} grid of {}-pixel patches does not tile a {shape} image",
                self.grid_h, self.grid_w, self.patch_size
            )))
        }
    }
}

/// Fill value for masked-out pixels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", content = "values", rename_all = "snake_case")]
pub enum MaskBaseline {
    Zero,
    /// Per-channel mean over the whole analysis set.
    ChannelMean(Vec<f64>),
    Custom(Vec<f64>),
}

impl MaskBaseline {
    /// Per-channel mean pooled over every pixel of every image.
    pub fn channel_mean<'a, I>(images: I) -> Result<Self, ImageError>
    where
        I: IntoIterator<Item = &'a ImageTensor>,
    {
        let mut sums: Vec<crate::numeric::CompensatedSum> = Vec::new();
        let mut counts = 0usize;
        let mut channels = None;
        for img in images {
            let c = img.channels();
            match channels {
                None => {
                    channels = Some(c);
                    sums = vec![Default::default(); c];
                }
                Some(prev) if prev != c => {
                    return Err(ImageError::Invalid(format!("channel count {c} differs from {prev}")));
                }
                _ => {}
            }
            let plane = img.height() * img.width();
            for (ch, sum) in sums.iter_mut().enumerate() {
                sum.extend(img.data()[ch * plane..(ch + 1) * plane].iter().copied());
            }
            counts += plane;
        }
        if channels.is_none() {
            return Err(ImageError::Invalid("channel mean of an empty image set".into()));
        }
        Ok(Self::ChannelMean(sums.iter().map(|s| s.total() / counts as f64).collect()))
    }

    pub fn custom(values: Vec<f64>) -> Result<Self, ImageError> {
        if values.is_empty() || values.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(ImageError::Config(format!("custom baseline {values:?} must be nonempty and within [0, 1]")));
        }
        Ok(Self::Custom(values))
    }

    pub fn fill(&self, channel: usize) -> f64 {
        match self {
            Self::Zero => 0.0,
            // a single value broadcasts across channels
            Self::ChannelMean(v) | Self::Custom(v) => v[if v.len() == 1 { 0 } else { channel }],
        }
    }

    fn check(&self, channels: usize) -> Result<(), ImageError> {
        match self {
            Self::Zero => Ok(()),
            Self::ChannelMean(v) | Self::Custom(v) if v.len() == 1 || v.len() == channels => Ok(()),
            Self::ChannelMean(v) | Self::Custom(v) => {
                Err(ImageError::Config(format!("baseline has {} values for a {channels}-channel image", v.len())))
            }
        }
    }
}

/// Keeps the patches in `coalition` and fills every other pixel with the
/// baseline.
pub fn apply_mask(
    x: &ImageTensor,
    coalition: &Coalition,
    grid: &PatchGrid,
    baseline: &MaskBaseline,
) -> Result<ImageTensor, ImageError> {
    let shape = x.shape();
    grid.check(shape)?;
    baseline.check(shape.channels)?;
    if coalition.num_players() != grid.num_players() {
        return Err(ImageError::Config(format!(
            "coalition over {} players used with a {}-patch grid",
            coalition.num_players(),
            grid.num_players()
        )));
    }
    let keep: Vec<bool> = (0..grid.num_players()).map(|p| coalition.contains(p)).collect();
    let src = x.data();
    let mut data = Vec::with_capacity(src.len());
    for c in 0..shape.channels {
        let fill = baseline.fill(c);
        for y in 0..shape.height {
            let row = (c * shape.height + y) * shape.width;
            let prow = (y / grid.patch_size) * grid.grid_w;
            for px in 0..shape.width {
                data.push(if keep[prow + px / grid.patch_size] { src[row + px] } else { fill });
            }
        }
    }
    ImageTensor::new(shape, data)
}
