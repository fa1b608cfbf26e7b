use serde::{Deserialize, Serialize};

use super::ImageError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ImageShape {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl ImageShape {
    pub fn new(height: usize, width: usize, channels: usize) -> Self {
        Self { height, width, channels }
    }

    pub fn len(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl std::fmt::Display for ImageShape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}", self.height, self.width, self.channels)
    }
}

/// Pixel data in `[0, 1]`, channel-major: index `(c * height + y) * width + x`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    shape: ImageShape,
    data: Vec<f64>,
}

impl ImageTensor {
    pub fn new(shape: ImageShape, data: Vec<f64>) -> Result<Self, ImageError> {
        if shape.is_empty() {
            return Err(ImageError::Invalid(format!("empty shape {shape}")));
        }
        if data.len() != shape.len() {
            return Err(ImageError::Invalid(format!("shape {shape} needs {} values, got {}", shape.len(), data.len())));
        }
        if let Some(k) = data.iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(ImageError::Invalid(format!("value {} at index {k} outside [0, 1]", data[k])));
        }
        Ok(Self { shape, data })
    }

    pub fn filled(shape: ImageShape, value: f64) -> Result<Self, ImageError> {
        Self::new(shape, vec![value; shape.len()])
    }

    /// Builds an image from values that are clamped into `[0, 1]` first.
    pub fn from_clamped(shape: ImageShape, mut data: Vec<f64>) -> Result<Self, ImageError> {
        for v in &mut data {
            *v = v.clamp(0.0, 1.0);
        }
        Self::new(shape, data)
    }

    pub fn shape(&self) -> ImageShape {
        self.shape
    }

    pub fn height(&self) -> usize {
        self.shape.height
    }

    pub fn width(&self) -> usize {
        self.shape.width
    }

    pub fn channels(&self) -> usize {
        self.shape.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.shape.height + y) * self.shape.width + x]
    }

    /// Mirror image along the vertical axis.
    pub fn flip_horizontal(&self) -> Self {
        let ImageShape { height, width, channels } = self.shape;
        let mut data = Vec::with_capacity(self.data.len());
        for c in 0..channels {
            for y in 0..height {
                for x in (0..width).rev() {
                    data.push(self.get(c, y, x));
                }
            }
        }
        Self { shape: self.shape, data }
    }

    pub fn linf_distance(&self, other: &Self) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validation() {
        let s = ImageShape::new(2, 2, 1);
        assert!(ImageTensor::new(s, vec![0.0; 3]).is_err());
        assert!(ImageTensor::new(s, vec![0.0, 0.5, 1.0, 1.5]).is_err());
        assert!(ImageTensor::new(s, vec![0.0, 0.5, 1.0, f64::NAN]).is_err());
        let img = ImageTensor::from_clamped(s, vec![-1.0, 0.5, 1.0, 1.5]).unwrap();
        assert_eq!(img.data(), &[0.0, 0.5, 1.0, 1.0]);
    }

    #[test]
    fn flip_is_an_involution() {
        let s = ImageShape::new(2, 3, 2);
        let img = ImageTensor::new(s, (0..12).map(|v| v as f64 / 12.0).collect()).unwrap();
        let f = img.flip_horizontal();
        assert_eq!(f.get(1, 1, 0), img.get(1, 1, 2));
        assert_eq!(f.flip_horizontal(), img);
    }
}
