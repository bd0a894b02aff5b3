use crate::error::{Error, Result};
use crate::tensor::{Dims, Tensor};

#[derive(Clone, Debug, PartialEq)]
enum Pixels {
    /// Bytes scaled by 1/255 on read.
    Bytes(Vec<u8>),
    Real(Vec<f64>),
}

/// Labeled images of one fixed `(c, h, w)` shape.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    shape: [usize; 3],
    classes: usize,
    pixels: Pixels,
    labels: Vec<usize>,
}

impl Dataset {
    fn check(shape: [usize; 3], classes: usize, pixels: usize, labels: &[usize]) -> Result<()> {
        let per = shape.iter().product::<usize>();
        if per == 0 || pixels != per * labels.len() {
            return Err(Error::Config(format!(
                "{pixels} pixel values for {} images of {shape:?}",
                labels.len()
            )));
        }
        if let Some((index, &target)) = labels.iter().enumerate().find(|(_, &l)| l >= classes) {
            return Err(Error::InvalidTarget {
                index,
                target,
                classes,
            });
        }
        Ok(())
    }

    pub fn from_bytes(shape: [usize; 3], classes: usize, bytes: Vec<u8>, labels: Vec<usize>) -> Result<Self> {
        Self::check(shape, classes, bytes.len(), &labels)?;
        Ok(Dataset {
            shape,
            classes,
            pixels: Pixels::Bytes(bytes),
            labels,
        })
    }

    pub fn from_values(shape: [usize; 3], classes: usize, values: Vec<f64>, labels: Vec<usize>) -> Result<Self> {
        Self::check(shape, classes, values.len(), &labels)?;
        Ok(Dataset {
            shape,
            classes,
            pixels: Pixels::Real(values),
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn shape(&self) -> [usize; 3] {
        self.shape
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    fn sample_len(&self) -> usize {
        self.shape.iter().product()
    }

    /// Raw value of channel `c`, row `y`, column `x` of image `i`.
    pub fn pixel(&self, i: usize, c: usize, y: usize, x: usize) -> f64 {
        let [_, h, w] = self.shape;
        let at = i * self.sample_len() + (c * h + y) * w + x;
        match &self.pixels {
            Pixels::Bytes(b) => b[at] as f64 / 255.0,
            Pixels::Real(v) => v[at],
        }
    }

    /// Image `i` as a `(1, c, h, w)` tensor.
    pub fn image(&self, i: usize) -> Tensor {
        let len = self.sample_len();
        let range = i * len..(i + 1) * len;
        let data = match &self.pixels {
            Pixels::Bytes(b) => b[range].iter().map(|&v| v as f64 / 255.0).collect(),
            Pixels::Real(v) => v[range].to_vec(),
        };
        let [c, h, w] = self.shape;
        Tensor::from_vec(Dims::new(1, c, h, w), data).expect("sizes checked at construction")
    }

    /// Per-channel mean and standard deviation over every image.
    pub fn channel_stats(&self) -> Normalization {
        let [c, h, w] = self.shape;
        let plane = h * w;
        let mut sum = vec![0.0; c];
        let mut sq = vec![0.0; c];
        for i in 0..self.len() {
            let img = self.image(i);
            for (ch, chunk) in img.data().chunks(plane).enumerate() {
                sum[ch] += chunk.iter().sum::<f64>();
                sq[ch] += chunk.iter().map(|v| v * v).sum::<f64>();
            }
        }
        let count = (self.len() * plane).max(1) as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / count).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(s, m)| (s / count - m * m).max(0.0).sqrt().max(1e-8))
            .collect();
        Normalization { mean, std }
    }

    /// Images at `indices` (one per entry) in that order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let len = self.sample_len();
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        let pixels = match &self.pixels {
            Pixels::Bytes(b) => Pixels::Bytes(indices.iter().flat_map(|&i| b[i * len..(i + 1) * len].iter().copied()).collect()),
            Pixels::Real(v) => Pixels::Real(indices.iter().flat_map(|&i| v[i * len..(i + 1) * len].iter().copied()).collect()),
        };
        Dataset {
            shape: self.shape,
            classes: self.classes,
            pixels,
            labels,
        }
    }
}

/// Per-channel `(x - mean) / std`.
#[derive(Clone, Debug, PartialEq)]
pub struct Normalization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalization {
    pub fn identity(channels: usize) -> Self {
        Normalization {
            mean: vec![0.0; channels],
            std: vec![1.0; channels],
        }
    }

    pub fn apply(&self, image: &mut Tensor) {
        let d = image.dims();
        let plane = d.plane();
        for (i, chunk) in image.data_mut().chunks_mut(plane).enumerate() {
            let c = i % d.c;
            for v in chunk {
                *v = (*v - self.mean[c]) / self.std[c];
            }
        }
    }
}
