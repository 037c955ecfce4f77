//! In-memory image datasets.

use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{invalid, Error, Result};
use crate::tensor::Tensor;
use crate::transforms::Image;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub images: Vec<Image>,
    pub labels: Option<Vec<usize>>,
    pub base_seed: u64,
}

impl Dataset {
    pub fn new(name: impl Into<String>, images: Vec<Image>, labels: Option<Vec<usize>>, base_seed: u64) -> Result<Self> {
        if let Some(first) = images.first() {
            if images.iter().any(|im| im.dims() != first.dims()) {
                return Err(invalid("all images of a dataset must share dimensions"));
            }
        }
        if let Some(l) = &labels {
            if l.len() != images.len() {
                return Err(Error::Shape {
                    op: "Dataset::new",
                    expected: alloc::vec![images.len()],
                    got: alloc::vec![l.len()],
                });
            }
        }
        Ok(Self {
            name: name.into(),
            images,
            labels,
            base_seed,
        })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// `(height, width, channels)` of the images.
    pub fn image_dims(&self) -> Option<(usize, usize, usize)> {
        self.images.first().map(Image::dims)
    }

    pub fn input_dim(&self) -> usize {
        self.images.first().map(Image::len).unwrap_or(0)
    }

    pub fn num_classes(&self) -> usize {
        self.labels
            .as_ref()
            .and_then(|l| l.iter().max())
            .map_or(0, |m| m + 1)
    }

    /// Rows of flattened pixels for the given indices.
    pub fn batch(&self, indices: &[usize]) -> Result<Tensor> {
        images_to_batch(indices.iter().map(|&i| &self.images[i]))
    }

    /// Split into the first `n` samples and the rest.
    pub fn split_at(&self, n: usize) -> (Dataset, Dataset) {
        let n = n.min(self.len());
        let part = |r: core::ops::Range<usize>, suffix: &str| Dataset {
            name: alloc::format!("{}-{suffix}", self.name),
            images: self.images[r.clone()].to_vec(),
            labels: self.labels.as_ref().map(|l| l[r].to_vec()),
            base_seed: self.base_seed,
        };
        (part(0..n, "a"), part(n..self.len(), "b"))
    }
}

/// Stack images into a `[N × H·W·Ch]` tensor.
pub fn images_to_batch<'a>(images: impl IntoIterator<Item = &'a Image>) -> Result<Tensor> {
    let mut data = Vec::new();
    let mut rows = 0;
    let mut width = None;
    for im in images {
        if *width.get_or_insert(im.len()) != im.len() {
            return Err(invalid("images of different sizes in one batch"));
        }
        data.extend_from_slice(im.pixels());
        rows += 1;
    }
    Tensor::new(alloc::vec![rows, width.unwrap_or(0)], data)
}
