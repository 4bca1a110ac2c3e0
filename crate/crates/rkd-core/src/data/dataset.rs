//! Labeled image datasets, flattened to rows in [0,1].

use crate::error::{Error, Result};
use crate::nn::Tensor;

/// n flattened images with integer labels.
#[derive(Clone, Debug)]
pub struct Dataset {
    images: Tensor,
    labels: Vec<usize>,
    num_classes: usize,
}

impl Dataset {
    pub fn new(images: Tensor, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if images.n_rows() == 0 {
            return Err(Error::EmptyInput("dataset with zero samples".into()));
        }
        if labels.len() != images.n_rows() {
            return Err(Error::ShapeMismatch(format!(
                "{} labels for {} images",
                labels.len(),
                images.n_rows()
            )));
        }
        if num_classes == 0 {
            return Err(Error::InvalidArgument("num_classes must be positive".into()));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::InvalidArgument(format!(
                "label {bad} out of range for {num_classes} classes"
            )));
        }
        if images.data().iter().any(|&v| !(0.0..=1.0).contains(&v)) {
            return Err(Error::InvalidArgument(
                "pixel values must lie in [0,1]".into(),
            ));
        }
        Ok(Dataset {
            images,
            labels,
            num_classes,
        })
    }

    pub fn n(&self) -> usize {
        self.images.n_rows()
    }

    pub fn dim(&self) -> usize {
        self.images.n_cols()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn images(&self) -> &Tensor {
        &self.images
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn image_row(&self, i: usize) -> &[f32] {
        self.images.row(i)
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    /// Samples per class, indexed by class id.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.num_classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// New dataset keeping the listed rows, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        let images = self.images.gather_rows(indices)?;
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        Dataset::new(images, labels, self.num_classes)
    }

    /// Declared image geometry: square if the flattened width is a perfect
    /// square, otherwise a single pixel row.
    pub fn square_geometry(&self) -> (usize, usize) {
        let d = self.dim();
        let side = (d as f64).sqrt().round() as usize;
        if side * side == d {
            (side, side)
        } else {
            (1, d)
        }
    }
}

/// Images whose labels were deliberately discarded (the distillation set).
#[derive(Clone, Debug)]
pub struct UnlabeledData {
    images: Tensor,
}

impl UnlabeledData {
    pub fn new(images: Tensor) -> Result<Self> {
        if images.n_rows() == 0 {
            return Err(Error::EmptyInput("unlabeled set with zero samples".into()));
        }
        Ok(UnlabeledData { images })
    }

    pub fn n(&self) -> usize {
        self.images.n_rows()
    }

    pub fn dim(&self) -> usize {
        self.images.n_cols()
    }

    pub fn images(&self) -> &Tensor {
        &self.images
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> Dataset {
        let images = Tensor::new(3, 2, vec![0.0, 0.5, 1.0, 0.25, 0.75, 0.1]).unwrap();
        Dataset::new(images, vec![0, 1, 0], 2).unwrap()
    }

    #[test]
    fn validates_labels_and_pixels() {
        let images = Tensor::new(1, 2, vec![0.0, 0.5]).unwrap();
        assert!(Dataset::new(images.clone(), vec![2], 2).is_err());
        assert!(Dataset::new(images.clone(), vec![0, 1], 2).is_err());
        let out_of_range = Tensor::new(1, 2, vec![0.0, 1.5]).unwrap();
        assert!(Dataset::new(out_of_range, vec![0], 2).is_err());
    }

    #[test]
    fn class_counts_and_subset() {
        let d = tiny();
        assert_eq!(d.class_counts(), vec![2, 1]);
        let s = d.subset(&[2, 0]).unwrap();
        assert_eq!(s.labels(), &[0, 0]);
        assert_eq!(s.image_row(0), tiny().image_row(2));
    }

    #[test]
    fn geometry_prefers_square() {
        let sq = Tensor::zeros(1, 16);
        let d = Dataset::new(sq, vec![0], 1).unwrap();
        assert_eq!(d.square_geometry(), (4, 4));
        let flat = Tensor::zeros(1, 6);
        let d2 = Dataset::new(flat, vec![0], 1).unwrap();
        assert_eq!(d2.square_geometry(), (1, 6));
    }
}
