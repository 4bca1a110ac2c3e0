//! Trigger patches, data poisoning, and the triggered evaluation set.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::Tensor;
use crate::rng::{shuffled_indices, stream};

/// A rectangular pixel patch stamped onto images, with the label the
/// attacker wants triggered inputs classified as.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TriggerSpec {
    pub rows: Range<usize>,
    pub cols: Range<usize>,
    /// Patch pixels, row-major within the patch, in [0,1].
    pub values: Vec<f32>,
    pub target_label: usize,
    pub image_height: usize,
    pub image_width: usize,
    /// When set, only this row-major sub-range of patch cells is stamped;
    /// used to deal one trigger out to several colluding clients. A range
    /// covering every cell is normalized back to None.
    #[serde(default)]
    pub active_cells: Option<Range<usize>>,
}

impl TriggerSpec {
    pub fn new(
        rows: Range<usize>,
        cols: Range<usize>,
        values: Vec<f32>,
        target_label: usize,
        image_height: usize,
        image_width: usize,
    ) -> Result<Self> {
        if rows.is_empty() || cols.is_empty() {
            return Err(Error::InvalidArgument("empty trigger patch".into()));
        }
        if rows.end > image_height || cols.end > image_width {
            return Err(Error::InvalidArgument(format!(
                "patch rows {rows:?} cols {cols:?} exceed image {image_height}x{image_width}"
            )));
        }
        let cells = rows.len() * cols.len();
        if values.len() != cells {
            return Err(Error::InvalidArgument(format!(
                "{} values for a {cells}-cell patch",
                values.len()
            )));
        }
        if values.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidArgument(
                "trigger values must lie in [0,1]".into(),
            ));
        }
        Ok(TriggerSpec {
            rows,
            cols,
            values,
            target_label,
            image_height,
            image_width,
            active_cells: None,
        })
    }

    /// 3x3 all-ones patch at the top-left corner targeting label 0.
    pub fn default_for(image_height: usize, image_width: usize) -> Result<Self> {
        if image_height < 3 || image_width < 3 {
            return Err(Error::InvalidArgument(format!(
                "default 3x3 trigger does not fit a {image_height}x{image_width} image; configure one explicitly"
            )));
        }
        TriggerSpec::new(0..3, 0..3, vec![1.0; 9], 0, image_height, image_width)
    }

    pub fn patch_cells(&self) -> usize {
        self.rows.len() * self.cols.len()
    }

    /// Re-checks the invariants `new` enforces plus the active-cell range;
    /// needed for instances built by deserialization, which bypasses the
    /// constructor.
    pub fn validate(&self) -> Result<()> {
        TriggerSpec::new(
            self.rows.clone(),
            self.cols.clone(),
            self.values.clone(),
            self.target_label,
            self.image_height,
            self.image_width,
        )?;
        if let Some(a) = &self.active_cells {
            if a.is_empty() || a.end > self.patch_cells() {
                return Err(Error::InvalidArgument(format!(
                    "active cells {a:?} outside a {}-cell patch",
                    self.patch_cells()
                )));
            }
        }
        Ok(())
    }

    /// (patch cell index, flat pixel index) for every active cell.
    pub fn active_cell_pixels(&self) -> Vec<(usize, usize)> {
        let active = self
            .active_cells
            .clone()
            .unwrap_or(0..self.patch_cells());
        let width = self.cols.len();
        active
            .map(|cell| {
                let r = self.rows.start + cell / width;
                let c = self.cols.start + cell % width;
                (cell, r * self.image_width + c)
            })
            .collect()
    }

    /// (flat pixel index, value) for every active cell.
    pub fn stamped_pixels(&self) -> Vec<(usize, f32)> {
        self.active_cell_pixels()
            .into_iter()
            .map(|(cell, idx)| (idx, self.values[cell]))
            .collect()
    }
}

/// Stamps the trigger onto one flattened image row.
pub fn apply_trigger(image: &[f32], trigger: &TriggerSpec) -> Result<Vec<f32>> {
    if image.len() != trigger.image_height * trigger.image_width {
        return Err(Error::ShapeMismatch(format!(
            "image of {} pixels vs declared {}x{}",
            image.len(),
            trigger.image_height,
            trigger.image_width
        )));
    }
    let mut out = image.to_vec();
    for (idx, v) in trigger.stamped_pixels() {
        out[idx] = v;
    }
    Ok(out)
}

/// The uniformly chosen row subset that poisoning at `fraction` touches:
/// floor(fraction * n) rows, drawn via the stream (seed, "poison", 0),
/// returned ascending.
pub fn choose_poison_rows(n: usize, fraction: f64, seed: u64) -> Result<Vec<usize>> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::InvalidArgument(format!(
            "poison fraction must lie in [0,1], got {fraction}"
        )));
    }
    let k = (fraction * n as f64).floor() as usize;
    let mut rng = stream(seed, "poison", 0);
    let mut rows = shuffled_indices(n, &mut rng);
    rows.truncate(k);
    rows.sort_unstable();
    Ok(rows)
}

/// Applies the trigger to the given rows and overwrites their labels with
/// the target; every other row is untouched and row order is preserved.
pub fn poison_rows(data: &Dataset, trigger: &TriggerSpec, rows: &[usize]) -> Result<Dataset> {
    if trigger.target_label >= data.num_classes() {
        return Err(Error::InvalidArgument(format!(
            "target label {} out of range for {} classes",
            trigger.target_label,
            data.num_classes()
        )));
    }
    let mut images = data.images().data().to_vec();
    let mut labels = data.labels().to_vec();
    let dim = data.dim();
    for &r in rows {
        if r >= data.n() {
            return Err(Error::InvalidArgument(format!(
                "poison row {r} out of range for {} samples",
                data.n()
            )));
        }
        let stamped = apply_trigger(data.image_row(r), trigger)?;
        images[r * dim..(r + 1) * dim].copy_from_slice(&stamped);
        labels[r] = trigger.target_label;
    }
    Dataset::new(
        Tensor::new(data.n(), dim, images)?,
        labels,
        data.num_classes(),
    )
}

/// Poisons a uniformly chosen floor(fraction * n) subset of the dataset.
pub fn poison_client_data(
    data: &Dataset,
    trigger: &TriggerSpec,
    fraction: f64,
    seed: u64,
) -> Result<Dataset> {
    let rows = choose_poison_rows(data.n(), fraction, seed)?;
    poison_rows(data, trigger, &rows)
}

/// Triggered evaluation set: samples of the target class are dropped, the
/// trigger is stamped on the rest. Labels keep their original values; the
/// attack succeeds on a sample when the model predicts `target_label`.
#[derive(Clone, Debug)]
pub struct PoisonedTestset {
    pub dataset: Dataset,
    pub target_label: usize,
}

pub fn build_poisoned_testset(test: &Dataset, trigger: &TriggerSpec) -> Result<PoisonedTestset> {
    let keep: Vec<usize> = (0..test.n())
        .filter(|&i| test.label(i) != trigger.target_label)
        .collect();
    if keep.is_empty() {
        return Err(Error::EmptyInput(
            "every test sample already has the target label".into(),
        ));
    }
    let kept = test.subset(&keep)?;
    let mut images = Vec::with_capacity(kept.n() * kept.dim());
    for i in 0..kept.n() {
        images.extend(apply_trigger(kept.image_row(i), trigger)?);
    }
    let dataset = Dataset::new(
        Tensor::new(kept.n(), kept.dim(), images)?,
        kept.labels().to_vec(),
        kept.num_classes(),
    )?;
    Ok(PoisonedTestset {
        dataset,
        target_label: trigger.target_label,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth_blobs;

    fn trig_1x1() -> TriggerSpec {
        TriggerSpec::new(0..1, 0..1, vec![1.0], 0, 2, 2).unwrap()
    }

    #[test]
    fn one_pixel_patch_sets_exactly_one_pixel() {
        let out = apply_trigger(&[0.0; 4], &trig_1x1()).unwrap();
        assert_eq!(out, vec![1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn applying_twice_equals_once() {
        let t = trig_1x1();
        let once = apply_trigger(&[0.2; 4], &t).unwrap();
        let twice = apply_trigger(&once, &t).unwrap();
        assert_eq!(once, twice);
    }

    #[test]
    fn pixels_outside_patch_untouched() {
        let t = TriggerSpec::new(1..3, 1..3, vec![0.9; 4], 0, 4, 4).unwrap();
        let image: Vec<f32> = (0..16).map(|i| i as f32 / 16.0).collect();
        let out = apply_trigger(&image, &t).unwrap();
        for r in 0..4 {
            for c in 0..4 {
                let idx = r * 4 + c;
                if (1..3).contains(&r) && (1..3).contains(&c) {
                    assert_eq!(out[idx], 0.9);
                } else {
                    assert_eq!(out[idx], image[idx]);
                }
            }
        }
    }

    #[test]
    fn patch_must_fit_and_match_image() {
        assert!(TriggerSpec::new(0..3, 0..3, vec![1.0; 9], 0, 2, 2).is_err());
        assert!(TriggerSpec::new(0..2, 0..2, vec![1.0; 3], 0, 4, 4).is_err());
        let t = trig_1x1();
        assert!(apply_trigger(&[0.0; 9], &t).is_err());
    }

    #[test]
    fn poison_fraction_counts() {
        let d = synth_blobs(5, 2, 4, 0.1, 3).unwrap();
        let t = TriggerSpec::new(0..1, 0..1, vec![1.0], 1, 2, 2).unwrap();
        let zero = poison_client_data(&d, &t, 0.0, 9).unwrap();
        assert_eq!(zero.labels(), d.labels());
        assert_eq!(zero.images().data(), d.images().data());

        let full = poison_client_data(&d, &t, 1.0, 9).unwrap();
        assert!(full.labels().iter().all(|&l| l == 1));

        let rows = choose_poison_rows(d.n(), 0.5, 9).unwrap();
        assert_eq!(rows.len(), 5);
        let half = poison_client_data(&d, &t, 0.5, 9).unwrap();
        for i in 0..d.n() {
            if rows.contains(&i) {
                assert_eq!(half.label(i), 1);
                assert_eq!(half.image_row(i)[0], 1.0);
            } else {
                assert_eq!(half.label(i), d.label(i));
                assert_eq!(half.image_row(i), d.image_row(i));
            }
        }
    }

    #[test]
    fn poisoning_is_deterministic() {
        let d = synth_blobs(10, 2, 4, 0.1, 3).unwrap();
        let t = TriggerSpec::new(0..1, 0..1, vec![0.7], 0, 2, 2).unwrap();
        let a = poison_client_data(&d, &t, 0.4, 5).unwrap();
        let b = poison_client_data(&d, &t, 0.4, 5).unwrap();
        assert_eq!(a.images().data(), b.images().data());
        assert_eq!(a.labels(), b.labels());
    }

    #[test]
    fn poisoned_testset_drops_target_class() {
        let d = synth_blobs(5, 2, 4, 0.1, 3).unwrap();
        let t = TriggerSpec::new(0..1, 0..1, vec![1.0], 0, 2, 2).unwrap();
        let p = build_poisoned_testset(&d, &t).unwrap();
        assert_eq!(p.dataset.n(), 5);
        assert!(p.dataset.labels().iter().all(|&l| l != 0));
        for i in 0..p.dataset.n() {
            assert_eq!(p.dataset.image_row(i)[0], 1.0);
        }
    }

    #[test]
    fn all_target_testset_is_an_error() {
        let d = synth_blobs(5, 2, 4, 0.1, 3).unwrap();
        let only_zero = d.subset(&[0, 1, 2, 3, 4]).unwrap();
        let t = TriggerSpec::new(0..1, 0..1, vec![1.0], 0, 2, 2).unwrap();
        assert!(build_poisoned_testset(&only_zero, &t).is_err());
    }

    #[test]
    fn poisoned_images_differ_only_in_patch() {
        let d = synth_blobs(4, 2, 16, 0.2, 8).unwrap();
        let t = TriggerSpec::new(0..2, 0..2, vec![1.0, 0.0, 0.5, 0.25], 0, 4, 4).unwrap();
        let p = build_poisoned_testset(&d, &t).unwrap();
        let stamped: Vec<usize> = t.stamped_pixels().iter().map(|&(i, _)| i).collect();
        let sources: Vec<usize> = (0..d.n()).filter(|&i| d.label(i) != 0).collect();
        for (pi, &si) in sources.iter().enumerate() {
            for j in 0..16 {
                if stamped.contains(&j) {
                    continue;
                }
                assert_eq!(p.dataset.image_row(pi)[j], d.image_row(si)[j]);
            }
        }
    }
}
