//! Loss, pixel accuracy and Dice.

use std::collections::BTreeMap;

use serde::ser::SerializeMap;
use serde::{Serialize, Serializer};

use crate::error::{shape_err, Error, Result};
use crate::tensor::{Real, Shape4, Tensor4};

/// Added inside the logarithm of the cross-entropy.
pub const LOG_EPS: f64 = 1e-12;

/// Per-pixel class indices, row-major.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct LabelMap {
    pub height: usize,
    pub width: usize,
    pub labels: Vec<u8>,
}

impl LabelMap {
    pub fn new(height: usize, width: usize, labels: Vec<u8>) -> Result<Self> {
        if labels.len() != height * width {
            return Err(shape_err!(
                "label map {height}x{width} needs {} labels, got {}",
                height * width,
                labels.len()
            ));
        }
        Ok(LabelMap { height, width, labels })
    }

    pub fn filled(height: usize, width: usize, label: u8) -> Self {
        LabelMap {
            height,
            width,
            labels: vec![label; height * width],
        }
    }

    pub fn get(&self, y: usize, x: usize) -> u8 {
        self.labels[y * self.width + x]
    }

    pub fn set(&mut self, y: usize, x: usize, v: u8) {
        self.labels[y * self.width + x] = v;
    }

    pub fn max_label(&self) -> u8 {
        self.labels.iter().copied().max().unwrap_or(0)
    }

    pub fn check_classes(&self, num_classes: usize) -> Result<()> {
        match self.labels.iter().position(|&l| l as usize >= num_classes) {
            Some(i) => Err(Error::Data(format!(
                "label {} at pixel {i} is outside 0..{num_classes}",
                self.labels[i]
            ))),
            None => Ok(()),
        }
    }

    fn same_shape(&self, other: &LabelMap) -> Result<()> {
        if (self.height, self.width) != (other.height, other.width) {
            return Err(shape_err!(
                "label maps differ in shape: {}x{} vs {}x{}",
                self.height,
                self.width,
                other.height,
                other.width
            ));
        }
        Ok(())
    }

    /// Argmax over channels of sample `n`; ties go to the lowest class.
    pub fn argmax<T: Real>(probs: &Tensor4<T>, n: usize) -> LabelMap {
        let s = probs.shape();
        let labels = probs
            .sample(n)
            .chunks_exact(s.channels)
            .map(|px| {
                let mut best = 0;
                for (c, &v) in px.iter().enumerate().skip(1) {
                    if v > px[best] {
                        best = c;
                    }
                }
                best as u8
            })
            .collect();
        LabelMap {
            height: s.height,
            width: s.width,
            labels,
        }
    }

    /// One-hot encoding as a single-sample tensor.
    pub fn one_hot<T: Real>(&self, num_classes: usize) -> Result<Tensor4<T>> {
        self.check_classes(num_classes)?;
        let mut t = Tensor4::zeros(Shape4::new(1, self.height, self.width, num_classes));
        for (i, &l) in self.labels.iter().enumerate() {
            t[i * num_classes + l as usize] = T::one();
        }
        Ok(t)
    }
}

/// Mean categorical cross-entropy over all pixels and its gradient with
/// respect to the softmax logits, `(p - y) / pixels`.
pub fn cross_entropy<T: Real>(probs: &Tensor4<T>, targets: &Tensor4<T>) -> Result<(f64, Tensor4<T>)> {
    if probs.shape() != targets.shape() {
        return Err(shape_err!(
            "cross_entropy: probabilities {} vs targets {}",
            probs.shape(),
            targets.shape()
        ));
    }
    let s = probs.shape();
    let pixels = (s.batch * s.pixels()) as f64;
    let mut loss = 0.0;
    for (&p, &y) in probs.data().iter().zip(targets.data()) {
        if y != T::zero() {
            loss -= y.as_f64() * (p.as_f64() + LOG_EPS).ln();
        }
    }
    let scale = T::from_f64_lossy(1.0 / pixels);
    let grad = probs
        .data()
        .iter()
        .zip(targets.data())
        .map(|(&p, &y)| (p - y) * scale)
        .collect();
    Ok((loss / pixels, Tensor4::from_vec(s, grad)?))
}

/// Binary confusion counts for one class.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
}

impl Confusion {
    pub fn count(pred: &LabelMap, truth: &LabelMap, class_id: u8) -> Self {
        let mut c = Confusion::default();
        for (&p, &t) in pred.labels.iter().zip(&truth.labels) {
            match (p == class_id, t == class_id) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                _ => {}
            }
        }
        c
    }

    pub fn add(&mut self, other: Confusion) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
    }

    /// `2TP / (2TP + FP + FN)`; 1.0 when the class is absent from both maps.
    pub fn dice(&self) -> f64 {
        let denom = 2 * self.tp + self.fp + self.fn_;
        if denom == 0 {
            1.0
        } else {
            (2 * self.tp) as f64 / denom as f64
        }
    }
}

pub fn pixel_accuracy(pred: &LabelMap, truth: &LabelMap) -> Result<f64> {
    pred.same_shape(truth)?;
    let hits = pred.labels.iter().zip(&truth.labels).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / pred.labels.len() as f64)
}

pub fn dice(pred: &LabelMap, truth: &LabelMap, class_id: usize, num_classes: usize) -> Result<f64> {
    pred.same_shape(truth)?;
    if class_id >= num_classes {
        return Err(Error::Domain(format!("class {class_id} outside 0..{num_classes}")));
    }
    Ok(Confusion::count(pred, truth, class_id as u8).dice())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum AccuracyMode {
    /// One accuracy over all test pixels.
    #[default]
    Pooled,
    /// Mean of per-image accuracies.
    PerImage,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub test_accuracy: f64,
    /// Dice per reported class index.
    pub per_class_dice: BTreeMap<usize, f64>,
    pub sample_count: usize,
}

impl MetricsReport {
    /// Mean Dice over the reported classes.
    pub fn mean_dice(&self) -> f64 {
        self.per_class_dice.values().sum::<f64>() / self.per_class_dice.len().max(1) as f64
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Human-readable summary, one value per line.
    pub fn to_text(&self) -> String {
        let mut out = format!("samples    {}\naccuracy   {:.4}\n", self.sample_count, self.test_accuracy);
        for (c, d) in &self.per_class_dice {
            out += &format!("dice[{c}]    {d:.4}\n");
        }
        out += &format!("mean dice  {:.4}\n", self.mean_dice());
        out
    }
}

/// Flat document: `accuracy`, `dice.<class>`, `samples`.
impl Serialize for MetricsReport {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let mut map = serializer.serialize_map(Some(self.per_class_dice.len() + 2))?;
        map.serialize_entry("accuracy", &self.test_accuracy)?;
        for (c, d) in &self.per_class_dice {
            map.serialize_entry(&format!("dice.{c}"), d)?;
        }
        map.serialize_entry("samples", &self.sample_count)?;
        map.end()
    }
}

/// Pooled report over aligned prediction/truth sets. Dice uses global
/// confusion counts across all samples; `classes` selects which class
/// indices are reported (the trainer reports foreground classes).
pub fn dice_report(
    preds: &[LabelMap],
    truths: &[LabelMap],
    classes: impl IntoIterator<Item = usize>,
    mode: AccuracyMode,
) -> Result<MetricsReport> {
    if preds.len() != truths.len() {
        return Err(shape_err!("{} predictions vs {} ground truths", preds.len(), truths.len()));
    }
    if preds.is_empty() {
        return Err(shape_err!("cannot report on an empty set"));
    }
    let mut hits = 0u64;
    let mut total = 0u64;
    let mut per_image = 0.0;
    for (p, t) in preds.iter().zip(truths) {
        p.same_shape(t)?;
        let h = p.labels.iter().zip(&t.labels).filter(|(a, b)| a == b).count() as u64;
        hits += h;
        total += p.labels.len() as u64;
        per_image += h as f64 / p.labels.len() as f64;
    }
    let per_class_dice = classes
        .into_iter()
        .map(|c| {
            let mut conf = Confusion::default();
            for (p, t) in preds.iter().zip(truths) {
                conf.add(Confusion::count(p, t, c as u8));
            }
            (c, conf.dice())
        })
        .collect();
    let test_accuracy = match mode {
        AccuracyMode::Pooled => hits as f64 / total as f64,
        AccuracyMode::PerImage => per_image / preds.len() as f64,
    };
    Ok(MetricsReport {
        test_accuracy,
        per_class_dice,
        sample_count: preds.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map(h: usize, w: usize, v: &[u8]) -> LabelMap {
        LabelMap::new(h, w, v.to_vec()).unwrap()
    }

    #[test]
    fn cross_entropy_reference_values() {
        let y = map(1, 2, &[0, 2]).one_hot::<f64>(3).unwrap();
        let (loss, _) = cross_entropy(&y, &y).unwrap();
        assert!(loss.abs() < 1e-6);
        let uniform = Tensor4::filled(y.shape(), 1.0 / 3.0);
        let (loss, grad) = cross_entropy(&uniform, &y).unwrap();
        assert!((loss - 3f64.ln()).abs() < 1e-9);
        for px in grad.data().chunks(3) {
            assert!(px.iter().sum::<f64>().abs() < 1e-12);
        }
        assert!(cross_entropy(&uniform, &Tensor4::zeros(Shape4::new(1, 2, 1, 3))).is_err());
    }

    #[test]
    fn accuracy_counts() {
        let a = map(2, 2, &[0, 1, 1, 0]);
        assert_eq!(pixel_accuracy(&a, &a).unwrap(), 1.0);
        assert_eq!(pixel_accuracy(&a, &map(2, 2, &[1, 0, 0, 1])).unwrap(), 0.0);
        assert_eq!(pixel_accuracy(&a, &map(2, 2, &[0, 1, 0, 1])).unwrap(), 0.5);
        assert!(pixel_accuracy(&a, &map(1, 4, &[0, 1, 1, 0])).is_err());
    }

    #[test]
    fn dice_cases() {
        let a = map(2, 3, &[1, 1, 1, 0, 0, 0]);
        assert_eq!(dice(&a, &a, 1, 2).unwrap(), 1.0);
        assert_eq!(dice(&a, &map(2, 3, &[0, 0, 0, 1, 1, 1]), 1, 2).unwrap(), 0.0);
        // pred {0,1,2}, truth {0,1,3}: TP = 2, FP = 1, FN = 1
        let t = map(2, 3, &[1, 1, 0, 1, 0, 0]);
        assert!((dice(&a, &t, 1, 2).unwrap() - 4.0 / 6.0).abs() < 1e-15);
        // absent from both
        assert_eq!(dice(&a, &a, 2, 3).unwrap(), 1.0);
        assert!(matches!(dice(&a, &a, 3, 3), Err(Error::Domain(_))));
    }

    #[test]
    fn report_json_is_flat() {
        let a = map(1, 3, &[0, 1, 2]);
        let r = dice_report(std::slice::from_ref(&a), std::slice::from_ref(&a), 1..3, AccuracyMode::Pooled).unwrap();
        let v: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(v["accuracy"], 1.0);
        assert_eq!(v["dice.1"], 1.0);
        assert_eq!(v["dice.2"], 1.0);
        assert_eq!(v["samples"], 1);
    }

    #[test]
    fn report_length_mismatch() {
        let a = map(1, 1, &[0]);
        assert!(dice_report(std::slice::from_ref(&a), &[], 1..2, AccuracyMode::Pooled).is_err());
        assert!(dice_report(&[a.clone(), a.clone()], &[a], 1..2, AccuracyMode::Pooled).is_err());
    }

    #[test]
    fn per_image_mode_averages_images() {
        let p = [map(1, 2, &[0, 0]), map(1, 4, &[1, 1, 1, 1])];
        let t = [map(1, 2, &[0, 1]), map(1, 4, &[1, 1, 1, 1])];
        let pooled = dice_report(&p, &t, [1], AccuracyMode::Pooled).unwrap();
        let per = dice_report(&p, &t, [1], AccuracyMode::PerImage).unwrap();
        assert!((pooled.test_accuracy - 5.0 / 6.0).abs() < 1e-15);
        assert!((per.test_accuracy - 0.75).abs() < 1e-15);
    }

    #[test]
    fn argmax_ties_go_low() {
        let p = Tensor4::from_vec(Shape4::new(1, 1, 2, 3), vec![0.1f32, 0.7, 0.2, 0.5, 0.5, 0.0]).unwrap();
        assert_eq!(LabelMap::argmax(&p, 0).labels, vec![1, 0]);
    }
}
