//! Confusion matrices, UAR/WAR, and intensity-stratified evaluation.

use rayon::prelude::*;
use serde::Serialize;

use crate::data::{load_clip, sample_test_indices, Manifest};
use crate::error::{Error, Result};
use crate::model::{argmax, DferModel};

/// Upper edge of the low-intensity bin; the high bin is `(LOW_INTENSITY_MAX, 1]`.
pub const LOW_INTENSITY_MAX: f64 = 0.3;

/// `K × K` counts, rows are true classes and columns predictions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ConfusionMatrix {
    num_classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(num_classes: usize) -> Self {
        ConfusionMatrix {
            num_classes,
            counts: vec![0; num_classes * num_classes],
        }
    }

    pub fn from_pairs(num_classes: usize, pairs: &[(usize, usize)]) -> Result<Self> {
        let mut m = Self::new(num_classes);
        for &(t, p) in pairs {
            m.record(t, p)?;
        }
        Ok(m)
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn record(&mut self, truth: usize, pred: usize) -> Result<()> {
        let k = self.num_classes;
        if truth >= k || pred >= k {
            return Err(Error::contract(format!("pair ({truth}, {pred}) out of range for {k} classes")));
        }
        self.counts[truth * k + pred] += 1;
        Ok(())
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.num_classes + pred]
    }

    pub fn row(&self, truth: usize) -> &[u64] {
        let k = self.num_classes;
        &self.counts[truth * k..(truth + 1) * k]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.num_classes).map(|i| self.get(i, i)).sum()
    }

    /// Recall per class; `None` for classes with no samples.
    pub fn recalls(&self) -> Vec<Option<f64>> {
        (0..self.num_classes)
            .map(|i| {
                let n: u64 = self.row(i).iter().sum();
                (n > 0).then(|| self.get(i, i) as f64 / n as f64)
            })
            .collect()
    }

    /// Mean recall over classes that have at least one sample.
    ///
    /// The mean is formed as one exact fraction and rounded once, so a
    /// class-balanced matrix gives exactly [`ConfusionMatrix::war`]. Counts too
    /// large for that fall back to summing the recalls in class order.
    pub fn uar(&self) -> f64 {
        let rows: Vec<(u64, u64)> = (0..self.num_classes)
            .filter_map(|c| {
                let n: u64 = self.row(c).iter().sum();
                (n > 0).then(|| (self.get(c, c), n))
            })
            .collect();
        if rows.is_empty() {
            return 0.0;
        }
        exact_mean(&rows).unwrap_or_else(|| {
            rows.iter().map(|&(h, n)| h as f64 / n as f64).sum::<f64>() / rows.len() as f64
        })
    }

    /// Overall accuracy.
    pub fn war(&self) -> f64 {
        match self.total() {
            0 => 0.0,
            n => self.trace() as f64 / n as f64,
        }
    }
}

fn gcd(mut a: u128, mut b: u128) -> u128 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// `mean(hits / n)` as a correctly rounded `f64`, if numerator and
/// denominator of the reduced fraction are exactly representable.
fn exact_mean(rows: &[(u64, u64)]) -> Option<f64> {
    let mut lcm: u128 = 1;
    for &(_, n) in rows {
        let n = n as u128;
        lcm = (lcm / gcd(lcm, n)).checked_mul(n)?;
    }
    let mut num: u128 = 0;
    for &(h, n) in rows {
        num = num.checked_add((h as u128).checked_mul(lcm / n as u128)?)?;
    }
    let den = lcm.checked_mul(rows.len() as u128)?;
    let g = gcd(num, den).max(1);
    let (num, den) = (num / g, den / g);
    const EXACT: u128 = 1 << 53;
    (num <= EXACT && den <= EXACT).then(|| num as f64 / den as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BinScore {
    pub war: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub uar: f64,
    pub war: f64,
    pub per_class_recall: Vec<Option<f64>>,
    pub confusion: ConfusionMatrix,
    /// Accuracy over non-neutral clips with intensity in `(0, 0.3]`.
    pub low_intensity: Option<BinScore>,
    /// Accuracy over clips with intensity in `(0.3, 1]`.
    pub high_intensity: Option<BinScore>,
}

/// One evaluated clip: true label, predicted label, and intensity if known.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Outcome {
    pub label: usize,
    pub pred: usize,
    pub intensity: Option<f64>,
}

fn bin(outcomes: &[Outcome], keep: impl Fn(f64) -> bool) -> Option<BinScore> {
    let hits: Vec<bool> = outcomes
        .iter()
        .filter(|o| o.intensity.is_some_and(|a| a > 0.0 && keep(a)))
        .map(|o| o.label == o.pred)
        .collect();
    (!hits.is_empty()).then(|| BinScore {
        war: hits.iter().filter(|&&h| h).count() as f64 / hits.len() as f64,
        count: hits.len(),
    })
}

impl EvalReport {
    pub fn from_outcomes(num_classes: usize, outcomes: &[Outcome]) -> Result<Self> {
        let mut confusion = ConfusionMatrix::new(num_classes);
        for o in outcomes {
            confusion.record(o.label, o.pred)?;
        }
        Ok(EvalReport {
            uar: confusion.uar(),
            war: confusion.war(),
            per_class_recall: confusion.recalls(),
            low_intensity: bin(outcomes, |a| a <= LOW_INTENSITY_MAX),
            high_intensity: bin(outcomes, |a| a > LOW_INTENSITY_MAX),
            confusion,
        })
    }

    /// Aligned plain-text rendering.
    pub fn render(&self) -> String {
        let pct = |v: f64| format!("{:6.2}%", 100.0 * v);
        let bin = |b: Option<BinScore>| match b {
            Some(b) => format!("{} (n={})", pct(b.war), b.count),
            None => "    n/a".to_string(),
        };
        let mut s = String::new();
        s.push_str(&format!("{:<18}{}\n", "UAR", pct(self.uar)));
        s.push_str(&format!("{:<18}{}\n", "WAR", pct(self.war)));
        s.push_str(&format!("{:<18}{}\n", "low-intensity WAR", bin(self.low_intensity)));
        s.push_str(&format!("{:<18}{}\n", "high-intensity WAR", bin(self.high_intensity)));
        s.push_str("per-class recall\n");
        for (i, r) in self.per_class_recall.iter().enumerate() {
            let v = r.map_or("    n/a".to_string(), pct);
            s.push_str(&format!("  class {i:<10}{v}\n"));
        }
        s.push_str("confusion (rows true, cols predicted)\n");
        let k = self.confusion.num_classes();
        for i in 0..k {
            let row: Vec<String> = self.confusion.row(i).iter().map(|c| format!("{c:>5}")).collect();
            s.push_str(&format!("  {}\n", row.join("")));
        }
        s
    }
}

/// Predicted class for every clip of `manifest`, with centred test sampling.
/// Clips are evaluated in parallel; the result is in manifest order.
pub fn predict_manifest(model: &DferModel, manifest: &Manifest, u: usize, v: usize) -> Result<Vec<Outcome>> {
    manifest
        .records
        .par_iter()
        .map(|rec| {
            let idx = sample_test_indices(rec.num_frames, u, v);
            let clip = load_clip(rec, &idx)?;
            let logits = model.predict(&clip)?;
            Ok(Outcome {
                label: rec.label,
                pred: argmax(logits.data()),
                intensity: rec.intensity,
            })
        })
        .collect()
}

pub fn evaluate(model: &DferModel, manifest: &Manifest, u: usize, v: usize) -> Result<EvalReport> {
    if manifest.is_empty() {
        return Err(Error::contract("cannot evaluate on an empty manifest"));
    }
    if u * v != model.config.frames {
        return Err(Error::config(format!(
            "sampler gives {} frames, model expects {}",
            u * v,
            model.config.frames
        )));
    }
    let outcomes = predict_manifest(model, manifest, u, v)?;
    EvalReport::from_outcomes(manifest.num_classes, &outcomes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_counts() {
        let m = ConfusionMatrix::from_pairs(2, &[(0, 0), (0, 1), (1, 1), (1, 1)]).unwrap();
        assert_eq!(m.recalls(), vec![Some(0.5), Some(1.0)]);
        assert_eq!(m.uar(), 0.75);
        assert_eq!(m.war(), 0.75);
    }

    #[test]
    fn absent_classes_skipped_in_uar() {
        let m = ConfusionMatrix::from_pairs(3, &[(0, 0), (2, 1)]).unwrap();
        assert_eq!(m.recalls(), vec![Some(1.0), None, Some(0.0)]);
        assert_eq!(m.uar(), 0.5);
    }

    #[test]
    fn bins_exclude_neutral_and_unknown() {
        let o = |label, pred, intensity| Outcome { label, pred, intensity };
        let outcomes = [
            o(0, 0, Some(0.0)),
            o(1, 1, Some(0.1)),
            o(1, 0, Some(0.3)),
            o(2, 2, Some(0.31)),
            o(2, 2, None),
        ];
        let r = EvalReport::from_outcomes(3, &outcomes).unwrap();
        assert_eq!(r.low_intensity, Some(BinScore { war: 0.5, count: 2 }));
        assert_eq!(r.high_intensity, Some(BinScore { war: 1.0, count: 1 }));
        assert!(r.render().contains("low-intensity WAR"));
    }

    #[test]
    fn out_of_range_pair() {
        assert!(ConfusionMatrix::from_pairs(2, &[(0, 2)]).is_err());
    }
}
