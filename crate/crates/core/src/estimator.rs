//! Local-regression scenario weights and the weighted empirical quantile.
//!
//! Given historical pairs `(z_i, s_i)` and a query context `z`, a local
//! regression assigns each record a weight `w_i(z)`; the conditional
//! τ-quantile of any cost `f(s)` is then estimated by
//! `inf { t : Σ w_i 1(f(s_i) ≤ t) ≥ τ }`.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on `Σ w_i = 1` and on the cumulative-weight comparison `≥ τ`.
pub const WEIGHT_TOL: f64 = 1e-12;

/// One historical appointment: its characteristic and realised duration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContextRecord {
    pub z: f64,
    pub s: f64,
}

impl ContextRecord {
    pub fn new(z: f64, s: f64) -> Result<Self> {
        if !z.is_finite() {
            return Err(Error::InvalidArgument(format!("context value {z} is not finite")));
        }
        if !(s > 0.0 && s.is_finite()) {
            return Err(Error::InvalidArgument(format!("duration {s} must be positive")));
        }
        Ok(Self { z, s })
    }
}

/// The pool of historical records.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub records: Vec<ContextRecord>,
}

impl Dataset {
    pub fn new(records: Vec<ContextRecord>) -> Self {
        Self { records }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn contexts(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.z).collect()
    }

    pub fn durations(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.s).collect()
    }

    /// Writes the `z,s` CSV form.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["z", "s"])?;
        for r in &self.records {
            w.write_record([format_float(r.z), format_float(r.s)])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(input);
        let headers = rdr.headers()?.clone();
        if headers.len() != 2 || &headers[0] != "z" || &headers[1] != "s" {
            return Err(Error::Data(format!(
                "dataset header must be `z,s`, found `{}`",
                headers.iter().collect::<Vec<_>>().join(",")
            )));
        }
        let mut records = Vec::new();
        for (line, row) in rdr.records().enumerate() {
            let row = row?;
            let parse = |k: usize| -> Result<f64> {
                row[k]
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Data(format!("row {}: column {}: {e}", line + 2, k + 1)))
            };
            let rec =
                ContextRecord::new(parse(0)?, parse(1)?).map_err(|e| Error::Data(format!("row {}: {e}", line + 2)))?;
            records.push(rec);
        }
        Ok(Self { records })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(f))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::read_csv(std::io::BufReader::new(f))
    }
}

/// Shortest round-trippable decimal form.
pub(crate) fn format_float(v: f64) -> String {
    format!("{v}")
}

/// Nonnegative weights summing to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightVector(Vec<f64>);

impl WeightVector {
    /// Validates nonnegativity and unit mass.
    pub fn new(w: Vec<f64>) -> Result<Self> {
        if w.is_empty() {
            return Err(Error::InvalidArgument("empty weight vector".into()));
        }
        if let Some(bad) = w.iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
            return Err(Error::InvalidArgument(format!("negative or non-finite weight {bad}")));
        }
        let total: f64 = w.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!("weights sum to {total}, expected 1")));
        }
        Ok(Self(w))
    }

    /// Rescales nonnegative masses to sum to one.
    pub fn normalized(mass: Vec<f64>) -> Result<Self> {
        let total: f64 = mass.iter().sum();
        if !(total > 0.0) {
            return Err(Error::NoMass { slot: None });
        }
        Ok(Self(mass.into_iter().map(|m| m / total).collect()))
    }

    pub fn uniform(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidArgument("uniform weights over zero points".into()));
        }
        Ok(Self(vec![1.0 / n as f64; n]))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl AsRef<[f64]> for WeightVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelShape {
    Naive,
    Epanechnikov,
    Tricubic,
}

/// A compactly supported kernel with its bandwidth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelKind {
    pub shape: KernelShape,
    pub bandwidth: f64,
}

impl KernelKind {
    pub fn new(shape: KernelShape, bandwidth: f64) -> Result<Self> {
        if !(bandwidth > 0.0) {
            return Err(Error::InvalidArgument(format!("bandwidth {bandwidth} must be positive")));
        }
        Ok(Self { shape, bandwidth })
    }

    pub fn naive(bandwidth: f64) -> Result<Self> {
        Self::new(KernelShape::Naive, bandwidth)
    }

    /// Kernel profile `K(v)`; all three vanish outside `|v| ≤ 1`.
    pub fn profile(&self, v: f64) -> f64 {
        let a = v.abs();
        if a > 1.0 {
            return 0.0;
        }
        match self.shape {
            KernelShape::Naive => 1.0,
            KernelShape::Epanechnikov => 1.0 - v * v,
            KernelShape::Tricubic => {
                let c = 1.0 - a * a * a;
                c * c * c
            }
        }
    }
}

/// Nadaraya–Watson weights `K((z_i − z)/h) / Σ_j K((z_j − z)/h)`.
pub fn kernel_weights(records: &[f64], query: f64, kernel: KernelKind) -> Result<WeightVector> {
    if records.is_empty() {
        return Err(Error::InvalidArgument("no records to weight".into()));
    }
    if !(kernel.bandwidth > 0.0) {
        return Err(Error::InvalidArgument(format!("bandwidth {} must be positive", kernel.bandwidth)));
    }
    let mass: Vec<f64> = records.iter().map(|z| kernel.profile((z - query) / kernel.bandwidth)).collect();
    WeightVector::normalized(mass)
}

/// Uniform weight `1/k` on the `k` records closest to `query`.
///
/// Distance ties at the k-th neighbour are admitted by ascending index.
pub fn knn_weights(records: &[f64], query: f64, k: usize) -> Result<WeightVector> {
    let n = records.len();
    if k == 0 || k > n {
        return Err(Error::InvalidArgument(format!("k = {k} must lie in 1..={n}")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        let da = (records[a] - query).abs();
        let db = (records[b] - query).abs();
        da.total_cmp(&db).then(a.cmp(&b))
    });
    let mut w = vec![0.0; n];
    for &i in &order[..k] {
        w[i] = 1.0 / k as f64;
    }
    Ok(WeightVector(w))
}

/// `inf { t : Σ w_i 1(values_i ≤ t) ≥ τ }` together with the smallest index
/// whose value equals that infimum.
pub fn weighted_quantile(values: &[f64], weights: &[f64], tau: f64) -> Result<(f64, usize)> {
    if values.len() != weights.len() {
        return Err(Error::DimensionMismatch(format!("{} values against {} weights", values.len(), weights.len())));
    }
    if values.is_empty() {
        return Err(Error::InvalidArgument("quantile of an empty sample".into()));
    }
    if !(tau > 0.0 && tau <= 1.0) {
        return Err(Error::InvalidArgument(format!("tau = {tau} outside (0, 1]")));
    }
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));

    let mut cum = 0.0;
    let mut k = 0;
    while k < order.len() {
        // Accumulate a whole block of equal values before testing.
        let v = values[order[k]];
        let first = order[k];
        while k < order.len() && values[order[k]] == v {
            cum += weights[order[k]];
            k += 1;
        }
        if cum >= tau - WEIGHT_TOL {
            return Ok((v, first));
        }
    }
    // Only reachable when the weights fall short of τ through rounding.
    let last = order[order.len() - 1];
    let v = values[last];
    let first = order.iter().copied().find(|&i| values[i] == v).unwrap_or(last);
    Ok((v, first))
}

pub fn weighted_mean(values: &[f64], weights: &[f64]) -> Result<f64> {
    if values.len() != weights.len() {
        return Err(Error::DimensionMismatch(format!("{} values against {} weights", values.len(), weights.len())));
    }
    Ok(values.iter().zip(weights).map(|(v, w)| v * w).sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Scan every candidate threshold; the first whose CDF reaches τ wins.
    fn brute_quantile(values: &[f64], weights: &[f64], tau: f64) -> (f64, usize) {
        let mut candidates: Vec<f64> = values.to_vec();
        candidates.sort_by(f64::total_cmp);
        for t in candidates {
            let mass: f64 = values.iter().zip(weights).filter(|(v, _)| **v <= t).map(|(_, w)| *w).sum();
            if mass >= tau - WEIGHT_TOL {
                let idx = values.iter().position(|v| *v == t).unwrap();
                return (t, idx);
            }
        }
        unreachable!("weights sum to one")
    }

    #[test]
    fn naive_kernel_two_points_in_window() {
        let w = kernel_weights(&[0.0, 2.0, 10.0], 1.0, KernelKind::naive(2.0).unwrap()).unwrap();
        assert_eq!(w.as_slice(), &[0.5, 0.5, 0.0]);
    }

    #[test]
    fn single_record_normalizes() {
        let k = KernelKind::new(KernelShape::Epanechnikov, 1.0).unwrap();
        let w = kernel_weights(&[3.7], 3.7, k).unwrap();
        assert_eq!(w.as_slice(), &[1.0]);
    }

    #[test]
    fn empty_window_is_no_mass() {
        let err = kernel_weights(&[10.0], 0.0, KernelKind::naive(1.0).unwrap()).unwrap_err();
        assert!(matches!(err, Error::NoMass { slot: None }));
    }

    #[test]
    fn nonpositive_bandwidth_rejected() {
        assert!(KernelKind::naive(0.0).is_err());
        let k = KernelKind { shape: KernelShape::Naive, bandwidth: -1.0 };
        assert!(kernel_weights(&[0.0], 0.0, k).is_err());
    }

    #[test]
    fn tricubic_profile() {
        let k = KernelKind::new(KernelShape::Tricubic, 2.0).unwrap();
        let w = kernel_weights(&[0.0, 1.0], 0.0, k).unwrap();
        // K(0) = 1, K(0.5) = (1 - 0.125)^3
        let b = 0.875f64.powi(3);
        assert!((w.as_slice()[0] - 1.0 / (1.0 + b)).abs() < 1e-15);
    }

    #[test]
    fn knn_examples() {
        assert_eq!(knn_weights(&[0.0, 1.0, 5.0], 0.0, 2).unwrap().as_slice(), &[0.5, 0.5, 0.0]);
        assert_eq!(knn_weights(&[-1.0, 1.0], 0.0, 1).unwrap().as_slice(), &[1.0, 0.0]);
        let all = knn_weights(&[4.0, -2.0, 9.0, 0.5], 1.0, 4).unwrap();
        assert!(all.as_slice().iter().all(|w| (*w - 0.25).abs() < 1e-15));
        assert!(knn_weights(&[1.0, 2.0], 0.0, 3).is_err());
        assert!(knn_weights(&[1.0, 2.0], 0.0, 0).is_err());
    }

    #[test]
    fn quantile_examples() {
        let u = WeightVector::uniform(3).unwrap();
        assert_eq!(weighted_quantile(&[10.0, 20.0, 30.0], u.as_slice(), 0.5).unwrap(), (20.0, 1));
        assert_eq!(weighted_quantile(&[1.0, 2.0, 3.0, 4.0], &[0.1, 0.2, 0.3, 0.4], 0.6).unwrap(), (3.0, 2));
        assert_eq!(weighted_quantile(&[5.0], &[1.0], 0.95).unwrap(), (5.0, 0));
    }

    #[test]
    fn quantile_ties_return_smallest_index() {
        let (v, idx) = weighted_quantile(&[7.0, 3.0, 7.0, 3.0], &[0.25; 4], 0.75).unwrap();
        assert_eq!((v, idx), (7.0, 0));
        let (v, idx) = weighted_quantile(&[7.0, 3.0, 7.0, 3.0], &[0.25; 4], 0.5).unwrap();
        assert_eq!((v, idx), (3.0, 1));
    }

    #[test]
    fn quantile_errors() {
        assert!(weighted_quantile(&[1.0, 2.0], &[1.0], 0.5).is_err());
        assert!(weighted_quantile(&[1.0], &[1.0], 0.0).is_err());
        assert!(weighted_quantile(&[1.0], &[1.0], 1.5).is_err());
        assert!(weighted_quantile(&[1.0, 2.0], &[0.5, 0.5], 1.0).is_ok());
    }

    #[test]
    fn mean_examples() {
        assert_eq!(weighted_mean(&[1.0, 3.0], &[0.5, 0.5]).unwrap(), 2.0);
        assert_eq!(weighted_mean(&[7.0], &[1.0]).unwrap(), 7.0);
        assert!((weighted_mean(&[0.0, 10.0], &[0.9, 0.1]).unwrap() - 1.0).abs() < 1e-15);
        assert!(weighted_mean(&[0.0], &[0.5, 0.5]).is_err());
    }

    #[test]
    fn dataset_csv_roundtrip_and_header_check() {
        let ds = Dataset::new(vec![ContextRecord::new(-3.25, 41.5).unwrap(), ContextRecord::new(14.0, 0.125).unwrap()]);
        let mut buf = Vec::new();
        ds.write_csv(&mut buf).unwrap();
        assert!(String::from_utf8(buf.clone()).unwrap().starts_with("z,s\n"));
        assert_eq!(Dataset::read_csv(buf.as_slice()).unwrap(), ds);
        assert!(Dataset::read_csv("a,b\n1,2\n".as_bytes()).is_err());
        assert!(Dataset::read_csv("z,s\n1,-2\n".as_bytes()).is_err());
    }

    fn weights_strategy(n: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.01f64..1.0, n).prop_map(|m| {
            let s: f64 = m.iter().sum();
            m.into_iter().map(|v| v / s).collect()
        })
    }

    fn sample() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
        (1usize..=12).prop_flat_map(|n| {
            (prop::collection::vec((-20i32..20).prop_map(|v| v as f64 * 0.5), n), weights_strategy(n))
        })
    }

    proptest! {
        #[test]
        fn matches_brute_force((values, weights) in sample(), tau in 0.01f64..=1.0) {
            prop_assert_eq!(weighted_quantile(&values, &weights, tau).unwrap(),
                            brute_quantile(&values, &weights, tau));
        }

        #[test]
        fn monotone_in_tau((values, weights) in sample(), a in 0.01f64..=1.0, b in 0.01f64..=1.0) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let ql = weighted_quantile(&values, &weights, lo).unwrap().0;
            let qh = weighted_quantile(&values, &weights, hi).unwrap().0;
            prop_assert!(ql <= qh);
        }

        #[test]
        fn positive_scaling((values, weights) in sample(), tau in 0.01f64..=1.0, lambda in 0.1f64..10.0) {
            let scaled: Vec<f64> = values.iter().map(|v| v * lambda).collect();
            let q = weighted_quantile(&values, &weights, tau).unwrap();
            let qs = weighted_quantile(&scaled, &weights, tau).unwrap();
            prop_assert_eq!(qs.0, q.0 * lambda);
            prop_assert_eq!(qs.1, q.1);
        }

        #[test]
        fn uniform_reduces_to_empirical(values in prop::collection::vec(-50.0f64..50.0, 1..40), tau in 0.01f64..=1.0) {
            let n = values.len();
            let w = vec![1.0 / n as f64; n];
            let mut sorted = values.clone();
            sorted.sort_by(f64::total_cmp);
            // Smallest order statistic whose count/N reaches τ.
            let expect = sorted.iter().copied().find(|t| {
                values.iter().filter(|v| **v <= *t).count() as f64 / n as f64 >= tau - WEIGHT_TOL
            }).unwrap();
            prop_assert_eq!(weighted_quantile(&values, &w, tau).unwrap().0, expect);
        }

        #[test]
        fn kernel_weights_sum_to_one_and_permute(
            zs in prop::collection::vec(-15.0f64..15.0, 1..30),
            query in -2.0f64..2.0,
            rot in 0usize..30,
        ) {
            let k = KernelKind::new(KernelShape::Epanechnikov, 40.0).unwrap();
            let w = kernel_weights(&zs, query, k).unwrap();
            prop_assert!((w.as_slice().iter().sum::<f64>() - 1.0).abs() < WEIGHT_TOL * 10.0);
            let r = rot % zs.len();
            let mut rotated = zs.clone();
            rotated.rotate_left(r);
            let wr = kernel_weights(&rotated, query, k).unwrap();
            let mut expect = w.as_slice().to_vec();
            expect.rotate_left(r);
            for (a, b) in wr.as_slice().iter().zip(&expect) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }
    }
}
