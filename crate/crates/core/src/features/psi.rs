use std::io::Write;

use serde::{Deserialize, Serialize};

use super::table::DenseTable;
use super::transform::{bin_of, equal_frequency_edges};
use crate::error::{Error, Result};

pub const PSI_EPSILON: f64 = 1e-4;
pub const DEFAULT_PSI_BINS: usize = 10;
/// Features above this index are flagged as unstable.
pub const DEFAULT_UNSTABLE_PSI: f64 = 0.25;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PsiEntry {
    pub feature: String,
    pub psi: f64,
    pub bin_edges: Vec<f64>,
    /// Smoothed, renormalized bin fractions.
    pub ref_fracs: Vec<f64>,
    pub cur_fracs: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PsiReport {
    pub threshold: f64,
    pub entries: Vec<PsiEntry>,
}

impl PsiReport {
    pub fn unstable(&self) -> impl Iterator<Item = &PsiEntry> {
        self.entries.iter().filter(move |e| e.psi > self.threshold)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "feature,psi,bins,unstable")?;
        for e in &self.entries {
            writeln!(w, "{},{},{},{}", e.feature, e.psi, e.ref_fracs.len(), e.psi > self.threshold)?;
        }
        Ok(())
    }
}

fn smooth(fracs: &[f64], eps: f64) -> Vec<f64> {
    let total: f64 = fracs.iter().map(|f| f + eps).sum();
    fracs.iter().map(|f| (f + eps) / total).collect()
}

/// `sum_b (cur_b - ref_b) * ln(cur_b / ref_b)` after adding `eps` to every
/// fraction and renormalizing.
pub fn psi_from_fractions(reference: &[f64], current: &[f64], eps: f64) -> Result<f64> {
    if reference.len() != current.len() || reference.is_empty() {
        return Err(Error::usage("psi needs two non-empty fraction lists of equal length"));
    }
    let r = smooth(reference, eps);
    let c = smooth(current, eps);
    Ok(r.iter().zip(&c).map(|(r, c)| (c - r) * (c / r).ln()).sum())
}

fn fractions(values: &[f64], edges: &[f64]) -> Vec<f64> {
    let mut counts = vec![0usize; edges.len() + 1];
    for &x in values {
        counts[bin_of(edges, x)] += 1;
    }
    let n = values.len() as f64;
    counts.into_iter().map(|c| c as f64 / n).collect()
}

/// Population stability index of `current` against `reference`, with
/// equal-frequency bins fit on the reference sample.
pub fn psi(reference: &[f64], current: &[f64], bins: usize) -> Result<PsiEntry> {
    if bins < 2 {
        return Err(Error::usage("psi needs at least 2 bins"));
    }
    if reference.is_empty() || current.is_empty() {
        return Err(Error::usage("psi needs non-empty reference and current samples"));
    }
    if reference.iter().chain(current).any(|x| !x.is_finite()) {
        return Err(Error::usage("psi samples must be finite"));
    }
    let mut sorted = reference.to_vec();
    sorted.sort_by(f64::total_cmp);
    let bin_edges = equal_frequency_edges(&sorted, bins);
    let ref_raw = fractions(reference, &bin_edges);
    let cur_raw = fractions(current, &bin_edges);
    let value = psi_from_fractions(&ref_raw, &cur_raw, PSI_EPSILON)?;
    Ok(PsiEntry {
        feature: String::new(),
        psi: value,
        bin_edges,
        ref_fracs: smooth(&ref_raw, PSI_EPSILON),
        cur_fracs: smooth(&cur_raw, PSI_EPSILON),
    })
}

/// PSI for every column of `reference` (matched by name in `current`).
pub fn psi_report(reference: &DenseTable, current: &DenseTable, bins: usize, threshold: f64) -> Result<PsiReport> {
    let mut entries = Vec::with_capacity(reference.dim());
    for (j, name) in reference.names().iter().enumerate() {
        let k = current
            .names()
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::usage(format!("column `{name}` missing from current sample")))?;
        let r: Vec<f64> = reference.values().column(j).to_vec();
        let c: Vec<f64> = current.values().column(k).to_vec();
        let mut entry = psi(&r, &c, bins).map_err(|e| Error::usage(format!("column `{name}`: {e}")))?;
        entry.feature = name.clone();
        entries.push(entry);
    }
    Ok(PsiReport { threshold, entries })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Direct evaluation of the smoothed formula.
    fn oracle(r: &[f64], c: &[f64], eps: f64) -> f64 {
        let rs: f64 = r.iter().map(|x| x + eps).sum();
        let cs: f64 = c.iter().map(|x| x + eps).sum();
        let mut total = 0.0;
        for i in 0..r.len() {
            let p = (r[i] + eps) / rs;
            let q = (c[i] + eps) / cs;
            total += (q - p) * (q.ln() - p.ln());
        }
        total
    }

    #[test]
    fn two_bin_hand_value() {
        let v = psi_from_fractions(&[0.5, 0.5], &[0.9, 0.1], PSI_EPSILON).unwrap();
        assert!((v - 0.8789).abs() < 1e-3, "{v}");
    }

    #[test]
    fn empty_bin_stays_finite() {
        let v = psi_from_fractions(&[1.0, 0.0], &[0.5, 0.5], PSI_EPSILON).unwrap();
        assert!(v.is_finite() && v > 0.0);
        assert!((v - oracle(&[1.0, 0.0], &[0.5, 0.5], PSI_EPSILON)).abs() < 1e-12);
    }

    #[test]
    fn sample_level_fractions() {
        let reference = [1.0, 2.0, 3.0, 4.0];
        let current: Vec<f64> = [1.0; 9].into_iter().chain([4.0]).collect();
        let e = psi(&reference, &current, 2).unwrap();
        assert_eq!(e.bin_edges, vec![2.0]);
        let raw = psi_from_fractions(&[0.5, 0.5], &[0.9, 0.1], PSI_EPSILON).unwrap();
        assert!((e.psi - raw).abs() < 1e-12);
        assert!((e.ref_fracs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!((e.cur_fracs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn errors() {
        assert!(matches!(psi(&[], &[1.0], 10), Err(Error::Usage(_))));
        assert!(matches!(psi(&[1.0], &[], 10), Err(Error::Usage(_))));
        assert!(matches!(psi(&[1.0], &[1.0], 1), Err(Error::Usage(_))));
    }

    proptest! {
        #[test]
        fn identical_samples_have_zero_psi(a in prop::collection::vec(-50.0f64..50.0, 1..200), bins in 2usize..12) {
            prop_assert_eq!(psi(&a, &a, bins).unwrap().psi, 0.0);
        }

        #[test]
        fn psi_matches_formula_and_is_nonnegative(
            a in prop::collection::vec(-5.0f64..5.0, 5..100),
            b in prop::collection::vec(-5.0f64..5.0, 5..100),
        ) {
            let e = psi(&a, &b, 5).unwrap();
            prop_assert!(e.psi >= 0.0);
            // recover raw fractions from the smoothed ones and compare with the oracle
            let n = e.ref_fracs.len() as f64;
            let unsmooth = |f: &[f64]| f.iter().map(|x| x * (1.0 + n * PSI_EPSILON) - PSI_EPSILON).collect::<Vec<_>>();
            let want = oracle(&unsmooth(&e.ref_fracs), &unsmooth(&e.cur_fracs), PSI_EPSILON);
            prop_assert!((e.psi - want).abs() < 1e-9);
        }
    }
}
