use std::collections::{BTreeMap, HashMap};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::table::{ColumnData, DenseTable, FeatureTable};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scaling {
    #[default]
    Zscore,
    Minmax,
    None,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Discretization {
    #[default]
    None,
    EqualFrequency {
        bins: usize,
    },
}

/// Per-column numeric treatment. Missing numeric cells are filled with the
/// median and categorical cells with the mode.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ColumnTransform {
    #[serde(default)]
    pub scaling: Scaling,
    #[serde(default)]
    pub discretization: Discretization,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransformConfig {
    #[serde(default)]
    pub numeric: ColumnTransform,
    #[serde(default)]
    pub overrides: BTreeMap<String, ColumnTransform>,
}

impl TransformConfig {
    fn for_column(&self, name: &str) -> ColumnTransform {
        self.overrides.get(name).copied().unwrap_or(self.numeric)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum FittedColumn {
    /// `x -> (bin(x or fill) - shift) / scale`, binning only when edges are
    /// present.
    Numeric { name: String, fill: f64, bin_edges: Option<Vec<f64>>, shift: f64, scale: f64 },
    /// Codes start at 1 for the most frequent category; 0 is reserved for
    /// categories unseen at fit time.
    Categorical { name: String, fill: String, codes: BTreeMap<String, u32> },
}

impl FittedColumn {
    pub fn name(&self) -> &str {
        match self {
            FittedColumn::Numeric { name, .. } | FittedColumn::Categorical { name, .. } => name,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FittedTransform {
    pub columns: Vec<FittedColumn>,
}

/// Equal-frequency cut points for `k` bins over `sorted` values: the
/// `i/k` lower quantiles for `i = 1..k`, deduplicated. A value `x` falls in
/// bin `#{edges < x}`.
pub fn equal_frequency_edges(sorted: &[f64], k: usize) -> Vec<f64> {
    let n = sorted.len();
    let mut edges: Vec<f64> = (1..k)
        .map(|i| {
            let rank = (i * n).div_ceil(k).max(1) - 1;
            sorted[rank]
        })
        .collect();
    edges.dedup();
    edges
}

pub(crate) fn bin_of(edges: &[f64], x: f64) -> usize {
    edges.partition_point(|&e| e < x)
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

fn fit_numeric(name: &str, cells: &[Option<f64>], cfg: ColumnTransform) -> Result<FittedColumn> {
    let mut present: Vec<f64> = cells.iter().flatten().copied().collect();
    if present.is_empty() {
        return Err(Error::Fit(format!("column `{name}` has no values")));
    }
    present.sort_by(f64::total_cmp);
    let fill = median(&present);
    let mut filled: Vec<f64> = cells.iter().map(|c| c.unwrap_or(fill)).collect();
    let bin_edges = match cfg.discretization {
        Discretization::None => None,
        Discretization::EqualFrequency { bins } => {
            if bins < 2 {
                return Err(Error::usage(format!("column `{name}`: discretization needs at least 2 bins")));
            }
            let mut sorted = filled.clone();
            sorted.sort_by(f64::total_cmp);
            let edges = equal_frequency_edges(&sorted, bins);
            for x in filled.iter_mut() {
                *x = bin_of(&edges, *x) as f64;
            }
            Some(edges)
        }
    };
    let n = filled.len() as f64;
    let (shift, scale) = match cfg.scaling {
        Scaling::None => (0.0, 1.0),
        Scaling::Zscore => {
            let mean = filled.iter().sum::<f64>() / n;
            let var = filled.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
            let sd = var.sqrt();
            (mean, if sd > 0.0 { sd } else { 1.0 })
        }
        Scaling::Minmax => {
            let lo = filled.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = filled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            (lo, if hi > lo { hi - lo } else { 1.0 })
        }
    };
    Ok(FittedColumn::Numeric { name: name.to_string(), fill, bin_edges, shift, scale })
}

fn fit_categorical(name: &str, cells: &[Option<String>]) -> Result<FittedColumn> {
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for c in cells.iter().flatten() {
        *counts.entry(c.as_str()).or_default() += 1;
    }
    if counts.is_empty() {
        return Err(Error::Fit(format!("column `{name}` has no values")));
    }
    let mut ranked: Vec<(&str, usize)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    let fill = ranked[0].0.to_string();
    let codes = ranked.iter().enumerate().map(|(i, (k, _))| (k.to_string(), i as u32 + 1)).collect();
    Ok(FittedColumn::Categorical { name: name.to_string(), fill, codes })
}

impl FittedTransform {
    pub fn fit(table: &FeatureTable, config: &TransformConfig) -> Result<Self> {
        let columns = table
            .columns()
            .iter()
            .map(|c| match &c.data {
                ColumnData::Numeric(v) => fit_numeric(&c.name, v, config.for_column(&c.name)),
                ColumnData::Categorical(v) => fit_categorical(&c.name, v),
            })
            .collect::<Result<_>>()?;
        Ok(Self { columns })
    }

    pub fn column_names(&self) -> Vec<String> {
        self.columns.iter().map(|c| c.name().to_string()).collect()
    }

    /// Applies the fitted parameters; output is dense and numeric.
    pub fn transform(&self, table: &FeatureTable) -> Result<DenseTable> {
        let n = table.row_count();
        let mut values = Array2::zeros((n, self.columns.len()));
        for (j, fitted) in self.columns.iter().enumerate() {
            let column = table
                .column(fitted.name())
                .ok_or_else(|| Error::usage(format!("column `{}` missing from table", fitted.name())))?;
            match (fitted, &column.data) {
                (FittedColumn::Numeric { fill, bin_edges, shift, scale, .. }, ColumnData::Numeric(cells)) => {
                    for (i, c) in cells.iter().enumerate() {
                        let mut x = c.unwrap_or(*fill);
                        if let Some(edges) = bin_edges {
                            x = bin_of(edges, x) as f64;
                        }
                        values[[i, j]] = (x - shift) / scale;
                    }
                }
                (FittedColumn::Categorical { fill, codes, .. }, ColumnData::Categorical(cells)) => {
                    for (i, c) in cells.iter().enumerate() {
                        let token = c.as_deref().unwrap_or(fill);
                        values[[i, j]] = codes.get(token).copied().unwrap_or(0) as f64;
                    }
                }
                (FittedColumn::Categorical { codes, fill, .. }, ColumnData::Numeric(cells)) => {
                    // a categorical column whose held-out cells happen to all be numeric
                    for (i, c) in cells.iter().enumerate() {
                        let token = c.map(|x| x.to_string()).unwrap_or_else(|| fill.clone());
                        values[[i, j]] = codes.get(&token).copied().unwrap_or(0) as f64;
                    }
                }
                (FittedColumn::Numeric { name, .. }, ColumnData::Categorical(_)) => {
                    return Err(Error::usage(format!("column `{name}` was numeric at fit time")));
                }
            }
        }
        DenseTable::new(table.ids().to_vec(), self.column_names(), values)
    }
}

/// Fits scaling, encoding, discretization and missing-value fill on `table`
/// and returns the transformed table with the fitted parameters.
pub fn fit_transform_basic(table: &FeatureTable, config: &TransformConfig) -> Result<(DenseTable, FittedTransform)> {
    let fitted = FittedTransform::fit(table, config)?;
    let out = fitted.transform(table)?;
    Ok((out, fitted))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::table::Column;
    use proptest::prelude::*;

    fn numeric(cells: Vec<Option<f64>>) -> FeatureTable {
        let ids = (0..cells.len()).map(|i| format!("n{i}")).collect();
        FeatureTable::new(ids, vec![Column { name: "x".into(), data: ColumnData::Numeric(cells) }]).unwrap()
    }

    fn categorical(cells: &[Option<&str>]) -> FeatureTable {
        let ids = (0..cells.len()).map(|i| format!("n{i}")).collect();
        let data = ColumnData::Categorical(cells.iter().map(|c| c.map(String::from)).collect());
        FeatureTable::new(ids, vec![Column { name: "c".into(), data }]).unwrap()
    }

    fn raw() -> TransformConfig {
        TransformConfig {
            numeric: ColumnTransform { scaling: Scaling::None, discretization: Discretization::None },
            ..Default::default()
        }
    }

    #[test]
    fn median_fill() {
        let (out, _) = fit_transform_basic(&numeric(vec![Some(1.0), Some(3.0), None]), &raw()).unwrap();
        assert_eq!(out.values().column(0).to_vec(), vec![1.0, 3.0, 2.0]);
    }

    #[test]
    fn zscore_uses_population_std() {
        let (out, _) =
            fit_transform_basic(&numeric(vec![Some(2.0), Some(4.0), Some(6.0)]), &TransformConfig::default()).unwrap();
        let col = out.values().column(0).to_vec();
        for (got, want) in col.iter().zip([-1.2247, 0.0, 1.2247]) {
            assert!((got - want).abs() < 1e-4, "{col:?}");
        }
    }

    #[test]
    fn minmax_and_constant_columns() {
        let cfg = TransformConfig {
            numeric: ColumnTransform { scaling: Scaling::Minmax, ..Default::default() },
            ..Default::default()
        };
        let (out, _) = fit_transform_basic(&numeric(vec![Some(2.0), Some(4.0), Some(6.0)]), &cfg).unwrap();
        assert_eq!(out.values().column(0).to_vec(), vec![0.0, 0.5, 1.0]);
        let (out, _) = fit_transform_basic(&numeric(vec![Some(5.0), Some(5.0)]), &TransformConfig::default()).unwrap();
        assert_eq!(out.values().column(0).to_vec(), vec![0.0, 0.0]);
    }

    #[test]
    fn frequency_codes() {
        let (out, fitted) = fit_transform_basic(&categorical(&[Some("x"), Some("y"), Some("x")]), &raw()).unwrap();
        assert_eq!(out.values().column(0).to_vec(), vec![1.0, 2.0, 1.0]);
        let held_out = categorical(&[Some("z"), None, Some("y")]);
        assert_eq!(fitted.transform(&held_out).unwrap().values().column(0).to_vec(), vec![0.0, 1.0, 2.0]);
    }

    #[test]
    fn equal_frequency_discretization() {
        let cfg = TransformConfig {
            numeric: ColumnTransform {
                scaling: Scaling::None,
                discretization: Discretization::EqualFrequency { bins: 2 },
            },
            ..Default::default()
        };
        let (out, fitted) =
            fit_transform_basic(&numeric(vec![Some(1.0), Some(2.0), Some(3.0), Some(4.0)]), &cfg).unwrap();
        assert_eq!(out.values().column(0).to_vec(), vec![0.0, 0.0, 1.0, 1.0]);
        let FittedColumn::Numeric { bin_edges, .. } = &fitted.columns[0] else { panic!() };
        assert_eq!(bin_edges.as_deref(), Some(&[2.0][..]));
    }

    #[test]
    fn all_missing_column_names_the_column() {
        match fit_transform_basic(&numeric(vec![None, None]), &raw()) {
            Err(Error::Fit(msg)) => assert!(msg.contains("`x`")),
            other => panic!("{other:?}"),
        }
        assert!(matches!(fit_transform_basic(&categorical(&[None]), &raw()), Err(Error::Fit(_))));
    }

    #[test]
    fn overrides_apply_per_column() {
        let mut cfg = raw();
        cfg.overrides.insert("x".into(), ColumnTransform { scaling: Scaling::Minmax, ..Default::default() });
        let (out, _) = fit_transform_basic(&numeric(vec![Some(0.0), Some(10.0)]), &cfg).unwrap();
        assert_eq!(out.values().column(0).to_vec(), vec![0.0, 1.0]);
    }

    proptest! {
        #[test]
        fn refitting_reproduces_training_output(
            cells in prop::collection::vec(prop::option::weighted(0.8, -1e3f64..1e3), 1..40),
            bins in 2usize..6,
        ) {
            prop_assume!(cells.iter().any(Option::is_some));
            let table = numeric(cells);
            let cfg = TransformConfig {
                numeric: ColumnTransform { scaling: Scaling::Zscore, discretization: Discretization::EqualFrequency { bins } },
                ..Default::default()
            };
            let (out, fitted) = fit_transform_basic(&table, &cfg).unwrap();
            prop_assert_eq!(fitted.transform(&table).unwrap(), out);
        }
    }
}
