use std::collections::HashMap;
use std::io::{Read, Write};

use ndarray::{Array2, ArrayView1, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnKind {
    Numeric,
    Categorical,
}

#[derive(Clone, Debug, PartialEq)]
pub enum ColumnData {
    Numeric(Vec<Option<f64>>),
    Categorical(Vec<Option<String>>),
}

impl ColumnData {
    pub fn kind(&self) -> ColumnKind {
        match self {
            ColumnData::Numeric(_) => ColumnKind::Numeric,
            ColumnData::Categorical(_) => ColumnKind::Categorical,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            ColumnData::Numeric(v) => v.len(),
            ColumnData::Categorical(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_missing(&self, row: usize) -> bool {
        match self {
            ColumnData::Numeric(v) => v[row].is_none(),
            ColumnData::Categorical(v) => v[row].is_none(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Column {
    pub name: String,
    pub data: ColumnData,
}

/// Raw feature rows keyed by node id. A `None` cell is missing.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureTable {
    ids: Vec<String>,
    columns: Vec<Column>,
}

impl FeatureTable {
    pub fn new(ids: Vec<String>, columns: Vec<Column>) -> Result<Self> {
        for c in &columns {
            if c.data.len() != ids.len() {
                return Err(Error::schema(format!(
                    "column `{}` has {} rows, expected {}",
                    c.name,
                    c.data.len(),
                    ids.len()
                )));
            }
        }
        Ok(Self { ids, columns })
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn row_count(&self) -> usize {
        self.ids.len()
    }

    pub fn column(&self, name: &str) -> Option<&Column> {
        self.columns.iter().find(|c| c.name == name)
    }

    /// Reads a CSV whose first column is `node_id`. A column is numeric when
    /// every non-empty cell parses as a number; empty cells are missing.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let headers = rdr.headers()?.clone();
        if headers.get(0).map(str::trim) != Some("node_id") {
            return Err(Error::parse(1, "feature file must start with a `node_id` column"));
        }
        let names: Vec<String> = headers.iter().skip(1).map(|h| h.trim().to_string()).collect();
        let mut ids = Vec::new();
        let mut raw: Vec<Vec<Option<String>>> = vec![Vec::new(); names.len()];
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            if rec.len() != names.len() + 1 {
                return Err(Error::parse(i + 2, format!("expected {} fields, found {}", names.len() + 1, rec.len())));
            }
            ids.push(rec[0].trim().to_string());
            for (j, cell) in rec.iter().skip(1).enumerate() {
                let cell = cell.trim();
                raw[j].push((!cell.is_empty()).then(|| cell.to_string()));
            }
        }
        let columns = names
            .into_iter()
            .zip(raw)
            .map(|(name, cells)| {
                let numeric: Option<Vec<Option<f64>>> = cells
                    .iter()
                    .map(|c| match c {
                        None => Some(None),
                        Some(s) => s.parse::<f64>().ok().filter(|v| v.is_finite()).map(Some),
                    })
                    .collect();
                let data = match numeric {
                    Some(v) => ColumnData::Numeric(v),
                    None => ColumnData::Categorical(cells),
                };
                Column { name, data }
            })
            .collect();
        Self::new(ids, columns)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        let mut header = vec!["node_id".to_string()];
        header.extend(self.columns.iter().map(|c| c.name.clone()));
        wtr.write_record(&header)?;
        for (i, id) in self.ids.iter().enumerate() {
            let mut rec = vec![id.clone()];
            for c in &self.columns {
                rec.push(match &c.data {
                    ColumnData::Numeric(v) => v[i].map(|x| x.to_string()).unwrap_or_default(),
                    ColumnData::Categorical(v) => v[i].clone().unwrap_or_default(),
                });
            }
            wtr.write_record(&rec)?;
        }
        wtr.flush()?;
        Ok(())
    }

    /// Converts an all-numeric table without missing cells.
    pub fn to_dense(&self) -> Result<DenseTable> {
        let mut values = Array2::zeros((self.ids.len(), self.columns.len()));
        for (j, c) in self.columns.iter().enumerate() {
            let ColumnData::Numeric(v) = &c.data else {
                return Err(Error::usage(format!("column `{}` is categorical", c.name)));
            };
            for (i, x) in v.iter().enumerate() {
                values[[i, j]] = x.ok_or_else(|| Error::usage(format!("column `{}` has missing values", c.name)))?;
            }
        }
        DenseTable::new(self.ids.clone(), self.columns.iter().map(|c| c.name.clone()).collect(), values)
    }
}

impl From<&DenseTable> for FeatureTable {
    fn from(t: &DenseTable) -> Self {
        let columns = t
            .names
            .iter()
            .enumerate()
            .map(|(j, name)| Column {
                name: name.clone(),
                data: ColumnData::Numeric(t.values.column(j).iter().map(|&x| Some(x)).collect()),
            })
            .collect();
        FeatureTable { ids: t.ids.clone(), columns }
    }
}

/// Dense numeric rows keyed by node id.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenseTable {
    ids: Vec<String>,
    names: Vec<String>,
    values: Array2<f64>,
}

/// Node embeddings share the dense table layout: one row per node id.
pub type EmbeddingMatrix = DenseTable;

impl DenseTable {
    pub fn new(ids: Vec<String>, names: Vec<String>, values: Array2<f64>) -> Result<Self> {
        if values.nrows() != ids.len() || values.ncols() != names.len() {
            return Err(Error::schema(format!(
                "table shape {:?} does not match {} ids x {} columns",
                values.dim(),
                ids.len(),
                names.len()
            )));
        }
        Ok(Self { ids, names, values })
    }

    /// Embedding-style table with columns `{prefix}_0 .. {prefix}_{d-1}`.
    pub fn with_prefix(ids: Vec<String>, prefix: &str, values: Array2<f64>) -> Result<Self> {
        let names = (0..values.ncols()).map(|j| format!("{prefix}_{j}")).collect();
        Self::new(ids, names, values)
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn into_values(self) -> Array2<f64> {
        self.values
    }

    pub fn row_count(&self) -> usize {
        self.ids.len()
    }

    pub fn dim(&self) -> usize {
        self.names.len()
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.values.row(i)
    }

    pub fn index(&self) -> HashMap<&str, usize> {
        self.ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect()
    }

    /// Row lookup by id, erroring with the missing node's name.
    pub fn row_of(&self, index: &HashMap<&str, usize>, id: &str) -> Result<ArrayView1<'_, f64>> {
        index.get(id).map(|&i| self.values.row(i)).ok_or_else(|| Error::Data(format!("no row for node `{id}`")))
    }

    /// Rows for `ids` in that order.
    pub fn select(&self, ids: &[String]) -> Result<DenseTable> {
        let index = self.index();
        let rows: Vec<usize> = ids
            .iter()
            .map(|id| index.get(id.as_str()).copied().ok_or_else(|| Error::Data(format!("no row for node `{id}`"))))
            .collect::<Result<_>>()?;
        Ok(DenseTable { ids: ids.to_vec(), names: self.names.clone(), values: self.values.select(Axis(0), &rows) })
    }

    /// Matrix aligned to `ids`; ids without a row get `fill`.
    pub fn aligned(&self, ids: &[String], fill: f64) -> Array2<f64> {
        let index = self.index();
        let mut out = Array2::from_elem((ids.len(), self.dim()), fill);
        for (i, id) in ids.iter().enumerate() {
            if let Some(&r) = index.get(id.as_str()) {
                out.row_mut(i).assign(&self.values.row(r));
            }
        }
        out
    }

    /// Appends the columns of `other`, matching rows by id. Rows missing
    /// from `other` get `fill`, or fail when `fill` is `None`.
    pub fn join(&self, other: &DenseTable, fill: Option<f64>) -> Result<DenseTable> {
        let index = other.index();
        let mut values = Array2::zeros((self.row_count(), self.dim() + other.dim()));
        for (i, id) in self.ids.iter().enumerate() {
            let mut row = values.row_mut(i);
            row.slice_mut(ndarray::s![..self.dim()]).assign(&self.values.row(i));
            let mut tail = row.slice_mut(ndarray::s![self.dim()..]);
            match (index.get(id.as_str()), fill) {
                (Some(&r), _) => tail.assign(&other.values.row(r)),
                (None, Some(f)) => tail.fill(f),
                (None, None) => return Err(Error::Data(format!("no row for node `{id}` in joined table"))),
            }
        }
        let mut names = self.names.clone();
        names.extend(other.names.iter().cloned());
        DenseTable::new(self.ids.clone(), names, values)
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        FeatureTable::read_csv(reader)?.to_dense()
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        let mut header = vec!["node_id".to_string()];
        header.extend(self.names.iter().cloned());
        wtr.write_record(&header)?;
        let mut rec = Vec::with_capacity(self.dim() + 1);
        for (i, id) in self.ids.iter().enumerate() {
            rec.clear();
            rec.push(id.clone());
            rec.extend(self.values.row(i).iter().map(|x| x.to_string()));
            wtr.write_record(&rec)?;
        }
        wtr.flush()?;
        Ok(())
    }
}
