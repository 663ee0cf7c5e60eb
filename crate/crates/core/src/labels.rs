//! Per-node risk labels and the label file format.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::TypedGraph;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    HighRisk,
    NoObservableRisk,
    Unlabeled,
}

impl Label {
    pub fn as_str(self) -> &'static str {
        match self {
            Label::HighRisk => "high_risk",
            Label::NoObservableRisk => "no_observable_risk",
            Label::Unlabeled => "unlabeled",
        }
    }

    /// 1 for high risk, 0 for no observable risk.
    pub fn as_binary(self) -> Option<u8> {
        match self {
            Label::HighRisk => Some(1),
            Label::NoObservableRisk => Some(0),
            Label::Unlabeled => None,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "high_risk" | "1" => Ok(Label::HighRisk),
            "no_observable_risk" | "0" => Ok(Label::NoObservableRisk),
            "unlabeled" | "" => Ok(Label::Unlabeled),
            other => Err(Error::usage(format!("unknown label `{other}`"))),
        }
    }
}

/// Labels keyed by node id. Missing keys read as [`Label::Unlabeled`].
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelTable {
    entries: BTreeMap<String, Label>,
}

impl LabelTable {
    pub fn new() -> Self {
        Self::default()
    }

    /// Sets the label for `id`; a second assignment for the same key is an
    /// error.
    pub fn insert(&mut self, id: impl Into<String>, label: Label) -> Result<()> {
        let id = id.into();
        if self.entries.contains_key(&id) {
            return Err(Error::schema(format!("duplicate label entry for `{id}`")));
        }
        self.entries.insert(id, label);
        Ok(())
    }

    pub fn set(&mut self, id: impl Into<String>, label: Label) {
        self.entries.insert(id.into(), label);
    }

    pub fn get(&self, id: &str) -> Label {
        self.entries.get(id).copied().unwrap_or(Label::Unlabeled)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Label)> {
        self.entries.iter().map(|(k, &v)| (k.as_str(), v))
    }

    pub fn with_label(&self, label: Label) -> impl Iterator<Item = &str> {
        self.iter().filter(move |&(_, l)| l == label).map(|(k, _)| k)
    }

    pub fn count(&self, label: Label) -> usize {
        self.with_label(label).count()
    }

    /// Every key must name a node of `graph`.
    pub fn validate(&self, graph: &TypedGraph) -> Result<()> {
        for key in self.entries.keys() {
            graph.require(key)?;
        }
        Ok(())
    }

    /// Drops entries for nodes that are not in `graph` (after preprocessing).
    pub fn restricted_to(&self, graph: &TypedGraph) -> LabelTable {
        LabelTable {
            entries: self
                .entries
                .iter()
                .filter(|(k, _)| graph.index_of(k).is_some())
                .map(|(k, &v)| (k.clone(), v))
                .collect(),
        }
    }

    /// Per-node label array aligned with the graph's node indices.
    pub fn aligned(&self, graph: &TypedGraph) -> Vec<Label> {
        graph.ids().iter().map(|id| self.get(id)).collect()
    }

    /// Reads `node_id<TAB>label` rows (optional `node_id` header).
    pub fn read_tsv<R: BufRead>(reader: R) -> Result<Self> {
        let mut table = LabelTable::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') || (i == 0 && line.starts_with("node_id\t")) {
                continue;
            }
            let mut fields = line.split('\t');
            let (Some(id), Some(label), None) = (fields.next(), fields.next(), fields.next()) else {
                return Err(Error::parse(i + 1, "expected `node_id<TAB>label`"));
            };
            let label = label.parse().map_err(|e: Error| Error::parse(i + 1, e.to_string()))?;
            table.insert(id, label).map_err(|e| Error::parse(i + 1, e.to_string()))?;
        }
        Ok(table)
    }

    pub fn write_tsv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "node_id\tlabel")?;
        for (id, label) in &self.entries {
            writeln!(w, "{id}\t{label}")?;
        }
        w.flush()?;
        Ok(())
    }
}

impl FromIterator<(String, Label)> for LabelTable {
    fn from_iter<T: IntoIterator<Item = (String, Label)>>(iter: T) -> Self {
        LabelTable { entries: iter.into_iter().collect() }
    }
}
