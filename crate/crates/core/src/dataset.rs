//! Columnar samples of (x, y, w[, z, covariates]).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VarKind {
    Continuous,
    Categorical,
}

/// A column of real values; categorical columns hold level codes 0, 1, ... with labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Column {
    pub values: Vec<f64>,
    pub kind: VarKind,
    /// Declared support for categorical columns, in code order.
    pub levels: Vec<String>,
}

impl Column {
    pub fn continuous(values: Vec<f64>) -> Self {
        Column { values, kind: VarKind::Continuous, levels: Vec::new() }
    }

    /// Codes must lie in 0..levels.len().
    pub fn categorical(codes: Vec<usize>, levels: Vec<String>) -> Self {
        Column { values: codes.iter().map(|&c| c as f64).collect(), kind: VarKind::Categorical, levels }
    }

    /// Maps labels to codes by first appearance.
    pub fn from_labels<S: AsRef<str>>(labels: &[S]) -> Self {
        let mut levels: Vec<String> = Vec::new();
        let mut codes = Vec::with_capacity(labels.len());
        for l in labels {
            let l = l.as_ref();
            let c = match levels.iter().position(|s| s == l) {
                Some(c) => c,
                None => {
                    levels.push(l.to_string());
                    levels.len() - 1
                }
            };
            codes.push(c);
        }
        Column::categorical(codes, levels)
    }

    pub fn codes(&self) -> Vec<usize> {
        self.values.iter().map(|&v| v as usize).collect()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Numeric value used inside φ(y, t): the parsed label when every label is numeric, else the code.
    pub fn numeric_values(&self) -> Vec<f64> {
        if self.kind == VarKind::Continuous {
            return self.values.clone();
        }
        let parsed: Option<Vec<f64>> = self.levels.iter().map(|l| l.trim().parse::<f64>().ok()).collect();
        match parsed {
            Some(p) => self.values.iter().map(|&c| p[c as usize]).collect(),
            None => self.values.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: Column,
    pub y: Column,
    pub w: Column,
    pub z: Option<Column>,
    pub covariates: Vec<Column>,
}

impl Dataset {
    pub fn continuous(x: Vec<f64>, y: Vec<f64>, w: Vec<f64>) -> Self {
        Dataset {
            x: Column::continuous(x),
            y: Column::continuous(y),
            w: Column::continuous(w),
            z: None,
            covariates: Vec::new(),
        }
    }

    pub fn with_z(mut self, z: Vec<f64>) -> Self {
        self.z = Some(Column::continuous(z));
        self
    }

    pub fn with_covariate(mut self, v: Vec<f64>) -> Self {
        self.covariates.push(Column::continuous(v));
        self
    }

    pub fn n(&self) -> usize {
        self.x.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n();
        let mut cols: Vec<(&str, &Column)> = vec![("y", &self.y), ("w", &self.w)];
        if let Some(z) = &self.z {
            cols.push(("z", z));
        }
        for c in &self.covariates {
            cols.push(("covariate", c));
        }
        for (name, c) in cols {
            if c.len() != n {
                return Err(Error::InvalidInput(format!("column {name} has {} rows, x has {n}", c.len())));
            }
        }
        let mut all: Vec<(&str, &Column)> = vec![("x", &self.x), ("y", &self.y), ("w", &self.w)];
        if let Some(z) = &self.z {
            all.push(("z", z));
        }
        all.extend(self.covariates.iter().map(|c| ("covariate", c)));
        for (name, c) in all {
            if let Some(i) = c.values.iter().position(|v| !v.is_finite()) {
                return Err(Error::BadCell { row: i, msg: format!("non-finite value in column {name}") });
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn labels_map_by_first_appearance() {
        let c = Column::from_labels(&["b", "a", "b", "c"]);
        assert_eq!(c.levels, vec!["b", "a", "c"]);
        assert_eq!(c.codes(), vec![0, 1, 0, 2]);
    }

    #[test]
    fn numeric_labels_keep_their_values() {
        let c = Column::from_labels(&["2", "0.5", "2"]);
        assert_eq!(c.numeric_values(), vec![2.0, 0.5, 2.0]);
        let c = Column::from_labels(&["lo", "hi"]);
        assert_eq!(c.numeric_values(), vec![0.0, 1.0]);
    }

    #[test]
    fn validate_reports_row_of_bad_cell() {
        let d = Dataset::continuous(vec![1.0, f64::NAN], vec![0.0, 0.0], vec![0.0, 0.0]);
        assert_eq!(d.validate().unwrap_err(), Error::BadCell { row: 1, msg: "non-finite value in column x".into() });
    }
}
