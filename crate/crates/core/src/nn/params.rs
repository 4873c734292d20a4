use std::collections::HashMap;
use std::path::Path;

use ndarray::{Array2, ArrayD, Ix2};

use crate::error::{Error, Result};
use crate::io;

/// Named learnable matrices. Vectors are stored as single rows.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamSet {
    names: Vec<String>,
    values: Vec<Array2<f64>>,
    index: HashMap<String, usize>,
}

impl ParamSet {
    pub fn insert(&mut self, name: &str, value: Array2<f64>) -> usize {
        if let Some(&i) = self.index.get(name) {
            self.values[i] = value;
            return i;
        }
        self.names.push(name.to_string());
        self.values.push(value);
        self.index.insert(name.to_string(), self.names.len() - 1);
        self.names.len() - 1
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn name(&self, i: usize) -> &str {
        &self.names[i]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn value(&self, i: usize) -> &Array2<f64> {
        &self.values[i]
    }

    pub fn value_mut(&mut self, i: usize) -> &mut Array2<f64> {
        &mut self.values[i]
    }

    pub fn get(&self, name: &str) -> Option<&Array2<f64>> {
        self.index_of(name).map(|i| &self.values[i])
    }

    pub fn num_elements(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.iter().all(|x| x.is_finite()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Array2<f64>)> {
        self.names.iter().map(String::as_str).zip(self.values.iter())
    }

    pub fn to_tensors(&self) -> Vec<(String, ArrayD<f64>)> {
        self.iter()
            .map(|(n, v)| (n.to_string(), v.clone().into_dyn()))
            .collect()
    }

    pub fn from_tensors(tensors: Vec<(String, ArrayD<f64>)>) -> Result<Self> {
        let mut out = ParamSet::default();
        for (name, t) in tensors {
            let m = t
                .into_dimensionality::<Ix2>()
                .map_err(|_| Error::Shape(format!("parameter '{name}' is not rank 2")))?;
            out.insert(&name, m);
        }
        Ok(out)
    }

    /// Overwrites values from `other`, requiring identical names and shapes.
    pub fn load_from(&mut self, other: &ParamSet) -> Result<()> {
        for (i, name) in self.names.iter().enumerate() {
            let src = other
                .get(name)
                .ok_or_else(|| Error::Invalid(format!("checkpoint lacks parameter '{name}'")))?;
            if src.dim() != self.values[i].dim() {
                return Err(Error::Shape(format!(
                    "parameter '{name}': checkpoint {:?}, model {:?}",
                    src.dim(),
                    self.values[i].dim()
                )));
            }
            self.values[i].assign(src);
        }
        if other.len() != self.len() {
            return Err(Error::Invalid(format!(
                "checkpoint has {} tensors, model has {}",
                other.len(),
                self.len()
            )));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        io::write_tensors(path, &self.to_tensors())
    }

    pub fn load(path: &Path) -> Result<Self> {
        ParamSet::from_tensors(io::read_tensors(path)?)
    }
}
