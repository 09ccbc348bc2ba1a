//! Named, interned parameter storage. Names are only touched at registration
//! and checkpoint time; hot paths work with dense `ParamId` indices.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Shape {
    /// Flat vector of the given length.
    Vector(usize),
    /// Row-major matrix (rows, cols).
    Matrix(usize, usize),
}

impl Shape {
    pub fn len(&self) -> usize {
        match *self {
            Shape::Vector(n) => n,
            Shape::Matrix(r, c) => r * c,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(&self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Default)]
pub struct ParameterStore {
    names: Vec<String>,
    by_name: BTreeMap<String, ParamId>,
    shapes: Vec<Shape>,
    values: Vec<Vec<f64>>,
    grads: Vec<Vec<f64>>,
}

impl ParameterStore {
    pub fn new() -> Self {
        Self::default()
    }

    fn register(&mut self, name: &str, shape: Shape, values: Vec<f64>) -> Result<ParamId> {
        if self.by_name.contains_key(name) {
            return Err(Error::ConfigError(format!("duplicate parameter {name}")));
        }
        debug_assert_eq!(shape.len(), values.len());
        let id = ParamId(self.names.len());
        self.names.push(name.to_string());
        self.by_name.insert(name.to_string(), id);
        self.shapes.push(shape);
        self.grads.push(vec![0.0; values.len()]);
        self.values.push(values);
        Ok(id)
    }

    /// Zero-initialized vector (biases, test fixtures).
    pub fn add_vector(&mut self, name: &str, n: usize) -> Result<ParamId> {
        self.register(name, Shape::Vector(n), vec![0.0; n])
    }

    pub fn add_vector_from(&mut self, name: &str, values: Vec<f64>) -> Result<ParamId> {
        self.register(name, Shape::Vector(values.len()), values)
    }

    /// Zero-initialized matrix (useful to pin distributions at uniform).
    pub fn add_matrix(&mut self, name: &str, rows: usize, cols: usize) -> Result<ParamId> {
        self.register(name, Shape::Matrix(rows, cols), vec![0.0; rows * cols])
    }

    /// Matrix with uniform(-a, a) entries, a = sqrt(6 / (fan_in + fan_out)).
    pub fn add_matrix_glorot(
        &mut self,
        name: &str,
        rows: usize,
        cols: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<ParamId> {
        let a = (6.0 / (rows + cols) as f64).sqrt();
        let values = (0..rows * cols).map(|_| rng.gen_range(-a..a)).collect();
        self.register(name, Shape::Matrix(rows, cols), values)
    }

    pub fn add_matrix_from(
        &mut self,
        name: &str,
        rows: usize,
        cols: usize,
        values: Vec<f64>,
    ) -> Result<ParamId> {
        if values.len() != rows * cols {
            return Err(Error::ShapeError(format!(
                "{name}: expected {} values, got {}",
                rows * cols,
                values.len()
            )));
        }
        self.register(name, Shape::Matrix(rows, cols), values)
    }

    pub fn id(&self, name: &str) -> Result<ParamId> {
        self.by_name
            .get(name)
            .copied()
            .ok_or_else(|| Error::ConfigError(format!("unknown parameter {name}")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.by_name.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn shape(&self, id: ParamId) -> Shape {
        self.shapes[id.0]
    }

    pub fn value(&self, id: ParamId) -> &[f64] {
        &self.values[id.0]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut [f64] {
        &mut self.values[id.0]
    }

    pub fn grad(&self, id: ParamId) -> &[f64] {
        &self.grads[id.0]
    }

    pub(crate) fn grad_mut(&mut self, id: ParamId) -> &mut [f64] {
        &mut self.grads[id.0]
    }

    pub fn zero_grads(&mut self) {
        for g in &mut self.grads {
            g.iter_mut().for_each(|x| *x = 0.0);
        }
    }

    /// Ids in registration order (deterministic).
    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        (0..self.names.len()).map(ParamId)
    }

    /// Ids sorted by parameter name (stable checkpoint order).
    pub fn ids_by_name(&self) -> Vec<ParamId> {
        self.by_name.values().copied().collect()
    }

    /// Total scalar count across all parameters.
    pub fn scalar_count(&self) -> usize {
        self.values.iter().map(Vec::len).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::rand_core::SeedableRng;

    #[test]
    fn register_lookup_roundtrip() {
        let mut s = ParameterStore::new();
        let w = s.add_matrix("layer.w", 2, 3).unwrap();
        let b = s.add_vector("layer.b", 2).unwrap();
        assert_eq!(s.id("layer.w").unwrap(), w);
        assert_eq!(s.id("layer.b").unwrap(), b);
        assert_eq!(s.shape(w), Shape::Matrix(2, 3));
        assert_eq!(s.value(w).len(), 6);
        assert!(s.id("nope").is_err());
    }

    #[test]
    fn duplicate_name_rejected() {
        let mut s = ParameterStore::new();
        s.add_vector("x", 1).unwrap();
        assert!(s.add_vector("x", 1).is_err());
    }

    #[test]
    fn glorot_bounds_respected() {
        let mut s = ParameterStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let w = s.add_matrix_glorot("w", 16, 8, &mut rng).unwrap();
        let a = (6.0 / 24.0f64).sqrt();
        assert!(s.value(w).iter().all(|v| v.abs() < a));
        // not all zero
        assert!(s.value(w).iter().any(|v| v.abs() > 1e-3));
    }

    #[test]
    fn ids_by_name_is_sorted() {
        let mut s = ParameterStore::new();
        s.add_vector("zeta", 1).unwrap();
        s.add_vector("alpha", 1).unwrap();
        let ids = s.ids_by_name();
        assert_eq!(s.name(ids[0]), "alpha");
        assert_eq!(s.name(ids[1]), "zeta");
    }
}
