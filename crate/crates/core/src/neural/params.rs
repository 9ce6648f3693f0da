use std::collections::HashMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::mat::Mat;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

/// Named parameter arrays in registration order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Mat>,
    index: HashMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Mat) -> ParamId {
        let name = name.into();
        assert!(!self.index.contains_key(&name), "duplicate parameter {name}");
        let id = ParamId(self.values.len());
        self.index.insert(name.clone(), id);
        self.names.push(name);
        self.values.push(value);
        id
    }

    /// Uniform in `±1/sqrt(fan_in)`.
    pub fn add_uniform(
        &mut self,
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        fan_in: usize,
        rng: &mut ChaCha8Rng,
    ) -> ParamId {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let data = (0..rows * cols)
            .map(|_| rng.random_range(-bound..bound))
            .collect();
        self.add(name, Mat::from_vec(rows, cols, data))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn n_scalars(&self) -> usize {
        self.values.iter().map(|m| m.data.len()).sum()
    }

    pub fn get(&self, id: ParamId) -> &Mat {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Mat {
        &mut self.values[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Mat)> {
        self.names
            .iter()
            .zip(&self.values)
            .enumerate()
            .map(|(i, (n, v))| (ParamId(i), n.as_str(), v))
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut Mat> {
        self.values.iter_mut()
    }

    /// `self ← τ·other + (1−τ)·self`. Stores must share layout.
    pub fn soft_update_from(&mut self, other: &ParamStore, tau: f64) {
        assert_eq!(self.names, other.names, "parameter layouts differ");
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            if tau == 1.0 {
                a.data.copy_from_slice(&b.data);
            } else {
                for (x, y) in a.data.iter_mut().zip(&b.data) {
                    *x = tau * y + (1.0 - tau) * *x;
                }
            }
        }
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(Mat::all_finite)
    }
}

/// Gradient buffers matching a store's layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Grads {
    pub values: Vec<Mat>,
}

impl Grads {
    pub fn zeros_like(store: &ParamStore) -> Self {
        Grads {
            values: store
                .iter()
                .map(|(_, _, m)| Mat::zeros(m.rows, m.cols))
                .collect(),
        }
    }

    pub fn get(&self, id: ParamId) -> &Mat {
        &self.values[id.0]
    }

    pub fn global_norm(&self) -> f64 {
        self.values.iter().map(Mat::sq_norm).sum::<f64>().sqrt()
    }

    pub fn scale(&mut self, s: f64) {
        for m in &mut self.values {
            m.scale(s);
        }
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(Mat::all_finite)
    }
}
