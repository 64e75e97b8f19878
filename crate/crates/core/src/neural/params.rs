use rand::Rng;

use super::Matrix;

/// Handle to one named array inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

#[derive(Clone, Debug, PartialEq)]
pub struct ParamEntry {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub offset: usize,
}

impl ParamEntry {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Trainable arrays laid out contiguously, with a gradient buffer of the
/// same length.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
    values: Vec<f64>,
    grad: Vec<f64>,
}

pub enum Init {
    Zeros,
    /// Uniform in ±sqrt(6 / (fan_in + fan_out)).
    Glorot,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add<R: Rng>(&mut self, name: &str, rows: usize, cols: usize, init: Init, rng: &mut R) -> ParamId {
        let offset = self.values.len();
        match init {
            Init::Zeros => self.values.extend(std::iter::repeat_n(0.0, rows * cols)),
            Init::Glorot => {
                let bound = (6.0 / (rows + cols).max(1) as f64).sqrt();
                self.values.extend((0..rows * cols).map(|_| rng.random_range(-bound..=bound)));
            }
        }
        self.grad.resize(self.values.len(), 0.0);
        self.entries.push(ParamEntry { name: name.to_string(), rows, cols, offset });
        ParamId(self.entries.len() - 1)
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry {
        &self.entries[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Flat view of every parameter.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn grad(&self) -> &[f64] {
        &self.grad
    }

    pub fn grad_mut(&mut self) -> &mut [f64] {
        &mut self.grad
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = 0.0);
    }

    pub fn slice(&self, id: ParamId) -> &[f64] {
        let e = &self.entries[id.0];
        &self.values[e.offset..e.offset + e.len()]
    }

    pub fn slice_mut(&mut self, id: ParamId) -> &mut [f64] {
        let e = self.entries[id.0].clone();
        &mut self.values[e.offset..e.offset + e.len()]
    }

    pub fn matrix(&self, id: ParamId) -> Matrix {
        let e = &self.entries[id.0];
        Matrix::new(e.rows, e.cols, self.slice(id).to_vec())
    }

    /// Replaces all values, keeping the layout.
    pub fn set_values(&mut self, values: Vec<f64>) {
        assert_eq!(values.len(), self.values.len(), "parameter count");
        self.values = values;
    }
}
