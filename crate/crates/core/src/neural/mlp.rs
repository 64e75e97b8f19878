use rand::Rng;

use super::{Init, NeuralError, ParamId, ParamStore, Tape, Var};

/// Dense layers with ReLU between hidden layers and a linear output layer.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    layers: Vec<(ParamId, ParamId)>,
    input_dim: usize,
    output_dim: usize,
}

impl Mlp {
    /// Registers the layer parameters under `prefix.{i}.weight` / `prefix.{i}.bias`.
    /// With `zero_output` the last layer starts at zero, so the network
    /// initially outputs zeros for every input.
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        prefix: &str,
        input_dim: usize,
        hidden: &[usize],
        output_dim: usize,
        zero_output: bool,
        rng: &mut R,
    ) -> Self {
        let mut dims = vec![input_dim];
        dims.extend_from_slice(hidden);
        dims.push(output_dim);
        let last = dims.len() - 2;
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, d)| {
                let init = if zero_output && i == last { Init::Zeros } else { Init::Glorot };
                let w = store.add(&format!("{prefix}.{i}.weight"), d[0], d[1], init, rng);
                let b = store.add(&format!("{prefix}.{i}.bias"), 1, d[1], Init::Zeros, rng);
                (w, b)
            })
            .collect();
        Self { layers, input_dim, output_dim }
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn layers(&self) -> &[(ParamId, ParamId)] {
        &self.layers
    }

    /// Applies the network to every row of `input`.
    pub fn forward(&self, tape: &mut Tape<'_>, store: &ParamStore, input: Var) -> Result<Var, NeuralError> {
        let cols = tape.value(input).cols();
        if cols != self.input_dim {
            return Err(NeuralError::Shape { op: "mlp", left: tape.value(input).shape(), right: (self.input_dim, 0) });
        }
        let mut x = input;
        for (i, &(w, b)) in self.layers.iter().enumerate() {
            let wv = tape.param(store, w);
            let bv = tape.param(store, b);
            let h = tape.matmul(x, wv)?;
            x = tape.add_row(h, bv)?;
            if i + 1 < self.layers.len() {
                x = tape.relu(x);
            }
        }
        Ok(x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::Matrix;
    use rand::SeedableRng;

    fn rng() -> rand_chacha::ChaCha8Rng {
        rand_chacha::ChaCha8Rng::seed_from_u64(3)
    }

    #[test]
    fn zero_weights_give_zero_output() {
        let mut store = ParamStore::new();
        let mlp = Mlp::new(&mut store, "m", 3, &[4], 2, false, &mut rng());
        store.values_mut().iter_mut().for_each(|x| *x = 0.0);
        let mut t = Tape::new();
        let x = t.constant(Matrix::new(1, 3, vec![1.0, -2.0, 0.5]));
        let y = mlp.forward(&mut t, &store, x).unwrap();
        assert_eq!(t.value(y).data(), &[0.0, 0.0]);
    }

    #[test]
    fn identity_single_layer() {
        let mut store = ParamStore::new();
        let mlp = Mlp::new(&mut store, "m", 2, &[], 2, false, &mut rng());
        store.slice_mut(mlp.layers()[0].0).copy_from_slice(&[1.0, 0.0, 0.0, 1.0]);
        let mut t = Tape::new();
        let x = t.constant(Matrix::new(1, 2, vec![0.3, -4.0]));
        let y = mlp.forward(&mut t, &store, x).unwrap();
        assert_eq!(t.value(y).data(), &[0.3, -4.0]);
    }

    #[test]
    fn hand_computed_1_2_1() {
        // h = relu([2x + 1, -x + 0.5]) ; y = 3 h0 - 2 h1 + 0.25
        let mut store = ParamStore::new();
        let mlp = Mlp::new(&mut store, "m", 1, &[2], 1, false, &mut rng());
        let (w0, b0) = mlp.layers()[0];
        let (w1, b1) = mlp.layers()[1];
        store.slice_mut(w0).copy_from_slice(&[2.0, -1.0]);
        store.slice_mut(b0).copy_from_slice(&[1.0, 0.5]);
        store.slice_mut(w1).copy_from_slice(&[3.0, -2.0]);
        store.slice_mut(b1).copy_from_slice(&[0.25]);
        let mut t = Tape::new();
        // x = 0.2: h = (1.4, 0.3) -> y = 4.2 - 0.6 + 0.25 = 3.85
        // x = 1.0: h = (3.0, 0.0) -> y = 9.25
        let x = t.constant(Matrix::new(2, 1, vec![0.2, 1.0]));
        let y = mlp.forward(&mut t, &store, x).unwrap();
        let v = t.value(y).data();
        assert!((v[0] - 3.85).abs() < 1e-12);
        assert!((v[1] - 9.25).abs() < 1e-12);
    }

    #[test]
    fn dimension_mismatch() {
        let mut store = ParamStore::new();
        let mlp = Mlp::new(&mut store, "m", 3, &[], 1, false, &mut rng());
        let mut t = Tape::new();
        let x = t.constant(Matrix::new(1, 2, vec![0.0, 0.0]));
        assert!(matches!(mlp.forward(&mut t, &store, x), Err(NeuralError::Shape { .. })));
    }
}
