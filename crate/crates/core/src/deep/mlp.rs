use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::game::PayoffMatrix;

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// `fan_in × fan_out`, applied as `x W + b`.
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

/// Fully connected network with rectified-linear hidden layers and a linear
/// output layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<Layer>,
}

/// Per-layer gradients, shaped like the network parameters.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub layers: Vec<Layer>,
}

/// Shape description written next to serialized weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightManifest {
    pub sizes: Vec<usize>,
    pub dtype: String,
    pub layout: String,
    pub parameters: usize,
}

impl Mlp {
    /// Weights and biases uniform on `±1/√fan_in`.
    pub fn new_uniform<R: Rng + ?Sized>(sizes: &[usize], rng: &mut R) -> Result<Self> {
        let mut net = Self::zeros(sizes)?;
        for layer in &mut net.layers {
            let bound = 1.0 / (layer.w.nrows() as f64).sqrt();
            layer.w.mapv_inplace(|_| rng.gen_range(-bound..bound));
            layer.b.mapv_inplace(|_| rng.gen_range(-bound..bound));
        }
        Ok(net)
    }

    pub fn zeros(sizes: &[usize]) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::InvalidParams(format!("bad layer sizes {sizes:?}")));
        }
        Ok(Self {
            layers: sizes
                .windows(2)
                .map(|p| Layer {
                    w: Array2::zeros((p[0], p[1])),
                    b: Array1::zeros(p[1]),
                })
                .collect(),
        })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut v = vec![self.input_len()];
        v.extend(self.layers.iter().map(|l| l.b.len()));
        v
    }

    pub fn input_len(&self) -> usize {
        self.layers[0].w.nrows()
    }

    pub fn output_len(&self) -> usize {
        self.layers.last().unwrap().b.len()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    fn check_input(&self, cols: usize) -> Result<()> {
        if cols != self.input_len() {
            return Err(Error::DimensionMismatch {
                expected: self.input_len(),
                got: cols,
            });
        }
        Ok(())
    }

    /// Outputs for a batch of rows.
    pub fn forward_batch(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_input(x.ncols())?;
        let last = self.layers.len() - 1;
        let mut a = x.to_owned();
        for (i, layer) in self.layers.iter().enumerate() {
            a = a.dot(&layer.w) + &layer.b;
            if i < last {
                a.mapv_inplace(relu);
            }
        }
        Ok(a)
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        let view = ArrayView2::from_shape((1, x.len()), x).map_err(|e| Error::InvalidParams(e.to_string()))?;
        Ok(self.forward_batch(view)?.into_raw_vec_and_offset().0)
    }

    /// The output reshaped as an `n_max × n_min` payoff matrix.
    pub fn payoff(&self, x: &[f64], n_max: usize, n_min: usize) -> Result<PayoffMatrix> {
        if n_max * n_min != self.output_len() {
            return Err(Error::DimensionMismatch {
                expected: self.output_len(),
                got: n_max * n_min,
            });
        }
        PayoffMatrix::new(n_max, n_min, self.forward(x)?)
    }

    /// Loss `(1/2m) Σ_k (q(x_k)[idx_k] - y_k)²` and its gradient.
    pub fn loss_and_gradient(&self, x: ArrayView2<f64>, idx: &[usize], y: &[f64]) -> Result<(f64, Gradients)> {
        self.check_input(x.ncols())?;
        let m = x.nrows();
        if m == 0 {
            return Err(Error::InvalidParams("empty batch".into()));
        }
        if idx.len() != m || y.len() != m {
            return Err(Error::DimensionMismatch {
                expected: m,
                got: idx.len().min(y.len()),
            });
        }
        if let Some(&bad) = idx.iter().find(|&&i| i >= self.output_len()) {
            return Err(Error::InvalidAction(bad));
        }
        let last = self.layers.len() - 1;
        // activations[0] is the input; pre-activations are kept for the mask
        let mut activations = vec![x.to_owned()];
        let mut pre = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let z = activations[i].dot(&layer.w) + &layer.b;
            let a = if i < last { z.mapv(relu) } else { z.clone() };
            pre.push(z);
            activations.push(a);
        }
        let out = &activations[last + 1];
        let mut delta = Array2::zeros(out.raw_dim());
        let mut loss = 0.0;
        for k in 0..m {
            let err = out[[k, idx[k]]] - y[k];
            loss += err * err;
            delta[[k, idx[k]]] = err / m as f64;
        }
        loss /= 2.0 * m as f64;

        let mut grads = Vec::with_capacity(self.layers.len());
        for i in (0..self.layers.len()).rev() {
            let gw = activations[i].t().dot(&delta);
            let gb = delta.sum_axis(Axis(0));
            if i > 0 {
                let mut back = delta.dot(&self.layers[i].w.t());
                back.zip_mut_with(&pre[i - 1], |d, &z| {
                    if z <= 0.0 {
                        *d = 0.0;
                    }
                });
                delta = back;
            }
            grads.push(Layer { w: gw, b: gb });
        }
        grads.reverse();
        Ok((loss, Gradients { layers: grads }))
    }

    /// All parameters, layer by layer: weights row-major, then biases.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            v.extend(l.w.iter());
            v.extend(l.b.iter());
        }
        v
    }

    pub fn from_flat(sizes: &[usize], flat: &[f64]) -> Result<Self> {
        let mut net = Self::zeros(sizes)?;
        net.set_flat(flat)?;
        Ok(net)
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::DimensionMismatch {
                expected: self.param_count(),
                got: flat.len(),
            });
        }
        if flat.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFiniteInput("network parameter".into()));
        }
        let mut it = flat.iter().copied();
        for l in &mut self.layers {
            l.w.iter_mut().for_each(|x| *x = it.next().unwrap());
            l.b.iter_mut().for_each(|x| *x = it.next().unwrap());
        }
        Ok(())
    }

    /// SHA-256 of the little-endian parameter bytes.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for x in self.to_flat() {
            h.update(x.to_le_bytes());
        }
        hex(&h.finalize())
    }

    pub fn manifest(&self) -> WeightManifest {
        WeightManifest {
            sizes: self.sizes(),
            dtype: "f64-le".into(),
            layout: "per layer: weights (fan_in x fan_out, row-major) then biases".into(),
            parameters: self.param_count(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        self.to_flat().iter().flat_map(|x| x.to_le_bytes()).collect()
    }

    pub fn from_bytes(manifest: &WeightManifest, bytes: &[u8]) -> Result<Self> {
        if bytes.len() % 8 != 0 {
            return Err(Error::InvalidParams(format!("weight file length {} is not a multiple of 8", bytes.len())));
        }
        let flat: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Self::from_flat(&manifest.sizes, &flat)
    }

    pub fn save(&self, weights: &std::path::Path, manifest: &std::path::Path) -> Result<()> {
        std::fs::write(weights, self.to_bytes())?;
        std::fs::write(manifest, serde_json::to_string_pretty(&self.manifest())?)?;
        Ok(())
    }

    pub fn load(weights: &std::path::Path, manifest: &std::path::Path) -> Result<Self> {
        let m: WeightManifest = serde_json::from_str(&std::fs::read_to_string(manifest)?)?;
        Self::from_bytes(&m, &std::fs::read(weights)?)
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn relu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    /// Straight-line evaluator with explicit loops.
    fn reference_forward(net: &Mlp, x: &[f64]) -> Vec<f64> {
        let mut a = x.to_vec();
        let n = net.layers().len();
        for (i, l) in net.layers().iter().enumerate() {
            let mut z = vec![0.0; l.b.len()];
            for j in 0..z.len() {
                let mut acc = l.b[j];
                for k in 0..a.len() {
                    acc += a[k] * l.w[[k, j]];
                }
                z[j] = if i + 1 < n { acc.max(0.0) } else { acc };
            }
            a = z;
        }
        a
    }

    #[test]
    fn zero_network_outputs_zero() {
        let net = Mlp::zeros(&[6, 256, 128, 25]).unwrap();
        assert!(net.forward(&[0.3; 6]).unwrap().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn single_layer_with_zero_weights_outputs_bias() {
        let mut net = Mlp::zeros(&[3, 4]).unwrap();
        net.layers_mut()[0].b = array![1.0, -2.0, 0.5, 3.0];
        assert_eq!(net.forward(&[5.0, -1.0, 2.0]).unwrap(), vec![1.0, -2.0, 0.5, 3.0]);
    }

    #[test]
    fn forward_matches_reference() {
        let mut r = rng(1);
        let net = Mlp::new_uniform(&[6, 256, 128, 25], &mut r).unwrap();
        for _ in 0..10 {
            let x: Vec<f64> = (0..6).map(|_| r.gen_range(-1.0..1.0)).collect();
            let ours = net.forward(&x).unwrap();
            let theirs = reference_forward(&net, &x);
            for (a, b) in ours.iter().zip(&theirs) {
                assert!((a - b).abs() < 1e-12);
            }
        }
        assert_eq!(net.param_count(), 6 * 256 + 256 + 256 * 128 + 128 + 128 * 25 + 25);
    }

    #[test]
    fn dimension_errors() {
        let net = Mlp::zeros(&[6, 8, 25]).unwrap();
        assert!(matches!(net.forward(&[0.0; 5]), Err(Error::DimensionMismatch { .. })));
        assert!(net.payoff(&[0.0; 6], 4, 5).is_err());
        assert!(Mlp::zeros(&[6]).is_err());
    }

    #[test]
    fn exact_targets_give_zero_gradient() {
        let mut r = rng(2);
        let net = Mlp::new_uniform(&[4, 8, 6], &mut r).unwrap();
        let x = Array2::from_shape_fn((3, 4), |_| r.gen_range(-1.0..1.0));
        let idx = [0, 5, 2];
        let out = net.forward_batch(x.view()).unwrap();
        let y: Vec<f64> = (0..3).map(|k| out[[k, idx[k]]]).collect();
        let (loss, g) = net.loss_and_gradient(x.view(), &idx, &y).unwrap();
        assert_eq!(loss, 0.0);
        assert!(g.layers.iter().all(|l| l.w.iter().chain(l.b.iter()).all(|&v| v == 0.0)));
    }

    #[test]
    fn linear_gradient_by_hand() {
        let mut r = rng(3);
        let net = Mlp::new_uniform(&[3, 2], &mut r).unwrap();
        let x = array![[0.5, -1.0, 2.0]];
        let pred = net.forward(&[0.5, -1.0, 2.0]).unwrap()[1];
        let (_, g) = net.loss_and_gradient(x.view(), &[1], &[0.25]).unwrap();
        let e = pred - 0.25;
        for k in 0..3 {
            assert!((g.layers[0].w[[k, 1]] - e * x[[0, k]]).abs() < 1e-15);
            assert_eq!(g.layers[0].w[[k, 0]], 0.0);
        }
        assert!((g.layers[0].b[1] - e).abs() < 1e-15);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut r = rng(4);
        for _ in 0..5 {
            let net = Mlp::new_uniform(&[6, 16, 12, 25], &mut r).unwrap();
            let x = Array2::from_shape_fn((4, 6), |_| r.gen_range(-1.0..1.0));
            let idx: Vec<usize> = (0..4).map(|_| r.gen_range(0..25)).collect();
            let y: Vec<f64> = (0..4).map(|_| r.gen_range(-1.0..1.0)).collect();
            let (_, g) = net.loss_and_gradient(x.view(), &idx, &y).unwrap();
            let analytic: Vec<f64> = g.layers.iter().flat_map(|l| l.w.iter().chain(l.b.iter()).copied().collect::<Vec<_>>()).collect();
            let flat = net.to_flat();
            let h = 1e-5;
            for i in 0..flat.len() {
                let mut p = flat.clone();
                p[i] += h;
                let lp = Mlp::from_flat(&net.sizes(), &p).unwrap().loss_and_gradient(x.view(), &idx, &y).unwrap().0;
                p[i] -= 2.0 * h;
                let lm = Mlp::from_flat(&net.sizes(), &p).unwrap().loss_and_gradient(x.view(), &idx, &y).unwrap().0;
                let fd = (lp - lm) / (2.0 * h);
                let scale = analytic[i].abs().max(fd.abs()).max(1e-8);
                assert!((analytic[i] - fd).abs() / scale <= 1e-4, "coord {i}: {} vs {fd}", analytic[i]);
            }
        }
    }

    #[test]
    fn flat_round_trip() {
        let mut r = rng(5);
        let net = Mlp::new_uniform(&[5, 7, 9], &mut r).unwrap();
        let back = Mlp::from_bytes(&net.manifest(), &net.to_bytes()).unwrap();
        assert_eq!(back, net);
        assert_eq!(back.digest(), net.digest());
        let dir = tempfile::tempdir().unwrap();
        let (w, m) = (dir.path().join("w.bin"), dir.path().join("w.json"));
        net.save(&w, &m).unwrap();
        assert_eq!(Mlp::load(&w, &m).unwrap(), net);
    }
}
