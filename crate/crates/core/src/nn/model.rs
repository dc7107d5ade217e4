use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::layers::{self, InputGrad};
use super::{Mode, NnError, Scalar, Tensor};
use crate::rng::{self, tags, Rng};

/// Number of convolution filters.
pub const CONV_FILTERS: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Architecture {
    /// Side of the square single-channel input.
    pub input_side: usize,
    pub kernel: usize,
    pub fc1_units: usize,
    pub fc2_units: usize,
    pub dropout: f64,
}

impl Default for Architecture {
    fn default() -> Self {
        Self {
            input_side: 128,
            kernel: 3,
            fc1_units: 64,
            fc2_units: 32,
            dropout: 0.25,
        }
    }
}

impl Architecture {
    pub fn conv_side(&self) -> usize {
        self.input_side + 1 - self.kernel
    }

    pub fn pool_side(&self) -> usize {
        self.conv_side() / 2
    }

    /// Length of the flattened pooled feature map.
    pub fn flatten_dim(&self) -> usize {
        self.pool_side() * self.pool_side() * CONV_FILTERS
    }

    /// 8,131,009 for the default architecture.
    pub fn param_count(&self) -> usize {
        let conv = self.kernel * self.kernel * CONV_FILTERS + CONV_FILTERS;
        let fc1 = self.flatten_dim() * self.fc1_units + self.fc1_units;
        let fc2 = self.fc1_units * self.fc2_units + self.fc2_units;
        let fc3 = self.fc2_units + 1;
        conv + fc1 + fc2 + fc3
    }

    pub fn validate(&self) -> Result<(), NnError> {
        if self.kernel == 0 || self.input_side < self.kernel + 1 {
            return Err(NnError::Config(format!(
                "input side {} too small for a {}x{} kernel and 2x2 pooling",
                self.input_side, self.kernel, self.kernel
            )));
        }
        if self.fc1_units == 0 || self.fc2_units == 0 {
            return Err(NnError::Config("dense layers need at least one unit".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(NnError::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }

    pub(crate) fn param_shapes(&self) -> [Vec<usize>; 8] {
        let k = self.kernel;
        [
            vec![k, k, 1, CONV_FILTERS],
            vec![CONV_FILTERS],
            vec![self.flatten_dim(), self.fc1_units],
            vec![self.fc1_units],
            vec![self.fc1_units, self.fc2_units],
            vec![self.fc2_units],
            vec![self.fc2_units, 1],
            vec![1],
        ]
    }
}

/// All trainable tensors, in a fixed order.
#[derive(Debug, Clone, PartialEq)]
pub struct Params<T> {
    pub conv_w: Tensor<T>,
    pub conv_b: Tensor<T>,
    pub fc1_w: Tensor<T>,
    pub fc1_b: Tensor<T>,
    pub fc2_w: Tensor<T>,
    pub fc2_b: Tensor<T>,
    pub fc3_w: Tensor<T>,
    pub fc3_b: Tensor<T>,
}

impl<T: Scalar> Params<T> {
    pub const NAMES: [&'static str; 8] = ["conv_w", "conv_b", "fc1_w", "fc1_b", "fc2_w", "fc2_b", "fc3_w", "fc3_b"];

    pub fn zeros(arch: &Architecture) -> Self {
        Self::from_tensors(arch.param_shapes().map(|s| Tensor::zeros(&s)))
    }

    pub(crate) fn from_tensors(t: [Tensor<T>; 8]) -> Self {
        let [conv_w, conv_b, fc1_w, fc1_b, fc2_w, fc2_b, fc3_w, fc3_b] = t;
        Self {
            conv_w,
            conv_b,
            fc1_w,
            fc1_b,
            fc2_w,
            fc2_b,
            fc3_w,
            fc3_b,
        }
    }

    pub fn tensors(&self) -> [&Tensor<T>; 8] {
        [
            &self.conv_w,
            &self.conv_b,
            &self.fc1_w,
            &self.fc1_b,
            &self.fc2_w,
            &self.fc2_b,
            &self.fc3_w,
            &self.fc3_b,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Tensor<T>; 8] {
        [
            &mut self.conv_w,
            &mut self.conv_b,
            &mut self.fc1_w,
            &mut self.fc1_b,
            &mut self.fc2_w,
            &mut self.fc2_b,
            &mut self.fc3_w,
            &mut self.fc3_b,
        ]
    }
}

/// Result of a forward + backward pass over one batch.
pub struct Backprop<T> {
    pub loss: T,
    pub predictions: Vec<T>,
    pub grads: Params<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CnnModel<T> {
    arch: Architecture,
    pub params: Params<T>,
}

/// Pooled features of one image, stored only where the receptive field of a
/// pooled cell touches a non-zero pixel. Every other cell equals the ReLU of
/// the conv bias, filter by filter.
struct SparseFeatures<T> {
    /// Pooled cell indices `py * pool_side + px`, ascending.
    cells: Vec<usize>,
    /// `cells.len() × CONV_FILTERS` pooled values.
    values: Vec<T>,
    /// Winning window offset per value, as in [`layers::maxpool2x2`].
    argmax: Vec<u8>,
}

struct Cache<T> {
    features: Vec<SparseFeatures<T>>,
    /// See [`by_cell`].
    occurrences: Vec<(usize, usize, usize)>,
    /// ReLU of the conv bias: the pooled value of an all-zero patch.
    background: Vec<T>,
    /// Per-filter column sums of the fc1 weights, `CONV_FILTERS × fc1_units`.
    column_sums: Vec<T>,
    z1: Tensor<T>,
    mask: Option<Vec<T>>,
    a1: Tensor<T>,
    z2: Tensor<T>,
    a2: Tensor<T>,
    out: Tensor<T>,
}

fn uniform<T: Scalar>(shape: &[usize], limit: f64, r: &mut Rng) -> Tensor<T> {
    Tensor::from_fn(shape, |_| T::of(r.gen_range(-limit..limit)))
}

impl<T: Scalar> CnnModel<T> {
    /// He-uniform weights for the ReLU layers, Glorot-uniform for the output
    /// layer, zero biases. Weights are drawn in `f64` so models of either
    /// precision built from one seed agree up to rounding.
    pub fn new(arch: Architecture, seed: u64) -> Result<Self, NnError> {
        arch.validate()?;
        let shapes = arch.param_shapes();
        let he = |fan_in: usize| (6.0 / fan_in as f64).sqrt();
        let limits = [
            he(arch.kernel * arch.kernel),
            0.0,
            he(arch.flatten_dim()),
            0.0,
            he(arch.fc1_units),
            0.0,
            (6.0 / (arch.fc2_units + 1) as f64).sqrt(),
            0.0,
        ];
        let mut i = 0u64;
        let tensors = shapes.map(|shape| {
            let limit = limits[i as usize];
            let mut r = rng::stream(seed, &[tags::INIT, i]);
            i += 1;
            if limit == 0.0 {
                Tensor::zeros(&shape)
            } else {
                uniform(&shape, limit, &mut r)
            }
        });
        Ok(Self {
            arch,
            params: Params::from_tensors(tensors),
        })
    }

    pub(crate) fn from_parts(arch: Architecture, params: Params<T>) -> Self {
        Self { arch, params }
    }

    pub fn arch(&self) -> &Architecture {
        &self.arch
    }

    pub fn cast<U: Scalar>(&self) -> CnnModel<U> {
        CnnModel {
            arch: self.arch.clone(),
            params: Params::from_tensors(self.params.tensors().map(|t| t.cast())),
        }
    }

    fn check_batch(&self, batch: &Tensor<T>) -> Result<usize, NnError> {
        let s = self.arch.input_side;
        let shape = batch.shape();
        if shape.len() != 4 || shape[1..] != [s, s, 1] {
            return Err(NnError::Shape(format!(
                "expected a [batch, {s}, {s}, 1] input, got {shape:?}"
            )));
        }
        Ok(shape[0])
    }

    fn image<'a>(&self, batch: &'a Tensor<T>, b: usize) -> &'a [T] {
        let px = self.arch.input_side * self.arch.input_side;
        &batch.data()[b * px..(b + 1) * px]
    }

    /// Conv, ReLU and 2×2 max pooling evaluated only on pooled cells whose
    /// receptive field holds a non-zero pixel.
    fn sparse_features(&self, img: &[T]) -> SparseFeatures<T> {
        let (s, k) = (self.arch.input_side, self.arch.kernel);
        let ps = self.arch.pool_side();
        let f = CONV_FILTERS;
        let mut active = vec![false; ps * ps];
        for (i, _) in img.iter().enumerate().filter(|(_, &v)| v != T::zero()) {
            let (r, c) = (i / s, i % s);
            let row = |v: usize| (v.saturating_sub(k - 1) / 2, (v.min(2 * ps - 1) / 2));
            let ((y0, y1), (x0, x1)) = (row(r), row(c));
            for py in y0..=y1.min(ps - 1) {
                for px in x0..=x1.min(ps - 1) {
                    active[py * ps + px] = true;
                }
            }
        }
        let cells: Vec<usize> = (0..ps * ps).filter(|&i| active[i]).collect();

        let (w, bias) = (self.params.conv_w.data(), self.params.conv_b.data());
        let mut values = vec![T::zero(); cells.len() * f];
        let mut argmax = vec![0u8; cells.len() * f];
        let mut cell = vec![T::zero(); f];
        for (j, &c) in cells.iter().enumerate() {
            let (py, px) = (c / ps, c % ps);
            let (out, arg) = (&mut values[j * f..(j + 1) * f], &mut argmax[j * f..(j + 1) * f]);
            for win in 0..4usize {
                let (cy, cx) = (2 * py + win / 2, 2 * px + win % 2);
                cell.copy_from_slice(bias);
                for ky in 0..k {
                    for kx in 0..k {
                        let p = img[(cy + ky) * s + cx + kx];
                        if p != T::zero() {
                            layers::axpy(&mut cell, p, &w[(ky * k + kx) * f..][..f]);
                        }
                    }
                }
                for ch in 0..f {
                    let v = if cell[ch] > T::zero() { cell[ch] } else { T::zero() };
                    if win == 0 || v > out[ch] {
                        out[ch] = v;
                        arg[ch] = win as u8;
                    }
                }
            }
        }
        SparseFeatures { cells, values, argmax }
    }

    fn forward_cached(&self, batch: &Tensor<T>, mode: Mode, r: &mut Rng) -> Result<Cache<T>, NnError> {
        let n = self.check_batch(batch)?;
        let p = &self.params;
        let (f, m) = (CONV_FILTERS, self.arch.fc1_units);
        let w1 = p.fc1_w.data();

        // fc1 applied to an all-background image, computed once per batch:
        // b1 + Σ_f relu(conv_b[f]) · Σ_cells W1[cell, f].
        let background: Vec<T> = p
            .conv_b
            .data()
            .iter()
            .map(|&b| if b > T::zero() { b } else { T::zero() })
            .collect();
        let features: Vec<SparseFeatures<T>> = (0..n).map(|b| self.sparse_features(self.image(batch, b))).collect();
        let occurrences = by_cell(&features);
        let any_background = background.iter().any(|&v| v != T::zero());

        // One pass over fc1: column sums for the background term, plus the
        // deviations of active cells.
        let mut column_sums = vec![T::zero(); f * m];
        let mut z1 = Tensor::zeros(&[n, m]);
        let z = z1.data_mut();
        let mut next = 0;
        for (cell, block) in w1.chunks_exact(f * m).enumerate() {
            if any_background {
                for (acc, &v) in column_sums.iter_mut().zip(block) {
                    *acc += v;
                }
            }
            while let Some(&(_, b, j)) = occurrences.get(next).filter(|o| o.0 == cell) {
                next += 1;
                for ch in 0..f {
                    let dev = features[b].values[j * f + ch] - background[ch];
                    if dev != T::zero() {
                        layers::axpy(&mut z[b * m..(b + 1) * m], dev, &block[ch * m..(ch + 1) * m]);
                    }
                }
            }
        }
        let mut base = p.fc1_b.data().to_vec();
        for ch in 0..f {
            if background[ch] != T::zero() {
                layers::axpy(&mut base, background[ch], &column_sums[ch * m..(ch + 1) * m]);
            }
        }
        for zrow in z.chunks_exact_mut(m) {
            layers::axpy(zrow, T::one(), &base);
        }

        let (a1, mask) = layers::dropout(&layers::relu(&z1), self.arch.dropout, mode, r)?;
        let z2 = layers::dense(&a1, &p.fc2_w, p.fc2_b.data())?;
        let a2 = layers::relu(&z2);
        let z3 = layers::dense(&a2, &p.fc3_w, p.fc3_b.data())?;
        let out = layers::sigmoid(&z3);
        Ok(Cache {
            features,
            occurrences,
            background,
            column_sums,
            z1,
            mask,
            a1,
            z2,
            a2,
            out,
        })
    }

    /// Probabilities `[batch, 1]`. `rng` feeds the dropout mask in train
    /// mode and is not touched in eval mode.
    pub fn forward(&self, batch: &Tensor<T>, mode: Mode, rng: &mut Rng) -> Result<Tensor<T>, NnError> {
        Ok(self.forward_cached(batch, mode, rng)?.out)
    }

    pub fn predict(&self, batch: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        self.forward(batch, Mode::Eval, &mut rng::stream(0, &[]))
    }

    /// Mean binary cross-entropy of the batch and its gradient with respect
    /// to every parameter.
    pub fn loss_and_grad(
        &self,
        batch: &Tensor<T>,
        targets: &[T],
        mode: Mode,
        rng: &mut Rng,
    ) -> Result<Backprop<T>, NnError> {
        let mut grads = Params::zeros(&self.arch);
        let (loss, predictions) = self.loss_and_grad_into(batch, targets, mode, rng, &mut grads)?;
        Ok(Backprop {
            loss,
            predictions,
            grads,
        })
    }

    /// [`Self::loss_and_grad`] writing into an existing gradient buffer,
    /// which must have this model's shapes. Every element is overwritten.
    /// Returns the loss and the batch predictions.
    pub fn loss_and_grad_into(
        &self,
        batch: &Tensor<T>,
        targets: &[T],
        mode: Mode,
        rng: &mut Rng,
        grads: &mut Params<T>,
    ) -> Result<(T, Vec<T>), NnError> {
        let shapes = self.arch.param_shapes();
        if grads
            .tensors()
            .iter()
            .zip(&shapes)
            .any(|(t, s)| t.shape() != s.as_slice())
        {
            return Err(NnError::Shape("gradient buffer does not match the architecture".into()));
        }
        let c = self.forward_cached(batch, mode, rng)?;
        let n = c.out.len();
        let (loss, _) = layers::bce_loss(c.out.data(), targets)?;
        let p = &self.params;

        // Sigmoid and cross-entropy fold into (p - y) / n at the logit.
        let scale = T::of(n as f64);
        let g3 = Tensor::new(
            vec![n, 1],
            c.out
                .data()
                .iter()
                .zip(targets)
                .map(|(&o, &y)| (o - y) / scale)
                .collect(),
        )?;
        let d3 = layers::dense_backward(&c.a2, &p.fc3_w, &g3, InputGrad::All)?;
        let dz2 = layers::relu_backward(&c.z2, d3.input.as_ref().expect("requested"));
        let d2 = layers::dense_backward(&c.a1, &p.fc2_w, &dz2, InputGrad::All)?;
        let da1 = layers::dropout_backward(d2.input.as_ref().expect("requested"), c.mask.as_deref());
        let dz1 = layers::relu_backward(&c.z1, &da1);
        let (f, m, k, s) = (
            CONV_FILTERS,
            self.arch.fc1_units,
            self.arch.kernel,
            self.arch.input_side,
        );
        let ps = self.arch.pool_side();
        let w1 = p.fc1_w.data();
        let bg = &c.background;

        // dW1 = Σ_b feat_b ⊗ dz1_b, split into the shared background term and
        // the per-image deviations on active cells.
        let mut total = vec![T::zero(); m];
        for g in dz1.data().chunks_exact(m) {
            layers::axpy(&mut total, T::one(), g);
        }
        let (mut conv_w, mut conv_b) = (vec![T::zero(); k * k * f], vec![T::zero(); f]);
        // Background cells feed the conv bias through their window's first
        // element; their inputs are zero, so the filters get nothing.
        for ch in 0..f {
            if bg[ch] != T::zero() {
                conv_b[ch] += layers::dot(&total, &c.column_sums[ch * m..(ch + 1) * m]);
            }
        }
        let dz = dz1.data();
        let mut next = 0;
        for (cell, block) in grads.fc1_w.data_mut().chunks_exact_mut(f * m).enumerate() {
            for (ch, out) in block.chunks_exact_mut(m).enumerate() {
                if bg[ch] == T::zero() {
                    out.fill(T::zero());
                } else {
                    for (o, &t) in out.iter_mut().zip(&total) {
                        *o = bg[ch] * t;
                    }
                }
            }
            let (py, px) = (cell / ps, cell % ps);
            while let Some(&(_, b, j)) = c.occurrences.get(next).filter(|o| o.0 == cell) {
                next += 1;
                let (sf, g, img) = (&c.features[b], &dz[b * m..(b + 1) * m], self.image(batch, b));
                for ch in 0..f {
                    let (v, row) = (sf.values[j * f + ch], (cell * f + ch) * m);
                    let dev = v - bg[ch];
                    if dev != T::zero() {
                        layers::axpy(&mut block[ch * m..(ch + 1) * m], dev, g);
                    }
                    if v == T::zero() && bg[ch] == T::zero() {
                        continue;
                    }
                    let dfeat = layers::dot(g, &w1[row..row + m]);
                    if bg[ch] != T::zero() {
                        // Undo the background credit this cell received above.
                        conv_b[ch] -= dfeat;
                    }
                    // Zero pooled values sit behind a closed ReLU.
                    if v == T::zero() {
                        continue;
                    }
                    conv_b[ch] += dfeat;
                    let win = sf.argmax[j * f + ch] as usize;
                    let (cy, cx) = (2 * py + win / 2, 2 * px + win % 2);
                    for ky in 0..k {
                        for kx in 0..k {
                            let pix = img[(cy + ky) * s + cx + kx];
                            if pix != T::zero() {
                                conv_w[(ky * k + kx) * f + ch] += pix * dfeat;
                            }
                        }
                    }
                }
            }
        }
        grads.conv_w.data_mut().copy_from_slice(&conv_w);
        grads.conv_b.data_mut().copy_from_slice(&conv_b);
        grads.fc1_b.data_mut().copy_from_slice(&total);
        grads.fc2_w = d2.weights;
        grads.fc2_b.data_mut().copy_from_slice(&d2.bias);
        grads.fc3_w = d3.weights;
        grads.fc3_b.data_mut().copy_from_slice(&d3.bias);
        Ok((loss, c.out.into_data()))
    }
}

/// Active cells of every image as `(cell, image, index in that image)`,
/// ordered by cell and then image, so each block of fc1 rows is visited once
/// per batch.
fn by_cell<T>(features: &[SparseFeatures<T>]) -> Vec<(usize, usize, usize)> {
    let mut v: Vec<_> = features
        .iter()
        .enumerate()
        .flat_map(|(b, sf)| sf.cells.iter().enumerate().map(move |(j, &c)| (c, b, j)))
        .collect();
    v.sort_unstable();
    v
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> Architecture {
        Architecture {
            input_side: 16,
            fc1_units: 8,
            fc2_units: 4,
            ..Architecture::default()
        }
    }

    fn batch(n: usize, side: usize, seed: u64) -> Tensor<f64> {
        let mut r = rng::stream(seed, &[]);
        Tensor::from_fn(&[n, side, side, 1], |_| {
            if r.gen_bool(0.3) {
                r.gen_range(0.0..1.0)
            } else {
                0.0
            }
        })
    }

    #[test]
    fn default_shape_trace() {
        let a = Architecture::default();
        assert_eq!(a.conv_side(), 126);
        assert_eq!(a.pool_side(), 63);
        assert_eq!(a.flatten_dim(), 127_008);
        assert_eq!(a.param_count(), 8_131_009);
    }

    #[test]
    fn outputs_are_probabilities_and_eval_is_pure() {
        let m = CnnModel::<f64>::new(small(), 3).unwrap();
        let x = batch(5, 16, 1);
        let y = m.predict(&x).unwrap();
        assert_eq!(y.shape(), [5, 1]);
        assert!(y.data().iter().all(|&v| v > 0.0 && v < 1.0));
        assert_eq!(y, m.predict(&x).unwrap());
    }

    #[test]
    fn wrong_input_shape() {
        let m = CnnModel::<f32>::new(small(), 3).unwrap();
        assert!(matches!(
            m.predict(&Tensor::zeros(&[1, 15, 15, 1])),
            Err(NnError::Shape(_))
        ));
    }

    #[test]
    fn forward_matches_layer_composition() {
        let mut m = CnnModel::<f64>::new(small(), 5).unwrap();
        let mut r = rng::stream(9, &[]);
        for t in [&mut m.params.conv_b, &mut m.params.fc1_b, &mut m.params.fc2_b] {
            t.data_mut().iter_mut().for_each(|v| *v = r.gen_range(-0.3..0.3));
        }
        let x = batch(3, 16, 2);
        let p = &m.params;
        let conv = layers::relu(&layers::conv2d(&x, &p.conv_w, p.conv_b.data()).unwrap());
        let pooled = layers::maxpool2x2(&conv).unwrap().output;
        let flat = pooled.reshape(vec![3, m.arch().flatten_dim()]).unwrap();
        let a1 = layers::relu(&layers::dense(&flat, &p.fc1_w, p.fc1_b.data()).unwrap());
        let a2 = layers::relu(&layers::dense(&a1, &p.fc2_w, p.fc2_b.data()).unwrap());
        let out = layers::sigmoid(&layers::dense(&a2, &p.fc3_w, p.fc3_b.data()).unwrap());
        let got = m.predict(&x).unwrap();
        for (a, b) in out.data().iter().zip(got.data()) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn invalid_architectures() {
        let mut a = small();
        a.dropout = 1.0;
        assert!(CnnModel::<f32>::new(a, 0).is_err());
        let mut a = small();
        a.input_side = 3;
        assert!(CnnModel::<f32>::new(a, 0).is_err());
    }
}
