use rand::Rng;
use rayon::prelude::*;

use super::encoding::{encoded_dim, positional_encoding, positional_encoding_derivative};
use super::offsets::Offsets;
use crate::error::{Error, Result};
use crate::real::Real;

/// Rows per independent block; fixed so reductions never depend on the
/// number of worker threads.
const CHUNK_ROWS: usize = 512;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DeformNetConfig {
    /// Number of hidden ReLU layers.
    pub depth: usize,
    pub width: usize,
    /// Hidden layer (0-based) that receives `[encoded input, features]`.
    pub skip_layer: Option<usize>,
    pub pos_levels: usize,
    pub time_levels: usize,
}

impl Default for DeformNetConfig {
    fn default() -> Self {
        DeformNetConfig {
            depth: 8,
            width: 256,
            skip_layer: Some(4),
            pos_levels: 10,
            time_levels: 6,
        }
    }
}

impl DeformNetConfig {
    pub fn input_dim(&self) -> usize {
        encoded_dim(3, self.pos_levels) + encoded_dim(1, self.time_levels)
    }

    pub fn layer_input_dim(&self, layer: usize) -> usize {
        if layer == 0 {
            self.input_dim()
        } else if Some(layer) == self.skip_layer {
            self.width + self.input_dim()
        } else {
            self.width
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 || self.width == 0 || self.pos_levels == 0 || self.time_levels == 0 {
            return Err(Error::Config("deformation network dimensions must be positive".into()));
        }
        if let Some(s) = self.skip_layer {
            if s == 0 || s >= self.depth {
                return Err(Error::Config(format!(
                    "skip layer {s} must lie in 1..{} (depth {})",
                    self.depth, self.depth
                )));
            }
        }
        Ok(())
    }
}

/// Dense layer `y = W x + b` with `W` stored row-major as `out × in`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear<T: Real> {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Real> Linear<T> {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Linear {
            in_dim,
            out_dim,
            weight: vec![T::zero(); in_dim * out_dim],
            bias: vec![T::zero(); out_dim],
        }
    }

    /// `U(-1/√fan_in, 1/√fan_in)` for weights and biases.
    pub fn uniform<R: Rng + ?Sized>(in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (in_dim as f64).sqrt();
        let mut draw = || T::lit(rng.random_range(-bound..bound));
        let weight = (0..in_dim * out_dim).map(|_| draw()).collect();
        let bias = (0..out_dim).map(|_| draw()).collect();
        Linear {
            in_dim,
            out_dim,
            weight,
            bias,
        }
    }

    /// `x (rows × in) -> x Wᵀ + b (rows × out)`.
    fn forward(&self, x: &[T], rows: usize) -> Vec<T> {
        debug_assert_eq!(x.len(), rows * self.in_dim);
        let mut y = Vec::with_capacity(rows * self.out_dim);
        for _ in 0..rows {
            y.extend_from_slice(&self.bias);
        }
        // SAFETY: shapes checked above; y does not alias x or the weights.
        unsafe {
            T::gemm(
                rows,
                self.in_dim,
                self.out_dim,
                T::one(),
                x.as_ptr(),
                self.in_dim as isize,
                1,
                self.weight.as_ptr(),
                1,
                self.in_dim as isize,
                T::one(),
                y.as_mut_ptr(),
                self.out_dim as isize,
                1,
            );
        }
        y
    }

    /// Accumulates `dW += dyᵀ x`, `db += Σ dy` into `grad`; returns `dy W`
    /// when `want_input` is set.
    fn backward(&self, x: &[T], dy: &[T], rows: usize, grad: &mut Linear<T>, want_input: bool) -> Option<Vec<T>> {
        let (i, o) = (self.in_dim, self.out_dim);
        // SAFETY: all buffers are sized from (rows, i, o) and distinct.
        unsafe {
            T::gemm(
                o,
                rows,
                i,
                T::one(),
                dy.as_ptr(),
                1,
                o as isize,
                x.as_ptr(),
                i as isize,
                1,
                T::one(),
                grad.weight.as_mut_ptr(),
                i as isize,
                1,
            );
        }
        for r in 0..rows {
            for (b, d) in grad.bias.iter_mut().zip(&dy[r * o..(r + 1) * o]) {
                *b += *d;
            }
        }
        if !want_input {
            return None;
        }
        let mut dx = vec![T::zero(); rows * i];
        // SAFETY: as above.
        unsafe {
            T::gemm(
                rows,
                o,
                i,
                T::one(),
                dy.as_ptr(),
                o as isize,
                1,
                self.weight.as_ptr(),
                i as isize,
                1,
                T::zero(),
                dx.as_mut_ptr(),
                i as isize,
                1,
            );
        }
        Some(dx)
    }

    fn add(&mut self, other: &Linear<T>) {
        for (a, b) in self.weight.iter_mut().zip(&other.weight) {
            *a += *b;
        }
        for (a, b) in self.bias.iter_mut().zip(&other.bias) {
            *a += *b;
        }
    }
}

/// MLP `(γ(x), γ(t)) -> (δx, δr, δs)`: `depth` ReLU layers of `width`
/// units, the encoded input re-concatenated at `skip_layer`, and three
/// linear heads.
#[derive(Clone, Debug, PartialEq)]
pub struct DeformNet<T: Real = f32> {
    pub config: DeformNetConfig,
    pub hidden: Vec<Linear<T>>,
    pub head_xyz: Linear<T>,
    pub head_rot: Linear<T>,
    pub head_scale: Linear<T>,
}

/// Gradient container with the same shapes as the network.
pub type DeformGrads<T> = DeformNet<T>;

struct ChunkCache<T> {
    rows: usize,
    input: Vec<T>,
    /// Concatenated input of the skip layer, if any.
    skip_input: Option<Vec<T>>,
    activations: Vec<Vec<T>>,
}

/// Activations retained by [`DeformNet::forward`].
pub struct DeformCache<T: Real> {
    chunks: Vec<ChunkCache<T>>,
    /// Time actually encoded (timestamp plus noise).
    pub time: T,
}

impl<T: Real> DeformCache<T> {
    /// Hash of which hidden units were active. Equal patterns mean two
    /// forward passes took the same piecewise-linear branch.
    pub fn activation_pattern(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for chunk in &self.chunks {
            for layer in &chunk.activations {
                for v in layer {
                    h ^= (*v > T::zero()) as u64;
                    h = h.wrapping_mul(0x0000_0100_0000_01b3);
                }
            }
        }
        h
    }
}

impl<T: Real> DeformNet<T> {
    /// Hidden layers drawn from `rng`, heads zero so the initial
    /// deformation is the identity.
    pub fn new<R: Rng + ?Sized>(config: DeformNetConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let hidden = (0..config.depth)
            .map(|l| Linear::uniform(config.layer_input_dim(l), config.width, rng))
            .collect();
        Ok(DeformNet {
            config,
            hidden,
            head_xyz: Linear::zeros(config.width, 3),
            head_rot: Linear::zeros(config.width, 4),
            head_scale: Linear::zeros(config.width, 3),
        })
    }

    pub fn zeros_like(&self) -> Self {
        DeformNet {
            config: self.config,
            hidden: self.hidden.iter().map(|l| Linear::zeros(l.in_dim, l.out_dim)).collect(),
            head_xyz: Linear::zeros(self.config.width, 3),
            head_rot: Linear::zeros(self.config.width, 4),
            head_scale: Linear::zeros(self.config.width, 3),
        }
    }

    /// Layers in a fixed order: hidden layers, then the xyz, rotation and
    /// scale heads.
    pub fn layers(&self) -> Vec<(String, &Linear<T>)> {
        let mut v: Vec<(String, &Linear<T>)> = self
            .hidden
            .iter()
            .enumerate()
            .map(|(i, l)| (format!("hidden{i}"), l))
            .collect();
        v.push(("head_xyz".into(), &self.head_xyz));
        v.push(("head_rot".into(), &self.head_rot));
        v.push(("head_scale".into(), &self.head_scale));
        v
    }

    pub fn layers_mut(&mut self) -> Vec<&mut Linear<T>> {
        let mut v: Vec<&mut Linear<T>> = self.hidden.iter_mut().collect();
        v.push(&mut self.head_xyz);
        v.push(&mut self.head_rot);
        v.push(&mut self.head_scale);
        v
    }

    pub fn parameter_count(&self) -> usize {
        self.layers().iter().map(|(_, l)| l.weight.len() + l.bias.len()).sum()
    }

    /// FNV-1a over the bit patterns of every weight.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for (_, l) in self.layers() {
            for v in l.weight.iter().chain(&l.bias) {
                for b in v.to_f64().to_bits().to_le_bytes() {
                    h ^= b as u64;
                    h = h.wrapping_mul(0x0000_0100_0000_01b3);
                }
            }
        }
        h
    }

    pub fn cast<U: Real>(&self) -> DeformNet<U> {
        let c = |l: &Linear<T>| Linear {
            in_dim: l.in_dim,
            out_dim: l.out_dim,
            weight: l.weight.iter().map(|v| U::lit(v.to_f64())).collect(),
            bias: l.bias.iter().map(|v| U::lit(v.to_f64())).collect(),
        };
        DeformNet {
            config: self.config,
            hidden: self.hidden.iter().map(c).collect(),
            head_xyz: c(&self.head_xyz),
            head_rot: c(&self.head_rot),
            head_scale: c(&self.head_scale),
        }
    }

    fn encode_rows(&self, positions: &[[T; 3]], time_code: &[T]) -> Vec<T> {
        let in_dim = self.config.input_dim();
        let pos_dim = encoded_dim(3, self.config.pos_levels);
        let mut x = vec![T::zero(); positions.len() * in_dim];
        for (row, p) in x.chunks_exact_mut(in_dim).zip(positions) {
            positional_encoding(p, self.config.pos_levels, &mut row[..pos_dim]);
            row[pos_dim..].copy_from_slice(time_code);
        }
        x
    }

    fn forward_chunk(&self, positions: &[[T; 3]], time_code: &[T]) -> (ChunkCache<T>, Vec<T>) {
        let rows = positions.len();
        let input = self.encode_rows(positions, time_code);
        let in_dim = self.config.input_dim();
        let mut activations: Vec<Vec<T>> = Vec::with_capacity(self.hidden.len());
        let mut skip_input = None;
        for (l, layer) in self.hidden.iter().enumerate() {
            let mut z = if l == 0 {
                layer.forward(&input, rows)
            } else if Some(l) == self.config.skip_layer {
                let prev = &activations[l - 1];
                let w = self.config.width;
                let mut cat = Vec::with_capacity(rows * (in_dim + w));
                for r in 0..rows {
                    cat.extend_from_slice(&input[r * in_dim..(r + 1) * in_dim]);
                    cat.extend_from_slice(&prev[r * w..(r + 1) * w]);
                }
                let z = layer.forward(&cat, rows);
                skip_input = Some(cat);
                z
            } else {
                layer.forward(&activations[l - 1], rows)
            };
            for v in z.iter_mut() {
                if *v < T::zero() {
                    *v = T::zero();
                }
            }
            activations.push(z);
        }
        let feat = activations.last().expect("depth ≥ 1");
        let mut out = Vec::with_capacity(rows * 10);
        let (dx, dr, ds) = (
            self.head_xyz.forward(feat, rows),
            self.head_rot.forward(feat, rows),
            self.head_scale.forward(feat, rows),
        );
        for r in 0..rows {
            out.extend_from_slice(&dx[r * 3..r * 3 + 3]);
            out.extend_from_slice(&dr[r * 4..r * 4 + 4]);
            out.extend_from_slice(&ds[r * 3..r * 3 + 3]);
        }
        (
            ChunkCache {
                rows,
                input,
                skip_input,
                activations,
            },
            out,
        )
    }

    /// Offsets for every position at time `t + noise`. Positions enter only
    /// through the encoding and receive no gradient in
    /// [`DeformNet::backward`].
    pub fn forward(&self, positions: &[[T; 3]], t: T, noise: T) -> (Offsets<T>, DeformCache<T>) {
        let time = t + noise;
        let mut time_code = vec![T::zero(); encoded_dim(1, self.config.time_levels)];
        positional_encoding(&[time], self.config.time_levels, &mut time_code);

        let results: Vec<(ChunkCache<T>, Vec<T>)> = positions
            .par_chunks(CHUNK_ROWS)
            .map(|chunk| self.forward_chunk(chunk, &time_code))
            .collect();

        let n = positions.len();
        let mut offsets = Offsets::zeros(n);
        let mut chunks = Vec::with_capacity(results.len());
        let mut row = 0;
        for (cache, out) in results {
            for r in 0..cache.rows {
                let o = &out[r * 10..r * 10 + 10];
                offsets.xyz[row] = [o[0], o[1], o[2]];
                offsets.rot[row] = [o[3], o[4], o[5], o[6]];
                offsets.scale[row] = [o[7], o[8], o[9]];
                row += 1;
            }
            chunks.push(cache);
        }
        (offsets, DeformCache { chunks, time })
    }

    fn backward_chunk(
        &self,
        cache: &ChunkCache<T>,
        d_out: &Offsets<T>,
        start: usize,
        want_input: bool,
    ) -> (DeformGrads<T>, Option<Vec<T>>) {
        let rows = cache.rows;
        let w = self.config.width;
        let in_dim = self.config.input_dim();
        let mut grads = self.zeros_like();
        let feat = cache.activations.last().expect("depth ≥ 1");

        let flat = |f: &dyn Fn(usize) -> Vec<T>| -> Vec<T> { (0..rows).flat_map(f).collect() };
        let d_xyz = flat(&|r| d_out.xyz[start + r].to_vec());
        let d_rot = flat(&|r| d_out.rot[start + r].to_vec());
        let d_scale = flat(&|r| d_out.scale[start + r].to_vec());

        let mut d_h = vec![T::zero(); rows * w];
        for (head, grad, dy) in [
            (&self.head_xyz, &mut grads.head_xyz, &d_xyz),
            (&self.head_rot, &mut grads.head_rot, &d_rot),
            (&self.head_scale, &mut grads.head_scale, &d_scale),
        ] {
            let dx = head.backward(feat, dy, rows, grad, true).expect("requested");
            for (a, b) in d_h.iter_mut().zip(&dx) {
                *a += *b;
            }
        }

        let mut d_input = want_input.then(|| vec![T::zero(); rows * in_dim]);
        for l in (0..self.hidden.len()).rev() {
            let act = &cache.activations[l];
            for (g, a) in d_h.iter_mut().zip(act) {
                if !(*a > T::zero()) {
                    *g = T::zero();
                }
            }
            let x: &[T] = if l == 0 {
                &cache.input
            } else if Some(l) == self.config.skip_layer {
                cache.skip_input.as_ref().expect("skip layer caches its input")
            } else {
                &cache.activations[l - 1]
            };
            let need_dx = l > 0 || want_input;
            let dx = self.hidden[l].backward(x, &d_h, rows, &mut grads.hidden[l], need_dx);
            let Some(dx) = dx else { break };
            if l == 0 {
                if let Some(di) = d_input.as_mut() {
                    for (a, b) in di.iter_mut().zip(&dx) {
                        *a += *b;
                    }
                }
            } else if Some(l) == self.config.skip_layer {
                let mut next = vec![T::zero(); rows * w];
                for r in 0..rows {
                    let src = &dx[r * (in_dim + w)..(r + 1) * (in_dim + w)];
                    if let Some(di) = d_input.as_mut() {
                        for (a, b) in di[r * in_dim..(r + 1) * in_dim].iter_mut().zip(&src[..in_dim]) {
                            *a += *b;
                        }
                    }
                    next[r * w..(r + 1) * w].copy_from_slice(&src[in_dim..]);
                }
                d_h = next;
            } else {
                d_h = dx;
            }
        }
        (grads, d_input)
    }

    /// Weight gradients for upstream offset gradients. With `want_input`,
    /// also returns `dL/d(encoded input)` row-major (`N × input_dim`).
    pub fn backward(
        &self,
        cache: &DeformCache<T>,
        d_out: &Offsets<T>,
        want_input: bool,
    ) -> (DeformGrads<T>, Option<Vec<T>>) {
        let starts: Vec<usize> = cache
            .chunks
            .iter()
            .scan(0, |acc, c| {
                let s = *acc;
                *acc += c.rows;
                Some(s)
            })
            .collect();
        let parts: Vec<(DeformGrads<T>, Option<Vec<T>>)> = cache
            .chunks
            .par_iter()
            .zip(starts.par_iter())
            .map(|(c, &s)| self.backward_chunk(c, d_out, s, want_input))
            .collect();
        let mut total = self.zeros_like();
        let mut d_input = want_input.then(Vec::new);
        for (g, di) in parts {
            for (a, b) in total.layers_mut().into_iter().zip(g.layers()) {
                a.add(b.1);
            }
            if let (Some(acc), Some(di)) = (d_input.as_mut(), di) {
                acc.extend(di);
            }
        }
        (total, d_input)
    }

    /// Chains `dL/d(encoded input)` onto the encoded time value.
    pub fn time_gradient(&self, d_input: &[T], time: T) -> T {
        let in_dim = self.config.input_dim();
        let pos_dim = encoded_dim(3, self.config.pos_levels);
        let mut d_code = vec![T::zero(); in_dim - pos_dim];
        positional_encoding_derivative(&[time], self.config.time_levels, &mut d_code);
        let mut acc = T::zero();
        for row in d_input.chunks_exact(in_dim) {
            for (g, d) in row[pos_dim..].iter().zip(&d_code) {
                acc += *g * *d;
            }
        }
        acc
    }
}
