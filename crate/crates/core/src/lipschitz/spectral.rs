//! Spectrally normalized ReLU networks.
//!
//! A network `f = φ_k ∘ … ∘ φ_1` with 1-Lipschitz activations is Lipschitz
//! with constant at most the product of its layers' operator norms. Training
//! rescales each weight matrix after every optimizer step so that its norm
//! stays within `L^{1/k}`, which certifies the whole network at `L`.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng as _;

use super::{check_budget, FitError, Result, Samples};
use crate::matrix::Matrix;
use crate::oracle::LossFn;
use crate::predictor::Predictor;
use crate::rng;

/// Default power-iteration count.
pub const POWER_ITERATIONS: usize = 200;
const POWER_TOLERANCE: f64 = 1e-10;

/// Largest singular value by power iteration on `WᵀW` from a fixed start.
pub fn spectral_norm(matrix: &Matrix) -> f64 {
    spectral_norm_iters(matrix, POWER_ITERATIONS)
}

pub fn spectral_norm_iters(matrix: &Matrix, iters: usize) -> f64 {
    if matrix.is_empty() || matrix.max_abs() == 0.0 {
        return 0.0;
    }
    // golden-ratio fractions: a fixed start with no special structure
    let mut v: Vec<f64> = (0..matrix.cols())
        .map(|i| {
            let g = (i + 1) as f64 * 0.618_033_988_749_895;
            0.5 + (g - libm::floor(g))
        })
        .collect();
    normalize(&mut v);
    let mut u = vec![0.0; matrix.rows()];
    let mut sigma = 0.0;
    for _ in 0..iters.max(1) {
        matrix.mul_vec_into(&v, &mut u);
        let next_sigma = norm(&u);
        matrix.tr_mul_vec_into(&u, &mut v);
        if norm(&v) == 0.0 {
            return next_sigma;
        }
        normalize(&mut v);
        let converged = libm::fabs(next_sigma - sigma) <= POWER_TOLERANCE * next_sigma;
        sigma = next_sigma;
        if converged {
            break;
        }
    }
    matrix.mul_vec_into(&v, &mut u);
    norm(&u).max(sigma)
}

fn norm(v: &[f64]) -> f64 {
    libm::sqrt(v.iter().map(|x| x * x).sum())
}

fn normalize(v: &mut [f64]) {
    let n = norm(v);
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}

/// `matrix · min(1, cap / σ_max)`.
pub fn project_spectral(matrix: &Matrix, cap: f64) -> Matrix {
    let mut m = matrix.clone();
    project_in_place(&mut m, cap);
    m
}

fn project_in_place(matrix: &mut Matrix, cap: f64) {
    let sigma = spectral_norm(matrix);
    if sigma > cap {
        matrix.scale(cap / sigma);
    }
}

/// One affine layer `x ↦ Wx + b` with its norm cap.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weights: Matrix,
    pub bias: Vec<f64>,
    pub cap: f64,
}

/// Affine layers with ReLU between them (none after the last); predictions
/// are clipped to `[0,1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralMlp {
    layers: Vec<Layer>,
    budget: f64,
}

impl SpectralMlp {
    /// Assembles a network from layers; consecutive shapes must chain.
    pub fn from_layers(layers: Vec<Layer>, budget: f64) -> Result<Self> {
        check_budget(budget)?;
        if layers.is_empty() {
            return Err(FitError::Dimension("a network needs at least one layer".into()));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.bias.len() != l.weights.rows() {
                return Err(FitError::Dimension(alloc::format!("layer {i} bias length")));
            }
            if i > 0 && layers[i - 1].weights.rows() != l.weights.cols() {
                return Err(FitError::Dimension(alloc::format!("layer {i} input does not match layer {}", i - 1)));
            }
        }
        Ok(Self { layers, budget })
    }

    /// Random initialization with every layer projected to `budget^{1/k}`.
    pub fn init(input: usize, width: usize, output: usize, depth: usize, budget: f64, seed: u64) -> Result<Self> {
        check_budget(budget)?;
        if depth == 0 || input == 0 || output == 0 || (depth > 1 && width == 0) {
            return Err(FitError::Dimension("network shape must be positive".into()));
        }
        let cap = libm::pow(budget, 1.0 / depth as f64);
        let mut rng = rng::seeded(seed);
        let layers = (0..depth)
            .map(|i| {
                let fan_in = if i == 0 { input } else { width };
                let fan_out = if i + 1 == depth { output } else { width };
                let limit = libm::sqrt(6.0 / (fan_in + fan_out) as f64);
                let data = (0..fan_in * fan_out).map(|_| rng.gen_range(-limit..limit)).collect();
                let weights = project_spectral(&Matrix::from_vec(fan_out, fan_in, data), cap);
                Layer { weights, bias: vec![0.0; fan_out], cap }
            })
            .collect();
        Ok(Self { layers, budget })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn budget(&self) -> f64 {
        self.budget
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weights.cols()
    }

    /// Rescales every layer to its cap.
    pub fn project(&mut self) {
        for l in &mut self.layers {
            project_in_place(&mut l.weights, l.cap);
        }
    }

    /// Network output before clipping.
    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut h = x.to_vec();
        for (i, l) in self.layers.iter().enumerate() {
            let mut next = l.weights.mul_vec(&h);
            for (n, b) in next.iter_mut().zip(&l.bias) {
                *n += b;
            }
            if i + 1 < self.layers.len() {
                next.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            h = next;
        }
        h
    }

    /// Mean loss of the unclipped output over the selected samples, and its
    /// gradient with respect to every weight and bias.
    pub fn loss_and_gradient(&self, samples: &Samples, indices: &[usize], loss: &LossFn) -> (f64, Vec<Layer>) {
        let mut grads: Vec<Layer> = self
            .layers
            .iter()
            .map(|l| Layer {
                weights: Matrix::zeros(l.weights.rows(), l.weights.cols()),
                bias: vec![0.0; l.bias.len()],
                cap: l.cap,
            })
            .collect();
        let scale = 1.0 / indices.len().max(1) as f64;
        let mut total = 0.0;
        let mut activations: Vec<Vec<f64>> = Vec::with_capacity(self.layers.len() + 1);
        for &i in indices {
            let (x, y) = (samples.x(i), samples.y(i));
            activations.clear();
            activations.push(x.to_vec());
            for (k, l) in self.layers.iter().enumerate() {
                let mut z = l.weights.mul_vec(activations.last().expect("input pushed"));
                for (v, b) in z.iter_mut().zip(&l.bias) {
                    *v += b;
                }
                if k + 1 < self.layers.len() {
                    z.iter_mut().for_each(|v| *v = v.max(0.0));
                }
                activations.push(z);
            }
            let out = activations.last().expect("output pushed");
            total += loss.value(out, y);
            let mut delta: Vec<f64> = out.iter().zip(y).map(|(o, t)| loss.coord_grad(*o, *t) * scale).collect();
            for k in (0..self.layers.len()).rev() {
                let input = &activations[k];
                let g = &mut grads[k];
                for (r, d) in delta.iter().enumerate() {
                    g.bias[r] += d;
                    for (w, a) in g.weights.row_mut(r).iter_mut().zip(input) {
                        *w += d * a;
                    }
                }
                if k > 0 {
                    let mut back = self.layers[k].weights.tr_mul_vec(&delta);
                    // ReLU derivative from the post-activation value
                    for (b, a) in back.iter_mut().zip(input) {
                        if *a <= 0.0 {
                            *b = 0.0;
                        }
                    }
                    delta = back;
                }
            }
        }
        (total * scale, grads)
    }
}

impl Predictor for SpectralMlp {
    fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.weights.rows())
    }

    fn predict_into(&self, x: &[f64], out: &mut [f64]) {
        for (o, v) in out.iter_mut().zip(self.forward(x)) {
            *o = v.clamp(0.0, 1.0);
        }
    }
}

/// Product of the layers' spectral norms.
pub fn model_lipschitz_bound(mlp: &SpectralMlp) -> f64 {
    mlp.layers.iter().map(|l| spectral_norm(&l.weights)).product()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MlpConfig {
    pub budget: f64,
    pub depth: usize,
    pub width: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for MlpConfig {
    fn default() -> Self {
        Self { budget: 1.0, depth: 2, width: 16, epochs: 200, batch_size: 32, learning_rate: 1e-2, seed: 0 }
    }
}

/// Mini-batch training with Adam steps, each followed by spectral
/// projection of every layer. Returns the iterate with the lowest empirical
/// loss (clipped predictions) seen at epoch boundaries.
pub fn mlp_fit(samples: &Samples, config: &MlpConfig, loss: &LossFn) -> Result<SpectralMlp> {
    if samples.is_empty() {
        return Err(FitError::EmptySample);
    }
    let mut net =
        SpectralMlp::init(samples.dim(), config.width, samples.out(), config.depth, config.budget, config.seed)?;
    // the output bias absorbs the best constant from the start
    let last = net.layers.len() - 1;
    for j in 0..samples.out() {
        let mean = samples.iter().map(|(_, y)| y[j]).sum::<f64>() / samples.len() as f64;
        net.layers[last].bias[j] = mean;
    }

    let mut rng = rng::stream(config.seed, 1);
    let mut adam = Adam::new(&net, config.learning_rate);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut best = (samples.empirical_loss(&net, loss), net.clone());
    let batch = config.batch_size.max(1);
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(batch) {
            let (_, grads) = net.loss_and_gradient(samples, chunk, loss);
            adam.step(&mut net, &grads);
            net.project();
        }
        let current = samples.empirical_loss(&net, loss);
        if current < best.0 {
            best = (current, net.clone());
        }
    }
    Ok(best.1)
}

struct Adam {
    lr: f64,
    t: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(net: &SpectralMlp, lr: f64) -> Self {
        let sizes: Vec<usize> = net.layers.iter().map(|l| l.weights.as_slice().len() + l.bias.len()).collect();
        Self {
            lr,
            t: 0,
            m: sizes.iter().map(|&s| vec![0.0; s]).collect(),
            v: sizes.iter().map(|&s| vec![0.0; s]).collect(),
        }
    }

    fn step(&mut self, net: &mut SpectralMlp, grads: &[Layer]) {
        self.t += 1;
        let c1 = 1.0 - libm::pow(Self::BETA1, self.t as f64);
        let c2 = 1.0 - libm::pow(Self::BETA2, self.t as f64);
        for (k, (layer, grad)) in net.layers.iter_mut().zip(grads).enumerate() {
            let params = layer.weights.as_mut_slice().iter_mut().chain(layer.bias.iter_mut());
            let gs = grad.weights.as_slice().iter().chain(grad.bias.iter());
            for (((p, g), m), v) in params.zip(gs).zip(self.m[k].iter_mut()).zip(self.v[k].iter_mut()) {
                *m = Self::BETA1 * *m + (1.0 - Self::BETA1) * g;
                *v = Self::BETA2 * *v + (1.0 - Self::BETA2) * g * g;
                *p -= self.lr * (*m / c1) / (libm::sqrt(*v / c2) + Self::EPS);
            }
        }
    }
}
