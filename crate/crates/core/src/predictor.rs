//! The common interface of fitted functions `[0,1]^m → Y`.

use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;

pub trait Predictor {
    fn output_dim(&self) -> usize;

    fn predict_into(&self, x: &[f64], out: &mut [f64]);

    fn predict(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.output_dim()];
        self.predict_into(x, &mut out);
        out
    }
}

impl<P: Predictor + ?Sized> Predictor for &P {
    fn output_dim(&self) -> usize {
        (**self).output_dim()
    }

    fn predict_into(&self, x: &[f64], out: &mut [f64]) {
        (**self).predict_into(x, out)
    }
}

impl<P: Predictor + ?Sized> Predictor for Box<P> {
    fn output_dim(&self) -> usize {
        (**self).output_dim()
    }

    fn predict_into(&self, x: &[f64], out: &mut [f64]) {
        (**self).predict_into(x, out)
    }
}

/// Ignores its input.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstantPredictor(pub Vec<f64>);

impl Predictor for ConstantPredictor {
    fn output_dim(&self) -> usize {
        self.0.len()
    }

    fn predict_into(&self, _x: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&self.0);
    }
}

/// Adapts a closure.
pub struct FnPredictor<F> {
    dim: usize,
    f: F,
}

impl<F: Fn(&[f64], &mut [f64])> FnPredictor<F> {
    pub fn new(dim: usize, f: F) -> Self {
        Self { dim, f }
    }
}

impl<F: Fn(&[f64], &mut [f64])> Predictor for FnPredictor<F> {
    fn output_dim(&self) -> usize {
        self.dim
    }

    fn predict_into(&self, x: &[f64], out: &mut [f64]) {
        (self.f)(x, out)
    }
}
