//! Fourier differentiation on the uniform periodic grid t_j = j/N.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, Mutex, OnceLock};

use nalgebra::DMatrix;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

pub struct Spectral {
    len: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl Spectral {
    pub fn new(len: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            len,
            fwd: planner.plan_fft_forward(len),
            inv: planner.plan_fft_inverse(len),
        }
    }

    /// Process-wide cached transform for a given length.
    pub fn shared(len: usize) -> Arc<Spectral> {
        static CACHE: OnceLock<Mutex<HashMap<usize, Arc<Spectral>>>> = OnceLock::new();
        let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
        let mut guard = cache.lock().expect("spectral cache poisoned");
        guard.entry(len).or_insert_with(|| Arc::new(Spectral::new(len))).clone()
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Signed integer wavenumber of bin `j`; the Nyquist bin reports +N/2.
    pub fn wavenumber(&self, j: usize) -> f64 {
        if j <= self.len / 2 {
            j as f64
        } else {
            j as f64 - self.len as f64
        }
    }

    pub fn forward(&self, data: &[f64]) -> Vec<Complex64> {
        let mut buf: Vec<Complex64> = data.iter().map(|&x| Complex64::new(x, 0.0)).collect();
        self.fwd.process(&mut buf);
        buf
    }

    /// Unnormalized forward transform in place.
    pub fn forward_in_place(&self, buf: &mut [Complex64]) {
        self.fwd.process(buf);
    }

    /// Unnormalized inverse transform in place.
    pub fn inverse_in_place(&self, buf: &mut [Complex64]) {
        self.inv.process(buf);
    }

    /// Inverse transform, normalized, keeping the real part.
    pub fn inverse(&self, mut spec: Vec<Complex64>) -> Vec<f64> {
        self.inv.process(&mut spec);
        let scale = 1.0 / self.len as f64;
        spec.iter().map(|c| c.re * scale).collect()
    }

    pub fn derivative(&self, f: &[f64]) -> Vec<f64> {
        let mut spec = self.forward(f);
        let nyquist = self.len / 2;
        for (j, c) in spec.iter_mut().enumerate() {
            if j == nyquist {
                *c = Complex64::new(0.0, 0.0);
            } else {
                let w = 2.0 * PI * self.wavenumber(j);
                *c = Complex64::new(-w * c.im, w * c.re);
            }
        }
        self.inverse(spec)
    }

    pub fn second_derivative(&self, f: &[f64]) -> Vec<f64> {
        let mut spec = self.forward(f);
        for (j, c) in spec.iter_mut().enumerate() {
            let w = 2.0 * PI * self.wavenumber(j);
            *c *= -w * w;
        }
        self.inverse(spec)
    }

    /// Multiply each Fourier coefficient by `symbol(j)` (real symbol).
    pub fn apply_symbol(&self, f: &[f64], symbol: &[f64]) -> Vec<f64> {
        let mut spec = self.forward(f);
        for (c, s) in spec.iter_mut().zip(symbol) {
            *c *= *s;
        }
        self.inverse(spec)
    }

    /// Eigenvalues of the second-derivative operator per bin, -(2πk)².
    pub fn laplacian_symbol(&self) -> Vec<f64> {
        (0..self.len)
            .map(|j| {
                let w = 2.0 * PI * self.wavenumber(j);
                -w * w
            })
            .collect()
    }

    pub fn derivative_matrix(&self) -> DMatrix<f64> {
        self.matrix_of(|f| self.derivative(f))
    }

    pub fn second_derivative_matrix(&self) -> DMatrix<f64> {
        self.matrix_of(|f| self.second_derivative(f))
    }

    fn matrix_of(&self, op: impl Fn(&[f64]) -> Vec<f64>) -> DMatrix<f64> {
        let n = self.len;
        let mut m = DMatrix::zeros(n, n);
        let mut e = vec![0.0; n];
        for col in 0..n {
            e[col] = 1.0;
            let image = op(&e);
            for (row, v) in image.into_iter().enumerate() {
                m[(row, col)] = v;
            }
            e[col] = 0.0;
        }
        m
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derivative_of_low_modes_is_exact() {
        let sp = Spectral::new(32);
        let f: Vec<f64> = (0..32).map(|j| (2.0 * PI * 3.0 * j as f64 / 32.0).sin()).collect();
        let d = sp.derivative(&f);
        for (j, v) in d.iter().enumerate() {
            let t = j as f64 / 32.0;
            assert!((v - 6.0 * PI * (6.0 * PI * t).cos()).abs() < 1e-10);
        }
    }

    #[test]
    fn second_derivative_matrix_is_symmetric() {
        let m = Spectral::new(16).second_derivative_matrix();
        assert!((&m - m.transpose()).amax() < 1e-9);
    }
}
