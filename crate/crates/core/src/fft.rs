//! Square 2-D complex FFTs on doubly periodic grids.

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use std::sync::Arc;

pub struct Fft2 {
    n: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
    scratch: Vec<Complex64>,
}

impl Fft2 {
    pub fn new(n: usize) -> Self {
        let mut planner = FftPlanner::new();
        let fwd = planner.plan_fft_forward(n);
        let inv = planner.plan_fft_inverse(n);
        let len = fwd.get_inplace_scratch_len().max(inv.get_inplace_scratch_len());
        Self {
            n,
            fwd,
            inv,
            scratch: vec![Complex64::default(); len],
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Unnormalised forward transform, row-major `(y, x)`.
    pub fn forward(&mut self, data: &mut [Complex64]) {
        let f = self.fwd.clone();
        self.both_axes(data, &*f);
    }

    /// Inverse transform including the `1/N²` factor.
    pub fn inverse(&mut self, data: &mut [Complex64]) {
        let f = self.inv.clone();
        self.both_axes(data, &*f);
        let s = 1.0 / (self.n * self.n) as f64;
        data.iter_mut().for_each(|v| *v *= s);
    }

    fn both_axes(&mut self, data: &mut [Complex64], f: &dyn Fft<f64>) {
        assert_eq!(data.len(), self.n * self.n);
        f.process_with_scratch(data, &mut self.scratch);
        transpose(data, self.n);
        f.process_with_scratch(data, &mut self.scratch);
        transpose(data, self.n);
    }

    /// Forward transform leaving the spectrum transposed (`[kx][ky]`).
    /// Rows `kx` with `keep[kx] == false` are left unfinished (garbage).
    pub fn forward_t(&mut self, data: &mut [Complex64], keep: &[bool]) {
        let n = self.n;
        let f = self.fwd.clone();
        f.process_with_scratch(data, &mut self.scratch);
        transpose(data, n);
        for (r, row) in data.chunks_exact_mut(n).enumerate() {
            if keep[r] {
                f.process_with_scratch(row, &mut self.scratch);
            }
        }
    }

    /// Unnormalised inverse of a transposed spectrum; rows `kx` with
    /// `keep[kx] == false` must be zero.
    pub fn inverse_t(&mut self, data: &mut [Complex64], keep: &[bool]) {
        let n = self.n;
        let f = self.inv.clone();
        for (r, row) in data.chunks_exact_mut(n).enumerate() {
            if keep[r] {
                f.process_with_scratch(row, &mut self.scratch);
            }
        }
        transpose(data, n);
        f.process_with_scratch(data, &mut self.scratch);
    }

    /// Spectra of two real fields from one complex transform.
    pub fn forward_pair(&mut self, a: &[f64], b: &[f64]) -> (Vec<Complex64>, Vec<Complex64>) {
        let n = self.n;
        let mut z: Vec<Complex64> = a.iter().zip(b).map(|(&x, &y)| Complex64::new(x, y)).collect();
        self.forward(&mut z);
        let mut ah = vec![Complex64::default(); n * n];
        let mut bh = vec![Complex64::default(); n * n];
        for ky in 0..n {
            for kx in 0..n {
                let i = ky * n + kx;
                let j = ((n - ky) % n) * n + (n - kx) % n;
                let zc = z[j].conj();
                ah[i] = (z[i] + zc) * 0.5;
                bh[i] = (z[i] - zc) * Complex64::new(0.0, -0.5);
            }
        }
        (ah, bh)
    }

    /// Two real fields from Hermitian spectra via one complex transform.
    pub fn inverse_pair(&mut self, ah: &[Complex64], bh: &[Complex64]) -> (Vec<f64>, Vec<f64>) {
        let mut z: Vec<Complex64> = ah
            .iter()
            .zip(bh)
            .map(|(&a, &b)| a + Complex64::new(0.0, 1.0) * b)
            .collect();
        self.inverse(&mut z);
        (z.iter().map(|c| c.re).collect(), z.iter().map(|c| c.im).collect())
    }

    pub fn forward_real(&mut self, a: &[f64]) -> Vec<Complex64> {
        let mut z: Vec<Complex64> = a.iter().map(|&x| Complex64::new(x, 0.0)).collect();
        self.forward(&mut z);
        z
    }

    pub fn inverse_real(&mut self, ah: &[Complex64]) -> Vec<f64> {
        let mut z = ah.to_vec();
        self.inverse(&mut z);
        z.iter().map(|c| c.re).collect()
    }
}

fn transpose(d: &mut [Complex64], n: usize) {
    for i in 0..n {
        for j in i + 1..n {
            d.swap(i * n + j, j * n + i);
        }
    }
}

/// Signed wavenumber of FFT index `i` on an `n`-point axis.
#[inline]
pub fn wavenumber(i: usize, n: usize) -> i64 {
    if i < n.div_ceil(2) {
        i as i64
    } else {
        i as i64 - n as i64
    }
}
