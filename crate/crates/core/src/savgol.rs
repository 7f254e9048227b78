//! Savitzky-Golay smoothing: a least-squares polynomial fit over a sliding
//! window, evaluated at the window centre. Interior points are a fixed
//! symmetric FIR filter (applied by FFT convolution); the first and last
//! half-window points are taken from the polynomial fitted to the first and
//! last full window.

use std::fmt;
use std::sync::{Arc, Mutex};

use nalgebra::{DMatrix, DVector};
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

struct FftKernel {
    len: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    spectrum: Vec<Complex64>,
}

pub struct SavitzkyGolay {
    half_width: usize,
    order: usize,
    coefficients: Vec<f64>,
    // Row i: weights giving the fitted value at window position i (i < half_width)
    // from the first full window.
    edge_rows: Vec<Vec<f64>>,
    kernels: Mutex<Vec<Arc<FftKernel>>>,
}

impl Clone for SavitzkyGolay {
    fn clone(&self) -> Self {
        SavitzkyGolay {
            half_width: self.half_width,
            order: self.order,
            coefficients: self.coefficients.clone(),
            edge_rows: self.edge_rows.clone(),
            kernels: Mutex::new(Vec::new()),
        }
    }
}

impl fmt::Debug for SavitzkyGolay {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SavitzkyGolay")
            .field("window", &self.window())
            .field("order", &self.order)
            .finish()
    }
}

impl SavitzkyGolay {
    /// `window` must be odd and larger than `order + 1`.
    pub fn new(window: usize, order: usize) -> Result<Self> {
        if window.is_multiple_of(2) {
            return Err(Error::invalid("window", format!("must be odd, got {window}")));
        }
        if window < order + 2 {
            return Err(Error::invalid(
                "order",
                format!(
                    "polynomial order {order} needs a window of at least {} points",
                    order + 2
                ),
            ));
        }
        let m = window / 2;
        let scale = m.max(1) as f64;
        let design = DMatrix::from_fn(window, order + 1, |r, c| ((r as f64 - m as f64) / scale).powi(c as i32));
        let normal = design.transpose() * &design;
        let inv = normal
            .try_inverse()
            .ok_or_else(|| Error::invalid("order", "singular Savitzky-Golay normal equations"))?;
        // Rows 0..=m of the projection H = A (AᵀA)⁻¹ Aᵀ; the rest follow by symmetry.
        let hat = design.rows(0, m + 1) * inv * design.transpose();
        let coefficients: Vec<f64> = hat.row(m).iter().copied().collect();
        let edge_rows = (0..m).map(|i| hat.row(i).iter().copied().collect()).collect();
        Ok(SavitzkyGolay {
            half_width: m,
            order,
            coefficients,
            edge_rows,
            kernels: Mutex::new(Vec::new()),
        })
    }

    /// Window of about `width_hz`, rounded to an odd number of bins.
    pub fn from_width(width_hz: f64, bin_width: f64, order: usize) -> Result<Self> {
        if !(width_hz > 0.0 && bin_width > 0.0) {
            return Err(Error::invalid("window", "width and bin width must be positive"));
        }
        let bins = (width_hz / bin_width).round() as usize;
        Self::new(bins | 1, order)
    }

    pub fn window(&self) -> usize {
        2 * self.half_width + 1
    }

    pub fn half_width(&self) -> usize {
        self.half_width
    }

    pub fn order(&self) -> usize {
        self.order
    }

    /// Interior convolution weights, centre at index `half_width`.
    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    fn kernel(&self, len: usize) -> Arc<FftKernel> {
        let mut cache = self.kernels.lock().expect("kernel cache poisoned");
        if let Some(k) = cache.iter().find(|k| k.len == len) {
            return k.clone();
        }
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(len);
        let inverse = planner.plan_fft_inverse(len);
        let mut spectrum = vec![Complex64::new(0.0, 0.0); len];
        for (s, c) in spectrum.iter_mut().zip(&self.coefficients) {
            s.re = *c;
        }
        forward.process(&mut spectrum);
        let k = Arc::new(FftKernel {
            len,
            forward,
            inverse,
            spectrum,
        });
        cache.push(k.clone());
        k
    }

    pub fn smooth(&self, data: &[f64]) -> Result<Vec<f64>> {
        let n = data.len();
        let w = self.window();
        if n < w {
            return Err(Error::FilterWindow { window: w, bins: n });
        }
        let m = self.half_width;
        let mut out = vec![0.0; n];
        if w <= 31 {
            for i in m..n - m {
                out[i] = self
                    .coefficients
                    .iter()
                    .zip(&data[i - m..i + m + 1])
                    .map(|(c, x)| c * x)
                    .sum();
            }
        } else {
            let len = (n + w - 1).next_power_of_two();
            let kernel = self.kernel(len);
            let mut buf = vec![Complex64::new(0.0, 0.0); len];
            for (b, x) in buf.iter_mut().zip(data) {
                b.re = *x;
            }
            kernel.forward.process(&mut buf);
            for (b, k) in buf.iter_mut().zip(&kernel.spectrum) {
                *b *= *k;
            }
            kernel.inverse.process(&mut buf);
            let norm = 1.0 / len as f64;
            // Symmetric weights: the linear convolution at t = i + m is the centred sum.
            for i in m..n - m {
                out[i] = buf[i + m].re * norm;
            }
        }
        for (i, row) in self.edge_rows.iter().enumerate() {
            out[i] = row.iter().zip(&data[..w]).map(|(c, x)| c * x).sum();
            out[n - 1 - i] = row.iter().zip(data[n - w..].iter().rev()).map(|(c, x)| c * x).sum();
        }
        Ok(out)
    }
}

/// Least-squares polynomial value at the window centre; the slow reference
/// used by the tests.
#[doc(hidden)]
pub fn direct_fit(data: &[f64], centre: usize, half_width: usize, order: usize) -> f64 {
    let lo = centre - half_width;
    let w = 2 * half_width + 1;
    let a = DMatrix::from_fn(w, order + 1, |r, c| (r as f64 - half_width as f64).powi(c as i32));
    let y = DVector::from_iterator(w, data[lo..lo + w].iter().copied());
    let fit = a.svd(true, true).solve(&y, 1e-14).expect("svd solve");
    fit[0]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_shapes() {
        assert!(SavitzkyGolay::new(10, 2).is_err());
        assert!(SavitzkyGolay::new(5, 4).is_err());
        let sg = SavitzkyGolay::new(101, 4).unwrap();
        assert!(matches!(
            sg.smooth(&[1.0; 50]),
            Err(Error::FilterWindow { window: 101, bins: 50 })
        ));
    }

    #[test]
    fn coefficients_sum_to_one_and_are_symmetric() {
        for (w, o) in [(5, 2), (101, 4), (1001, 4)] {
            let sg = SavitzkyGolay::new(w, o).unwrap();
            let c = sg.coefficients();
            assert!((c.iter().sum::<f64>() - 1.0).abs() < 1e-10);
            for j in 0..w / 2 {
                assert!((c[j] - c[w - 1 - j]).abs() < 1e-12);
            }
        }
        // Classic 5-point quadratic weights: (-3, 12, 17, 12, -3)/35
        let sg = SavitzkyGolay::new(5, 2).unwrap();
        let expect = [-3.0, 12.0, 17.0, 12.0, -3.0].map(|v| v / 35.0);
        for (a, b) in sg.coefficients().iter().zip(expect) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn reproduces_polynomials_exactly() {
        let sg = SavitzkyGolay::new(201, 4).unwrap();
        let data: Vec<f64> = (0..3000)
            .map(|i| {
                let x = i as f64 / 3000.0;
                1.0 + 0.3 * x - 2.0 * x * x + 0.7 * x.powi(3) - 0.2 * x.powi(4)
            })
            .collect();
        let out = sg.smooth(&data).unwrap();
        for (a, b) in out.iter().zip(&data) {
            assert!((a - b).abs() < 1e-9, "{a} {b}");
        }
    }

    #[test]
    fn matches_direct_least_squares() {
        let data: Vec<f64> = (0..600)
            .map(|i| ((i * 7919) % 97) as f64 / 97.0 + (i as f64 * 0.01).sin())
            .collect();
        for (w, o) in [(21, 2), (61, 4)] {
            let sg = SavitzkyGolay::new(w, o).unwrap();
            let out = sg.smooth(&data).unwrap();
            for centre in [w / 2, 100, 333, 600 - 1 - w / 2] {
                let d = direct_fit(&data, centre, w / 2, o);
                assert!((out[centre] - d).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn from_width_rounds_to_odd() {
        let sg = SavitzkyGolay::from_width(10e3, 100.0, 4).unwrap();
        assert_eq!(sg.window(), 101);
        let sg = SavitzkyGolay::from_width(100e3, 100.0, 4).unwrap();
        assert_eq!(sg.window(), 1001);
    }
}
