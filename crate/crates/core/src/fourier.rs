//! Lattice Fourier transform on a periodic box.
//!
//! `F_n f(k) = n^{-d} Σ_x f(x) e^{-2πi⟨x,k⟩}` on the dual grid
//! `k ∈ {m/M : m = -s/2, …, s/2-1}^d`, and the inverse
//! `F_n^{-1} g(x) = M^{-d} Σ_k g(k) e^{2πi⟨x,k⟩}`, the Riemann sum of the
//! torus integral. With this pair `⟨f, f⟩_n = M^{-d} Σ_k |F_n f(k)|²`.
//!
//! Spectra are stored in FFT order along each axis; [`FourierPlan::frequency`]
//! maps an index to its dual-grid point.

use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::lattice::{Boundary, Field, LatticeBox};

#[derive(Clone, Debug, PartialEq)]
pub struct Spectrum {
    lattice: LatticeBox,
    values: Vec<Complex64>,
}

impl Spectrum {
    pub fn lattice(&self) -> &LatticeBox {
        &self.lattice
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Complex64] {
        &mut self.values
    }
}

/// FFT plans for one periodic box; immutable and shareable across threads.
#[derive(Clone)]
pub struct FourierPlan {
    lattice: LatticeBox,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for FourierPlan {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FourierPlan").field("lattice", &self.lattice).finish()
    }
}

impl FourierPlan {
    pub fn new(lattice: LatticeBox) -> Result<Self> {
        if lattice.boundary() != Boundary::Periodic {
            return Err(Error::Boundary {
                required: "periodic",
                actual: lattice.boundary().name(),
            });
        }
        let mut planner = FftPlanner::new();
        let s = lattice.sites_per_side();
        Ok(Self {
            lattice,
            forward: planner.plan_fft_forward(s),
            inverse: planner.plan_fft_inverse(s),
        })
    }

    pub fn lattice(&self) -> &LatticeBox {
        &self.lattice
    }

    /// Dual-grid point of a spectrum index.
    pub fn frequency(&self, index: usize) -> [f64; 2] {
        let s = self.lattice.sites_per_side();
        let m = self.lattice.side() as f64;
        let wrap = |i: usize| {
            let i = i as i64;
            if i < (s / 2) as i64 {
                i
            } else {
                i - s as i64
            }
        };
        match self.lattice.dim() {
            1 => [wrap(index) as f64 / m, 0.0],
            _ => [wrap(index / s) as f64 / m, wrap(index % s) as f64 / m],
        }
    }

    /// Sign `(-1)^{m_1 + … + m_d}` from the box offset `x = (i - s/2)/n`.
    fn offset_sign(&self, index: usize) -> f64 {
        let s = self.lattice.sites_per_side();
        let parity = match self.lattice.dim() {
            1 => index,
            _ => index / s + index % s,
        };
        if parity % 2 == 0 {
            1.0
        } else {
            -1.0
        }
    }

    fn transform(&self, data: &mut [Complex64], fft: &Arc<dyn Fft<f64>>) {
        let s = self.lattice.sites_per_side();
        match self.lattice.dim() {
            1 => fft.process(data),
            _ => {
                for row in data.chunks_exact_mut(s) {
                    fft.process(row);
                }
                let mut column = vec![Complex64::new(0.0, 0.0); s];
                for c in 0..s {
                    for r in 0..s {
                        column[r] = data[r * s + c];
                    }
                    fft.process(&mut column);
                    for r in 0..s {
                        data[r * s + c] = column[r];
                    }
                }
            }
        }
    }

    pub fn forward(&self, f: &Field) -> Result<Spectrum> {
        self.lattice.check_same(f.lattice())?;
        let mut data: Vec<Complex64> =
            f.values().iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.transform(&mut data, &self.forward);
        let cell = self.lattice.cell_volume();
        for (i, v) in data.iter_mut().enumerate() {
            *v *= cell * self.offset_sign(i);
        }
        Ok(Spectrum {
            lattice: self.lattice,
            values: data,
        })
    }

    /// Inverse transform; the imaginary part is discarded.
    pub fn inverse(&self, spectrum: &Spectrum) -> Result<Field> {
        self.lattice.check_same(&spectrum.lattice)?;
        let mut data: Vec<Complex64> = spectrum
            .values
            .iter()
            .enumerate()
            .map(|(i, v)| v * self.offset_sign(i))
            .collect();
        self.transform(&mut data, &self.inverse);
        let scale = (self.lattice.side() as f64).powi(-(self.lattice.dim() as i32));
        Field::new(self.lattice, data.iter().map(|v| v.re * scale).collect())
    }

    /// `F_n^{-1}(m · F_n f)` for a real multiplier `m(k)`.
    pub fn apply_multiplier(&self, f: &Field, multiplier: impl Fn([f64; 2]) -> f64) -> Result<Field> {
        let mut spec = self.forward(f)?;
        for (i, v) in spec.values.iter_mut().enumerate() {
            *v *= multiplier(self.frequency(i));
        }
        self.inverse(&spec)
    }
}

pub fn fourier_forward(f: &Field) -> Result<Spectrum> {
    FourierPlan::new(*f.lattice())?.forward(f)
}

pub fn fourier_inverse(spectrum: &Spectrum) -> Result<Field> {
    FourierPlan::new(spectrum.lattice)?.inverse(spectrum)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::lattice_pair;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn random(lat: LatticeBox) -> Field {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        Field::from_fn(lat, |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn round_trip() {
        for dim in [1, 2] {
            let lat = LatticeBox::periodic(dim, 4, 4).unwrap();
            let f = random(lat);
            let back = fourier_inverse(&fourier_forward(&f).unwrap()).unwrap();
            assert!(back.max_abs_diff(&f).unwrap() < 1e-12);
        }
    }

    #[test]
    fn constant_concentrates_at_zero() {
        let lat = LatticeBox::periodic(2, 2, 4).unwrap();
        let plan = FourierPlan::new(lat).unwrap();
        let spec = plan.forward(&Field::constant(lat, 1.0)).unwrap();
        for (i, v) in spec.values().iter().enumerate() {
            let expected = if plan.frequency(i) == [0.0, 0.0] { 16.0 } else { 0.0 };
            assert!((v - Complex64::new(expected, 0.0)).norm() < 1e-12);
        }
    }

    #[test]
    fn parseval_constant_is_one() {
        for dim in [1, 2] {
            let lat = LatticeBox::periodic(dim, 3, 2).unwrap();
            let f = random(lat);
            let spec = fourier_forward(&f).unwrap();
            let m = (lat.side() as f64).powi(dim as i32);
            let energy: f64 = spec.values().iter().map(|v| v.norm_sqr()).sum::<f64>() / m;
            let direct = lattice_pair(&f, &f).unwrap();
            assert!((energy / direct - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn plane_wave_lands_on_its_frequency() {
        let lat = LatticeBox::periodic(1, 4, 4).unwrap();
        let plan = FourierPlan::new(lat).unwrap();
        let k = 0.75;
        let f = Field::from_fn(lat, |x| (2.0 * PI * k * x[0]).cos());
        let spec = plan.forward(&f).unwrap();
        for (i, v) in spec.values().iter().enumerate() {
            let freq = plan.frequency(i)[0];
            let expected = if (freq.abs() - k).abs() < 1e-12 { 2.0 } else { 0.0 };
            assert!((v.re - expected).abs() < 1e-12 && v.im.abs() < 1e-12);
        }
    }

    #[test]
    fn dirichlet_rejected() {
        let lat = LatticeBox::dirichlet(1, 4, 4).unwrap();
        assert!(fourier_forward(&Field::zeros(lat)).is_err());
    }
}
