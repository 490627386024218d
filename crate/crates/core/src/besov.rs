//! Lattice Littlewood–Paley calculus: dyadic blocks, weighted Besov norms,
//! Bony paraproducts, the commutator `C₁`, and the PAM enhancement
//! `(X^n, X^n ⊙ ξ^n - c_n)` in two dimensions.
//!
//! The partition is built by telescoping one radial profile `ζ`
//! (`ζ = 1` on `|k| ≤ 3/8`, `ζ = 0` on `|k| ≥ 1/2`):
//! `ρ_{-1} = ζ`, `ρ_j(k) = ζ(2^{-j-1}k) - ζ(2^{-j}k)`. Hence
//! `Σ_{j=-1}^{J} ρ_j(k) = ζ(2^{-J-1}k)` exactly and `ρ = ρ_0` is supported
//! in the annulus `3/8 ≤ |k| ≤ 1`.

use crate::environment::{chi_cutoff, laplacian_symbol, smoothstep, Environment};
use crate::error::{Error, Result};
use crate::fourier::FourierPlan;
use crate::lattice::{weight_field, Field, LatticeBox, WeightSpec};

/// Radial low-pass profile `ζ`.
fn low_pass(r: f64) -> f64 {
    1.0 - smoothstep((r - 0.375) * 8.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DyadicPartition {
    scale: usize,
    top: i32,
}

impl DyadicPartition {
    /// Partition for lattice scale `n`. The top index `j_n` is the first
    /// block whose support `2^j [3/8, 1]` leaves `n[-1/2, 1/2]^d`.
    pub fn new(scale: usize) -> Self {
        let half = scale as f64 / 2.0;
        let mut j = 0;
        while 2f64.powi(j) <= half {
            j += 1;
        }
        Self { scale, top: j }
    }

    pub fn scale(&self) -> usize {
        self.scale
    }

    /// `j_n`.
    pub fn top(&self) -> i32 {
        self.top
    }

    /// Block indices `-1..=j_n`.
    pub fn indices(&self) -> impl Iterator<Item = i32> {
        -1..=self.top
    }

    /// Untruncated dyadic profile `ρ_j(|k|)`.
    pub fn profile(j: i32, radius: f64) -> f64 {
        if j == -1 {
            low_pass(radius)
        } else {
            low_pass(radius / 2f64.powi(j + 1)) - low_pass(radius / 2f64.powi(j))
        }
    }

    /// Multiplier of block `j` at frequency `k`; the top block absorbs the tail.
    pub fn multiplier(&self, j: i32, k: [f64; 2]) -> f64 {
        let r = k[0].hypot(k[1]);
        if j == self.top {
            1.0 - low_pass(r / 2f64.powi(self.top))
        } else {
            Self::profile(j, r)
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Exponent {
    One,
    Two,
    Infinity,
}

impl Exponent {
    pub fn parse(v: f64) -> Result<Self> {
        match v {
            v if v == 1.0 => Ok(Exponent::One),
            v if v == 2.0 => Ok(Exponent::Two),
            v if v == f64::INFINITY => Ok(Exponent::Infinity),
            _ => Err(Error::InvalidParameter(format!(
                "integrability exponent {v} not in {{1, 2, inf}}"
            ))),
        }
    }

    fn combine(self, terms: impl Iterator<Item = f64>) -> f64 {
        match self {
            Exponent::One => terms.map(f64::abs).sum(),
            Exponent::Two => terms.map(|t| t * t).sum::<f64>().sqrt(),
            Exponent::Infinity => terms.fold(0.0, |m, t| m.max(t.abs())),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BesovParams {
    pub alpha: f64,
    pub p: Exponent,
    pub q: Exponent,
    pub weight: WeightSpec,
}

impl BesovParams {
    pub fn new(alpha: f64, p: f64, q: f64, weight: WeightSpec) -> Result<Self> {
        Ok(Self {
            alpha,
            p: Exponent::parse(p)?,
            q: Exponent::parse(q)?,
            weight,
        })
    }

    /// Hölder–Besov `C^α(z) = B^α_{∞,∞}(z)`.
    pub fn holder(alpha: f64, weight: WeightSpec) -> Self {
        Self {
            alpha,
            p: Exponent::Infinity,
            q: Exponent::Infinity,
            weight,
        }
    }
}

/// Littlewood–Paley machinery bound to one periodic box.
#[derive(Clone, Debug)]
pub struct LittlewoodPaley {
    plan: FourierPlan,
    partition: DyadicPartition,
}

impl LittlewoodPaley {
    pub fn new(lattice: LatticeBox) -> Result<Self> {
        Ok(Self {
            plan: FourierPlan::new(lattice)?,
            partition: DyadicPartition::new(lattice.scale()),
        })
    }

    pub fn partition(&self) -> &DyadicPartition {
        &self.partition
    }

    pub fn plan(&self) -> &FourierPlan {
        &self.plan
    }

    fn check_index(&self, j: i32) -> Result<()> {
        if j < -1 || j > self.partition.top {
            return Err(Error::InvalidParameter(format!(
                "block {j} outside [-1, {}]",
                self.partition.top
            )));
        }
        Ok(())
    }

    /// `Δ^n_j f`.
    pub fn block(&self, f: &Field, j: i32) -> Result<Field> {
        self.check_index(j)?;
        self.plan
            .apply_multiplier(f, |k| self.partition.multiplier(j, k))
    }

    /// All blocks `Δ^n_{-1} f, …, Δ^n_{j_n} f` from a single forward transform.
    pub fn blocks(&self, f: &Field) -> Result<Vec<Field>> {
        let spectrum = self.plan.forward(f)?;
        self.partition
            .indices()
            .map(|j| {
                let mut s = spectrum.clone();
                for (i, v) in s.values_mut().iter_mut().enumerate() {
                    *v *= self.partition.multiplier(j, self.plan.frequency(i));
                }
                self.plan.inverse(&s)
            })
            .collect()
    }

    /// `‖(2^{jα} ‖Δ^n_j f‖_{L^p(z)})_{j ≤ j_n}‖_{ℓ^q}` with
    /// `‖g‖_{L^p(z)} = (n^{-d} Σ |z g|^p)^{1/p}`.
    pub fn besov_norm(&self, f: &Field, params: &BesovParams) -> Result<f64> {
        let lat = *self.plan.lattice();
        let weight: Field = weight_field(lat, &params.weight);
        let cell = lat.cell_volume();
        let blocks = self.blocks(f)?;
        let terms = self.partition.indices().zip(&blocks).map(|(j, b)| {
            let weighted = b.values().iter().zip(weight.values()).map(|(v, w)| v * w);
            let lp = match params.p {
                Exponent::One => cell * weighted.map(f64::abs).sum::<f64>(),
                Exponent::Two => (cell * weighted.map(|v| v * v).sum::<f64>()).sqrt(),
                Exponent::Infinity => weighted.fold(0.0f64, |m, v| m.max(v.abs())),
            };
            2f64.powf(j as f64 * params.alpha) * lp
        });
        Ok(params.q.combine(terms))
    }

    /// Low-frequency sums `Δ^n_{<i} f = Σ_{-1 ≤ j < i} Δ^n_j f` for `i = -1..=j_n+1`.
    fn cumulative(blocks: &[Field]) -> Vec<Field> {
        let lat = *blocks[0].lattice();
        let mut out = Vec::with_capacity(blocks.len() + 1);
        let mut acc = Field::zeros(lat);
        out.push(acc.clone());
        for b in blocks {
            acc = acc.add(b).expect("blocks share a lattice");
            out.push(acc.clone());
        }
        out
    }

    /// Paraproduct `f ⋖ g = Σ_{1 ≤ i ≤ j_n} Δ^n_{<i-1} f · Δ^n_i g`.
    pub fn paraproduct(&self, f: &Field, g: &Field) -> Result<Field> {
        f.lattice().check_same(g.lattice())?;
        let fb = self.blocks(f)?;
        let gb = self.blocks(g)?;
        Ok(Self::paraproduct_from_blocks(&fb, &gb))
    }

    fn paraproduct_from_blocks(fb: &[Field], gb: &[Field]) -> Field {
        let low = Self::cumulative(fb);
        let lat = *fb[0].lattice();
        let mut out = Field::zeros(lat);
        // block i sits at position i + 1; Δ_{<i-1} at position i in `low`
        for i in 1..(gb.len() as i32 - 1) {
            let term = low[i as usize].mul(&gb[(i + 1) as usize]).expect("shared lattice");
            out = out.add(&term).expect("shared lattice");
        }
        out
    }

    /// Resonant product `f ⊙ g = Σ_{|i-j| ≤ 1} Δ^n_i f · Δ^n_j g`.
    pub fn resonant(&self, f: &Field, g: &Field) -> Result<Field> {
        f.lattice().check_same(g.lattice())?;
        let fb = self.blocks(f)?;
        let gb = self.blocks(g)?;
        Ok(Self::resonant_from_blocks(&fb, &gb))
    }

    fn resonant_from_blocks(fb: &[Field], gb: &[Field]) -> Field {
        let lat = *fb[0].lattice();
        let count = fb.len();
        let mut out = Field::zeros(lat);
        for i in 0..count {
            for j in i.saturating_sub(1)..(i + 2).min(count) {
                out = out.add(&fb[i].mul(&gb[j]).expect("shared lattice")).expect("shared lattice");
            }
        }
        out
    }

    /// `C₁(f, g, h) = (f ⋖ g) ⊙ h - f (g ⊙ h)`.
    pub fn commutator_c1(&self, f: &Field, g: &Field, h: &Field) -> Result<Field> {
        let fg = self.paraproduct(f, g)?;
        let first = self.resonant(&fg, h)?;
        let second = f.mul(&self.resonant(g, h)?)?;
        first.sub(&second)
    }
}

/// Output of [`pam_enhancement`].
#[derive(Clone, Debug)]
pub struct PamEnhancement {
    /// `X^n` solving `-Δ^n X^n = χ(D) ξ^n`.
    pub x: Field,
    /// `X^n ⊙ ξ^n`.
    pub resonant: Field,
    /// `X^n ⊙ ξ^n - c_n`.
    pub renormalized: Field,
}

/// Enhancement of the two-dimensional potential.
pub fn pam_enhancement(env: &Environment) -> Result<PamEnhancement> {
    let lat = *env.lattice();
    if lat.dim() != 2 {
        return Err(Error::Dimension {
            required: 2,
            actual: lat.dim(),
        });
    }
    let lp = LittlewoodPaley::new(lat)?;
    let n = lat.scale();
    let x = lp.plan.apply_multiplier(env.xi(), |k| {
        let cut = chi_cutoff(&k);
        if cut == 0.0 {
            0.0
        } else {
            cut / laplacian_symbol(n, &k)
        }
    })?;
    let resonant = lp.resonant(&x, env.xi())?;
    let renormalized = resonant.map(|v| v - env.renormalization());
    Ok(PamEnhancement {
        x,
        resonant,
        renormalized,
    })
}

/// Piecewise multilinear interpolation of a periodic field onto another
/// periodic box of the same physical side (stand-in for the extension
/// operator when comparing fields across scales).
pub fn interpolate(f: &Field, target: LatticeBox) -> Result<Field> {
    let src = *f.lattice();
    if src.dim() != target.dim() || src.side() != target.side() {
        return Err(Error::LatticeMismatch(format!("{src:?} -> {target:?}")));
    }
    let n = src.scale() as f64;
    let dim = src.dim();
    Ok(Field::from_fn(target, |x| {
        let mut base = [0i64; 2];
        let mut frac = [0.0; 2];
        for a in 0..dim {
            let u = x[a] * n;
            base[a] = u.floor() as i64;
            frac[a] = u - u.floor();
        }
        let corners = 1usize << dim;
        (0..corners)
            .map(|c| {
                let mut coords = base;
                let mut w = 1.0;
                for a in 0..dim {
                    if c >> a & 1 == 1 {
                        coords[a] += 1;
                        w *= frac[a];
                    } else {
                        w *= 1.0 - frac[a];
                    }
                }
                w * f.at(src.wrapped_index(coords))
            })
            .sum()
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environment::{sample_environment, EnvironmentSpec, PotentialLaw};
    use crate::lattice::lattice_pair;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(lat: LatticeBox, seed: u64) -> Field {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Field::from_fn(lat, |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn partition_of_unity_on_dual_grid() {
        for j_max in 0..8 {
            let bound = 2f64.powi(j_max - 1);
            for i in 0..=400 {
                let r = bound * i as f64 / 400.0;
                let sum: f64 = (-1..=j_max).map(|j| DyadicPartition::profile(j, r)).sum();
                assert!((sum - 1.0).abs() < 1e-12, "J={j_max} r={r}");
            }
        }
        let lat = LatticeBox::periodic(2, 8, 4).unwrap();
        let lp = LittlewoodPaley::new(lat).unwrap();
        for i in 0..lat.num_sites() {
            let k = lp.plan().frequency(i);
            let sum: f64 = lp.partition().indices().map(|j| lp.partition().multiplier(j, k)).sum();
            assert!((sum - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn annulus_support() {
        for i in 0..1000 {
            let r = 1.2 * i as f64 / 1000.0;
            let v = DyadicPartition::profile(0, r);
            if !(0.375..=1.0).contains(&r) {
                assert_eq!(v, 0.0);
            }
            assert!((0.0..=1.0).contains(&v));
            if r > 0.5 {
                assert_eq!(DyadicPartition::profile(-1, r), 0.0);
            }
        }
    }

    #[test]
    fn top_index() {
        assert_eq!(DyadicPartition::new(1).top(), 0);
        assert_eq!(DyadicPartition::new(4).top(), 2);
        assert_eq!(DyadicPartition::new(8).top(), 3);
        assert_eq!(DyadicPartition::new(6).top(), 2);
    }

    #[test]
    fn blocks_reconstruct() {
        for dim in [1, 2] {
            let lat = LatticeBox::periodic(dim, 8, 4).unwrap();
            let lp = LittlewoodPaley::new(lat).unwrap();
            let f = random(lat, 1);
            let mut sum = Field::zeros(lat);
            for b in lp.blocks(&f).unwrap() {
                sum = sum.add(&b).unwrap();
            }
            assert!(sum.max_abs_diff(&f).unwrap() < 1e-10);
            assert!(lp.block(&f, lp.partition().top() + 1).is_err());
            assert!(lp.block(&f, -2).is_err());
        }
    }

    #[test]
    fn pure_mode_hits_at_most_two_blocks() {
        let lat = LatticeBox::periodic(1, 8, 4).unwrap();
        let lp = LittlewoodPaley::new(lat).unwrap();
        let f = Field::from_fn(lat, |x| (std::f64::consts::PI * x[0]).cos());
        let nonzero = lp
            .blocks(&f)
            .unwrap()
            .iter()
            .filter(|b| b.sup_norm() > 1e-12)
            .count();
        assert!((1..=2).contains(&nonzero));
        let c = Field::constant(lat, 2.5);
        assert!(lp.block(&c, -1).unwrap().max_abs_diff(&c).unwrap() < 1e-12);
    }

    #[test]
    fn norm_zero_and_homogeneous() {
        let lat = LatticeBox::periodic(2, 4, 4).unwrap();
        let lp = LittlewoodPaley::new(lat).unwrap();
        let params = BesovParams::new(-0.5, 2.0, 1.0, WeightSpec::polynomial(1.0).unwrap()).unwrap();
        assert_eq!(lp.besov_norm(&Field::zeros(lat), &params).unwrap(), 0.0);
        let f = random(lat, 2);
        let a = lp.besov_norm(&f, &params).unwrap();
        let b = lp.besov_norm(&f.scale(-3.0), &params).unwrap();
        assert!((b - 3.0 * a).abs() < 1e-10 * a);
        assert!(BesovParams::new(0.0, 3.0, 1.0, WeightSpec::unit()).is_err());
    }

    #[test]
    fn triangle_inequality() {
        let lat = LatticeBox::periodic(1, 8, 4).unwrap();
        let lp = LittlewoodPaley::new(lat).unwrap();
        for (p, q) in [(1.0, 1.0), (2.0, f64::INFINITY), (f64::INFINITY, 2.0)] {
            let params = BesovParams::new(0.7, p, q, WeightSpec::polynomial(2.0).unwrap()).unwrap();
            for seed in 0..100 {
                let f = random(lat, seed);
                let g = random(lat, seed + 1000);
                let lhs = lp.besov_norm(&f.add(&g).unwrap(), &params).unwrap();
                let rhs = lp.besov_norm(&f, &params).unwrap() + lp.besov_norm(&g, &params).unwrap();
                assert!(lhs <= rhs * (1.0 + 1e-12));
            }
        }
    }

    #[test]
    fn almost_orthogonality() {
        let lat = LatticeBox::periodic(2, 8, 4).unwrap();
        let lp = LittlewoodPaley::new(lat).unwrap();
        for seed in 0..10 {
            let f = random(lat, seed);
            let total = lattice_pair(&f, &f).unwrap();
            let blocks: f64 = lp
                .blocks(&f)
                .unwrap()
                .iter()
                .map(|b| lattice_pair(b, b).unwrap())
                .sum();
            let ratio = total / blocks;
            assert!((1.0 / 3.0..=3.0).contains(&ratio), "ratio {ratio}");
        }
    }

    #[test]
    fn paraproduct_decomposition() {
        for dim in [1, 2] {
            let lat = LatticeBox::periodic(dim, 8, 2).unwrap();
            let lp = LittlewoodPaley::new(lat).unwrap();
            let f = random(lat, 3);
            let g = random(lat, 4);
            let sum = lp
                .paraproduct(&f, &g)
                .unwrap()
                .add(&lp.resonant(&f, &g).unwrap())
                .unwrap()
                .add(&lp.paraproduct(&g, &f).unwrap())
                .unwrap();
            assert!(sum.max_abs_diff(&f.mul(&g).unwrap()).unwrap() < 1e-10);
            let c = Field::constant(lat, 1.7);
            let lhs = lp
                .paraproduct(&c, &g)
                .unwrap()
                .add(&lp.resonant(&c, &g).unwrap())
                .unwrap()
                .add(&lp.paraproduct(&g, &c).unwrap())
                .unwrap();
            assert!(lhs.max_abs_diff(&g.scale(1.7)).unwrap() < 1e-10);
        }
    }

    #[test]
    fn commutator_definition() {
        let lat = LatticeBox::periodic(1, 8, 4).unwrap();
        let lp = LittlewoodPaley::new(lat).unwrap();
        let g = random(lat, 5);
        let h = random(lat, 6);
        let c1 = lp.commutator_c1(&Field::zeros(lat), &g, &h).unwrap();
        assert_eq!(c1.sup_norm(), 0.0);
        let f = random(lat, 7);
        let c = Field::constant(lat, 0.8);
        let direct = lp
            .resonant(&lp.paraproduct(&f, &c).unwrap(), &h)
            .unwrap()
            .sub(&f.mul(&lp.resonant(&c, &h).unwrap()).unwrap())
            .unwrap();
        let c1 = lp.commutator_c1(&f, &c, &h).unwrap();
        assert!(c1.max_abs_diff(&direct).unwrap() < 1e-10);
    }

    #[test]
    fn enhancement_inverts_laplacian_on_cutoff_support() {
        let lat = LatticeBox::periodic(2, 8, 4).unwrap();
        let env = sample_environment(&EnvironmentSpec {
            law: PotentialLaw::Rademacher,
            lattice: lat,
            seed: 2,
        })
        .unwrap();
        let e = pam_enhancement(&env).unwrap();
        let lp = LittlewoodPaley::new(lat).unwrap();
        let lhs = crate::lattice::discrete_laplacian(&e.x).scale(-1.0);
        let rhs = lp.plan().apply_multiplier(env.xi(), |k| chi_cutoff(&k)).unwrap();
        let rel = lhs.max_abs_diff(&rhs).unwrap() / rhs.sup_norm();
        assert!(rel < 1e-8, "residual {rel}");
        assert!(pam_enhancement(&Environment::zero(LatticeBox::periodic(1, 4, 4).unwrap())).is_err());
    }

    #[test]
    fn interpolation_exact_on_nodes_and_linear() {
        let coarse = LatticeBox::periodic(1, 4, 4).unwrap();
        let fine = LatticeBox::periodic(1, 16, 4).unwrap();
        let f = random(coarse, 9);
        let up = interpolate(&f, fine).unwrap();
        for i in 0..coarse.num_sites() {
            let j = fine.index([coarse.coords(i)[0] * 4, 0]).unwrap();
            assert!((up.at(j) - f.at(i)).abs() < 1e-14);
        }
        let lat2 = LatticeBox::periodic(2, 2, 4).unwrap();
        let fine2 = LatticeBox::periodic(2, 6, 4).unwrap();
        let plane = Field::from_fn(lat2, |x| 0.5 * x[0] - 0.25 * x[1]);
        let up2 = interpolate(&plane, fine2).unwrap();
        for i in 0..fine2.num_sites() {
            let x = fine2.position(i);
            if x[0] < 1.5 && x[1] < 1.5 {
                assert!((up2.at(i) - (0.5 * x[0] - 0.25 * x[1])).abs() < 1e-12);
            }
        }
    }
}
