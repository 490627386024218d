//! Finite computational lattice `[-M/2, M/2)^d ∩ (1/n)Z^d`, real fields on
//! it, nearest-neighbour difference operators and the lattice pairing.
//!
//! Sites are stored row-major with the first axis slowest. A site with
//! array index `i` along an axis sits at integer coordinate `j = i - s/2`
//! and physical position `x = j / n`, where `s = M n` is the number of
//! sites per side.

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Upper bound on `s^d` for dense field storage.
pub const MAX_DENSE_SITES: usize = 1 << 22;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Boundary {
    /// Opposite faces are identified.
    Periodic,
    /// Values outside the box are zero.
    Dirichlet,
}

impl Boundary {
    pub fn name(self) -> &'static str {
        match self {
            Boundary::Periodic => "periodic",
            Boundary::Dirichlet => "dirichlet",
        }
    }
}

/// Integer site coordinates; the second entry is zero in `d = 1`.
pub type Coords = [i64; 2];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct LatticeBox {
    dim: usize,
    scale: usize,
    side: usize,
    boundary: Boundary,
}

impl LatticeBox {
    pub fn new(dim: usize, scale: usize, side: usize, boundary: Boundary) -> Result<Self> {
        if !(1..=2).contains(&dim) {
            return Err(Error::InvalidLattice(format!("dimension {dim} not in {{1, 2}}")));
        }
        if scale == 0 {
            return Err(Error::InvalidLattice("scale n must be positive".into()));
        }
        if side == 0 || !side.is_multiple_of(2) {
            return Err(Error::InvalidLattice(format!(
                "side M = {side} must be a positive even integer"
            )));
        }
        let s = side * scale;
        if s < 4 {
            return Err(Error::InvalidLattice(format!(
                "sites per side {s} must be at least 4"
            )));
        }
        let total = s.checked_pow(dim as u32).unwrap_or(usize::MAX);
        if total > MAX_DENSE_SITES {
            return Err(Error::InvalidLattice(format!(
                "{total} sites exceed the dense limit {MAX_DENSE_SITES}"
            )));
        }
        Ok(Self {
            dim,
            scale,
            side,
            boundary,
        })
    }

    pub fn periodic(dim: usize, scale: usize, side: usize) -> Result<Self> {
        Self::new(dim, scale, side, Boundary::Periodic)
    }

    pub fn dirichlet(dim: usize, scale: usize, side: usize) -> Result<Self> {
        Self::new(dim, scale, side, Boundary::Dirichlet)
    }

    pub fn with_boundary(self, boundary: Boundary) -> Self {
        Self { boundary, ..self }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Lattice scale `n`; the spacing is `1/n`.
    pub fn scale(&self) -> usize {
        self.scale
    }

    /// Physical side length `M`.
    pub fn side(&self) -> usize {
        self.side
    }

    pub fn boundary(&self) -> Boundary {
        self.boundary
    }

    pub fn sites_per_side(&self) -> usize {
        self.side * self.scale
    }

    pub fn num_sites(&self) -> usize {
        self.sites_per_side().pow(self.dim as u32)
    }

    /// Number of nearest neighbours, `2d`.
    pub fn num_directions(&self) -> usize {
        2 * self.dim
    }

    /// `n^{-d}`, the volume of one lattice cell.
    pub fn cell_volume(&self) -> f64 {
        (self.scale as f64).powi(-(self.dim as i32))
    }

    fn half(&self) -> i64 {
        (self.sites_per_side() / 2) as i64
    }

    pub fn coords(&self, index: usize) -> Coords {
        let s = self.sites_per_side();
        let h = self.half();
        match self.dim {
            1 => [index as i64 - h, 0],
            _ => [(index / s) as i64 - h, (index % s) as i64 - h],
        }
    }

    /// Index of the site with the given integer coordinates, if it lies in the box.
    pub fn index(&self, coords: Coords) -> Option<usize> {
        let h = self.half();
        let s = self.sites_per_side() as i64;
        let a = coords[0] + h;
        if !(0..s).contains(&a) {
            return None;
        }
        match self.dim {
            1 => (coords[1] == 0).then_some(a as usize),
            _ => {
                let b = coords[1] + h;
                (0..s).contains(&b).then_some((a * s + b) as usize)
            }
        }
    }

    /// Index after periodic wrapping of the coordinates.
    pub fn wrapped_index(&self, coords: Coords) -> usize {
        let h = self.half();
        let s = self.sites_per_side() as i64;
        let a = (coords[0] + h).rem_euclid(s);
        match self.dim {
            1 => a as usize,
            _ => (a * s + (coords[1] + h).rem_euclid(s)) as usize,
        }
    }

    pub fn origin(&self) -> usize {
        self.index([0, 0]).expect("origin lies in every box")
    }

    pub fn position(&self, index: usize) -> [f64; 2] {
        let c = self.coords(index);
        let n = self.scale as f64;
        [c[0] as f64 / n, c[1] as f64 / n]
    }

    /// Euclidean norm `|x|` of the site position.
    pub fn radius(&self, index: usize) -> f64 {
        let p = self.position(index);
        p[0].hypot(p[1])
    }

    /// Unit step along `direction`: axis `direction / 2`, sign `+` for even.
    pub fn step(direction: usize) -> Coords {
        let sign = if direction.is_multiple_of(2) { 1 } else { -1 };
        let mut c = [0, 0];
        c[direction / 2] = sign;
        c
    }

    /// Neighbour of `index` in `direction`; `None` when a Dirichlet box is left.
    pub fn neighbor(&self, index: usize, direction: usize) -> Option<usize> {
        let c = self.coords(index);
        let d = Self::step(direction);
        let target = [c[0] + d[0], c[1] + d[1]];
        match self.boundary {
            Boundary::Periodic => Some(self.wrapped_index(target)),
            Boundary::Dirichlet => self.index(target),
        }
    }

    /// `true` when the site lies strictly inside `(-L/2, L/2)^d`.
    pub fn strictly_inside(&self, index: usize, killing_side: usize) -> bool {
        let limit = (killing_side * self.scale) as i64 / 2;
        let c = self.coords(index);
        c[..self.dim].iter().all(|j| j.abs() < limit)
    }

    pub(crate) fn check_same(&self, other: &LatticeBox) -> Result<()> {
        if self != other {
            return Err(Error::LatticeMismatch(format!("{self:?} vs {other:?}")));
        }
        Ok(())
    }
}

/// Real-valued function on the sites of a [`LatticeBox`].
#[derive(Clone, Debug, PartialEq)]
pub struct Field<T = f64> {
    lattice: LatticeBox,
    values: Vec<T>,
}

impl<T: Real> Field<T> {
    pub fn new(lattice: LatticeBox, values: Vec<T>) -> Result<Self> {
        if values.len() != lattice.num_sites() {
            return Err(Error::LatticeMismatch(format!(
                "{} values for {} sites",
                values.len(),
                lattice.num_sites()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("field construction".into()));
        }
        Ok(Self { lattice, values })
    }

    pub(crate) fn from_vec_unchecked(lattice: LatticeBox, values: Vec<T>) -> Self {
        debug_assert_eq!(values.len(), lattice.num_sites());
        Self { lattice, values }
    }

    pub fn zeros(lattice: LatticeBox) -> Self {
        Self::constant(lattice, T::zero())
    }

    pub fn constant(lattice: LatticeBox, value: T) -> Self {
        Self {
            lattice,
            values: vec![value; lattice.num_sites()],
        }
    }

    /// Indicator of a single site.
    pub fn indicator(lattice: LatticeBox, index: usize) -> Self {
        let mut f = Self::zeros(lattice);
        f.values[index] = T::one();
        f
    }

    /// Samples `g` at the physical position of every site.
    pub fn from_fn(lattice: LatticeBox, mut g: impl FnMut([f64; 2]) -> T) -> Self {
        let values = (0..lattice.num_sites()).map(|i| g(lattice.position(i))).collect();
        Self { lattice, values }
    }

    pub fn lattice(&self) -> &LatticeBox {
        &self.lattice
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }

    pub fn at(&self, index: usize) -> T {
        self.values[index]
    }

    pub fn at_origin(&self) -> T {
        self.values[self.lattice.origin()]
    }

    pub fn map(&self, g: impl Fn(T) -> T) -> Self {
        Self {
            lattice: self.lattice,
            values: self.values.iter().map(|&v| g(v)).collect(),
        }
    }

    pub fn zip_with(&self, other: &Self, g: impl Fn(T, T) -> T) -> Result<Self> {
        self.lattice.check_same(&other.lattice)?;
        Ok(Self {
            lattice: self.lattice,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| g(a, b))
                .collect(),
        })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a - b)
    }

    /// Pointwise product.
    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a * b)
    }

    pub fn scale(&self, c: T) -> Self {
        self.map(|v| c * v)
    }

    pub fn sup_norm(&self) -> T {
        self.values.iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }

    pub fn max(&self) -> T {
        self.values.iter().copied().fold(T::neg_infinity(), T::max)
    }

    pub fn min(&self) -> T {
        self.values.iter().copied().fold(T::infinity(), T::min)
    }

    /// Largest minus smallest value.
    pub fn oscillation(&self) -> T {
        self.max() - self.min()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Self) -> Result<T> {
        Ok(self.sub(other)?.sup_norm())
    }

    /// Converts the scalar type.
    pub fn cast<U: Real>(&self) -> Field<U> {
        Field {
            lattice: self.lattice,
            values: self.values.iter().map(|v| U::of(v.as_f64())).collect(),
        }
    }

    fn neighbor_value(&self, index: usize, direction: usize) -> T {
        self.lattice
            .neighbor(index, direction)
            .map_or(T::zero(), |j| self.values[j])
    }
}

/// `Δ^n f(x) = n² Σ_{y~x} (f(y) - f(x))`; Dirichlet boxes read zero outside.
pub fn discrete_laplacian<T: Real>(f: &Field<T>) -> Field<T> {
    let lat = f.lattice;
    let n2 = T::of((lat.scale * lat.scale) as f64);
    let values = (0..lat.num_sites())
        .map(|i| {
            let fx = f.values[i];
            let sum: T = (0..lat.num_directions())
                .map(|d| f.neighbor_value(i, d) - fx)
                .sum();
            n2 * sum
        })
        .collect();
    Field::from_vec_unchecked(lat, values)
}

/// Forward differences `(∇^n f)_i(x) = n (f(x + e_i/n) - f(x))`, one field per axis.
pub fn discrete_gradient<T: Real>(f: &Field<T>) -> Vec<Field<T>> {
    let lat = f.lattice;
    let n = T::of(lat.scale as f64);
    (0..lat.dim)
        .map(|axis| {
            let values = (0..lat.num_sites())
                .map(|i| n * (f.neighbor_value(i, 2 * axis) - f.values[i]))
                .collect();
            Field::from_vec_unchecked(lat, values)
        })
        .collect()
}

/// Squared gradient summed over all `2d` neighbours,
/// `n² Σ_{y~x} (f(y) - f(x))²`.
///
/// This is the jump part of the carré du champ of the walk generator and
/// is what enters the quadratic variation of the particle martingales.
pub fn neighbor_energy<T: Real>(f: &Field<T>) -> Field<T> {
    let lat = f.lattice;
    let n2 = T::of((lat.scale * lat.scale) as f64);
    let values = (0..lat.num_sites())
        .map(|i| {
            let fx = f.values[i];
            let sum: T = (0..lat.num_directions())
                .map(|d| {
                    let diff = f.neighbor_value(i, d) - fx;
                    diff * diff
                })
                .sum();
            n2 * sum
        })
        .collect();
    Field::from_vec_unchecked(lat, values)
}

/// `⟨f, g⟩_n = n^{-d} Σ_x f(x) g(x)`.
pub fn lattice_pair<T: Real>(f: &Field<T>, g: &Field<T>) -> Result<T> {
    f.lattice.check_same(&g.lattice)?;
    let sum: T = f.values.iter().zip(&g.values).map(|(&a, &b)| a * b).sum();
    Ok(sum * T::of(f.lattice.cell_volume()))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum WeightKind {
    /// `p(a)(x) = (1 + |x|)^{-a}`.
    Polynomial { a: f64 },
    /// `e(l)(x) = exp(-l |x|^σ)`.
    Exponential { l: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WeightSpec {
    pub kind: WeightKind,
    pub sigma: f64,
}

impl WeightSpec {
    pub const DEFAULT_SIGMA: f64 = 0.5;

    pub fn polynomial(a: f64) -> Result<Self> {
        Self::new(WeightKind::Polynomial { a }, Self::DEFAULT_SIGMA)
    }

    pub fn exponential(l: f64) -> Result<Self> {
        Self::new(WeightKind::Exponential { l }, Self::DEFAULT_SIGMA)
    }

    /// The trivial weight `p(0) ≡ 1`.
    pub fn unit() -> Self {
        Self {
            kind: WeightKind::Polynomial { a: 0.0 },
            sigma: Self::DEFAULT_SIGMA,
        }
    }

    pub fn new(kind: WeightKind, sigma: f64) -> Result<Self> {
        if !(sigma > 0.0 && sigma < 1.0) {
            return Err(Error::InvalidParameter(format!("sigma {sigma} not in (0, 1)")));
        }
        match kind {
            WeightKind::Polynomial { a } if !(a >= 0.0 && a.is_finite()) => {
                Err(Error::InvalidParameter(format!("polynomial weight exponent {a} < 0")))
            }
            WeightKind::Exponential { l } if !l.is_finite() => {
                Err(Error::InvalidParameter("exponential weight rate not finite".into()))
            }
            _ => Ok(Self { kind, sigma }),
        }
    }

    pub fn eval(&self, radius: f64) -> f64 {
        match self.kind {
            WeightKind::Polynomial { a } => (1.0 + radius).powf(-a),
            WeightKind::Exponential { l } => (-l * radius.powf(self.sigma)).exp(),
        }
    }
}

pub fn weight_field<T: Real>(lattice: LatticeBox, spec: &WeightSpec) -> Field<T> {
    let values = (0..lattice.num_sites())
        .map(|i| T::of(spec.eval(lattice.radius(i))))
        .collect();
    Field::from_vec_unchecked(lattice, values)
}

/// Continuum test functions sampled onto lattices of different scales.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum TestFunction {
    /// `amplitude · exp(-|x - center|² / width²)`.
    Gaussian {
        amplitude: f64,
        width: f64,
        center: [f64; 2],
    },
    Constant(f64),
}

impl TestFunction {
    pub fn gaussian(amplitude: f64, width: f64) -> Self {
        TestFunction::Gaussian {
            amplitude,
            width,
            center: [0.0, 0.0],
        }
    }

    pub fn eval(&self, x: [f64; 2]) -> f64 {
        match *self {
            TestFunction::Gaussian {
                amplitude,
                width,
                center,
            } => {
                let r2 = (x[0] - center[0]).powi(2) + (x[1] - center[1]).powi(2);
                amplitude * (-r2 / (width * width)).exp()
            }
            TestFunction::Constant(c) => c,
        }
    }

    pub fn sample(&self, lattice: LatticeBox) -> Field {
        Field::from_fn(lattice, |x| self.eval(x))
    }
}
