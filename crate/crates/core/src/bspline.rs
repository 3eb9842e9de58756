//! Uniform B-spline bases and their piecewise-polynomial representation.
//!
//! A basis of order `r` (degree `r - 1`) is built from the cardinal B-spline `M_r(u)`,
//! supported on `(0, r)`. The argument `x` is rescaled to `u = (x - x0) / h + shift` and the
//! basis functions are `M_r(u - i)` for `i = 0..p`. On the unit interval `[j, j + 1)`, with
//! `d = u - j`, the spline is
//!
//! ```text
//! B(u; theta) = d_r^T * M * (theta_{j-r+1}, ..., theta_j)
//! ```
//!
//! where `d_r = (1, d, ..., d^{r-1})` and `M` is the `r x r` matrix of [`piecewise_coeffs`].
//! Derivatives follow by inserting the differentiation matrix of [`deriv_matrix`].

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use nalgebra::DMatrix;
use num_rational::Ratio;
use num_traits::{FromPrimitive, Num, One, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Exact rational used for the cardinal coefficient tables.
pub type Rational = Ratio<i128>;

/// Highest order for which the exact tables stay well inside `i128`.
pub const MAX_ORDER: usize = 12;

fn binomial(n: usize, k: usize) -> i128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: i128 = 1;
    for t in 0..k {
        acc = acc * (n - t) as i128 / (t + 1) as i128;
    }
    acc
}

fn power<T: Num + Clone>(base: &T, exp: usize) -> T {
    // 0^0 = 1
    let mut acc = T::one();
    for _ in 0..exp {
        acc = acc * base.clone();
    }
    acc
}

fn binomial_rows<T: Num + Clone + FromPrimitive>(a: &T, i: &T, order: usize) -> Vec<Vec<T>> {
    (0..order)
        .map(|j| {
            (0..order)
                .map(|k| {
                    if k > j {
                        T::zero()
                    } else {
                        T::from_i128(binomial(j, k)).expect("binomial fits") * power(i, j - k) * power(a, k)
                    }
                })
                .collect()
        })
        .collect()
}

/// `B^T v`: the coefficients `b` with `P(i + a d; v) = sum_k b_k d^k`.
fn shift_poly<T: Num + Clone>(b: &[Vec<T>], v: &[T]) -> Vec<T> {
    (0..v.len())
        .map(|k| {
            b.iter()
                .zip(v)
                .fold(T::zero(), |acc, (row, vj)| acc + row[k].clone() * vj.clone())
        })
        .collect()
}

/// Lower-triangular binomial matrix `[B(a, i)]_{jk} = C(j, k) i^{j-k} a^k` for `k <= j`.
///
/// The expansion `P(i + a d; c) = sum_j c_j (i + a d)^j` collects into `d_r^T B(a, i)^T c`;
/// the transpose acts on coefficient vectors.
pub fn binomial_matrix(a: f64, i: f64, order: usize) -> DMatrix<f64> {
    let rows = binomial_rows(&a, &i, order);
    DMatrix::from_fn(order, order, |j, k| rows[j][k])
}

/// Exact variant of [`binomial_matrix`], row-major.
pub fn binomial_matrix_exact(a: Rational, i: Rational, order: usize) -> Vec<Vec<Rational>> {
    binomial_rows(&a, &i, order)
}

/// Per-interval polynomial coefficients of `M_r` in the global variable `u`:
/// `M_r(u) = sum_m pieces[j][m] u^m` on `[j, j + 1)`.
///
/// Built from the Cox-de Boor recursion
/// `M_q(u) = (u M_{q-1}(u) + (q - u) M_{q-1}(u - 1)) / (q - 1)` in exact arithmetic.
pub fn cardinal_pieces(order: usize) -> Vec<Vec<Rational>> {
    assert!((1..=MAX_ORDER).contains(&order), "order {order} unsupported");
    let mut pieces = vec![vec![Rational::one()]];
    for q in 2..=order {
        let shift_back = binomial_matrix_exact(Rational::one(), -Rational::one(), q - 1);
        let denom = Rational::from_integer((q - 1) as i128);
        let qr = Rational::from_integer(q as i128);
        let next = (0..q)
            .map(|j| {
                let mut poly = vec![Rational::zero(); q];
                if j + 1 < q {
                    for (m, c) in pieces[j].iter().enumerate() {
                        poly[m + 1] += *c;
                    }
                }
                if j >= 1 {
                    let shifted = shift_poly(&shift_back, &pieces[j - 1]);
                    for (m, c) in shifted.iter().enumerate() {
                        poly[m] += qr * c;
                        poly[m + 1] -= *c;
                    }
                }
                poly.into_iter().map(|c| c / denom).collect()
            })
            .collect();
        pieces = next;
    }
    pieces
}

/// Columns of the exact piecewise matrix, `M^j = B(-1, j + 1)^T c^j`.
pub fn piecewise_columns_exact(order: usize) -> Vec<Vec<Rational>> {
    let pieces = cardinal_pieces(order);
    (0..order)
        .map(|j| {
            let b = binomial_matrix_exact(-Rational::one(), Rational::from_integer(j as i128 + 1), order);
            shift_poly(&b, &pieces[j])
        })
        .collect()
}

/// Columns from the mirror identity `M_r(u) = M_r(r - u)`: `M^j = B(+1, r - 1 - j)^T c^{r-1-j}`.
pub fn piecewise_columns_mirrored(order: usize) -> Vec<Vec<Rational>> {
    let pieces = cardinal_pieces(order);
    (0..order)
        .map(|j| {
            let mirror = order - 1 - j;
            let b = binomial_matrix_exact(Rational::one(), Rational::from_integer(mirror as i128), order);
            shift_poly(&b, &pieces[mirror])
        })
        .collect()
}

fn rational_to_f64(q: &Rational) -> f64 {
    *q.numer() as f64 / *q.denom() as f64
}

/// The `r x r` matrix `M` with `B(u; theta) = d_r^T M theta_local` on each interval.
pub fn piecewise_coeffs(order: usize) -> DMatrix<f64> {
    let cols = piecewise_columns_exact(order);
    DMatrix::from_fn(order, order, |i, j| rational_to_f64(&cols[j][i]))
}

pub(crate) fn cached_coeffs(order: usize) -> Arc<DMatrix<f64>> {
    static CACHE: OnceLock<Mutex<HashMap<usize, Arc<DMatrix<f64>>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let mut guard = cache.lock().expect("coefficient cache poisoned");
    guard
        .entry(order)
        .or_insert_with(|| Arc::new(piecewise_coeffs(order)))
        .clone()
}

fn falling_factorial(i: usize, n: usize) -> f64 {
    ((i - n + 1)..=i).map(|v| v as f64).product()
}

/// Differentiation matrix `D_n` (`r x (r - n)`) with `[D_n]_{ij} = i! / (i - n)!` on `i - j = n`.
pub fn deriv_matrix(order: usize, n: usize) -> Result<DMatrix<f64>> {
    if n >= order {
        return Err(Error::DerivativeOrder { n, order });
    }
    let mut d = DMatrix::zeros(order, order - n);
    for j in 0..order - n {
        d[(j + n, j)] = falling_factorial(j + n, n);
    }
    Ok(d)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Edge {
    /// All `r` basis functions are present at the edge.
    #[default]
    Free,
    /// The spline and all its derivatives vanish at the edge.
    Clamped,
}

/// Declarative basis description, as found in model configuration files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "boundary", rename_all = "kebab-case")]
pub enum BasisSpec {
    Periodic {
        order: usize,
        num_params: usize,
        origin: f64,
        length: f64,
    },
    Aperiodic {
        order: usize,
        num_params: usize,
        origin: f64,
        length: f64,
        #[serde(default)]
        left: Edge,
        #[serde(default)]
        right: Edge,
    },
}

impl BasisSpec {
    pub fn build(&self) -> Result<SplineBasis> {
        match *self {
            BasisSpec::Periodic {
                order,
                num_params,
                origin,
                length,
            } => SplineBasis::periodic(order, num_params, origin, length),
            BasisSpec::Aperiodic {
                order,
                num_params,
                origin,
                length,
                left,
                right,
            } => SplineBasis::aperiodic(order, num_params, origin, length, left, right),
        }
    }
}

/// An order-`r` uniform B-spline family with `p` coefficients on `[x0, x0 + L]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SplineBasis {
    order: usize,
    num_params: usize,
    knot_spacing: f64,
    origin: f64,
    length: f64,
    periodic: bool,
    shift: f64,
    coeffs: Arc<DMatrix<f64>>,
}

/// The nonzero window of a basis row: `values[i]` multiplies coefficient `first + i`
/// (wrapped for periodic bases, discarded outside `0..p` otherwise).
#[derive(Debug, Clone, PartialEq)]
pub struct LocalRow {
    pub first: i64,
    pub values: Vec<f64>,
}

/// Dense basis row of length `p`; `row . theta` is the `derivative`-th derivative of the spline.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisRow {
    pub values: Vec<f64>,
    pub derivative: usize,
}

impl BasisRow {
    pub fn dot(&self, theta: &[f64]) -> f64 {
        self.values.iter().zip(theta).map(|(a, b)| a * b).sum()
    }
}

impl SplineBasis {
    fn check_common(order: usize, num_params: usize, length: f64) -> Result<()> {
        if !(1..=MAX_ORDER).contains(&order) {
            return Err(Error::InvalidBasis(format!(
                "order {order} outside 1..={MAX_ORDER}"
            )));
        }
        if num_params < order {
            return Err(Error::InvalidBasis(format!(
                "{num_params} coefficients cannot carry an order-{order} basis"
            )));
        }
        if !(length.is_finite() && length > 0.0) {
            return Err(Error::InvalidBasis(format!("length {length} must be positive")));
        }
        Ok(())
    }

    /// Periodic basis: `p` knots spaced `h = L / p`, indices wrap modulo `p`.
    pub fn periodic(order: usize, num_params: usize, origin: f64, length: f64) -> Result<Self> {
        Self::check_common(order, num_params, length)?;
        Ok(SplineBasis {
            order,
            num_params,
            knot_spacing: length / num_params as f64,
            origin,
            length,
            periodic: true,
            shift: order as f64 / 2.0,
            coeffs: cached_coeffs(order),
        })
    }

    /// Aperiodic basis whose knot spacing is chosen so the domain ends exactly at the
    /// requested edge kinds.
    pub fn aperiodic(
        order: usize,
        num_params: usize,
        origin: f64,
        length: f64,
        left: Edge,
        right: Edge,
    ) -> Result<Self> {
        Self::check_common(order, num_params, length)?;
        let shift = match left {
            Edge::Free => order as f64 - 1.0,
            Edge::Clamped => 0.0,
        };
        let u_max = match right {
            Edge::Free => num_params as f64,
            Edge::Clamped => (num_params + order - 1) as f64,
        };
        if u_max <= shift {
            return Err(Error::InvalidBasis(
                "free edges need more coefficients than the order".into(),
            ));
        }
        Self::aperiodic_with_spacing(order, num_params, origin, length, length / (u_max - shift), left)
    }

    /// Aperiodic basis with an explicit knot spacing; `L / h` need not be an integer.
    pub fn aperiodic_with_spacing(
        order: usize,
        num_params: usize,
        origin: f64,
        length: f64,
        knot_spacing: f64,
        left: Edge,
    ) -> Result<Self> {
        Self::check_common(order, num_params, length)?;
        if !(knot_spacing.is_finite() && knot_spacing > 0.0) {
            return Err(Error::InvalidBasis("knot spacing must be positive".into()));
        }
        let shift = match left {
            Edge::Free => order as f64 - 1.0,
            Edge::Clamped => 0.0,
        };
        let basis = SplineBasis {
            order,
            num_params,
            knot_spacing,
            origin,
            length,
            periodic: false,
            shift,
            coeffs: cached_coeffs(order),
        };
        let support_end = (num_params + order - 1) as f64;
        if basis.u_max() > support_end * (1.0 + 1e-12) {
            return Err(Error::InvalidBasis(format!(
                "domain ends at u = {} beyond the knot support {support_end}",
                basis.u_max()
            )));
        }
        Ok(basis)
    }

    pub fn order(&self) -> usize {
        self.order
    }
    pub fn num_params(&self) -> usize {
        self.num_params
    }
    pub fn knot_spacing(&self) -> f64 {
        self.knot_spacing
    }
    pub fn origin(&self) -> f64 {
        self.origin
    }
    pub fn length(&self) -> f64 {
        self.length
    }
    pub fn is_periodic(&self) -> bool {
        self.periodic
    }
    pub fn shift(&self) -> f64 {
        self.shift
    }
    pub fn coeffs(&self) -> &DMatrix<f64> {
        &self.coeffs
    }

    /// Rescaled coordinate of the left end of the domain.
    pub fn u_min(&self) -> f64 {
        self.shift
    }

    /// Rescaled coordinate of the right end of the domain.
    pub fn u_max(&self) -> f64 {
        self.length / self.knot_spacing + self.shift
    }

    /// True when the spline and all its derivatives are forced to zero at `x0 + L`.
    pub fn vanishes_at_right_end(&self) -> bool {
        !self.periodic && (self.u_max() - (self.num_params + self.order - 1) as f64).abs() < 1e-9
    }

    /// Region where every one of the `r` local basis functions exists (rows sum to one).
    pub fn interior(&self) -> (f64, f64) {
        if self.periodic {
            return (self.origin, self.origin + self.length);
        }
        let lo = (self.order as f64 - 1.0).max(self.u_min());
        let hi = (self.num_params as f64).min(self.u_max());
        (self.x_of_u(lo), self.x_of_u(hi))
    }

    pub fn x_of_u(&self, u: f64) -> f64 {
        self.origin + (u - self.shift) * self.knot_spacing
    }

    pub fn contains(&self, x: f64) -> bool {
        if self.periodic {
            return x.is_finite();
        }
        let tol = 1e-12 * self.length.max(1.0);
        x >= self.origin - tol && x <= self.origin + self.length + tol
    }

    /// Interval index `j` and local coordinate `d` in `[0, 1]`.
    fn locate(&self, x: f64) -> Result<(i64, f64)> {
        if !self.contains(x) {
            return Err(Error::Domain {
                x,
                lo: self.origin,
                hi: self.origin + self.length,
            });
        }
        let u = if self.periodic {
            let mut s = (x - self.origin).rem_euclid(self.length);
            if s >= self.length {
                s -= self.length;
            }
            s / self.knot_spacing + self.shift
        } else {
            ((x - self.origin) / self.knot_spacing + self.shift).clamp(self.u_min(), self.u_max())
        };
        let mut j = u.floor();
        if !self.periodic && j >= self.u_max() {
            // x0 + L belongs to the last interval
            j = self.u_max().ceil() - 1.0;
        }
        Ok((j as i64, u - j))
    }

    /// Nonzero window of the derivative-`n` row at `x`, scaled to derivatives in `x`.
    pub fn local_row(&self, x: f64, n: usize) -> Result<LocalRow> {
        let r = self.order;
        if n >= r {
            return Err(Error::DerivativeOrder { n, order: r });
        }
        let (j, d) = self.locate(x)?;
        // w_i = d^n/dd^n of d^i
        let mut w = vec![0.0; r];
        let mut dp = 1.0;
        for (i, wi) in w.iter_mut().enumerate().skip(n) {
            *wi = falling_factorial(i, n) * dp;
            dp *= d;
        }
        let scale = self.knot_spacing.powi(-(n as i32));
        let m = &*self.coeffs;
        let values = (0..r)
            .map(|c| scale * (n..r).map(|i| m[(i, c)] * w[i]).sum::<f64>())
            .collect();
        Ok(LocalRow {
            first: j - r as i64 + 1,
            values,
        })
    }

    /// Maps a local position to a coefficient index, or `None` when it falls off an
    /// aperiodic edge.
    pub fn global_index(&self, index: i64) -> Option<usize> {
        let p = self.num_params as i64;
        if self.periodic {
            Some(index.rem_euclid(p) as usize)
        } else if (0..p).contains(&index) {
            Some(index as usize)
        } else {
            None
        }
    }

    /// Calls `f(index, value)` for each coefficient touched by the row at `x`.
    pub fn for_each_entry(&self, x: f64, n: usize, mut f: impl FnMut(usize, f64)) -> Result<()> {
        let row = self.local_row(x, n)?;
        for (i, v) in row.values.iter().enumerate() {
            if let Some(g) = self.global_index(row.first + i as i64) {
                f(g, *v);
            }
        }
        Ok(())
    }

    pub fn basis_row(&self, x: f64, n: usize) -> Result<BasisRow> {
        let mut values = vec![0.0; self.num_params];
        self.for_each_entry(x, n, |g, v| values[g] += v)?;
        Ok(BasisRow {
            values,
            derivative: n,
        })
    }

    /// `n`-th derivative of the spline with coefficients `theta` at `x`.
    pub fn evaluate(&self, theta: &[f64], x: f64, n: usize) -> Result<f64> {
        if theta.len() != self.num_params {
            return Err(Error::DimensionMismatch {
                expected: self.num_params,
                got: theta.len(),
            });
        }
        let mut acc = 0.0;
        self.for_each_entry(x, n, |g, v| acc += v * theta[g])?;
        Ok(acc)
    }

    /// Coefficients reproducing `f(x) = a + b x` wherever all local functions exist.
    pub fn linear_coefficients(&self, a: f64, b: f64) -> Vec<f64> {
        // sum_i M_r(u - i) (i + r/2) = u
        let half = self.order as f64 / 2.0;
        (0..self.num_params)
            .map(|i| a + b * self.x_of_u(i as f64 + half))
            .collect()
    }

    pub fn spec(&self) -> BasisSpec {
        if self.periodic {
            BasisSpec::Periodic {
                order: self.order,
                num_params: self.num_params,
                origin: self.origin,
                length: self.length,
            }
        } else {
            let left = if self.shift == 0.0 {
                Edge::Clamped
            } else {
                Edge::Free
            };
            let right = if self.vanishes_at_right_end() {
                Edge::Clamped
            } else {
                Edge::Free
            };
            BasisSpec::Aperiodic {
                order: self.order,
                num_params: self.num_params,
                origin: self.origin,
                length: self.length,
                left,
                right,
            }
        }
    }
}
