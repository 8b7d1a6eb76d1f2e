//! Symmetric second- and fourth-order tensors in Mandel form.
//!
//! A symmetric 3×3 tensor is stored as the orthonormal 6-vector
//! `(xx, yy, zz, √2·yz, √2·xz, √2·xy)`. In this basis the double contraction
//! of two second-order tensors is the plain dot product, and a fourth-order
//! tensor with minor symmetries is a 6×6 matrix whose composition and
//! inversion are ordinary matrix operations.

use std::ops::{Add, AddAssign, Index, IndexMut, Mul, Neg, Sub, SubAssign};

use nalgebra::{Matrix6, Vector6};

use crate::error::{Error, Result};

pub const SQRT2: f64 = std::f64::consts::SQRT_2;

/// Default cap on the 1-norm condition estimate accepted by [`invert4`].
pub const DEFAULT_CONDITION_CAP: f64 = 1e12;

/// (row, column) of the 3×3 entry held by each Mandel slot.
const MANDEL_INDEX: [(usize, usize); 6] = [(0, 0), (1, 1), (2, 2), (1, 2), (0, 2), (0, 1)];

#[inline]
fn mandel_weight(k: usize) -> f64 {
    if k < 3 {
        1.0
    } else {
        SQRT2
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SymTensor2(pub [f64; 6]);

impl SymTensor2 {
    pub const ZERO: SymTensor2 = SymTensor2([0.0; 6]);

    pub const fn new(m: [f64; 6]) -> Self {
        SymTensor2(m)
    }

    pub fn identity() -> Self {
        SymTensor2([1.0, 1.0, 1.0, 0.0, 0.0, 0.0])
    }

    pub fn diag(a: f64, b: f64, c: f64) -> Self {
        SymTensor2([a, b, c, 0.0, 0.0, 0.0])
    }

    /// Builds from a 3×3 matrix, symmetrizing off-diagonal pairs.
    pub fn from_matrix(a: [[f64; 3]; 3]) -> Self {
        let mut m = [0.0; 6];
        for (k, &(i, j)) in MANDEL_INDEX.iter().enumerate() {
            m[k] = mandel_weight(k) * 0.5 * (a[i][j] + a[j][i]);
        }
        SymTensor2(m)
    }

    pub fn to_matrix(&self) -> [[f64; 3]; 3] {
        let mut a = [[0.0; 3]; 3];
        for (k, &(i, j)) in MANDEL_INDEX.iter().enumerate() {
            let v = self.0[k] / mandel_weight(k);
            a[i][j] = v;
            a[j][i] = v;
        }
        a
    }

    /// Tensor component `(i, j)` (not the Mandel slot).
    pub fn component(&self, i: usize, j: usize) -> f64 {
        let k = MANDEL_INDEX
            .iter()
            .position(|&(a, b)| (a, b) == (i, j) || (a, b) == (j, i))
            .expect("index out of range");
        self.0[k] / mandel_weight(k)
    }

    pub fn trace(&self) -> f64 {
        self.0[0] + self.0[1] + self.0[2]
    }

    /// Double contraction `self : other`.
    #[inline]
    pub fn ddot(&self, other: &SymTensor2) -> f64 {
        self.0.iter().zip(other.0.iter()).map(|(a, b)| a * b).sum()
    }

    pub fn norm(&self) -> f64 {
        self.ddot(self).sqrt()
    }

    /// Dyadic product `self ⊗ other`.
    pub fn outer(&self, other: &SymTensor2) -> SymTensor4 {
        SymTensor4(self.to_vector() * other.to_vector().transpose())
    }

    pub fn to_vector(&self) -> Vector6<f64> {
        Vector6::from_column_slice(&self.0)
    }

    pub fn from_vector(v: &Vector6<f64>) -> Self {
        let mut m = [0.0; 6];
        m.copy_from_slice(v.as_slice());
        SymTensor2(m)
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&v| v == 0.0)
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().fold(0.0, |acc: f64, v| acc.max(v.abs()))
    }
}

impl Index<usize> for SymTensor2 {
    type Output = f64;
    fn index(&self, k: usize) -> &f64 {
        &self.0[k]
    }
}

impl IndexMut<usize> for SymTensor2 {
    fn index_mut(&mut self, k: usize) -> &mut f64 {
        &mut self.0[k]
    }
}

impl Add for SymTensor2 {
    type Output = SymTensor2;
    fn add(mut self, rhs: SymTensor2) -> SymTensor2 {
        self += rhs;
        self
    }
}

impl AddAssign for SymTensor2 {
    fn add_assign(&mut self, rhs: SymTensor2) {
        for (a, b) in self.0.iter_mut().zip(rhs.0) {
            *a += b;
        }
    }
}

impl Sub for SymTensor2 {
    type Output = SymTensor2;
    fn sub(mut self, rhs: SymTensor2) -> SymTensor2 {
        self -= rhs;
        self
    }
}

impl SubAssign for SymTensor2 {
    fn sub_assign(&mut self, rhs: SymTensor2) {
        for (a, b) in self.0.iter_mut().zip(rhs.0) {
            *a -= b;
        }
    }
}

impl Neg for SymTensor2 {
    type Output = SymTensor2;
    fn neg(self) -> SymTensor2 {
        self * -1.0
    }
}

impl Mul<f64> for SymTensor2 {
    type Output = SymTensor2;
    fn mul(mut self, s: f64) -> SymTensor2 {
        self.0.iter_mut().for_each(|a| *a *= s);
        self
    }
}

impl Mul<SymTensor2> for f64 {
    type Output = SymTensor2;
    fn mul(self, t: SymTensor2) -> SymTensor2 {
        t * self
    }
}

/// Fourth-order tensor with minor symmetries, as a 6×6 Mandel matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SymTensor4(pub Matrix6<f64>);

impl SymTensor4 {
    pub fn zeros() -> Self {
        SymTensor4(Matrix6::zeros())
    }

    /// Symmetric identity `⁴Iˢ`.
    pub fn identity() -> Self {
        SymTensor4(Matrix6::identity())
    }

    /// `I ⊗ I`.
    pub fn ii() -> Self {
        let i = SymTensor2::identity();
        i.outer(&i)
    }

    /// Deviatoric projector `⁴Iᵈ = ⁴Iˢ − I⊗I/3`.
    pub fn deviatoric() -> Self {
        Self::identity() - Self::ii() * (1.0 / 3.0)
    }

    /// `T : a`.
    #[inline]
    pub fn apply(&self, a: &SymTensor2) -> SymTensor2 {
        SymTensor2::from_vector(&(self.0 * a.to_vector()))
    }

    /// `self : other` (composition).
    pub fn compose(&self, other: &SymTensor4) -> SymTensor4 {
        SymTensor4(self.0 * other.0)
    }

    pub fn transpose(&self) -> SymTensor4 {
        SymTensor4(self.0.transpose())
    }

    pub fn norm(&self) -> f64 {
        self.0.norm()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0[(i, j)]
    }

    /// Largest `|Tᵢⱼ − Tⱼᵢ|` relative to the Frobenius norm.
    pub fn asymmetry(&self) -> f64 {
        let n = self.norm();
        if n == 0.0 {
            return 0.0;
        }
        (self.0 - self.0.transpose()).amax() / n
    }

    /// In-plane block `(xx, yy, √2·xy)` as a row-major 3×3 array.
    pub fn in_plane_block(&self) -> [f64; 9] {
        const IDX: [usize; 3] = [0, 1, 5];
        let mut out = [0.0; 9];
        for (r, &i) in IDX.iter().enumerate() {
            for (c, &j) in IDX.iter().enumerate() {
                out[3 * r + c] = self.0[(i, j)];
            }
        }
        out
    }
}

impl Add for SymTensor4 {
    type Output = SymTensor4;
    fn add(self, rhs: SymTensor4) -> SymTensor4 {
        SymTensor4(self.0 + rhs.0)
    }
}

impl Sub for SymTensor4 {
    type Output = SymTensor4;
    fn sub(self, rhs: SymTensor4) -> SymTensor4 {
        SymTensor4(self.0 - rhs.0)
    }
}

impl Mul<f64> for SymTensor4 {
    type Output = SymTensor4;
    fn mul(self, s: f64) -> SymTensor4 {
        SymTensor4(self.0 * s)
    }
}

impl Mul<SymTensor2> for SymTensor4 {
    type Output = SymTensor2;
    fn mul(self, a: SymTensor2) -> SymTensor2 {
        self.apply(&a)
    }
}

impl Mul<SymTensor4> for SymTensor4 {
    type Output = SymTensor4;
    fn mul(self, rhs: SymTensor4) -> SymTensor4 {
        self.compose(&rhs)
    }
}

/// The identity and projection tensors used by the constitutive model.
#[derive(Debug, Clone, Copy)]
pub struct StandardTensors {
    pub i: SymTensor2,
    pub ii: SymTensor4,
    pub is: SymTensor4,
    pub id: SymTensor4,
}

impl StandardTensors {
    pub fn new() -> Self {
        StandardTensors {
            i: SymTensor2::identity(),
            ii: SymTensor4::ii(),
            is: SymTensor4::identity(),
            id: SymTensor4::deviatoric(),
        }
    }
}

impl Default for StandardTensors {
    fn default() -> Self {
        Self::new()
    }
}

/// `a − tr(a)·I/3`.
pub fn deviator(a: &SymTensor2) -> SymTensor2 {
    let p = a.trace() / 3.0;
    let mut d = *a;
    d.0[0] -= p;
    d.0[1] -= p;
    d.0[2] -= p;
    d
}

/// Von Mises equivalent stress `√(3/2 · sᵈ:sᵈ)`.
pub fn equivalent_stress(s: &SymTensor2) -> f64 {
    let d = deviator(s);
    (1.5 * d.ddot(&d)).sqrt()
}

/// Equivalent strain `√(2/3 · eᵈ:eᵈ)`, work conjugate to [`equivalent_stress`].
pub fn equivalent_strain(e: &SymTensor2) -> f64 {
    let d = deviator(e);
    (2.0 / 3.0 * d.ddot(&d)).sqrt()
}

/// Inverse of a fourth-order tensor with the default condition cap.
pub fn invert4(t: &SymTensor4) -> Result<SymTensor4> {
    invert4_with_cap(t, DEFAULT_CONDITION_CAP)
}

/// LU inverse with partial pivoting; rejects matrices whose 1-norm condition
/// estimate exceeds `cap`.
pub fn invert4_with_cap(t: &SymTensor4, cap: f64) -> Result<SymTensor4> {
    let inv = t.0.lu().try_inverse().ok_or(Error::SingularMatrix {
        condition: f64::INFINITY,
    })?;
    let condition = one_norm(&t.0) * one_norm(&inv);
    if !condition.is_finite() || condition > cap {
        return Err(Error::SingularMatrix { condition });
    }
    Ok(SymTensor4(inv))
}

fn one_norm(m: &Matrix6<f64>) -> f64 {
    m.column_iter()
        .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ddot3(a: &[[f64; 3]; 3], b: &[[f64; 3]; 3]) -> f64 {
        let mut s = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                s += a[i][j] * b[j][i];
            }
        }
        s
    }

    fn sym_strategy() -> impl Strategy<Value = SymTensor2> {
        proptest::array::uniform6(-10.0..10.0f64).prop_map(SymTensor2)
    }

    #[test]
    fn deviator_examples() {
        assert_eq!(deviator(&SymTensor2::identity()).max_abs(), 0.0);
        let s = 3.0;
        let d = deviator(&SymTensor2::diag(s, 0.0, 0.0));
        let want = SymTensor2::diag(2.0 * s / 3.0, -s / 3.0, -s / 3.0);
        assert!((d - want).max_abs() < 1e-15);
    }

    #[test]
    fn deviator_matches_3x3_arithmetic() {
        let a = [[1.3, -0.4, 2.2], [-0.4, 0.7, 0.1], [2.2, 0.1, -3.5]];
        let tr = a[0][0] + a[1][1] + a[2][2];
        let d = deviator(&SymTensor2::from_matrix(a)).to_matrix();
        for i in 0..3 {
            for j in 0..3 {
                let want = a[i][j] - if i == j { tr / 3.0 } else { 0.0 };
                assert!((d[i][j] - want).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn equivalent_measures() {
        assert_eq!(equivalent_stress(&SymTensor2::ZERO), 0.0);
        assert!((equivalent_stress(&SymTensor2::diag(250.0, 0.0, 0.0)) - 250.0).abs() < 1e-12);
        // pure shear with σ_xy = τ: 3×3 oracle gives sᵈ:sᵈ = 2τ², so σ_eq = √3·τ
        let tau = 7.0;
        let shear = SymTensor2::from_matrix([[0.0, tau, 0.0], [tau, 0.0, 0.0], [0.0, 0.0, 0.0]]);
        assert!((equivalent_stress(&shear) - 3f64.sqrt() * tau).abs() < 1e-12);

        assert_eq!(equivalent_strain(&SymTensor2::ZERO), 0.0);
        let e = 0.02;
        assert!((equivalent_strain(&SymTensor2::diag(e, -e / 2.0, -e / 2.0)) - e).abs() < 1e-15);
        let k = 3f64.sqrt() / 2.0 * 0.05;
        assert!((equivalent_strain(&SymTensor2::diag(k, -k, 0.0)) - 0.05).abs() < 1e-15);
    }

    #[test]
    fn standard_tensor_identities() {
        let st = StandardTensors::new();
        assert_eq!((st.id - (st.is - st.ii * (1.0 / 3.0))).norm(), 0.0);
        assert!((st.id * st.id - st.id).norm() < 1e-15);
        assert!(st.id.apply(&st.i).max_abs() < 1e-15);
    }

    #[test]
    fn invert_examples() {
        let is = SymTensor4::identity();
        assert_eq!(invert4(&is).unwrap(), is);
        let inv = invert4(&(is * 2.0)).unwrap();
        assert!((inv - is * 0.5).norm() < 1e-15);
        assert!(matches!(
            invert4(&SymTensor4::deviatoric()),
            Err(Error::SingularMatrix { .. })
        ));
    }

    #[test]
    fn in_plane_block_picks_xx_yy_xy() {
        let mut m = Matrix6::zeros();
        for i in 0..6 {
            for j in 0..6 {
                m[(i, j)] = (10 * i + j) as f64;
            }
        }
        let b = SymTensor4(m).in_plane_block();
        assert_eq!(b, [0.0, 1.0, 5.0, 10.0, 11.0, 15.0, 50.0, 51.0, 55.0]);
    }

    proptest! {
        #[test]
        fn mandel_contraction_matches_component_sum(a in sym_strategy(), b in sym_strategy()) {
            let want = ddot3(&a.to_matrix(), &b.to_matrix());
            let got = a.ddot(&b);
            prop_assert!((got - want).abs() <= 1e-14 * (1.0 + a.norm() * b.norm()));
            let back = SymTensor2::from_matrix(a.to_matrix());
            prop_assert!((back - a).max_abs() <= 1e-15 * (1.0 + a.max_abs()));
        }

        #[test]
        fn projector_equals_deviator(a in sym_strategy()) {
            let d = SymTensor4::deviatoric().apply(&a);
            prop_assert!((d - deviator(&a)).max_abs() <= 1e-14 * (1.0 + a.max_abs()));
            prop_assert!(deviator(&a).trace().abs() <= 1e-14 * (1.0 + a.max_abs()));
        }

        #[test]
        fn equivalent_stress_is_homogeneous(a in sym_strategy(), c in -5.0..5.0f64) {
            let lhs = equivalent_stress(&(a * c));
            let rhs = c.abs() * equivalent_stress(&a);
            prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + rhs));
        }

        #[test]
        fn inverse_is_an_involution(entries in proptest::array::uniform32(-1.0..1.0f64)) {
            let mut m = Matrix6::identity() * 4.0;
            for (k, v) in entries.iter().enumerate() {
                m[(k % 6, (k / 6 + k) % 6)] += v;
            }
            let t = SymTensor4(m);
            let inv = invert4(&t).unwrap();
            prop_assert!((inv * t - SymTensor4::identity()).norm() <= 1e-10);
            let back = invert4(&inv).unwrap();
            prop_assert!((back - t).norm() <= 1e-9 * t.norm());
        }
    }
}
