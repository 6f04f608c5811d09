//! Effective electron-spin Hamiltonian of one SnV manifold (ground or excited).
//!
//! Each manifold is a 4-dimensional orbital (x, y) x spin (up, down) space.
//! The Hamiltonian collects four contributions: spin-orbit coupling, spin
//! Zeeman, quenched orbital Zeeman, and diagonal strain. Matrices can be
//! built either in the `{xy}` orbital basis or in the spin-orbit eigenbasis
//! (`{so}`); both share one spectrum.
//!
//! Units: energies and frequencies in GHz, magnetic fields in tesla, angles
//! in degrees at every public boundary (radians only inside the math).

use nalgebra::Matrix4;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eigen;

/// Hermiticity tolerance for constructed matrices, GHz absolute.
pub const HERMITICITY_TOL: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid {name}: {value} ({reason})")]
    InvalidParameter {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },
    #[error("matrix is not Hermitian: |H - H^dagger| max entry {max_dev:.3e} GHz")]
    NotHermitian { max_dev: f64 },
}

/// Gyromagnetic ratios used throughout; overridable via configuration but
/// constant within one run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhysicalConstants {
    /// Orbital gyromagnetic ratio, GHz/T.
    pub gamma_l: f64,
    /// Spin gyromagnetic ratio, GHz/T.
    pub gamma_s: f64,
    /// Carbon-13 nuclear gyromagnetic ratio, MHz/T.
    pub gamma_c13: f64,
}

impl Default for PhysicalConstants {
    fn default() -> Self {
        Self {
            gamma_l: 14.0,
            gamma_s: 28.0,
            gamma_c13: 10.7084,
        }
    }
}

impl PhysicalConstants {
    pub fn validate(&self) -> Result<(), ModelError> {
        for (name, value) in [
            ("gamma_l", self.gamma_l),
            ("gamma_s", self.gamma_s),
            ("gamma_c13", self.gamma_c13),
        ] {
            if !(value > 0.0 && value.is_finite()) {
                return Err(ModelError::InvalidParameter {
                    name,
                    value,
                    reason: "must be strictly positive",
                });
            }
        }
        Ok(())
    }
}

/// Parameters of one manifold: spin-orbit splitting, the two orbital
/// quenching factors, and the diagonalized strain magnitude.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifoldParams {
    /// Spin-orbit splitting, GHz.
    #[serde(rename = "lambda_ghz")]
    pub lambda: f64,
    /// Orbital quenching factor for the m_j = +-1/2 sublevels.
    pub f_12: f64,
    /// Orbital quenching factor for the m_j = +-3/2 sublevels.
    pub f_32: f64,
    /// Strain magnitude, GHz.
    #[serde(rename = "upsilon_ghz")]
    pub upsilon: f64,
}

impl ManifoldParams {
    pub fn new(lambda: f64, f_12: f64, f_32: f64, upsilon: f64) -> Result<Self, ModelError> {
        let params = Self {
            lambda,
            f_12,
            f_32,
            upsilon,
        };
        params.validate()?;
        Ok(params)
    }

    /// lambda = 0 is tolerated (the matrices stay well defined) even though
    /// the doublet labels lose meaning; callers may warn on it.
    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(ModelError::InvalidParameter {
                name: "lambda",
                value: self.lambda,
                reason: "must be non-negative and finite",
            });
        }
        if !(self.upsilon >= 0.0 && self.upsilon.is_finite()) {
            return Err(ModelError::InvalidParameter {
                name: "upsilon",
                value: self.upsilon,
                reason: "must be non-negative and finite",
            });
        }
        for (name, value) in [("f_12", self.f_12), ("f_32", self.f_32)] {
            if !(0.0..=1.0).contains(&value) || !value.is_finite() {
                return Err(ModelError::InvalidParameter {
                    name,
                    value,
                    reason: "quenching factors must lie in [0, 1]",
                });
            }
        }
        Ok(())
    }
}

/// Full parameter set of one emitter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SnVModel {
    pub ground: ManifoldParams,
    pub excited: ManifoldParams,
    /// Calibrated amplitude of the parallel field component, tesla.
    #[serde(rename = "b_parallel_cal_t")]
    pub b_parallel_cal: f64,
    /// Calibrated amplitude of the perpendicular field component, tesla.
    #[serde(rename = "b_perp_cal_t")]
    pub b_perp_cal: f64,
    /// Field misalignment of the rotation plane, degrees.
    #[serde(rename = "delta_theta_deg")]
    pub delta_theta: f64,
}

impl SnVModel {
    pub fn validate(&self) -> Result<(), ModelError> {
        self.ground.validate()?;
        self.excited.validate()?;
        for (name, value) in [
            ("b_parallel_cal", self.b_parallel_cal),
            ("b_perp_cal", self.b_perp_cal),
        ] {
            if !(value >= 0.0 && value.is_finite()) {
                return Err(ModelError::InvalidParameter {
                    name,
                    value,
                    reason: "calibrated field must be non-negative",
                });
            }
        }
        // |delta_theta| beyond a few degrees signals mis-assigned data.
        if self.delta_theta.is_nan() || self.delta_theta.abs() >= 5.0 {
            return Err(ModelError::InvalidParameter {
                name: "delta_theta",
                value: self.delta_theta,
                reason: "misalignment must satisfy |dtheta| < 5 degrees",
            });
        }
        Ok(())
    }

    /// Field at a nominal polar angle of a yz-plane sweep, using the
    /// per-component calibrated amplitudes. The misalignment shifts every
    /// sweep feature to nominal angle (ideal angle + delta_theta).
    pub fn field_at_polar(&self, theta_deg: f64) -> FieldSnV {
        let theta = (theta_deg - self.delta_theta).to_radians();
        FieldSnV::from_components(
            self.b_parallel_cal * theta.cos(),
            self.b_perp_cal * theta.sin(),
        )
    }

    /// Field of an xy-plane sweep point: no parallel projection by definition.
    pub fn field_in_xy_plane(&self) -> FieldSnV {
        FieldSnV::from_components(0.0, self.b_perp_cal)
    }

    /// Copy with both calibrated field amplitudes rescaled.
    pub fn with_field_scaling(&self, scale_par: f64, scale_perp: f64) -> Self {
        Self {
            b_parallel_cal: self.b_parallel_cal * scale_par,
            b_perp_cal: self.b_perp_cal * scale_perp,
            ..*self
        }
    }
}

/// Magnetic field expressed in the defect frame of one SnV center.
///
/// Only the parallel projection and the transverse magnitude enter the
/// Hamiltonian; the angles and total magnitude are sweep bookkeeping.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldSnV {
    /// Projection on the SnV quantization axis, tesla (signed).
    pub b_par: f64,
    /// Transverse magnitude, tesla (non-negative).
    pub b_perp: f64,
    /// Polar angle in the SnV frame, degrees.
    pub theta: f64,
    /// Azimuth, degrees (bookkeeping only).
    pub phi: f64,
    /// Total magnitude, tesla.
    pub magnitude: f64,
}

impl FieldSnV {
    /// Field from magnitude and polar angle. The transverse component is the
    /// magnitude of the in-plane projection, so sweeps past 180 degrees fold
    /// back onto non-negative `b_perp` (azimuthal symmetry).
    pub fn from_polar(magnitude: f64, theta_deg: f64, phi_deg: f64) -> Self {
        let theta = theta_deg.to_radians();
        Self {
            b_par: magnitude * theta.cos(),
            b_perp: (magnitude * theta.sin()).abs(),
            theta: theta_deg,
            phi: phi_deg,
            magnitude,
        }
    }

    /// Field from defect-frame components; `b_perp` is folded to >= 0.
    pub fn from_components(b_par: f64, b_perp: f64) -> Self {
        let b_perp = b_perp.abs();
        Self {
            b_par,
            b_perp,
            theta: b_perp.atan2(b_par).to_degrees(),
            phi: 0.0,
            magnitude: b_par.hypot(b_perp),
        }
    }

    /// Purely parallel field.
    pub fn parallel(b: f64) -> Self {
        Self::from_components(b, 0.0)
    }

    /// Purely transverse field.
    pub fn perpendicular(b: f64) -> Self {
        Self::from_components(0.0, b)
    }

    pub fn zero() -> Self {
        Self::from_components(0.0, 0.0)
    }
}

/// Which basis a manifold Hamiltonian is expressed in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Basis {
    /// Orbital {xy} product basis (x up, x down, y up, y down).
    Xy,
    /// Spin-orbit eigenbasis.
    So,
}

/// 4x4 complex Hermitian matrix in GHz.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HermitianMatrix4(Matrix4<Complex64>);

impl HermitianMatrix4 {
    /// Wrap a matrix, verifying Hermiticity to [`HERMITICITY_TOL`].
    pub fn from_matrix(m: Matrix4<Complex64>) -> Result<Self, ModelError> {
        let max_dev = (0..4)
            .flat_map(|i| (0..4).map(move |j| (i, j)))
            .map(|(i, j)| (m[(i, j)] - m[(j, i)].conj()).norm())
            .fold(0.0, f64::max);
        if max_dev > HERMITICITY_TOL {
            return Err(ModelError::NotHermitian { max_dev });
        }
        Ok(Self(m))
    }

    /// Internal constructor for matrices Hermitian by construction.
    pub(crate) fn from_hermitian_parts(m: Matrix4<Complex64>) -> Self {
        debug_assert!(Self::from_matrix(m).is_ok());
        Self(m)
    }

    pub fn entry(&self, row: usize, col: usize) -> Complex64 {
        self.0[(row, col)]
    }

    pub fn as_matrix(&self) -> &Matrix4<Complex64> {
        &self.0
    }

    pub fn trace(&self) -> f64 {
        (0..4).map(|i| self.0[(i, i)].re).sum()
    }

    /// Sorted eigenvalues, GHz.
    pub fn eigenvalues(&self) -> LevelEnergies {
        LevelEnergies(eigen::hermitian_eigenvalues_4(&self.0))
    }
}

impl std::ops::Add for HermitianMatrix4 {
    type Output = HermitianMatrix4;
    fn add(self, rhs: Self) -> Self {
        Self(self.0 + rhs.0)
    }
}

/// The four eigenvalues of one manifold Hamiltonian, GHz, ascending.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LevelEnergies(pub [f64; 4]);

impl LevelEnergies {
    /// Splitting of the lowest doublet, E2 - E1.
    pub fn lower_splitting(&self) -> f64 {
        self.0[1] - self.0[0]
    }

    pub fn sum(&self) -> f64 {
        self.0.iter().sum()
    }
}

/// The individual Hamiltonian contributions in the {xy} basis plus the
/// unitary transformation to the spin-orbit eigenbasis.
#[derive(Debug, Clone)]
pub struct ComponentMatrices {
    pub spin_orbit: HermitianMatrix4,
    pub spin_zeeman: HermitianMatrix4,
    pub orbital_zeeman: HermitianMatrix4,
    pub strain: HermitianMatrix4,
    /// Unitary T with T^dagger . H_so_xy . T diagonal as
    /// diag(-lambda/2, -lambda/2, +lambda/2, +lambda/2).
    pub transform: Matrix4<Complex64>,
}

fn re(x: f64) -> Complex64 {
    Complex64::new(x, 0.0)
}

fn im(x: f64) -> Complex64 {
    Complex64::new(0.0, x)
}

/// Unitary change of basis between the {xy} basis and the spin-orbit
/// eigenbasis (columns are the normalized eigenvectors).
pub fn so_transform() -> Matrix4<Complex64> {
    let n = std::f64::consts::FRAC_1_SQRT_2;
    #[rustfmt::skip]
    let t = Matrix4::from_row_slice(&[
        im(n),   re(0.0), im(-n),  re(0.0),
        re(0.0), im(-n),  re(0.0), im(n),
        re(n),   re(0.0), re(n),   re(0.0),
        re(0.0), re(n),   re(0.0), re(n),
    ]);
    t
}

/// Build the four Hamiltonian contributions in the {xy} basis.
pub fn build_component_matrices(
    params: &ManifoldParams,
    field: &FieldSnV,
    constants: &PhysicalConstants,
) -> ComponentMatrices {
    let half_lambda = 0.5 * params.lambda;

    // Spin-orbit term: -lambda L_z S_z in the (x up, x down, y up, y down) ordering.
    let mut so = Matrix4::zeros();
    so[(0, 2)] = im(-half_lambda);
    so[(2, 0)] = im(half_lambda);
    so[(1, 3)] = im(half_lambda);
    so[(3, 1)] = im(-half_lambda);

    // Spin Zeeman: block diagonal over the two orbitals.
    let zp = 0.5 * constants.gamma_s * field.b_par;
    let zt = 0.5 * constants.gamma_s * field.b_perp;
    let mut ze = Matrix4::zeros();
    for block in [0, 2] {
        ze[(block, block)] = re(zp);
        ze[(block + 1, block + 1)] = re(-zp);
        ze[(block, block + 1)] = re(zt);
        ze[(block + 1, block)] = re(zt);
    }

    // Orbital Zeeman with per-m_j quenching, transformed to {xy}.
    let diff = 0.5 * constants.gamma_l * field.b_par * (params.f_32 - params.f_12);
    let sum = 0.5 * constants.gamma_l * field.b_par * (params.f_12 + params.f_32);
    let mut zl = Matrix4::zeros();
    zl[(0, 0)] = re(diff);
    zl[(1, 1)] = re(-diff);
    zl[(2, 2)] = re(diff);
    zl[(3, 3)] = re(-diff);
    zl[(0, 2)] = im(sum);
    zl[(2, 0)] = im(-sum);
    zl[(1, 3)] = im(sum);
    zl[(3, 1)] = im(-sum);

    // Strain (with Jahn-Teller contributions absorbed into upsilon).
    let strain = Matrix4::from_diagonal(&nalgebra::Vector4::new(
        re(params.upsilon),
        re(params.upsilon),
        re(-params.upsilon),
        re(-params.upsilon),
    ));

    ComponentMatrices {
        spin_orbit: HermitianMatrix4::from_hermitian_parts(so),
        spin_zeeman: HermitianMatrix4::from_hermitian_parts(ze),
        orbital_zeeman: HermitianMatrix4::from_hermitian_parts(zl),
        strain: HermitianMatrix4::from_hermitian_parts(strain),
        transform: so_transform(),
    }
}

/// Full manifold Hamiltonian in the requested basis.
pub fn build_full_hamiltonian(
    params: &ManifoldParams,
    field: &FieldSnV,
    basis: Basis,
    constants: &PhysicalConstants,
) -> HermitianMatrix4 {
    match basis {
        Basis::Xy => {
            let parts = build_component_matrices(params, field, constants);
            parts.spin_orbit + parts.spin_zeeman + parts.orbital_zeeman + parts.strain
        }
        Basis::So => {
            let gl_bp = constants.gamma_l * field.b_par;
            let gs_bp = constants.gamma_s * field.b_par;
            let gs_bt = constants.gamma_s * field.b_perp;
            let lambda = params.lambda;
            let alpha = params.upsilon;
            let mut m = Matrix4::zeros();
            m[(0, 0)] = re(0.5 * ((2.0 * params.f_32 * gl_bp + gs_bp) - lambda));
            m[(1, 1)] = re(0.5 * ((-2.0 * params.f_32 * gl_bp - gs_bp) - lambda));
            m[(2, 2)] = re(0.5 * ((-2.0 * params.f_12 * gl_bp + gs_bp) + lambda));
            m[(3, 3)] = re(0.5 * ((2.0 * params.f_12 * gl_bp - gs_bp) + lambda));
            m[(0, 2)] = re(-alpha);
            m[(2, 0)] = re(-alpha);
            m[(1, 3)] = re(-alpha);
            m[(3, 1)] = re(-alpha);
            m[(0, 3)] = re(0.5 * gs_bt);
            m[(3, 0)] = re(0.5 * gs_bt);
            m[(1, 2)] = re(0.5 * gs_bt);
            m[(2, 1)] = re(0.5 * gs_bt);
            HermitianMatrix4::from_hermitian_parts(m)
        }
    }
}

/// Sorted eigenvalues of the full manifold Hamiltonian.
pub fn manifold_energies(
    params: &ManifoldParams,
    field: &FieldSnV,
    constants: &PhysicalConstants,
) -> LevelEnergies {
    build_full_hamiltonian(params, field, Basis::Xy, constants).eigenvalues()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unstrained(lambda: f64) -> ManifoldParams {
        ManifoldParams::new(lambda, 0.3, 0.3, 0.0).unwrap()
    }

    #[test]
    fn spin_orbit_off_diagonals_at_822() {
        let parts = build_component_matrices(
            &unstrained(822.0),
            &FieldSnV::zero(),
            &PhysicalConstants::default(),
        );
        assert_eq!(parts.spin_orbit.entry(0, 2), im(-411.0));
        assert_eq!(parts.spin_orbit.entry(2, 0), im(411.0));
        assert_eq!(parts.spin_orbit.entry(1, 3), im(411.0));
        assert_eq!(parts.spin_orbit.entry(3, 1), im(-411.0));
        assert_eq!(parts.spin_orbit.entry(0, 0), re(0.0));
    }

    #[test]
    fn all_components_vanish_without_couplings() {
        let params = ManifoldParams::new(0.0, 0.5, 0.5, 0.0).unwrap();
        let parts =
            build_component_matrices(&params, &FieldSnV::zero(), &PhysicalConstants::default());
        for m in [
            parts.spin_orbit,
            parts.spin_zeeman,
            parts.orbital_zeeman,
            parts.strain,
        ] {
            assert_eq!(*m.as_matrix(), Matrix4::zeros());
        }
    }

    #[test]
    fn strain_matrix_is_diagonal() {
        let params = ManifoldParams::new(822.0, 0.3, 0.3, 100.0).unwrap();
        let parts =
            build_component_matrices(&params, &FieldSnV::zero(), &PhysicalConstants::default());
        let expected = Matrix4::from_diagonal(&nalgebra::Vector4::new(
            re(100.0),
            re(100.0),
            re(-100.0),
            re(-100.0),
        ));
        assert_eq!(*parts.strain.as_matrix(), expected);
    }

    #[test]
    fn transform_diagonalizes_spin_orbit() {
        let parts = build_component_matrices(
            &unstrained(822.0),
            &FieldSnV::zero(),
            &PhysicalConstants::default(),
        );
        let t = parts.transform;
        let d = t.adjoint() * parts.spin_orbit.as_matrix() * t;
        let expected = [-411.0, -411.0, 411.0, 411.0];
        for i in 0..4 {
            for j in 0..4 {
                let want = if i == j { re(expected[i]) } else { re(0.0) };
                assert!(
                    (d[(i, j)] - want).norm() < 1e-10,
                    "entry ({i},{j}) = {}",
                    d[(i, j)]
                );
            }
        }
    }

    #[test]
    fn transform_is_unitary() {
        let t = so_transform();
        let id = t.adjoint() * t;
        for i in 0..4 {
            for j in 0..4 {
                let want = if i == j { re(1.0) } else { re(0.0) };
                assert!((id[(i, j)] - want).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn so_basis_is_diagonal_at_zero_field() {
        let h = build_full_hamiltonian(
            &unstrained(822.0),
            &FieldSnV::zero(),
            Basis::So,
            &PhysicalConstants::default(),
        );
        let expected = Matrix4::from_diagonal(&nalgebra::Vector4::new(
            re(-411.0),
            re(-411.0),
            re(411.0),
            re(411.0),
        ));
        assert_eq!(*h.as_matrix(), expected);
    }

    #[test]
    fn unstrained_zero_field_energies() {
        let ev = manifold_energies(
            &unstrained(822.0),
            &FieldSnV::zero(),
            &PhysicalConstants::default(),
        );
        for (got, want) in ev.0.iter().zip([-411.0, -411.0, 411.0, 411.0]) {
            assert!((got - want).abs() < 1e-10);
        }
    }

    #[test]
    fn strained_zero_field_splitting_matches_quadrature() {
        // eigenvalues +-sqrt(lambda^2 + 4 upsilon^2)/2, each twice
        let params = ManifoldParams::new(822.0, 0.3, 0.3, 577.3).unwrap();
        let ev = manifold_energies(&params, &FieldSnV::zero(), &PhysicalConstants::default());
        let half = 0.5 * (822.0f64.powi(2) + 4.0 * 577.3f64.powi(2)).sqrt();
        for (got, want) in ev.0.iter().zip([-half, -half, half, half]) {
            assert!((got - want).abs() < 1e-9);
        }
        let splitting = ev.0[2] - ev.0[1];
        assert!((splitting - 1417.3).abs() < 0.05, "splitting {splitting}");
    }

    #[test]
    fn bases_share_spectrum() {
        let params = ManifoldParams::new(822.0, 0.486, 0.268, 35.0).unwrap();
        let field = FieldSnV::from_polar(0.19344, 37.0, 0.0);
        let constants = PhysicalConstants::default();
        let exy = build_full_hamiltonian(&params, &field, Basis::Xy, &constants).eigenvalues();
        let eso = build_full_hamiltonian(&params, &field, Basis::So, &constants).eigenvalues();
        for (a, b) in exy.0.iter().zip(eso.0) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn trace_vanishes() {
        let params = ManifoldParams::new(822.0, 0.486, 0.268, 577.3).unwrap();
        let field = FieldSnV::from_polar(1.2, 63.0, 0.0);
        let constants = PhysicalConstants::default();
        for basis in [Basis::Xy, Basis::So] {
            let h = build_full_hamiltonian(&params, &field, basis, &constants);
            assert!(h.trace().abs() < 1e-10);
        }
    }

    #[test]
    fn homogeneous_scaling_of_spectrum() {
        let constants = PhysicalConstants::default();
        let params = ManifoldParams::new(822.0, 0.486, 0.268, 35.0).unwrap();
        let field = FieldSnV::from_polar(0.19, 71.0, 0.0);
        let scale = 2.75;
        let scaled = ManifoldParams::new(
            params.lambda * scale,
            params.f_12,
            params.f_32,
            params.upsilon * scale,
        )
        .unwrap();
        let field_scaled = FieldSnV::from_polar(0.19 * scale, 71.0, 0.0);
        let base = manifold_energies(&params, &field, &constants);
        let big = manifold_energies(&scaled, &field_scaled, &constants);
        for (a, b) in base.0.iter().zip(big.0) {
            assert!((a * scale - b).abs() < 1e-9 * scale);
        }
    }

    #[test]
    fn eigenvalue_sum_matches_trace() {
        let params = ManifoldParams::new(822.0, 0.486, 0.268, 577.3).unwrap();
        let field = FieldSnV::from_polar(0.19, 45.0, 0.0);
        let constants = PhysicalConstants::default();
        let h = build_full_hamiltonian(&params, &field, Basis::Xy, &constants);
        let ev = h.eigenvalues();
        assert!((ev.sum() - h.trace()).abs() < 1e-9);
    }

    #[test]
    fn field_polar_components_consistent() {
        let f = FieldSnV::from_polar(0.19, 63.0, 10.0);
        assert!((f.b_par - 0.19 * 63.0f64.to_radians().cos()).abs() < 1e-15);
        assert!((f.b_perp - 0.19 * 63.0f64.to_radians().sin()).abs() < 1e-15);
        assert!(f.b_perp >= 0.0);
        // past 180 degrees the transverse part folds back positive
        let g = FieldSnV::from_polar(0.19, 250.0, 0.0);
        assert!(g.b_perp >= 0.0);
    }

    #[test]
    fn invalid_parameters_rejected() {
        assert!(ManifoldParams::new(-1.0, 0.3, 0.3, 0.0).is_err());
        assert!(ManifoldParams::new(822.0, 1.2, 0.3, 0.0).is_err());
        assert!(ManifoldParams::new(822.0, 0.3, -0.1, 0.0).is_err());
        assert!(ManifoldParams::new(822.0, 0.3, 0.3, -5.0).is_err());
    }

    #[test]
    fn non_hermitian_rejected() {
        let mut m = Matrix4::<Complex64>::zeros();
        m[(0, 1)] = re(1.0);
        assert!(HermitianMatrix4::from_matrix(m).is_err());
    }
}
