//! Strain-tensor projection into SnV defect frames and the resulting
//! symmetry-resolved energy channels.
//!
//! Externally computed strain grids (finite-element exports) are rotated
//! into the frame of a chosen defect orientation; the linear combinations
//!
//! ```text
//! eps_A1 = t_perp (eps_xx + eps_yy) + t_par eps_zz
//! eps_Ex = d (eps_xx - eps_yy) + f eps_zx
//! eps_Ey = -2 d eps_xy - f eps_yz
//! ```
//!
//! give the zero-phonon-line shift channel (eps_A1) and the ground-state
//! splitting channel (eps_Ex, eps_Ey). The spin-degenerate 4x4 strain
//! Hamiltonian is kept explicit so it composes with the manifold
//! Hamiltonians; its eigenvalue splitting equals 2 sqrt(eps_Ex^2 + eps_Ey^2).

use nalgebra::{Matrix3, Matrix4, Vector3};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hamiltonian::HermitianMatrix4;

/// Speed of light, m/s, for GHz-to-nm conversion of ZPL shifts.
const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// SnV zero-phonon-line wavelength, nm.
pub const ZPL_WAVELENGTH_NM: f64 = 619.0;

#[derive(Debug, Error)]
pub enum StrainError {
    #[error("unknown SnV orientation label '{0}'")]
    UnknownOrientation(String),
    #[error("strain grid is empty")]
    EmptyGrid,
}

/// Symmetric strain tensor, six independent dimensionless components.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StrainTensor {
    pub xx: f64,
    pub yy: f64,
    pub zz: f64,
    pub xy: f64,
    pub yz: f64,
    pub zx: f64,
}

impl StrainTensor {
    pub fn isotropic(s: f64) -> Self {
        Self {
            xx: s,
            yy: s,
            zz: s,
            ..Default::default()
        }
    }

    pub fn to_matrix(self) -> Matrix3<f64> {
        Matrix3::new(
            self.xx, self.xy, self.zx, //
            self.xy, self.yy, self.yz, //
            self.zx, self.yz, self.zz,
        )
    }

    /// Rebuild from a (numerically) symmetric matrix, averaging the
    /// off-diagonal pairs.
    pub fn from_matrix(m: &Matrix3<f64>) -> Self {
        Self {
            xx: m[(0, 0)],
            yy: m[(1, 1)],
            zz: m[(2, 2)],
            xy: 0.5 * (m[(0, 1)] + m[(1, 0)]),
            yz: 0.5 * (m[(1, 2)] + m[(2, 1)]),
            zx: 0.5 * (m[(0, 2)] + m[(2, 0)]),
        }
    }

    pub fn trace(&self) -> f64 {
        self.xx + self.yy + self.zz
    }

    pub fn frobenius_norm(&self) -> f64 {
        (self.xx * self.xx
            + self.yy * self.yy
            + self.zz * self.zz
            + 2.0 * (self.xy * self.xy + self.yz * self.yz + self.zx * self.zx))
            .sqrt()
    }
}

/// Linear susceptibilities mapping strain components onto energy channels,
/// GHz per unit strain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StrainSusceptibilities {
    pub d: f64,
    pub f: f64,
    pub t_par: f64,
    pub t_perp: f64,
}

impl Default for StrainSusceptibilities {
    fn default() -> Self {
        Self {
            d: 0.8e6,
            f: -0.56e6,
            t_par: -1.7e6,
            t_perp: 0.078e6,
        }
    }
}

/// Symmetry-resolved strain energies, GHz.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SymmetryComponents {
    /// ZPL shift channel.
    pub eps_a1: f64,
    /// Splitting channel, x component.
    pub eps_ex: f64,
    /// Splitting channel, y component.
    pub eps_ey: f64,
}

fn rotation_z(theta_rad: f64) -> Matrix3<f64> {
    let (s, c) = theta_rad.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

fn rotation_y(phi_rad: f64) -> Matrix3<f64> {
    let (s, c) = phi_rad.sin_cos();
    Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

/// Rotate a strain tensor by R_z(theta) R_y(phi):
/// eps' = R eps R^T. The reference angles are theta = 90, phi = 54 degrees.
pub fn rotate_strain(eps: &StrainTensor, theta_deg: f64, phi_deg: f64) -> StrainTensor {
    let r = rotation_z(theta_deg.to_radians()) * rotation_y(phi_deg.to_radians());
    StrainTensor::from_matrix(&(r * eps.to_matrix() * r.transpose()))
}

/// Evaluate the three symmetry channels for a tensor already expressed in a
/// defect frame.
pub fn symmetry_components(eps: &StrainTensor, chi: &StrainSusceptibilities) -> SymmetryComponents {
    SymmetryComponents {
        eps_a1: chi.t_perp * (eps.xx + eps.yy) + chi.t_par * eps.zz,
        eps_ex: chi.d * (eps.xx - eps.yy) + chi.f * eps.zx,
        eps_ey: -2.0 * chi.d * eps.xy - chi.f * eps.yz,
    }
}

/// Spin-degenerate 4x4 strain Hamiltonian: the 2x2 orbital block
/// [[eps_A1 - eps_Ex, eps_Ey], [eps_Ey, eps_A1 + eps_Ex]] tensored with the
/// spin identity, composable with the manifold Hamiltonians.
pub fn strain_hamiltonian(sym: &SymmetryComponents) -> HermitianMatrix4 {
    let re = |x: f64| Complex64::new(x, 0.0);
    let mut m = Matrix4::zeros();
    let a = sym.eps_a1;
    let ex = sym.eps_ex;
    let ey = sym.eps_ey;
    // kron(orbital 2x2, identity 2x2)
    m[(0, 0)] = re(a - ex);
    m[(1, 1)] = re(a - ex);
    m[(2, 2)] = re(a + ex);
    m[(3, 3)] = re(a + ex);
    m[(0, 2)] = re(ey);
    m[(2, 0)] = re(ey);
    m[(1, 3)] = re(ey);
    m[(3, 1)] = re(ey);
    HermitianMatrix4::from_matrix(m).expect("real symmetric by construction")
}

/// The four SnV orientations of a diamond with <110> edges.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SnvOrientation {
    /// The (1, 1, 1) axis.
    P111,
    /// The (1, -1, -1) axis.
    P1M1M1,
    /// The (-1, 1, -1) axis.
    M1P1M1,
    /// The (-1, -1, 1) axis.
    M1M1P1,
}

pub const ALL_ORIENTATIONS: [SnvOrientation; 4] = [
    SnvOrientation::P111,
    SnvOrientation::P1M1M1,
    SnvOrientation::M1P1M1,
    SnvOrientation::M1M1P1,
];

impl SnvOrientation {
    pub fn label(&self) -> &'static str {
        match self {
            SnvOrientation::P111 => "111",
            SnvOrientation::P1M1M1 => "1-1-1",
            SnvOrientation::M1P1M1 => "-11-1",
            SnvOrientation::M1M1P1 => "-1-11",
        }
    }

    pub fn parse(label: &str) -> Result<Self, StrainError> {
        ALL_ORIENTATIONS
            .iter()
            .find(|o| o.label() == label)
            .copied()
            .ok_or_else(|| StrainError::UnknownOrientation(label.to_string()))
    }

    /// Unit quantization axis in the cubic crystal frame.
    pub fn axis(&self) -> Vector3<f64> {
        let s = 1.0 / 3f64.sqrt();
        match self {
            SnvOrientation::P111 => Vector3::new(s, s, s),
            SnvOrientation::P1M1M1 => Vector3::new(s, -s, -s),
            SnvOrientation::M1P1M1 => Vector3::new(-s, s, -s),
            SnvOrientation::M1M1P1 => Vector3::new(-s, -s, s),
        }
    }

    /// Orthonormal defect frame (rows: x', y', z') with z' along the axis
    /// and the transverse axes pinned to fixed crystal directions, related
    /// across orientations by the cubic two-fold rotations.
    pub fn frame(&self) -> Matrix3<f64> {
        let a = 1.0 / 6f64.sqrt();
        let b = 1.0 / 2f64.sqrt();
        let c = 1.0 / 3f64.sqrt();
        match self {
            // x' = [1 1 -2]/sqrt6, y' = [-1 1 0]/sqrt2, z' = [1 1 1]/sqrt3
            SnvOrientation::P111 => Matrix3::new(a, a, -2.0 * a, -b, b, 0.0, c, c, c),
            // conjugated by C2 about x
            SnvOrientation::P1M1M1 => Matrix3::new(a, -a, 2.0 * a, -b, -b, 0.0, c, -c, -c),
            // conjugated by C2 about y
            SnvOrientation::M1P1M1 => Matrix3::new(-a, a, 2.0 * a, b, b, 0.0, -c, c, -c),
            // conjugated by C2 about z
            SnvOrientation::M1M1P1 => Matrix3::new(-a, -a, -2.0 * a, b, -b, 0.0, -c, -c, c),
        }
    }
}

/// Express a lab-frame tensor in an explicit orthonormal defect frame
/// (rows of `frame` are the defect axes in lab coordinates).
pub fn into_frame(eps_lab: &StrainTensor, frame: &Matrix3<f64>) -> StrainTensor {
    StrainTensor::from_matrix(&(frame * eps_lab.to_matrix() * frame.transpose()))
}

/// Ground-state splitting and ZPL shift of one orientation, GHz.
///
/// The splitting is the eigenvalue difference of the strain Hamiltonian,
/// 2 sqrt(eps_Ex^2 + eps_Ey^2); the shift is eps_A1.
pub fn splitting_and_zpl(
    eps_lab: &StrainTensor,
    orientation: SnvOrientation,
    chi: &StrainSusceptibilities,
) -> (f64, f64) {
    splitting_and_zpl_in_frame(eps_lab, &orientation.frame(), chi)
}

/// Same computation with an arbitrary defect frame.
pub fn splitting_and_zpl_in_frame(
    eps_lab: &StrainTensor,
    frame: &Matrix3<f64>,
    chi: &StrainSusceptibilities,
) -> (f64, f64) {
    let sym = symmetry_components(&into_frame(eps_lab, frame), chi);
    let splitting = 2.0 * sym.eps_ex.hypot(sym.eps_ey);
    (splitting, sym.eps_a1)
}

/// ZPL shift converted from GHz to nm at the SnV wavelength.
/// Positive frequency shifts move the line to shorter wavelengths.
pub fn zpl_shift_nm(shift_ghz: f64) -> f64 {
    let lambda_m = ZPL_WAVELENGTH_NM * 1e-9;
    -shift_ghz * 1e9 * lambda_m * lambda_m / SPEED_OF_LIGHT * 1e9
}

/// One grid point of a strain map.
#[derive(Debug, Clone, Copy)]
pub struct StrainGridPoint {
    pub x_um: f64,
    pub y_um: f64,
    pub tensor: StrainTensor,
}

/// Splitting and shift of one grid point for one orientation.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct StrainMapEntry {
    pub x_um: f64,
    pub y_um: f64,
    pub orientation: &'static str,
    pub gs_splitting_ghz: f64,
    pub zpl_shift_ghz: f64,
}

/// Evaluate splitting and shift maps for all four orientations.
pub fn strain_map(
    grid: &[StrainGridPoint],
    chi: &StrainSusceptibilities,
) -> Result<Vec<StrainMapEntry>, StrainError> {
    if grid.is_empty() {
        return Err(StrainError::EmptyGrid);
    }
    let mut entries = Vec::with_capacity(grid.len() * ALL_ORIENTATIONS.len());
    for point in grid {
        for orientation in ALL_ORIENTATIONS {
            let (gs, zpl) = splitting_and_zpl(&point.tensor, orientation, chi);
            entries.push(StrainMapEntry {
                x_um: point.x_um,
                y_um: point.y_um,
                orientation: orientation.label(),
                gs_splitting_ghz: gs,
                zpl_shift_ghz: zpl,
            });
        }
    }
    Ok(entries)
}
