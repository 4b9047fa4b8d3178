//! Polarization-qubit linear algebra: kets, density matrices, Bell basis,
//! composition and reduction, fidelities and the CHSH value.
//!
//! Basis order is the tensor power of `{H, V}` with `H` first, the first
//! label being the most significant bit: `|HH⟩, |HV⟩, |VH⟩, |VV⟩`.

use std::collections::HashSet;
use std::f64::consts::FRAC_1_SQRT_2;

use nalgebra::{DMatrix, DVector, Matrix3};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAX_QUBITS: usize = 4;

pub const NORM_TOL: f64 = 1e-12;
pub const HERMITIAN_TOL: f64 = 1e-10;
pub const TRACE_TOL: f64 = 1e-10;
pub const PSD_TOL: f64 = -1e-8;

const ZERO: C64 = C64::new(0.0, 0.0);
const ONE: C64 = C64::new(1.0, 0.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BellKind {
    PhiPlus,
    PhiMinus,
    PsiPlus,
    PsiMinus,
}

impl BellKind {
    pub const ALL: [BellKind; 4] = [BellKind::PhiPlus, BellKind::PhiMinus, BellKind::PsiPlus, BellKind::PsiMinus];
}

fn qubits_for_dim(dim: usize) -> Option<usize> {
    match dim {
        2 => Some(1),
        4 => Some(2),
        8 => Some(3),
        16 => Some(4),
        _ => None,
    }
}

/// Normalized ket on 1, 2 or 4 polarization qubits.
#[derive(Debug, Clone, PartialEq)]
pub struct PureState {
    amps: DVector<C64>,
}

impl PureState {
    pub fn new(amps: Vec<C64>) -> Result<Self> {
        let n = qubits_for_dim(amps.len())
            .filter(|n| matches!(n, 1 | 2 | 4))
            .ok_or_else(|| Error::InvalidState(format!("ket length {} is not 2, 4 or 16", amps.len())))?;
        let norm2: f64 = amps.iter().map(|a| a.norm_sqr()).sum();
        if (norm2 - 1.0).abs() > NORM_TOL {
            return Err(Error::InvalidState(format!("squared norm {norm2} of {n}-qubit ket differs from 1")));
        }
        Ok(Self { amps: DVector::from_vec(amps) })
    }

    /// Rescales `amps` to unit norm before validating.
    pub fn normalized(amps: Vec<C64>) -> Result<Self> {
        let norm = amps.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(Error::InvalidState("zero ket".into()));
        }
        Self::new(amps.into_iter().map(|a| a / norm).collect())
    }

    pub fn basis(n_qubits: usize, index: usize) -> Result<Self> {
        let dim = 1usize << n_qubits;
        if index >= dim {
            return Err(Error::InvalidParameter(format!("basis index {index} >= {dim}")));
        }
        let mut v = vec![ZERO; dim];
        v[index] = ONE;
        Self::new(v)
    }

    pub fn amplitudes(&self) -> &DVector<C64> {
        &self.amps
    }

    pub fn dim(&self) -> usize {
        self.amps.len()
    }

    pub fn n_qubits(&self) -> usize {
        self.dim().trailing_zeros() as usize
    }

    /// `⟨self|other⟩`
    pub fn overlap(&self, other: &PureState) -> Result<C64> {
        if self.dim() != other.dim() {
            return Err(Error::DimensionMismatch { left: self.dim(), right: other.dim() });
        }
        Ok(self.amps.dotc(&other.amps))
    }

    pub fn tensor(&self, other: &PureState) -> Result<PureState> {
        let n = self.n_qubits() + other.n_qubits();
        if n > MAX_QUBITS {
            return Err(Error::DimensionOverflow(n));
        }
        Self::new(self.amps.kronecker(&other.amps).iter().copied().collect())
    }

    pub fn projector(&self) -> DMatrix<C64> {
        &self.amps * self.amps.adjoint()
    }

    pub fn to_density<S: AsRef<str>>(&self, labels: &[S]) -> Result<DensityMatrix> {
        DensityMatrix::new(self.projector(), labels)
    }
}

/// Normalized Bell ket on two qubits.
pub fn bell_state(kind: BellKind) -> PureState {
    let h = C64::new(FRAC_1_SQRT_2, 0.0);
    let amps = match kind {
        BellKind::PhiPlus => vec![h, ZERO, ZERO, h],
        BellKind::PhiMinus => vec![h, ZERO, ZERO, -h],
        BellKind::PsiPlus => vec![ZERO, h, h, ZERO],
        BellKind::PsiMinus => vec![ZERO, h, -h, ZERO],
    };
    PureState { amps: DVector::from_vec(amps) }
}

/// Hermitian, unit-trace, positive-semidefinite operator with named qubits.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    mat: DMatrix<C64>,
    labels: Vec<String>,
}

impl DensityMatrix {
    pub fn new<S: AsRef<str>>(mat: DMatrix<C64>, labels: &[S]) -> Result<Self> {
        let labels: Vec<String> = labels.iter().map(|s| s.as_ref().to_owned()).collect();
        let dim = mat.nrows();
        if mat.ncols() != dim {
            return Err(Error::InvalidState(format!("{}x{} matrix is not square", dim, mat.ncols())));
        }
        let n = qubits_for_dim(dim)
            .ok_or_else(|| Error::InvalidState(format!("dimension {dim} is not a qubit register")))?;
        if labels.len() != n {
            return Err(Error::InvalidState(format!("{} labels given for {n} qubits", labels.len())));
        }
        check_labels(&labels)?;
        let herm_err = hermiticity_error(&mat);
        if herm_err > HERMITIAN_TOL {
            return Err(Error::InvalidState(format!("not Hermitian (max deviation {herm_err:e})")));
        }
        let tr = mat.trace();
        if (tr.re - 1.0).abs() > TRACE_TOL || tr.im.abs() > TRACE_TOL {
            return Err(Error::InvalidState(format!("trace {tr} differs from 1")));
        }
        let min_eig = hermitian_eigenvalues(&mat).into_iter().fold(f64::INFINITY, f64::min);
        if min_eig < PSD_TOL {
            return Err(Error::InvalidState(format!("negative eigenvalue {min_eig:e}")));
        }
        Ok(Self { mat, labels })
    }

    pub fn maximally_mixed<S: AsRef<str>>(labels: &[S]) -> Result<Self> {
        let dim = 1usize << labels.len();
        Self::new(DMatrix::identity(dim, dim) * C64::new(1.0 / dim as f64, 0.0), labels)
    }

    pub fn matrix(&self) -> &DMatrix<C64> {
        &self.mat
    }

    pub fn into_matrix(self) -> DMatrix<C64> {
        self.mat
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn dim(&self) -> usize {
        self.mat.nrows()
    }

    pub fn n_qubits(&self) -> usize {
        self.labels.len()
    }

    pub fn trace(&self) -> C64 {
        self.mat.trace()
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        hermitian_eigenvalues(&self.mat)
    }

    pub fn relabel<S: AsRef<str>>(&self, labels: &[S]) -> Result<Self> {
        let labels: Vec<String> = labels.iter().map(|s| s.as_ref().to_owned()).collect();
        if labels.len() != self.labels.len() {
            return Err(Error::DimensionMismatch { left: self.labels.len(), right: labels.len() });
        }
        check_labels(&labels)?;
        Ok(Self { mat: self.mat.clone(), labels })
    }

    fn position(&self, label: &str) -> Result<usize> {
        self.labels.iter().position(|l| l == label).ok_or_else(|| Error::UnknownLabel(label.to_owned()))
    }

    /// Reorders the tensor factors so that `order` becomes the label sequence.
    pub fn permute<S: AsRef<str>>(&self, order: &[S]) -> Result<Self> {
        let n = self.n_qubits();
        if order.len() != n {
            return Err(Error::DimensionMismatch { left: n, right: order.len() });
        }
        // src[k] = old position of the qubit that lands at new position k
        let src = order.iter().map(|l| self.position(l.as_ref())).collect::<Result<Vec<_>>>()?;
        let new_labels: Vec<String> = order.iter().map(|s| s.as_ref().to_owned()).collect();
        check_labels(&new_labels)?;
        let dim = self.dim();
        let map: Vec<usize> = (0..dim)
            .map(|new_idx| {
                (0..n).fold(0, |old_idx, k| {
                    let bit = (new_idx >> (n - 1 - k)) & 1;
                    old_idx | (bit << (n - 1 - src[k]))
                })
            })
            .collect();
        let mat = DMatrix::from_fn(dim, dim, |i, j| self.mat[(map[i], map[j])]);
        Ok(Self { mat, labels: new_labels })
    }

    /// Builds a state without re-running the eigenvalue check; for internal
    /// constructions that are physical by construction.
    pub(crate) fn from_parts_unchecked(mat: DMatrix<C64>, labels: Vec<String>) -> Self {
        debug_assert_eq!(mat.nrows(), 1 << labels.len());
        Self { mat, labels }
    }
}

fn check_labels(labels: &[String]) -> Result<()> {
    let mut seen = HashSet::new();
    for l in labels {
        if !seen.insert(l.as_str()) {
            return Err(Error::DuplicateLabel(l.clone()));
        }
    }
    Ok(())
}

pub(crate) fn hermiticity_error(m: &DMatrix<C64>) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            worst = worst.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    worst
}

/// Eigenvalues of a Hermitian matrix in ascending order.
pub fn hermitian_eigenvalues(m: &DMatrix<C64>) -> Vec<f64> {
    let mut ev: Vec<f64> = m.clone().symmetric_eigen().eigenvalues.iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    ev
}

/// Kronecker product; labels of `a` precede those of `b`.
pub fn tensor(a: &DensityMatrix, b: &DensityMatrix) -> Result<DensityMatrix> {
    let n = a.n_qubits() + b.n_qubits();
    if n > MAX_QUBITS {
        return Err(Error::DimensionOverflow(n));
    }
    let mut labels = a.labels.clone();
    labels.extend(b.labels.iter().cloned());
    check_labels(&labels)?;
    Ok(DensityMatrix { mat: a.mat.kronecker(&b.mat), labels })
}

/// Reduced state on `keep`, in the original label order.
pub fn partial_trace<S: AsRef<str>>(rho: &DensityMatrix, keep: &[S]) -> Result<DensityMatrix> {
    if keep.is_empty() {
        return Err(Error::InvalidParameter("partial trace must keep at least one qubit".into()));
    }
    let mut keep_pos = keep.iter().map(|l| rho.position(l.as_ref())).collect::<Result<Vec<_>>>()?;
    keep_pos.sort_unstable();
    keep_pos.dedup();
    let n = rho.n_qubits();
    let traced: Vec<usize> = (0..n).filter(|q| !keep_pos.contains(q)).collect();
    let kd = 1usize << keep_pos.len();
    let td = 1usize << traced.len();

    let full_index = |k: usize, t: usize| -> usize {
        let mut idx = 0;
        for (i, &q) in keep_pos.iter().enumerate() {
            let bit = (k >> (keep_pos.len() - 1 - i)) & 1;
            idx |= bit << (n - 1 - q);
        }
        for (i, &q) in traced.iter().enumerate() {
            let bit = (t >> (traced.len() - 1 - i)) & 1;
            idx |= bit << (n - 1 - q);
        }
        idx
    };

    let mut out = DMatrix::from_element(kd, kd, ZERO);
    for i in 0..kd {
        for j in 0..kd {
            out[(i, j)] = (0..td).map(|t| rho.mat[(full_index(i, t), full_index(j, t))]).sum();
        }
    }
    let labels = keep_pos.iter().map(|&q| rho.labels[q].clone()).collect();
    Ok(DensityMatrix { mat: out, labels })
}

/// `⟨ψ|ρ|ψ⟩`, clamped to `[0, 1]`.
pub fn fidelity_pure(rho: &DensityMatrix, target: &PureState) -> Result<f64> {
    if rho.dim() != target.dim() {
        return Err(Error::DimensionMismatch { left: rho.dim(), right: target.dim() });
    }
    let psi = target.amplitudes();
    let f = (psi.adjoint() * &rho.mat * psi)[(0, 0)].re;
    Ok(f.clamp(0.0, 1.0))
}

fn psd_sqrt(m: &DMatrix<C64>) -> DMatrix<C64> {
    let eig = m.clone().symmetric_eigen();
    let roots = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| C64::new(l.max(0.0).sqrt(), 0.0)));
    &eig.eigenvectors * roots * eig.eigenvectors.adjoint()
}

/// Uhlmann fidelity `(Tr √(√ρ σ √ρ))²`.
pub fn fidelity_mixed(rho: &DensityMatrix, sigma: &DensityMatrix) -> Result<f64> {
    if rho.dim() != sigma.dim() {
        return Err(Error::DimensionMismatch { left: rho.dim(), right: sigma.dim() });
    }
    let s = psd_sqrt(&rho.mat);
    let inner = &s * &sigma.mat * &s;
    let inner = (&inner + inner.adjoint()) * C64::new(0.5, 0.0);
    let root_trace: f64 = hermitian_eigenvalues(&inner).iter().map(|l| l.max(0.0).sqrt()).sum();
    Ok((root_trace * root_trace).clamp(0.0, 1.0))
}

/// Pauli matrices `[σx, σy, σz]` in the `{H, V}` basis.
pub fn pauli() -> [DMatrix<C64>; 3] {
    let i = C64::new(0.0, 1.0);
    [
        DMatrix::from_row_slice(2, 2, &[ZERO, ONE, ONE, ZERO]),
        DMatrix::from_row_slice(2, 2, &[ZERO, -i, i, ZERO]),
        DMatrix::from_row_slice(2, 2, &[ONE, ZERO, ZERO, -ONE]),
    ]
}

/// `T_ij = Tr[ρ σ_i ⊗ σ_j]`.
pub fn correlation_matrix(rho: &DensityMatrix) -> Result<Matrix3<f64>> {
    if rho.n_qubits() != 2 {
        return Err(Error::DimensionMismatch { left: rho.dim(), right: 4 });
    }
    let p = pauli();
    Ok(Matrix3::from_fn(|i, j| (&rho.mat * p[i].kronecker(&p[j])).trace().re))
}

/// Maximal CHSH value `2√(m₁ + m₂)` from the two largest eigenvalues of `TᵀT`.
pub fn horodecki_s(rho: &DensityMatrix) -> Result<f64> {
    let t = correlation_matrix(rho)?;
    let mut m: Vec<f64> = (t.transpose() * t).symmetric_eigenvalues().iter().copied().collect();
    m.sort_by(|a, b| b.total_cmp(a));
    let s = 2.0 * (m[0] + m[1]).max(0.0).sqrt();
    Ok(s.clamp(0.0, 2.0 * std::f64::consts::SQRT_2))
}

/// Euclidean projection of the spectrum onto the probability simplex.
fn project_simplex(values: &[f64]) -> Vec<f64> {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut shift = 0.0;
    for (k, &v) in sorted.iter().enumerate() {
        cumsum += v;
        let candidate = (cumsum - 1.0) / (k + 1) as f64;
        if v - candidate > 0.0 {
            shift = candidate;
        }
    }
    values.iter().map(|&v| (v - shift).max(0.0)).collect()
}

/// Nearest unit-trace PSD matrix in Frobenius norm (eigenvalue water-filling).
pub fn project_to_physical<S: AsRef<str>>(h: &DMatrix<C64>, labels: &[S]) -> Result<DensityMatrix> {
    if h.nrows() != h.ncols() {
        return Err(Error::InvalidState("matrix is not square".into()));
    }
    if h.iter().all(|z| z.norm() == 0.0) {
        return Err(Error::InvalidParameter("cannot project the zero matrix".into()));
    }
    if hermiticity_error(h) > HERMITIAN_TOL {
        return Err(Error::InvalidState("projection input is not Hermitian".into()));
    }
    let sym = (h + h.adjoint()) * C64::new(0.5, 0.0);
    let eig = sym.symmetric_eigen();
    let clipped = project_simplex(eig.eigenvalues.as_slice());
    let d = DMatrix::from_diagonal(&DVector::from_iterator(clipped.len(), clipped.iter().map(|&l| C64::new(l, 0.0))));
    let mut mat = &eig.eigenvectors * d * eig.eigenvectors.adjoint();
    // scrub round-off so the result is exactly Hermitian
    let herm = (&mat + mat.adjoint()) * C64::new(0.5, 0.0);
    mat = herm;
    DensityMatrix::new(mat, labels)
}

/// Wire form of a matrix: row-major real and imaginary parts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixJson {
    pub dim: usize,
    pub labels: Vec<String>,
    pub re: Vec<f64>,
    pub im: Vec<f64>,
}

impl MatrixJson {
    pub fn from_matrix(m: &DMatrix<C64>, labels: &[String]) -> Self {
        let dim = m.nrows();
        let mut re = Vec::with_capacity(dim * dim);
        let mut im = Vec::with_capacity(dim * dim);
        for i in 0..dim {
            for j in 0..dim {
                re.push(m[(i, j)].re);
                im.push(m[(i, j)].im);
            }
        }
        Self { dim, labels: labels.to_vec(), re, im }
    }

    pub fn to_matrix(&self) -> Result<DMatrix<C64>> {
        let n = self.dim * self.dim;
        if self.re.len() != n || self.im.len() != n {
            return Err(Error::Parse(format!(
                "expected {n} entries for dim {}, found re={} im={}",
                self.dim,
                self.re.len(),
                self.im.len()
            )));
        }
        Ok(DMatrix::from_fn(self.dim, self.dim, |i, j| C64::new(self.re[i * self.dim + j], self.im[i * self.dim + j])))
    }
}

impl From<&DensityMatrix> for MatrixJson {
    fn from(rho: &DensityMatrix) -> Self {
        MatrixJson::from_matrix(&rho.mat, &rho.labels)
    }
}

impl TryFrom<&MatrixJson> for DensityMatrix {
    type Error = Error;

    fn try_from(j: &MatrixJson) -> Result<Self> {
        DensityMatrix::new(j.to_matrix()?, &j.labels)
    }
}

impl Serialize for DensityMatrix {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        MatrixJson::from(self).serialize(s)
    }
}

impl<'de> Deserialize<'de> for DensityMatrix {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let j = MatrixJson::deserialize(d)?;
        DensityMatrix::try_from(&j).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rho_of(kind: BellKind) -> DensityMatrix {
        bell_state(kind).to_density(&["A", "B"]).unwrap()
    }

    fn max_abs_diff(a: &DMatrix<C64>, b: &DMatrix<C64>) -> f64 {
        (a - b).iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    #[test]
    fn bell_amplitudes() {
        let h = FRAC_1_SQRT_2;
        let phi = bell_state(BellKind::PhiPlus);
        let want = [h, 0.0, 0.0, h];
        for (a, w) in phi.amplitudes().iter().zip(want) {
            assert!((a - C64::new(w, 0.0)).norm() < 1e-15);
        }
        let psi_m = bell_state(BellKind::PsiMinus);
        let want = [0.0, h, -h, 0.0];
        for (a, w) in psi_m.amplitudes().iter().zip(want) {
            assert!((a - C64::new(w, 0.0)).norm() < 1e-15);
        }
    }

    #[test]
    fn bell_basis_is_orthonormal() {
        for a in BellKind::ALL {
            for b in BellKind::ALL {
                let o = bell_state(a).overlap(&bell_state(b)).unwrap().norm_sqr();
                let want = if a == b { 1.0 } else { 0.0 };
                assert!((o - want).abs() < 1e-15, "{a:?} {b:?}");
            }
        }
    }

    #[test]
    fn pure_state_rejects_bad_input() {
        assert!(PureState::new(vec![ONE, ONE]).is_err());
        assert!(PureState::new(vec![ONE; 8].into_iter().map(|z| z / 8f64.sqrt()).collect()).is_err());
        assert!(PureState::normalized(vec![ZERO; 4]).is_err());
    }

    #[test]
    fn tensor_of_pure_products_is_rank_one() {
        let p = rho_of(BellKind::PhiPlus);
        let q = p.relabel(&["C", "D"]).unwrap();
        let t = tensor(&p, &q).unwrap();
        assert_eq!(t.dim(), 16);
        assert!((t.trace().re - 1.0).abs() < 1e-12);
        let ev = t.eigenvalues();
        assert!((ev[15] - 1.0).abs() < 1e-12);
        assert!(ev[..15].iter().all(|l| l.abs() < 1e-12));
    }

    #[test]
    fn tensor_of_identities() {
        let a = DensityMatrix::maximally_mixed(&["A"]).unwrap();
        let b = DensityMatrix::maximally_mixed(&["B"]).unwrap();
        let t = tensor(&a, &b).unwrap();
        let want = DensityMatrix::maximally_mixed(&["A", "B"]).unwrap();
        assert!(max_abs_diff(t.matrix(), want.matrix()) < 1e-15);
    }

    #[test]
    fn tensor_errors() {
        let p = rho_of(BellKind::PhiPlus);
        assert!(matches!(tensor(&p, &p), Err(Error::DuplicateLabel(_))));
        let big = tensor(&p, &p.relabel(&["C", "D"]).unwrap()).unwrap();
        let one = DensityMatrix::maximally_mixed(&["E"]).unwrap();
        assert!(matches!(tensor(&big, &one), Err(Error::DimensionOverflow(5))));
    }

    #[test]
    fn marginal_of_bell_state_is_maximally_mixed() {
        let p = rho_of(BellKind::PhiPlus);
        let m = partial_trace(&p, &["A"]).unwrap();
        let want = DensityMatrix::maximally_mixed(&["A"]).unwrap();
        assert!(max_abs_diff(m.matrix(), want.matrix()) < 1e-15);
        assert!(matches!(partial_trace(&p, &["Z"]), Err(Error::UnknownLabel(_))));
        assert!(partial_trace::<&str>(&p, &[]).is_err());
    }

    #[test]
    fn permute_swaps_qubits() {
        let hv = PureState::basis(2, 1).unwrap().to_density(&["A", "B"]).unwrap();
        let swapped = hv.permute(&["B", "A"]).unwrap();
        assert_eq!(swapped.labels(), ["B", "A"]);
        assert!((swapped.matrix()[(2, 2)].re - 1.0).abs() < 1e-15);
    }

    #[test]
    fn fidelity_examples() {
        let psi = bell_state(BellKind::PsiPlus);
        let f = fidelity_pure(&rho_of(BellKind::PsiPlus), &psi).unwrap();
        assert!((f - 1.0).abs() < 1e-14);
        let mixed = DensityMatrix::maximally_mixed(&["A", "B"]).unwrap();
        assert!((fidelity_pure(&mixed, &psi).unwrap() - 0.25).abs() < 1e-14);

        let mut m = DMatrix::from_element(4, 4, ZERO);
        m[(1, 1)] = C64::new(0.5, 0.0);
        m[(2, 2)] = C64::new(0.5, 0.0);
        let classical = DensityMatrix::new(m, &["A", "B"]).unwrap();
        assert!((fidelity_pure(&classical, &psi).unwrap() - 0.5).abs() < 1e-14);
    }

    #[test]
    fn uhlmann_fidelity_examples() {
        let phi = rho_of(BellKind::PhiPlus);
        let psi = rho_of(BellKind::PsiPlus);
        let mixed = DensityMatrix::maximally_mixed(&["A", "B"]).unwrap();
        assert!((fidelity_mixed(&phi, &phi).unwrap() - 1.0).abs() < 1e-7);
        assert!((fidelity_mixed(&mixed, &mixed).unwrap() - 1.0).abs() < 1e-12);
        assert!(fidelity_mixed(&phi, &psi).unwrap() < 1e-12);
        // pure vs mixed reduces to ⟨ψ|σ|ψ⟩
        assert!((fidelity_mixed(&phi, &mixed).unwrap() - 0.25).abs() < 1e-7);
    }

    #[test]
    fn horodecki_examples() {
        let s = horodecki_s(&rho_of(BellKind::PsiPlus)).unwrap();
        assert!((s - 2.0 * 2f64.sqrt()).abs() < 1e-12);
        let mixed = DensityMatrix::maximally_mixed(&["A", "B"]).unwrap();
        assert!(horodecki_s(&mixed).unwrap().abs() < 1e-12);
    }

    #[test]
    fn horodecki_closed_form_family() {
        let c = 0.569;
        let mut m = DMatrix::from_element(4, 4, ZERO);
        m[(1, 1)] = C64::new(0.5, 0.0);
        m[(2, 2)] = C64::new(0.5, 0.0);
        m[(1, 2)] = C64::new(0.5 * c, 0.0);
        m[(2, 1)] = C64::new(0.5 * c, 0.0);
        let rho = DensityMatrix::new(m, &["A", "B"]).unwrap();
        // 2√(1 + 0.569²)
        assert!((horodecki_s(&rho).unwrap() - 2.301_096_260_481_078).abs() < 1e-9);
    }

    #[test]
    fn projection_examples() {
        let rho = rho_of(BellKind::PsiMinus);
        let p = project_to_physical(rho.matrix(), &["A", "B"]).unwrap();
        assert!(max_abs_diff(p.matrix(), rho.matrix()) < 1e-12);

        let mut h = DMatrix::from_element(4, 4, ZERO);
        h[(0, 0)] = C64::new(1.1, 0.0);
        h[(1, 1)] = C64::new(-0.1, 0.0);
        let p = project_to_physical(&h, &["A", "B"]).unwrap();
        let mut want = DMatrix::from_element(4, 4, ZERO);
        want[(0, 0)] = ONE;
        assert!(max_abs_diff(p.matrix(), &want) < 1e-12);

        let zero = DMatrix::from_element(4, 4, ZERO);
        assert!(project_to_physical(&zero, &["A", "B"]).is_err());
    }

    #[test]
    fn density_validation() {
        let mut m = DMatrix::from_element(4, 4, ZERO);
        m[(0, 0)] = C64::new(1.2, 0.0);
        m[(1, 1)] = C64::new(-0.2, 0.0);
        assert!(DensityMatrix::new(m, &["A", "B"]).is_err());
        let mut m = DMatrix::from_element(2, 2, ZERO);
        m[(0, 0)] = ONE;
        m[(0, 1)] = C64::new(0.0, 0.1);
        assert!(DensityMatrix::new(m, &["A"]).is_err());
    }

    #[test]
    fn json_round_trip_is_exact() {
        let rho = rho_of(BellKind::PhiMinus);
        let text = serde_json::to_string(&rho).unwrap();
        let back: DensityMatrix = serde_json::from_str(&text).unwrap();
        assert_eq!(back, rho);
    }
}
