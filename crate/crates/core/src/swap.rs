//! The swapping pipeline: compose two emitted pairs, condition on a BSM
//! coincidence and characterize the state shared by Alice and Bob.

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interference::{
    bsm_povm, effective_indistinguishability, heralding_rate_factor, BsmParams, BsmPovm, Convention,
};
use crate::qstate::{
    bell_state, fidelity_pure, horodecki_s, partial_trace, tensor, BellKind, DensityMatrix, PureState,
};
use crate::source::{emit_pair, Emission, SourceParams};

pub const MIN_HERALD_PROBABILITY: f64 = 1e-12;

/// Classical bounds for fidelity to a Bell state and for the CHSH value.
pub const CLASSICAL_FIDELITY: f64 = 0.5;
pub const LOCAL_CHSH_BOUND: f64 = 2.0;

pub fn heralded_bell_state(convention: Convention) -> PureState {
    match convention {
        Convention::PsiPlus => bell_state(BellKind::PsiPlus),
        Convention::PsiMinus => bell_state(BellKind::PsiMinus),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwapResult {
    pub rho_ab: DensityMatrix,
    /// Fidelity to the Bell state selected by the BSM convention.
    pub fidelity: f64,
    pub s_value: f64,
    /// Heralding probability per emitted double pair, scaled by the gate's
    /// rate factor when produced by [`predict`].
    pub herald_prob: f64,
    pub gate_ps: Option<f64>,
    pub i_eff: f64,
    pub rate_factor: f64,
}

/// Four-photon state with qubits ordered `(X1, X2, XX1, XX2)`.
pub fn compose(rho1: &DensityMatrix, rho2: &DensityMatrix) -> Result<DensityMatrix> {
    if rho1.n_qubits() != 2 || rho2.n_qubits() != 2 {
        return Err(Error::InvalidParameter("compose expects two two-photon states".into()));
    }
    let joint = tensor(rho1, rho2)?;
    let (l1, l2) = (rho1.labels(), rho2.labels());
    joint.permute(&[&l1[0], &l2[0], &l1[1], &l2[1]])
}

/// Trace over the last two qubits of a 16×16 operator.
fn trace_last_pair(m: &DMatrix<C64>) -> DMatrix<C64> {
    DMatrix::from_fn(4, 4, |i, j| (0..4).map(|t| m[(4 * i + t, 4 * j + t)]).sum())
}

/// Conditions `rho4` on the POVM element acting on its last two qubits.
pub fn herald(rho4: &DensityMatrix, povm: &BsmPovm) -> Result<SwapResult> {
    if rho4.n_qubits() != 4 {
        return Err(Error::DimensionMismatch { left: rho4.dim(), right: 16 });
    }
    let lifted = DMatrix::<C64>::identity(4, 4).kronecker(povm.matrix());
    let unnormalized = trace_last_pair(&(lifted * rho4.matrix()));
    let p = unnormalized.trace().re;
    if !(p >= MIN_HERALD_PROBABILITY) {
        return Err(Error::VanishingHerald(p));
    }
    let mut m = unnormalized / C64::new(p, 0.0);
    m = (&m + m.adjoint()) * C64::new(0.5, 0.0);
    let labels = &rho4.labels()[..2];
    let rho_ab = DensityMatrix::new(m, labels)?;
    let fidelity = fidelity_pure(&rho_ab, &heralded_bell_state(povm.convention))?;
    let s_value = horodecki_s(&rho_ab)?;
    Ok(SwapResult {
        rho_ab,
        fidelity,
        s_value,
        herald_prob: p,
        gate_ps: None,
        i_eff: povm.indistinguishability,
        rate_factor: 1.0,
    })
}

/// State of Alice and Bob ignoring the BSM.
pub fn control_no_heralding(rho4: &DensityMatrix) -> Result<DensityMatrix> {
    if rho4.n_qubits() != 4 {
        return Err(Error::DimensionMismatch { left: rho4.dim(), right: 16 });
    }
    partial_trace(rho4, &rho4.labels()[..2])
}

pub fn source_state(source: &SourceParams) -> Result<DensityMatrix> {
    compose(&emit_pair(source, Emission::First)?, &emit_pair(source, Emission::Second)?)
}

/// Heralded result at a fixed indistinguishability.
pub fn swap_at(source: &SourceParams, indistinguishability: f64, convention: Convention) -> Result<SwapResult> {
    herald(&source_state(source)?, &bsm_povm(indistinguishability, convention)?)
}

/// Swap outcome for each gate width (ps; `None` = ungated).
pub fn predict(source: &SourceParams, bsm: &BsmParams, gates: &[Option<f64>]) -> Result<Vec<SwapResult>> {
    let rho4 = source_state(source)?;
    let base = bsm.temporal()?;
    gates
        .par_iter()
        .map(|&gate_ps| {
            let model = base.with_gate(gate_ps);
            let i_eff = effective_indistinguishability(&model, bsm.intrinsic_limit)?;
            let rate_factor = heralding_rate_factor(&model)?;
            let mut r = herald(&rho4, &bsm_povm(i_eff, bsm.convention)?)?;
            r.herald_prob *= rate_factor;
            r.gate_ps = gate_ps;
            r.rate_factor = rate_factor;
            Ok(r)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub entanglement_witnessed: bool,
    pub fidelity_margin: f64,
    pub bell_violated: bool,
    pub chsh_margin: f64,
}

impl Verdict {
    pub fn from_values(fidelity: f64, s_value: f64) -> Self {
        Self {
            entanglement_witnessed: fidelity > CLASSICAL_FIDELITY,
            fidelity_margin: fidelity - CLASSICAL_FIDELITY,
            bell_violated: s_value > LOCAL_CHSH_BOUND,
            chsh_margin: s_value - LOCAL_CHSH_BOUND,
        }
    }
}

pub fn classical_bound_check(result: &SwapResult) -> Verdict {
    Verdict::from_values(result.fidelity, result.s_value)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qstate::fidelity_mixed;
    use crate::source::ideal_pair;

    fn ideal4() -> DensityMatrix {
        let a = ideal_pair().relabel(&["X1", "XX1"]).unwrap();
        let b = ideal_pair().relabel(&["X2", "XX2"]).unwrap();
        compose(&a, &b).unwrap()
    }

    fn close(a: &DMatrix<C64>, b: &DMatrix<C64>, tol: f64) -> bool {
        (a - b).iter().all(|z| z.norm() < tol)
    }

    #[test]
    fn compose_orders_and_normalizes() {
        let rho = ideal4();
        assert_eq!(rho.labels(), ["X1", "X2", "XX1", "XX2"]);
        assert!((rho.trace().re - 1.0).abs() < 1e-14);
        let m1 = DensityMatrix::maximally_mixed(&["X1", "XX1"]).unwrap();
        let m2 = DensityMatrix::maximally_mixed(&["X2", "XX2"]).unwrap();
        let mixed = compose(&m1, &m2).unwrap();
        assert!(close(mixed.matrix(), &(DMatrix::identity(16, 16) / C64::new(16.0, 0.0)), 1e-15));
        assert!(matches!(compose(&m1, &m1), Err(Error::DuplicateLabel(_))));
    }

    #[test]
    fn perfect_bsm_heralds_psi_plus() {
        let r = herald(&ideal4(), &bsm_povm(1.0, Convention::PsiPlus).unwrap()).unwrap();
        let want = bell_state(BellKind::PsiPlus).projector();
        assert!(close(r.rho_ab.matrix(), &want, 1e-14));
        assert!((r.fidelity - 1.0).abs() < 1e-14);
        assert!((r.herald_prob - 0.125).abs() < 1e-15);
    }

    #[test]
    fn distinguishable_photons_give_classical_mixture() {
        let r = herald(&ideal4(), &bsm_povm(0.0, Convention::PsiPlus).unwrap()).unwrap();
        assert!((r.fidelity - 0.5).abs() < 1e-14);
        assert!((r.herald_prob - 0.125).abs() < 1e-15);
        let m = r.rho_ab.matrix();
        assert!((m[(1, 1)].re - 0.5).abs() < 1e-14 && (m[(2, 2)].re - 0.5).abs() < 1e-14);
        assert!(m[(1, 2)].norm() < 1e-15);
    }

    #[test]
    fn ideal_fidelity_is_affine_in_overlap() {
        for i in [0.1, 0.569, 0.9] {
            for conv in [Convention::PsiPlus, Convention::PsiMinus] {
                let r = herald(&ideal4(), &bsm_povm(i, conv).unwrap()).unwrap();
                assert!((r.fidelity - (1.0 + i) / 2.0).abs() < 1e-14);
            }
        }
        let r = herald(&ideal4(), &bsm_povm(0.569, Convention::PsiPlus).unwrap()).unwrap();
        assert!((r.fidelity - 0.7845).abs() < 1e-12);
    }

    #[test]
    fn vanishing_herald_is_an_error() {
        // |HH⟩|HH⟩ never produces an H/V coincidence
        let hh = PureState::basis(2, 0).unwrap();
        let a = hh.to_density(&["X1", "XX1"]).unwrap();
        let b = hh.to_density(&["X2", "XX2"]).unwrap();
        let rho = compose(&a, &b).unwrap();
        assert!(matches!(herald(&rho, &bsm_povm(1.0, Convention::PsiPlus).unwrap()), Err(Error::VanishingHerald(_))));
    }

    #[test]
    fn control_state_is_maximally_mixed() {
        let ctrl = control_no_heralding(&ideal4()).unwrap();
        let mixed = DensityMatrix::maximally_mixed(&["X1", "X2"]).unwrap();
        assert!((fidelity_mixed(&ctrl, &mixed).unwrap() - 1.0).abs() < 1e-12);
        assert!(horodecki_s(&ctrl).unwrap() < 1e-12);

        let rho = source_state(&SourceParams::default()).unwrap();
        let ctrl = control_no_heralding(&rho).unwrap();
        assert!(close(ctrl.matrix(), mixed.matrix(), 1e-10));
    }

    #[test]
    fn verdict_margins() {
        let v = Verdict::from_values(0.81, 2.28);
        assert!(v.entanglement_witnessed && v.bell_violated);
        assert!((v.fidelity_margin - 0.31).abs() < 1e-12);
        assert!((v.chsh_margin - 0.28).abs() < 1e-12);
        let v = Verdict::from_values(0.5, 2.0);
        assert!(!v.entanglement_witnessed && !v.bell_violated);
    }

    #[test]
    fn diagonal_is_independent_of_overlap() {
        let rho = source_state(&SourceParams::default()).unwrap();
        let a = herald(&rho, &bsm_povm(0.2, Convention::PsiPlus).unwrap()).unwrap();
        let b = herald(&rho, &bsm_povm(0.9, Convention::PsiPlus).unwrap()).unwrap();
        for k in 0..4 {
            assert!((a.rho_ab.matrix()[(k, k)] - b.rho_ab.matrix()[(k, k)]).norm() < 1e-14);
        }
    }
}
