//! Two-photon interference: bosonic beamsplitter mode calculus, the
//! heralding POVM of the Bell-state measurement, Hong-Ou-Mandel observables
//! and the temporal model mapping detection gating to indistinguishability.
//!
//! Photon `a` (XX1) enters port 1 and photon `b` (XX2) enters port 2 of a
//! balanced splitter with `a†₁ → (c†₁ + c†₂)/√2` and `a†₂ → (c†₁ − c†₂)/√2`.
//! Partial distinguishability is an auxiliary label on photon `b`:
//! `√I |0⟩ + √(1−I) |1⟩`, photon `a` always carrying `|0⟩`.

use std::f64::consts::{FRAC_1_SQRT_2, SQRT_2};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::qstate::PureState;
use crate::quad;

const ZERO: C64 = C64::new(0.0, 0.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Polarizer {
    H,
    V,
}

impl Polarizer {
    fn index(self) -> usize {
        match self {
            Polarizer::H => 0,
            Polarizer::V => 1,
        }
    }
}

/// Which Bell state a coincidence heralds.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Convention {
    #[default]
    PsiPlus,
    PsiMinus,
}

// Output mode index: out·4 + pol·2 + label.
const N_MODES: usize = 8;

fn mode(out: usize, pol: usize, label: usize) -> usize {
    out * 4 + pol * 2 + label
}

fn check_overlap(overlap: f64) -> Result<()> {
    if (0.0..=1.0).contains(&overlap) {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("indistinguishability {overlap} outside [0, 1]")))
    }
}

/// Fock amplitudes of the two-photon output, keyed by unordered mode pairs
/// `(m, n)` with `m ≤ n`. `flip_first` applies a π phase to the `V`
/// component of photon `a` before the splitter.
pub fn output_amplitudes(input: &DVector<C64>, overlap: f64, flip_first: bool) -> Vec<((usize, usize), C64)> {
    assert_eq!(input.len(), 4, "two-photon polarization ket expected");
    let s = FRAC_1_SQRT_2;
    let (same, other) = (overlap.sqrt(), (1.0 - overlap).sqrt());
    let mut c = [[ZERO; N_MODES]; N_MODES];
    for p in 0..2 {
        for q in 0..2 {
            let mut amp = input[p * 2 + q];
            if flip_first && p == 1 {
                amp = -amp;
            }
            if amp == ZERO {
                continue;
            }
            for out_a in 0..2 {
                let ua = s;
                for out_b in 0..2 {
                    let ub = if out_b == 0 { s } else { -s };
                    for (label, w) in [(0, same), (1, other)] {
                        c[mode(out_a, p, 0)][mode(out_b, q, label)] += amp * (ua * ub * w);
                    }
                }
            }
        }
    }
    let mut fock = Vec::with_capacity(N_MODES * (N_MODES + 1) / 2);
    for m in 0..N_MODES {
        for n in m..N_MODES {
            let a = if m == n { c[m][m] * SQRT_2 } else { c[m][n] + c[n][m] };
            fock.push(((m, n), a));
        }
    }
    fock
}

/// Photon numbers reaching the two detectors behind polarizers `pol1`
/// (output 1) and `pol2` (output 2); other photons are absorbed.
fn detected_counts(m: usize, n: usize, pol1: Polarizer, pol2: Polarizer) -> (u8, u8) {
    let mut counts = (0u8, 0u8);
    for k in [m, n] {
        let (out, pol) = (k / 4, (k / 2) % 2);
        if out == 0 && pol == pol1.index() {
            counts.0 += 1;
        } else if out == 1 && pol == pol2.index() {
            counts.1 += 1;
        }
    }
    counts
}

/// Probability of one photon behind each polarizer, from the full mode
/// expansion.
pub fn beamsplitter_coincidence(input: &PureState, pol1: Polarizer, pol2: Polarizer, overlap: f64) -> Result<f64> {
    if input.n_qubits() != 2 {
        return Err(Error::DimensionMismatch { left: input.dim(), right: 4 });
    }
    check_overlap(overlap)?;
    Ok(output_amplitudes(input.amplitudes(), overlap, false)
        .into_iter()
        .filter(|((m, n), _)| detected_counts(*m, *n, pol1, pol2) == (1, 1))
        .map(|(_, a)| a.norm_sqr())
        .sum())
}

/// Measurement operator on the two-photon polarization space for every
/// detected-photon-number outcome `(n1, n2)` behind `H` (output 1) and
/// `V` (output 2) polarizers. Outcomes are ordered
/// `(0,0), (1,0), (0,1), (1,1), (2,0), (0,2)`.
pub const OUTCOMES: [(u8, u8); 6] = [(0, 0), (1, 0), (0, 1), (1, 1), (2, 0), (0, 2)];

pub fn detection_povm(overlap: f64, flip_first: bool) -> Result<[DMatrix<C64>; 6]> {
    check_overlap(overlap)?;
    let columns: Vec<Vec<((usize, usize), C64)>> = (0..4)
        .map(|k| {
            let mut e = DVector::from_element(4, ZERO);
            e[k] = C64::new(1.0, 0.0);
            output_amplitudes(&e, overlap, flip_first)
        })
        .collect();
    let mut out: [DMatrix<C64>; 6] = std::array::from_fn(|_| DMatrix::from_element(4, 4, ZERO));
    for f in 0..columns[0].len() {
        let (m, n) = columns[0][f].0;
        let counts = detected_counts(m, n, Polarizer::H, Polarizer::V);
        let slot = OUTCOMES.iter().position(|&o| o == counts).expect("two photons at most");
        for j in 0..4 {
            for k in 0..4 {
                out[slot][(j, k)] += columns[j][f].1.conj() * columns[k][f].1;
            }
        }
    }
    Ok(out)
}

/// Matrix element `⟨j|E|k⟩` of the H/V coincidence operator from the mode
/// expansion.
pub fn mode_calculus_element(j: usize, k: usize, overlap: f64, flip_first: bool) -> Result<C64> {
    Ok(detection_povm(overlap, flip_first)?[3][(j, k)])
}

/// Heralding POVM element of the Bell-state measurement.
#[derive(Debug, Clone, PartialEq)]
pub struct BsmPovm {
    pub indistinguishability: f64,
    pub convention: Convention,
    matrix: DMatrix<C64>,
}

impl BsmPovm {
    pub fn matrix(&self) -> &DMatrix<C64> {
        &self.matrix
    }
}

/// `E = ¼[(|HV⟩⟨HV| + |VH⟩⟨VH|) ± I(|HV⟩⟨VH| + |VH⟩⟨HV|)]`.
pub fn bsm_povm(indistinguishability: f64, convention: Convention) -> Result<BsmPovm> {
    check_overlap(indistinguishability)?;
    let sign = match convention {
        Convention::PsiPlus => 1.0,
        Convention::PsiMinus => -1.0,
    };
    let mut m = DMatrix::from_element(4, 4, ZERO);
    m[(1, 1)] = C64::new(0.25, 0.0);
    m[(2, 2)] = C64::new(0.25, 0.0);
    m[(1, 2)] = C64::new(0.25 * sign * indistinguishability, 0.0);
    m[(2, 1)] = m[(1, 2)];
    Ok(BsmPovm { indistinguishability, convention, matrix: m })
}

/// Normalized zero-delay coincidence at a balanced splitter.
pub fn hom_coincidence(indistinguishability: f64, copolarized: bool) -> Result<f64> {
    check_overlap(indistinguishability)?;
    Ok(if copolarized { 0.5 * (1.0 - indistinguishability) } else { 0.5 })
}

pub fn hom_visibility(indistinguishability: f64) -> Result<f64> {
    Ok(1.0 - hom_coincidence(indistinguishability, true)? / hom_coincidence(indistinguishability, false)?)
}

/// FWHM → standard deviation for a Gaussian.
pub const FWHM_TO_SIGMA: f64 = 0.424_660_900_144_009_5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TemporalModel {
    /// XX radiative lifetime, ns.
    pub t1_ns: f64,
    /// XX coherence time, ns.
    pub t2_ns: f64,
    /// Per-detector timing resolution, ps.
    pub jitter_fwhm_ps: f64,
    /// Full coincidence gate, ps; `None` accepts every coincidence.
    pub gate_ps: Option<f64>,
}

impl TemporalModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.t1_ns > 0.0 && self.t1_ns.is_finite()) {
            return Err(Error::InvalidParameter(format!("t1 = {} ns", self.t1_ns)));
        }
        if !(self.t2_ns > 0.0) || self.t2_ns > 2.0 * self.t1_ns * (1.0 + 1e-12) {
            return Err(Error::InvalidParameter(format!(
                "t2 = {} ns must lie in (0, 2·t1 = {}]",
                self.t2_ns,
                2.0 * self.t1_ns
            )));
        }
        if !(self.jitter_fwhm_ps >= 0.0 && self.jitter_fwhm_ps.is_finite()) {
            return Err(Error::InvalidParameter(format!("jitter {} ps", self.jitter_fwhm_ps)));
        }
        if let Some(g) = self.gate_ps {
            if !(g > 0.0) {
                return Err(Error::InvalidParameter(format!("gate {g} ps must be positive")));
            }
        }
        Ok(())
    }

    pub fn with_gate(self, gate_ps: Option<f64>) -> Self {
        Self { gate_ps, ..self }
    }

    /// Pure-dephasing rate `1/t2 − 1/(2 t1)`, 1/ns.
    pub fn pure_dephasing_rate(&self) -> f64 {
        (1.0 / self.t2_ns - 0.5 / self.t1_ns).max(0.0)
    }

    /// Standard deviation of the recorded arrival-time difference between
    /// the two BSM detectors, ns.
    pub fn difference_sigma_ns(&self) -> f64 {
        SQRT_2 * self.jitter_fwhm_ps * FWHM_TO_SIGMA * 1e-3
    }
}

/// Coherence time that makes the ungated indistinguishability equal `ungated`
/// for a given lifetime and gating-insensitive limit.
pub fn calibrate_t2(t1_ns: f64, intrinsic_limit: f64, ungated: f64) -> Result<f64> {
    if !(intrinsic_limit > 0.0 && intrinsic_limit <= 1.0) {
        return Err(Error::InvalidParameter(format!("intrinsic limit {intrinsic_limit} outside (0, 1]")));
    }
    check_overlap(ungated)?;
    if ungated > intrinsic_limit {
        return Err(Error::InvalidParameter(format!(
            "ungated indistinguishability {ungated} exceeds intrinsic limit {intrinsic_limit}"
        )));
    }
    if ungated == 0.0 {
        return Err(Error::InvalidParameter("ungated indistinguishability must be positive".into()));
    }
    Ok(2.0 * t1_ns * ungated / intrinsic_limit)
}

/// Probability that a true emission-time difference `delta` (ns, ≥ 0) is
/// recorded inside the gate.
fn gate_acceptance(delta: f64, half_gate: f64, sigma: f64) -> f64 {
    if sigma == 0.0 {
        return if delta <= half_gate { 1.0 } else { 0.0 };
    }
    let k = 1.0 / (sigma * SQRT_2);
    0.5 * (erfc((delta - half_gate) * k) - erfc((delta + half_gate) * k))
}

/// `∫ p(Δ) e^(−rate·|Δ|) J(Δ) dΔ` over the Laplace distribution of the
/// emission-time difference.
fn gated_average(model: &TemporalModel, rate: f64) -> f64 {
    let gamma = 1.0 / model.t1_ns;
    let decay = gamma + rate;
    // the even integrand is folded onto [0, ∞)
    let weight = move |d: f64| gamma * (-decay * d).exp();
    let (abs_tol, rel_tol) = (1e-300, 1e-10);
    match model.gate_ps {
        None => quad::integrate_to_infinity(weight, 0.0, 1.0 / decay, abs_tol, rel_tol),
        Some(g) => {
            let half = 0.5 * g * 1e-3;
            let sigma = model.difference_sigma_ns();
            let f = |d: f64| weight(d) * gate_acceptance(d, half, sigma);
            if sigma == 0.0 {
                quad::integrate(f, 0.0, half, abs_tol, rel_tol)
            } else {
                let reach = half + 12.0 * sigma;
                quad::integrate(f, 0.0, half, abs_tol, rel_tol) + quad::integrate(f, half, reach, abs_tol, rel_tol)
            }
        }
    }
}

/// Indistinguishability of the photon pairs accepted by the gate.
pub fn effective_indistinguishability(model: &TemporalModel, intrinsic_limit: f64) -> Result<f64> {
    model.validate()?;
    check_overlap(intrinsic_limit)?;
    let den = gated_average(model, 0.0);
    if den <= 0.0 {
        // vanishing gate: only coincident emissions survive
        return Ok(intrinsic_limit);
    }
    let num = gated_average(model, 2.0 * model.pure_dephasing_rate());
    Ok(intrinsic_limit * (num / den).clamp(0.0, 1.0))
}

/// Fraction of BSM coincidences that survive the gate.
pub fn heralding_rate_factor(model: &TemporalModel) -> Result<f64> {
    model.validate()?;
    if model.gate_ps.is_none() {
        return Ok(1.0);
    }
    Ok(gated_average(model, 0.0).clamp(0.0, 1.0))
}

/// Gating-related parameters of the `[bsm]` configuration section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BsmParams {
    /// Ungated indistinguishability measured by HOM.
    pub indistinguishability: f64,
    #[serde(default)]
    pub convention: Convention,
    pub t1_xx_ns: f64,
    /// Derived from `indistinguishability` and `intrinsic_limit` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t2_xx_ns: Option<f64>,
    pub jitter_ps: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gate_ps: Option<f64>,
    pub intrinsic_limit: f64,
}

impl Default for BsmParams {
    fn default() -> Self {
        Self {
            indistinguishability: 0.569,
            convention: Convention::PsiPlus,
            t1_xx_ns: 0.12,
            t2_xx_ns: None,
            jitter_ps: 50.0,
            gate_ps: None,
            intrinsic_limit: 1.0,
        }
    }
}

impl BsmParams {
    pub fn temporal(&self) -> Result<TemporalModel> {
        let t2_ns = match self.t2_xx_ns {
            Some(t2) => t2,
            None => calibrate_t2(self.t1_xx_ns, self.intrinsic_limit, self.indistinguishability)?,
        };
        let model =
            TemporalModel { t1_ns: self.t1_xx_ns, t2_ns, jitter_fwhm_ps: self.jitter_ps, gate_ps: self.gate_ps };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        check_overlap(self.indistinguishability)?;
        check_overlap(self.intrinsic_limit)?;
        self.temporal().map(|_| ())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qstate::{bell_state, BellKind};

    fn ket(k: usize) -> PureState {
        PureState::basis(2, k).unwrap()
    }

    #[test]
    fn mode_calculus_examples() {
        let psi_p = bell_state(BellKind::PsiPlus);
        let psi_m = bell_state(BellKind::PsiMinus);
        let p = beamsplitter_coincidence(&psi_p, Polarizer::H, Polarizer::V, 1.0).unwrap();
        assert!(p.abs() < 1e-15);
        let p = beamsplitter_coincidence(&psi_m, Polarizer::H, Polarizer::V, 1.0).unwrap();
        assert!((p - 0.5).abs() < 1e-15);
        let p = beamsplitter_coincidence(&ket(1), Polarizer::H, Polarizer::V, 0.0).unwrap();
        assert!((p - 0.25).abs() < 1e-15);
    }

    #[test]
    fn output_is_normalized() {
        for overlap in [0.0, 0.3, 1.0] {
            for k in 0..4 {
                let total: f64 =
                    output_amplitudes(ket(k).amplitudes(), overlap, false).iter().map(|(_, a)| a.norm_sqr()).sum();
                assert!((total - 1.0).abs() < 1e-14);
            }
            let sum = detection_povm(overlap, false)
                .unwrap()
                .iter()
                .fold(DMatrix::from_element(4, 4, ZERO), |acc, e| acc + e);
            assert!((sum - DMatrix::<C64>::identity(4, 4)).iter().all(|z| z.norm() < 1e-14));
        }
    }

    #[test]
    fn povm_limits() {
        let e = bsm_povm(1.0, Convention::PsiPlus).unwrap();
        let want = bell_state(BellKind::PsiPlus).projector() * C64::new(0.5, 0.0);
        assert!((e.matrix() - want).iter().all(|z| z.norm() < 1e-15));
        for conv in [Convention::PsiPlus, Convention::PsiMinus] {
            let e = bsm_povm(0.0, conv).unwrap();
            assert_eq!(e.matrix()[(1, 2)], ZERO);
            assert_eq!(e.matrix()[(1, 1)], C64::new(0.25, 0.0));
        }
        assert!(bsm_povm(1.2, Convention::PsiPlus).is_err());
    }

    #[test]
    fn povm_trace_and_bounds() {
        for i in [0.0, 0.25, 0.569, 1.0] {
            let e = bsm_povm(i, Convention::PsiPlus).unwrap();
            assert_eq!(e.matrix().trace().re, 0.5);
            let ev = crate::qstate::hermitian_eigenvalues(e.matrix());
            assert!(ev[0] >= -1e-15 && ev[3] <= 1.0);
        }
    }

    #[test]
    fn hom_examples() {
        assert!((hom_coincidence(0.569, true).unwrap() - 0.2155).abs() < 1e-12);
        assert!((hom_visibility(0.569).unwrap() - 0.569).abs() < 1e-12);
        assert_eq!(hom_coincidence(1.0, true).unwrap(), 0.0);
        assert_eq!(hom_coincidence(0.0, true).unwrap(), hom_coincidence(0.0, false).unwrap());
    }

    fn model(gate: Option<f64>, jitter: f64) -> TemporalModel {
        TemporalModel { t1_ns: 0.12, t2_ns: 0.13656, jitter_fwhm_ps: jitter, gate_ps: gate }
    }

    #[test]
    fn ungated_matches_mean_overlap() {
        let m = model(None, 0.0);
        let got = effective_indistinguishability(&m, 0.9).unwrap();
        assert!((got - 0.9 * 0.13656 / 0.24).abs() < 1e-9);
        // jitter does not matter without a gate
        let got = effective_indistinguishability(&model(None, 50.0), 0.9).unwrap();
        assert!((got - 0.9 * 0.13656 / 0.24).abs() < 1e-9);
    }

    #[test]
    fn vanishing_gate_reaches_intrinsic_limit() {
        let got = effective_indistinguishability(&model(Some(1e-6), 0.0), 0.8).unwrap();
        assert!((got - 0.8).abs() < 1e-6);
        let m = TemporalModel { t2_ns: 0.24, ..model(Some(47.0), 50.0) };
        assert!((effective_indistinguishability(&m, 0.8).unwrap() - 0.8).abs() < 1e-12);
    }

    #[test]
    fn jitter_free_gate_matches_closed_form() {
        let m = model(Some(120.0), 0.0);
        let gamma = 1.0 / m.t1_ns;
        let decay = gamma + 2.0 * m.pure_dephasing_rate();
        let half = 0.06;
        let den = 1.0 - (-gamma * half).exp();
        let num = gamma / decay * (1.0 - (-decay * half).exp());
        let got = effective_indistinguishability(&m, 1.0).unwrap();
        assert!(((got - num / den) / (num / den)).abs() < 1e-6);
        // gate = t1 without jitter: 1 − e^(−1/2)
        let rate = heralding_rate_factor(&m).unwrap();
        assert!((rate - (1.0 - (-0.5f64).exp())).abs() < 1e-9);
    }

    #[test]
    fn rate_factor_limits() {
        assert_eq!(heralding_rate_factor(&model(None, 50.0)).unwrap(), 1.0);
        assert!(heralding_rate_factor(&model(Some(1e-6), 50.0)).unwrap() < 1e-6);
    }

    #[test]
    fn gating_is_monotone() {
        for jitter in [0.0, 50.0] {
            let mut last_i = f64::INFINITY;
            let mut last_r = 0.0;
            for g in (1..=60).map(|k| k as f64 * 10.0) {
                let m = model(Some(g), jitter);
                let i = effective_indistinguishability(&m, 1.0).unwrap();
                let r = heralding_rate_factor(&m).unwrap();
                assert!(i <= last_i + 1e-12, "jitter {jitter} gate {g}");
                assert!(r >= last_r - 1e-12);
                last_i = i;
                last_r = r;
            }
        }
    }

    #[test]
    fn longer_coherence_never_hurts() {
        let mut last = 0.0;
        for t2 in [0.05, 0.1, 0.15, 0.2, 0.24] {
            let m = TemporalModel { t2_ns: t2, ..model(Some(47.0), 50.0) };
            let i = effective_indistinguishability(&m, 1.0).unwrap();
            assert!(i >= last - 1e-12);
            last = i;
        }
    }

    #[test]
    fn temporal_validation() {
        assert!(TemporalModel { t2_ns: 0.3, ..model(None, 0.0) }.validate().is_err());
        assert!(model(Some(0.0), 0.0).validate().is_err());
        assert!(calibrate_t2(0.12, 0.5, 0.569).is_err());
        let t2 = calibrate_t2(0.12, 1.0, 0.569).unwrap();
        assert!((t2 - 0.13656).abs() < 1e-12);
    }
}
