//! Quantum-dot cascade emission: an ideal `Φ+` pair degraded by a
//! calibratable noise channel.

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::qstate::{bell_state, BellKind, DensityMatrix};

/// ħ in µeV·ns.
pub const HBAR_UEV_NS: f64 = 0.658_211_9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    Dephasing,
    Depolarizing,
    Fss,
}

impl NoiseKind {
    pub fn name(self) -> &'static str {
        match self {
            NoiseKind::Dephasing => "dephasing",
            NoiseKind::Depolarizing => "depolarizing",
            NoiseKind::Fss => "fss",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseModel {
    Dephasing { strength: f64 },
    Depolarizing { strength: f64 },
    FssPhaseDiffusion { fss_uev: f64, t1_x_ns: f64 },
}

impl NoiseModel {
    pub fn kind(&self) -> NoiseKind {
        match self {
            NoiseModel::Dephasing { .. } => NoiseKind::Dephasing,
            NoiseModel::Depolarizing { .. } => NoiseKind::Depolarizing,
            NoiseModel::FssPhaseDiffusion { .. } => NoiseKind::Fss,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            NoiseModel::Dephasing { strength } | NoiseModel::Depolarizing { strength } => {
                if !(0.0..=1.0).contains(&strength) {
                    return Err(Error::InvalidParameter(format!("channel strength {strength} outside [0, 1]")));
                }
            }
            NoiseModel::FssPhaseDiffusion { fss_uev, t1_x_ns } => {
                if !(fss_uev >= 0.0 && fss_uev.is_finite()) {
                    return Err(Error::InvalidParameter(format!("fine-structure splitting {fss_uev}")));
                }
                if !(t1_x_ns > 0.0 && t1_x_ns.is_finite()) {
                    return Err(Error::InvalidParameter(format!("exciton lifetime {t1_x_ns}")));
                }
            }
        }
        Ok(())
    }
}

/// Modulus of the phase factor `exp(i S t/ħ)` averaged over an exponential
/// emission-time distribution with lifetime `t1_ns`.
pub fn fss_coherence_factor(fss_uev: f64, t1_ns: f64) -> f64 {
    let x = fss_uev * t1_ns / HBAR_UEV_NS;
    1.0 / (1.0 + x * x).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Emission {
    First,
    Second,
}

impl Emission {
    pub fn labels(self) -> [&'static str; 2] {
        match self {
            Emission::First => ["X1", "XX1"],
            Emission::Second => ["X2", "XX2"],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SourceParams {
    pub f1: f64,
    pub f2: f64,
    pub model: NoiseKind,
    /// Fixed splitting for the `fss` kind; when absent it is calibrated from `f1`/`f2`.
    #[serde(default, rename = "fss_ueV", skip_serializing_if = "Option::is_none")]
    pub fss_uev: Option<f64>,
    pub t1_x_ns: f64,
    pub t1_xx_ns: f64,
}

impl Default for SourceParams {
    fn default() -> Self {
        Self { f1: 0.9369, f2: 0.9267, model: NoiseKind::Dephasing, fss_uev: None, t1_x_ns: 0.25, t1_xx_ns: 0.12 }
    }
}

impl SourceParams {
    pub fn validate(&self) -> Result<()> {
        for (name, f) in [("f1", self.f1), ("f2", self.f2)] {
            if !(0.25..=1.0).contains(&f) {
                return Err(Error::InvalidParameter(format!("{name} = {f} outside [0.25, 1]")));
            }
        }
        for (name, t) in [("t1_x_ns", self.t1_x_ns), ("t1_xx_ns", self.t1_xx_ns)] {
            if !(t > 0.0 && t.is_finite()) {
                return Err(Error::InvalidParameter(format!("{name} = {t} must be positive")));
            }
        }
        if let Some(s) = self.fss_uev {
            if !(s >= 0.0 && s.is_finite()) {
                return Err(Error::InvalidParameter(format!("fss_ueV = {s} must be non-negative")));
            }
        }
        Ok(())
    }

    pub fn target(&self, which: Emission) -> f64 {
        match which {
            Emission::First => self.f1,
            Emission::Second => self.f2,
        }
    }

    /// Channel used for one emission.
    pub fn channel(&self, which: Emission) -> Result<NoiseModel> {
        match (self.model, self.fss_uev) {
            (NoiseKind::Fss, Some(fss_uev)) => Ok(NoiseModel::FssPhaseDiffusion { fss_uev, t1_x_ns: self.t1_x_ns }),
            (kind, _) => calibrate(self.target(which), kind, self.t1_x_ns),
        }
    }
}

/// `|Φ+⟩⟨Φ+|` on `(X, XX)`.
pub fn ideal_pair() -> DensityMatrix {
    bell_state(BellKind::PhiPlus).to_density(&["X", "XX"]).expect("Bell projector is a valid state")
}

/// Scales every coherence between opposite polarizations of the first qubit.
fn dephase_first_qubit(m: &DMatrix<C64>, factor: f64) -> DMatrix<C64> {
    let dim = m.nrows();
    let msb = dim >> 1;
    DMatrix::from_fn(dim, dim, |i, j| if (i & msb) != (j & msb) { m[(i, j)] * factor } else { m[(i, j)] })
}

/// The channel as a linear map on arbitrary 4×4 operators.
pub fn apply_channel(m: &DMatrix<C64>, model: &NoiseModel) -> Result<DMatrix<C64>> {
    model.validate()?;
    if m.nrows() != 4 || m.ncols() != 4 {
        return Err(Error::DimensionMismatch { left: m.nrows(), right: 4 });
    }
    Ok(match *model {
        NoiseModel::Dephasing { strength } => dephase_first_qubit(m, 1.0 - strength),
        NoiseModel::FssPhaseDiffusion { fss_uev, t1_x_ns } => {
            dephase_first_qubit(m, fss_coherence_factor(fss_uev, t1_x_ns))
        }
        NoiseModel::Depolarizing { strength } => {
            let tr = m.trace();
            m * C64::new(1.0 - strength, 0.0) + DMatrix::<C64>::identity(4, 4) * (tr * strength / 4.0)
        }
    })
}

pub fn apply_noise(rho: &DensityMatrix, model: &NoiseModel) -> Result<DensityMatrix> {
    if rho.n_qubits() != 2 {
        return Err(Error::DimensionMismatch { left: rho.dim(), right: 4 });
    }
    let out = apply_channel(rho.matrix(), model)?;
    Ok(DensityMatrix::from_parts_unchecked(out, rho.labels().to_vec()))
}

/// Inverts the fidelity to `Φ+` of a noisy ideal pair into a channel strength.
pub fn calibrate(target: f64, kind: NoiseKind, t1_x_ns: f64) -> Result<NoiseModel> {
    if !(target > 0.25 && target <= 1.0) {
        return Err(Error::InvalidParameter(format!("target fidelity {target} outside (0.25, 1]")));
    }
    match kind {
        NoiseKind::Dephasing => {
            if target < 0.5 {
                return Err(Error::UnreachableTarget { target, channel: kind.name() });
            }
            Ok(NoiseModel::Dephasing { strength: 2.0 * (1.0 - target) })
        }
        NoiseKind::Depolarizing => Ok(NoiseModel::Depolarizing { strength: 4.0 / 3.0 * (1.0 - target) }),
        NoiseKind::Fss => {
            if !(t1_x_ns > 0.0 && t1_x_ns.is_finite()) {
                return Err(Error::InvalidParameter(format!("exciton lifetime {t1_x_ns}")));
            }
            // FSS only shrinks the coherence, so f → 1/2 as the splitting grows.
            if target <= 0.5 {
                return Err(Error::UnreachableTarget { target, channel: kind.name() });
            }
            let coherence = 2.0 * target - 1.0;
            let fidelity = |s: f64| 0.5 + 0.5 * fss_coherence_factor(s, t1_x_ns);
            let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
            while fss_coherence_factor(hi, t1_x_ns) > coherence {
                hi *= 2.0;
                if hi > 1e12 {
                    return Err(Error::UnreachableTarget { target, channel: kind.name() });
                }
            }
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if fidelity(mid) > target {
                    lo = mid;
                } else {
                    hi = mid;
                }
                if hi - lo <= 1e-15 * hi.max(1e-300) {
                    break;
                }
            }
            Ok(NoiseModel::FssPhaseDiffusion { fss_uev: 0.5 * (lo + hi), t1_x_ns })
        }
    }
}

/// Noisy pair of one emission, labelled `(X1, XX1)` or `(X2, XX2)`.
pub fn emit_pair(params: &SourceParams, which: Emission) -> Result<DensityMatrix> {
    params.validate()?;
    let model = params.channel(which)?;
    apply_noise(&ideal_pair(), &model)?.relabel(&which.labels())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qstate::{fidelity_pure, horodecki_s, partial_trace, PureState};

    fn phi() -> PureState {
        bell_state(BellKind::PhiPlus)
    }

    #[test]
    fn ideal_pair_properties() {
        let rho = ideal_pair();
        assert!((fidelity_pure(&rho, &phi()).unwrap() - 1.0).abs() < 1e-14);
        let m = partial_trace(&rho, &["X"]).unwrap();
        assert!((m.matrix()[(0, 0)].re - 0.5).abs() < 1e-15);
        assert!(m.matrix()[(0, 1)].norm() < 1e-15);
        assert!((horodecki_s(&rho).unwrap() - 2.0 * 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn channel_limits() {
        let rho = ideal_pair();
        let same = apply_noise(&rho, &NoiseModel::Dephasing { strength: 0.0 }).unwrap();
        assert_eq!(same.matrix(), rho.matrix());
        let mixed = apply_noise(&rho, &NoiseModel::Depolarizing { strength: 1.0 }).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let want = if i == j { 0.25 } else { 0.0 };
                assert!((mixed.matrix()[(i, j)] - C64::new(want, 0.0)).norm() < 1e-15);
            }
        }
        assert!(apply_noise(&rho, &NoiseModel::Dephasing { strength: 1.5 }).is_err());
        assert!(apply_noise(&rho, &NoiseModel::FssPhaseDiffusion { fss_uev: 0.4, t1_x_ns: 0.0 }).is_err());
    }

    #[test]
    fn fss_factor_matches_quadrature() {
        let (s, t1) = (0.4, 0.25);
        // ∫ (1/t1) e^(-t/t1) e^(iSt/ħ) dt by composite Simpson on [0, 60 t1]
        let w = s / HBAR_UEV_NS;
        let n = 200_000;
        let b = 60.0 * t1;
        let h = b / n as f64;
        let f = |t: f64| C64::new(0.0, w * t).exp() * ((-t / t1).exp() / t1);
        let mut acc = f(0.0) + f(b);
        for k in 1..n {
            acc += f(k as f64 * h) * if k % 2 == 1 { 4.0 } else { 2.0 };
        }
        let avg = acc * (h / 3.0);
        assert!((avg.norm() - fss_coherence_factor(s, t1)).abs() < 1e-10);

        let rho = apply_noise(&ideal_pair(), &NoiseModel::FssPhaseDiffusion { fss_uev: s, t1_x_ns: t1 }).unwrap();
        let want = 0.5 / (1.0 + (0.4 * t1 / 0.6582119f64).powi(2)).sqrt();
        assert!((rho.matrix()[(0, 3)].re - want).abs() < 1e-12);
    }

    #[test]
    fn calibration_examples() {
        match calibrate(0.9369, NoiseKind::Dephasing, 0.25).unwrap() {
            NoiseModel::Dephasing { strength } => assert!((strength - 0.1262).abs() < 1e-12),
            other => panic!("{other:?}"),
        }
        match calibrate(1.0, NoiseKind::Depolarizing, 0.25).unwrap() {
            NoiseModel::Depolarizing { strength } => assert_eq!(strength, 0.0),
            other => panic!("{other:?}"),
        }
        match calibrate(0.9267, NoiseKind::Depolarizing, 0.25).unwrap() {
            NoiseModel::Depolarizing { strength } => assert!((strength - 0.097_733_333_333).abs() < 1e-9),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn calibration_rejects_unreachable_targets() {
        assert!(matches!(calibrate(0.4, NoiseKind::Dephasing, 0.25), Err(Error::UnreachableTarget { .. })));
        assert!(matches!(calibrate(0.5, NoiseKind::Fss, 0.25), Err(Error::UnreachableTarget { .. })));
        assert!(calibrate(0.25, NoiseKind::Depolarizing, 0.25).is_err());
        assert!(calibrate(1.01, NoiseKind::Dephasing, 0.25).is_err());
    }

    #[test]
    fn calibration_round_trip_over_grid() {
        for kind in [NoiseKind::Dephasing, NoiseKind::Depolarizing, NoiseKind::Fss] {
            for f in [0.51, 0.7, 0.9267, 0.9369, 0.99] {
                let model = calibrate(f, kind, 0.25).unwrap();
                let rho = apply_noise(&ideal_pair(), &model).unwrap();
                let got = fidelity_pure(&rho, &phi()).unwrap();
                assert!((got - f).abs() < 1e-6, "{kind:?} f={f} got {got}");
            }
        }
    }

    #[test]
    fn emit_pair_hits_targets() {
        let params = SourceParams::default();
        let r1 = emit_pair(&params, Emission::First).unwrap();
        let r2 = emit_pair(&params, Emission::Second).unwrap();
        assert_eq!(r1.labels(), ["X1", "XX1"]);
        assert_eq!(r2.labels(), ["X2", "XX2"]);
        assert!((fidelity_pure(&r1, &phi()).unwrap() - 0.9369).abs() < 1e-6);
        assert!((fidelity_pure(&r2, &phi()).unwrap() - 0.9267).abs() < 1e-6);

        for model in [NoiseKind::Dephasing, NoiseKind::Depolarizing, NoiseKind::Fss] {
            let p = SourceParams { f1: 1.0, f2: 1.0, model, ..Default::default() };
            let r = emit_pair(&p, Emission::First).unwrap();
            assert!((r.matrix() - ideal_pair().matrix()).iter().all(|z| z.norm() < 1e-12));
        }
    }

    #[test]
    fn fixed_fss_overrides_calibration() {
        let p = SourceParams { model: NoiseKind::Fss, fss_uev: Some(0.4), ..Default::default() };
        let r = emit_pair(&p, Emission::First).unwrap();
        let want = 0.5 + 0.5 * fss_coherence_factor(0.4, p.t1_x_ns);
        assert!((fidelity_pure(&r, &phi()).unwrap() - want).abs() < 1e-12);
    }
}
