//! Two-qubit polarization tomography: projective settings, a Poisson count
//! model, linear inversion, maximum-likelihood reconstruction on the
//! `ρ = T†T / Tr(T†T)` parameterization and parametric bootstrap errors.

use std::f64::consts::FRAC_1_SQRT_2;
use std::fmt;
use std::str::FromStr;

use nalgebra::{Cholesky, DMatrix, DVector};
use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::qstate::{bell_state, fidelity_pure, horodecki_s, pauli, project_to_physical, BellKind, DensityMatrix};

/// Single-photon analyzer setting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Pol {
    H,
    V,
    D,
    A,
    R,
    L,
}

impl Pol {
    pub const ALL: [Pol; 6] = [Pol::H, Pol::V, Pol::D, Pol::A, Pol::R, Pol::L];

    pub fn ket(self) -> [C64; 2] {
        let s = FRAC_1_SQRT_2;
        match self {
            Pol::H => [C64::new(1.0, 0.0), C64::new(0.0, 0.0)],
            Pol::V => [C64::new(0.0, 0.0), C64::new(1.0, 0.0)],
            Pol::D => [C64::new(s, 0.0), C64::new(s, 0.0)],
            Pol::A => [C64::new(s, 0.0), C64::new(-s, 0.0)],
            Pol::R => [C64::new(s, 0.0), C64::new(0.0, s)],
            Pol::L => [C64::new(s, 0.0), C64::new(0.0, -s)],
        }
    }

    /// `|ψ⟩⟨ψ|`
    pub fn projector(self) -> DMatrix<C64> {
        let k = self.ket();
        DMatrix::from_fn(2, 2, |i, j| k[i] * k[j].conj())
    }

    pub fn orthogonal(self) -> Pol {
        match self {
            Pol::H => Pol::V,
            Pol::V => Pol::H,
            Pol::D => Pol::A,
            Pol::A => Pol::D,
            Pol::R => Pol::L,
            Pol::L => Pol::R,
        }
    }

    /// `(1, ⟨σx⟩, ⟨σy⟩, ⟨σz⟩)` of the projector.
    fn stokes(self) -> [f64; 4] {
        let p = self.projector();
        let s = pauli();
        [1.0, (&p * &s[0]).trace().re, (&p * &s[1]).trace().re, (&p * &s[2]).trace().re]
    }
}

impl fmt::Display for Pol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

impl FromStr for Pol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "H" => Ok(Pol::H),
            "V" => Ok(Pol::V),
            "D" => Ok(Pol::D),
            "A" => Ok(Pol::A),
            "R" => Ok(Pol::R),
            "L" => Ok(Pol::L),
            other => Err(Error::Parse(format!("unknown polarization setting `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MeasurementSetting {
    pub a: Pol,
    pub b: Pol,
}

impl MeasurementSetting {
    pub fn new(a: Pol, b: Pol) -> Self {
        Self { a, b }
    }

    /// `|ψ_a⟩ ⊗ |ψ_b⟩`
    pub fn ket(&self) -> DVector<C64> {
        let (a, b) = (self.a.ket(), self.b.ket());
        DVector::from_fn(4, |k, _| a[k / 2] * b[k % 2])
    }

    pub fn probability(&self, rho: &DensityMatrix) -> f64 {
        let v = self.ket();
        (v.adjoint() * rho.matrix() * &v)[(0, 0)].re.max(0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SettingSet {
    /// `{H, V, D, R}²`
    Sixteen,
    /// `{H, V, D, A, R, L}²`
    ThirtySix,
}

impl SettingSet {
    pub fn from_count(n: usize) -> Result<Self> {
        match n {
            16 => Ok(SettingSet::Sixteen),
            36 => Ok(SettingSet::ThirtySix),
            other => Err(Error::InvalidParameter(format!("setting set must be 16 or 36, got {other}"))),
        }
    }

    #[allow(clippy::len_without_is_empty)]
    pub fn len(self) -> usize {
        match self {
            SettingSet::Sixteen => 16,
            SettingSet::ThirtySix => 36,
        }
    }
}

pub fn standard_settings(kind: SettingSet) -> Vec<MeasurementSetting> {
    let pols: &[Pol] = match kind {
        SettingSet::Sixteen => &[Pol::H, Pol::V, Pol::D, Pol::R],
        SettingSet::ThirtySix => &Pol::ALL,
    };
    pols.iter().flat_map(|&a| pols.iter().map(move |&b| MeasurementSetting::new(a, b))).collect()
}

/// Settings with their (possibly non-integer expected) counts and relative
/// acquisition weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TomographyRun {
    pub settings: Vec<MeasurementSetting>,
    pub counts: Vec<f64>,
    pub exposure: Vec<f64>,
}

impl TomographyRun {
    pub fn new(settings: Vec<MeasurementSetting>, counts: Vec<f64>, exposure: Vec<f64>) -> Result<Self> {
        let run = Self { settings, counts, exposure };
        run.validate()?;
        Ok(run)
    }

    pub fn validate(&self) -> Result<()> {
        if self.counts.len() != self.settings.len() || self.exposure.len() != self.settings.len() {
            return Err(Error::InvalidParameter(format!(
                "{} settings but {} counts and {} exposures",
                self.settings.len(),
                self.counts.len(),
                self.exposure.len()
            )));
        }
        if let Some(c) = self.counts.iter().find(|c| !(**c >= 0.0 && c.is_finite())) {
            return Err(Error::InvalidParameter(format!("invalid count {c}")));
        }
        if let Some(e) = self.exposure.iter().find(|e| !(**e > 0.0 && e.is_finite())) {
            return Err(Error::InvalidParameter(format!("exposure {e} must be positive")));
        }
        Ok(())
    }

    /// Expected counts `scale · e_k · p_k` without sampling noise.
    pub fn from_probabilities(rho: &DensityMatrix, settings: &[MeasurementSetting], scale: f64) -> Result<Self> {
        let counts = settings.iter().map(|s| scale * s.probability(rho)).collect();
        Self::new(settings.to_vec(), counts, vec![1.0; settings.len()])
    }

    pub fn total(&self) -> f64 {
        self.counts.iter().sum()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("setting_a,setting_b,counts,exposure\n");
        for ((s, c), e) in self.settings.iter().zip(&self.counts).zip(&self.exposure) {
            out.push_str(&format!("{},{},{},{}\n", s.a, s.b, c, e));
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'));
        let (_, header) = lines.next().ok_or_else(|| Error::Parse("empty tomography file".into()))?;
        let cols: Vec<&str> = header.split(',').map(str::trim).collect();
        if cols != ["setting_a", "setting_b", "counts", "exposure"] {
            return Err(Error::Parse(format!("unexpected header `{header}`")));
        }
        let (mut settings, mut counts, mut exposure) = (Vec::new(), Vec::new(), Vec::new());
        for (n, line) in lines {
            let f: Vec<&str> = line.split(',').map(str::trim).collect();
            if f.len() != 4 {
                return Err(Error::Parse(format!("line {}: expected 4 fields", n + 1)));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|e| Error::Parse(format!("line {}: {e}", n + 1)));
            settings.push(MeasurementSetting::new(f[0].parse()?, f[1].parse()?));
            counts.push(num(f[2])?);
            exposure.push(num(f[3])?);
        }
        Self::new(settings, counts, exposure)
    }
}

fn poisson_sample<R: Rng>(mean: f64, rng: &mut R) -> f64 {
    if mean <= 0.0 {
        0.0
    } else {
        Poisson::new(mean).expect("positive finite mean").sample(rng)
    }
}

/// Poisson counts with mean `n · ⟨P_a ⊗ P_b⟩_ρ` per setting.
pub fn simulate_counts(
    rho: &DensityMatrix,
    settings: &[MeasurementSetting],
    n: f64,
    seed: u64,
) -> Result<TomographyRun> {
    if !(n > 0.0) {
        return Err(Error::InvalidParameter(format!("counts per setting {n} must be positive")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let counts = settings.iter().map(|s| poisson_sample(n * s.probability(rho), &mut rng)).collect();
    TomographyRun::new(settings.to_vec(), counts, vec![1.0; settings.len()])
}

fn design_matrix(settings: &[MeasurementSetting]) -> DMatrix<f64> {
    DMatrix::from_fn(settings.len(), 16, |k, c| {
        let (sa, sb) = (settings[k].a.stokes(), settings[k].b.stokes());
        sa[c / 4] * sb[c % 4]
    })
}

/// Least-squares inversion of the Born-rule map, normalized to unit trace.
/// The result is Hermitian but not necessarily positive.
pub fn linear_inversion(run: &TomographyRun) -> Result<DMatrix<C64>> {
    run.validate()?;
    let a = design_matrix(&run.settings);
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let rank = svd.singular_values.iter().filter(|&&s| s > 1e-10 * smax).count();
    if rank < 16 {
        return Err(Error::RankDeficient { rank });
    }
    let y = DVector::from_iterator(run.settings.len(), run.counts.iter().zip(&run.exposure).map(|(c, e)| c / e));
    let x = svd.solve(&y, 1e-12 * smax).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let p = pauli();
    let id = DMatrix::<C64>::identity(2, 2);
    let basis = |i: usize| if i == 0 { id.clone() } else { p[i - 1].clone() };
    let mut rho = DMatrix::from_element(4, 4, C64::new(0.0, 0.0));
    for i in 0..4 {
        for j in 0..4 {
            rho += basis(i).kronecker(&basis(j)) * C64::new(x[4 * i + j], 0.0);
        }
    }
    let tr = rho.trace().re;
    if !(tr > 0.0) {
        return Err(Error::InvalidParameter("counts carry no signal".into()));
    }
    Ok(rho / C64::new(tr, 0.0))
}

// Lower-triangular T ↔ 16 reals: 4 real diagonal entries, then (re, im) of
// the 6 strictly-lower entries row by row.
const LOWER: [(usize, usize); 6] = [(1, 0), (2, 0), (2, 1), (3, 0), (3, 1), (3, 2)];

fn unpack(t: &DVector<f64>) -> DMatrix<C64> {
    let mut m = DMatrix::from_element(4, 4, C64::new(0.0, 0.0));
    for i in 0..4 {
        m[(i, i)] = C64::new(t[i], 0.0);
    }
    for (k, &(i, j)) in LOWER.iter().enumerate() {
        m[(i, j)] = C64::new(t[4 + 2 * k], t[5 + 2 * k]);
    }
    m
}

fn pack(m: &DMatrix<C64>) -> DVector<f64> {
    let mut t = DVector::zeros(16);
    for i in 0..4 {
        t[i] = m[(i, i)].re;
    }
    for (k, &(i, j)) in LOWER.iter().enumerate() {
        t[4 + 2 * k] = m[(i, j)].re;
        t[5 + 2 * k] = m[(i, j)].im;
    }
    t
}

/// Lower-triangular `T` with `T†T = ρ`.
fn factor(rho: &DMatrix<C64>) -> Option<DMatrix<C64>> {
    // Cholesky of the index-reversed matrix yields ρ = U U† with U upper.
    let rev = DMatrix::from_fn(4, 4, |i, j| rho[(3 - i, 3 - j)]);
    let l = Cholesky::new(rev)?.unpack();
    let u = DMatrix::from_fn(4, 4, |i, j| l[(3 - i, 3 - j)]);
    Some(u.adjoint())
}

fn state_from(t: &DVector<f64>) -> DMatrix<C64> {
    let tm = unpack(t);
    let m = tm.adjoint() * &tm;
    let tr = m.trace().re;
    m / C64::new(tr, 0.0)
}

struct Likelihood<'a> {
    kets: Vec<DVector<C64>>,
    run: &'a TomographyRun,
    total: f64,
}

impl<'a> Likelihood<'a> {
    fn new(run: &'a TomographyRun) -> Self {
        Self { kets: run.settings.iter().map(|s| s.ket()).collect(), run, total: run.total() }
    }

    /// Profiled Poisson log-likelihood per count and its gradient.
    fn eval(&self, t: &DVector<f64>, want_grad: bool) -> (f64, DVector<f64>) {
        let tm = unpack(t);
        let mut grad = DVector::zeros(16);
        let mut sum_ln = 0.0;
        let mut norm = 0.0;
        let mut grad_ln = DVector::zeros(16);
        let mut grad_norm = DVector::zeros(16);
        for (k, v) in self.kets.iter().enumerate() {
            let w = &tm * v;
            let a = w.norm_squared();
            let (n, e) = (self.run.counts[k], self.run.exposure[k]);
            if n > 0.0 {
                if a <= 0.0 {
                    return (f64::NEG_INFINITY, grad);
                }
                sum_ln += n * (e * a).ln();
            }
            norm += e * a;
            if want_grad {
                let da = |i: usize, j: usize| {
                    let z = w[i].conj() * v[j];
                    (2.0 * z.re, -2.0 * z.im)
                };
                let mut d = DVector::zeros(16);
                for i in 0..4 {
                    d[i] = da(i, i).0;
                }
                for (q, &(i, j)) in LOWER.iter().enumerate() {
                    let (dr, di) = da(i, j);
                    d[4 + 2 * q] = dr;
                    d[5 + 2 * q] = di;
                }
                if n > 0.0 {
                    grad_ln.axpy(n / a, &d, 1.0);
                }
                grad_norm.axpy(e, &d, 1.0);
            }
        }
        let value = (sum_ln - self.total * norm.ln()) / self.total;
        if want_grad {
            grad = (grad_ln - grad_norm * (self.total / norm)) / self.total;
        }
        (value, grad)
    }
}

pub const MLE_GRADIENT_TOL: f64 = 1e-8;
pub const MLE_MAX_ITERATIONS: usize = 10_000;
/// Rank-deficient optima leave flat directions in `T`; the ascent is then
/// stopped once the log-likelihood per count gains less than
/// `MLE_STAGNATION_GAIN` over `MLE_STAGNATION_WINDOW` accepted steps.
pub const MLE_STAGNATION_WINDOW: usize = 50;
pub const MLE_STAGNATION_GAIN: f64 = 1e-13;

#[derive(Debug, Clone)]
pub struct MleOutcome {
    pub rho: DensityMatrix,
    pub iterations: usize,
    /// Scale-free gradient norm `‖∇ℓ‖·‖t‖` at the returned point.
    pub grad_norm: f64,
    /// Log-likelihood per count after each accepted step, starting point first.
    pub trace: Vec<f64>,
}

pub fn mle_reconstruct(run: &TomographyRun) -> Result<DensityMatrix> {
    mle_reconstruct_detailed(run).map(|o| o.rho)
}

/// Maximizes the Poisson likelihood with BFGS and Armijo backtracking,
/// starting from the physical projection of the linear-inversion estimate.
pub fn mle_reconstruct_detailed(run: &TomographyRun) -> Result<MleOutcome> {
    run.validate()?;
    if !(run.total() > 0.0) {
        return Err(Error::InvalidParameter("tomography run has no counts".into()));
    }
    let labels = ["A", "B"];
    let lin = linear_inversion(run)?;
    let start = project_to_physical(&lin, &labels)?;
    // a whisker of white noise keeps every observed setting at non-zero probability
    let mix = 1e-6;
    let start = start.matrix() * C64::new(1.0 - mix, 0.0) + DMatrix::<C64>::identity(4, 4) * C64::new(mix / 4.0, 0.0);
    let mut t = pack(&factor(&start).ok_or_else(|| Error::InvalidState("initial state not factorizable".into()))?);
    t /= t.norm();

    let lik = Likelihood::new(run);
    let (mut value, mut grad) = lik.eval(&t, true);
    if !value.is_finite() {
        return Err(Error::InvalidState("initial estimate assigns zero probability to observed counts".into()));
    }
    let mut hinv = DMatrix::<f64>::identity(16, 16);
    let mut trace = vec![value];
    let mut iterations = 0;
    let scaled = |g: &DVector<f64>, t: &DVector<f64>| g.norm() * t.norm();

    let stagnated = |trace: &[f64]| {
        trace.len() > MLE_STAGNATION_WINDOW
            && trace[trace.len() - 1] - trace[trace.len() - 1 - MLE_STAGNATION_WINDOW] < MLE_STAGNATION_GAIN
    };

    while scaled(&grad, &t) >= MLE_GRADIENT_TOL && !stagnated(&trace) {
        if iterations >= MLE_MAX_ITERATIONS {
            return Err(Error::NonConvergence { iterations, grad_norm: scaled(&grad, &t) });
        }
        iterations += 1;
        let mut dir = &hinv * &grad;
        let mut slope = grad.dot(&dir);
        if !(slope > 0.0) {
            hinv = DMatrix::identity(16, 16);
            dir = grad.clone();
            slope = grad.dot(&dir);
        }
        let mut step = 1.0;
        let mut accepted = None;
        while step > 1e-20 {
            let cand = &t + &dir * step;
            let (v, g) = lik.eval(&cand, true);
            if v.is_finite() && v >= value + 1e-4 * step * slope {
                accepted = Some((cand, v, g));
                break;
            }
            step *= 0.5;
        }
        let Some((t_new, v_new, g_new)) = accepted else {
            if hinv != DMatrix::identity(16, 16) {
                hinv = DMatrix::identity(16, 16);
                continue;
            }
            // no ascent direction left at double precision
            break;
        };
        let s = &t_new - &t;
        let y = &grad - &g_new;
        let sy = s.dot(&y);
        if sy > 1e-18 * s.norm() * y.norm() && sy > 0.0 {
            let rho_k = 1.0 / sy;
            let id = DMatrix::<f64>::identity(16, 16);
            let left = &id - (&s * y.transpose()) * rho_k;
            let right = &id - (&y * s.transpose()) * rho_k;
            hinv = &left * &hinv * &right + (&s * s.transpose()) * rho_k;
        }
        debug_assert!(v_new >= value);
        t = t_new;
        value = v_new;
        grad = g_new;
        trace.push(value);
    }

    let grad_norm = scaled(&grad, &t);
    // a stall short of the tolerance is only accepted near the optimum
    if grad_norm >= 1e-5 && !stagnated(&trace) {
        return Err(Error::NonConvergence { iterations, grad_norm });
    }
    let m = state_from(&t);
    let m = (&m + m.adjoint()) * C64::new(0.5, 0.0);
    Ok(MleOutcome { rho: DensityMatrix::new(m, &labels)?, iterations, grad_norm, trace })
}

/// Scalars reported for a reconstructed state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StateSummary {
    pub fidelity_phiplus: f64,
    pub fidelity_psiplus: f64,
    pub s_value: f64,
}

impl StateSummary {
    pub fn of(rho: &DensityMatrix) -> Result<Self> {
        Ok(Self {
            fidelity_phiplus: fidelity_pure(rho, &bell_state(BellKind::PhiPlus))?,
            fidelity_psiplus: fidelity_pure(rho, &bell_state(BellKind::PsiPlus))?,
            s_value: horodecki_s(rho)?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapErrors {
    pub fidelity_phiplus: f64,
    pub fidelity_psiplus: f64,
    pub s_value: f64,
    pub resamples: usize,
    /// Resamples whose reconstruction failed; excluded from the spread.
    pub failures: usize,
}

pub const DEFAULT_BOOTSTRAP_RESAMPLES: usize = 250;

fn std_dev(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

/// Parametric bootstrap: counts redrawn from Poisson around the observed
/// values, each resample on its own seeded substream.
pub fn bootstrap_errors(run: &TomographyRun, resamples: usize, seed: u64) -> Result<BootstrapErrors> {
    if resamples < 100 {
        return Err(Error::InvalidParameter(format!("at least 100 resamples required, got {resamples}")));
    }
    run.validate()?;
    let outcomes: Vec<Option<StateSummary>> = (0..resamples)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let counts = run.counts.iter().map(|&c| poisson_sample(c, &mut rng)).collect();
            let resampled = TomographyRun { counts, ..run.clone() };
            mle_reconstruct(&resampled).ok().and_then(|rho| StateSummary::of(&rho).ok())
        })
        .collect();
    let ok: Vec<StateSummary> = outcomes.iter().flatten().copied().collect();
    let failures = resamples - ok.len();
    if ok.len() < 2 {
        return Err(Error::NonConvergence { iterations: MLE_MAX_ITERATIONS, grad_norm: f64::NAN });
    }
    let col = |f: fn(&StateSummary) -> f64| std_dev(&ok.iter().map(f).collect::<Vec<_>>());
    Ok(BootstrapErrors {
        fidelity_phiplus: col(|s| s.fidelity_phiplus),
        fidelity_psiplus: col(|s| s.fidelity_psiplus),
        s_value: col(|s| s.s_value),
        resamples,
        failures,
    })
}
