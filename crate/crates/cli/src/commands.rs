use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use swapsim::interference::{hom_visibility, Convention};
use swapsim::mc::{
    fit_double_exponential, g2_histogram, hom_histogram, mc_tomography, simulate, simulate_delay_scan, sub_seed,
    Arrangement, Conditioning, DoubleExpFit, Line, StreamMeta, TimestampStream,
};
use swapsim::qstate::{fidelity_mixed, fidelity_pure, BellKind, DensityMatrix};
use swapsim::source::{emit_pair, Emission};
use swapsim::swap::{control_no_heralding, heralded_bell_state, predict, source_state, swap_at, SwapResult};
use swapsim::tomography::{
    bootstrap_errors, mle_reconstruct, mle_reconstruct_detailed, standard_settings, BootstrapErrors, SettingSet,
    StateSummary, TomographyRun,
};

use crate::config::{hex, Format, RunConfig};
use crate::output::{Provenance, Sink};
use crate::CliError;

/// Gate used by `report` when neither the flag nor the config sets one.
const REPORT_DEFAULT_GATE_PS: f64 = 47.0;

pub struct Context {
    pub cfg: RunConfig,
    hash: String,
    sink: Sink,
}

impl Context {
    pub fn new(cfg: RunConfig) -> Result<Self, CliError> {
        let sink = Sink::new(&cfg.output.dir)?;
        Ok(Self { hash: cfg.hash(), cfg, sink })
    }

    fn provenance(&self, command: &str) -> Provenance {
        Provenance {
            tool: "swapsim",
            version: env!("CARGO_PKG_VERSION"),
            command: command.to_string(),
            config_hash: self.hash.clone(),
            seed: self.cfg.seed,
        }
    }

    fn json(&self) -> bool {
        self.cfg.output.format == Format::Json
    }
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

pub fn swap_predict(ctx: &Context, gates: &[f64], ungated: bool) -> Result<(), CliError> {
    let grid: Vec<Option<f64>> = gates.iter().map(|&g| Some(g)).chain(ungated.then_some(None)).collect();
    let rows = predict(&ctx.cfg.source, &ctx.cfg.bsm, &grid)?;
    let prov = ctx.provenance("swap-predict");
    if ctx.json() {
        #[derive(Serialize)]
        struct Body<'a> {
            rows: &'a [SwapResult],
        }
        ctx.sink.json("swap_predict.json", &prov, Body { rows: &rows })?;
    } else {
        let mut csv = String::from("gate_ps,i_eff,fidelity,s_value,herald_prob,rate_factor\n");
        for r in &rows {
            let _ = writeln!(
                csv,
                "{},{},{},{},{},{}",
                fmt_opt(r.gate_ps),
                r.i_eff,
                r.fidelity,
                r.s_value,
                r.herald_prob,
                r.rate_factor
            );
        }
        ctx.sink.csv("swap_predict.csv", &prov, &csv)?;
    }
    Ok(())
}

fn read(path: &Path) -> Result<Vec<u8>, CliError> {
    std::fs::read(path).map_err(|e| CliError::io(path, e))
}

fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "input".into())
}

pub fn tomo_reconstruct(
    ctx: &Context,
    input: &Path,
    settings: Option<usize>,
    bootstrap: Option<usize>,
) -> Result<(), CliError> {
    let bytes = read(input)?;
    let text = String::from_utf8(bytes.clone()).map_err(|e| swapsim::Error::Parse(e.to_string()))?;
    let run = TomographyRun::from_csv(&text)?;
    let expected = settings.unwrap_or(ctx.cfg.tomography.settings);
    SettingSet::from_count(expected).map_err(|e| CliError::Config(e.to_string()))?;
    if run.settings.len() != expected {
        return Err(CliError::Config(format!(
            "{} holds {} settings, expected {expected}",
            input.display(),
            run.settings.len()
        )));
    }
    let resamples = bootstrap.unwrap_or(ctx.cfg.tomography.bootstrap);
    let fit = mle_reconstruct_detailed(&run)?;
    let summary = StateSummary::of(&fit.rho)?;
    let errors = bootstrap_errors(&run, resamples, ctx.cfg.seed)?;

    #[derive(Serialize)]
    struct Body {
        input_sha256: String,
        total_counts: f64,
        iterations: usize,
        rho: DensityMatrix,
        fidelity_phiplus: f64,
        fidelity_psiplus: f64,
        s_value: f64,
        errors: BootstrapErrors,
    }
    println!(
        "F(Phi+) = {:.4} ± {:.4}, F(Psi+) = {:.4} ± {:.4}, S = {:.3} ± {:.3}",
        summary.fidelity_phiplus,
        errors.fidelity_phiplus,
        summary.fidelity_psiplus,
        errors.fidelity_psiplus,
        summary.s_value,
        errors.s_value
    );
    let body = Body {
        input_sha256: hex(&Sha256::digest(&bytes)),
        total_counts: run.total(),
        iterations: fit.iterations,
        rho: fit.rho,
        fidelity_phiplus: summary.fidelity_phiplus,
        fidelity_psiplus: summary.fidelity_psiplus,
        s_value: summary.s_value,
        errors,
    };
    ctx.sink.json(&format!("{}_reconstruction.json", stem(input)), &ctx.provenance("tomo reconstruct"), body)?;
    Ok(())
}

fn arrangement_tag(a: &Arrangement) -> String {
    match a {
        Arrangement::Hbt { line: Line::X } => "hbt-x".into(),
        Arrangement::Hbt { line: Line::Xx } => "hbt-xx".into(),
        Arrangement::Hom { copolarized: true } => "hom-co".into(),
        Arrangement::Hom { copolarized: false } => "hom-cross".into(),
        Arrangement::Swap { alice, bob } => format!("swap-{alice}{bob}"),
    }
}

#[derive(Serialize)]
struct SidecarOut<'a> {
    arrangement: &'a Arrangement,
    records: usize,
    rates_cps: Vec<f64>,
    meta: &'a StreamMeta,
}

#[derive(Deserialize)]
struct SidecarIn {
    meta: StreamMeta,
}

/// Reads `<path>` records and the `.json` sidecar beside it.
fn load_stream(path: &Path) -> Result<TimestampStream, CliError> {
    let side = path.with_extension("json");
    let sidecar: SidecarIn = serde_json::from_slice(&read(&side)?).map_err(swapsim::Error::from)?;
    Ok(TimestampStream::from_records(&read(path)?, sidecar.meta)?)
}

pub fn mc_run(ctx: &Context, arrangement: Arrangement, duration: f64, name: Option<String>) -> Result<(), CliError> {
    let stream = simulate(&ctx.cfg.setup(), &arrangement, duration, ctx.cfg.seed)?;
    let name = name.unwrap_or_else(|| arrangement_tag(&arrangement));
    let rates_cps: Vec<f64> = (0..stream.n_channels()).map(|c| stream.rate_cps(c)).collect();
    ctx.sink.write(&format!("{name}.bin"), &stream.to_records())?;
    let sidecar = SidecarOut {
        arrangement: &arrangement,
        records: stream.len(),
        rates_cps: rates_cps.clone(),
        meta: &stream.meta,
    };
    ctx.sink.json(&format!("{name}.json"), &ctx.provenance("mc-run"), sidecar)?;
    let rates: Vec<String> = rates_cps.iter().map(|r| format!("{r:.0}")).collect();
    println!("{} records; channel rates {} cps", stream.len(), rates.join(" / "));
    Ok(())
}

pub fn g2(
    ctx: &Context,
    line: Line,
    input: Option<&Path>,
    duration: f64,
    bin_ps: f64,
    window_periods: f64,
) -> Result<(), CliError> {
    let (stream, name) = match input {
        Some(p) => (load_stream(p)?, format!("g2_{}", stem(p))),
        None => {
            let arr = Arrangement::Hbt { line };
            (simulate(&ctx.cfg.setup(), &arr, duration, ctx.cfg.seed)?, format!("g2_{}", arrangement_tag(&arr)))
        }
    };
    let r = g2_histogram(&stream, (0, 1), bin_ps, window_periods * stream.meta.period_ps)?;
    println!("g2(0) = {:.5} (central area {})", r.g2_zero, r.central_area);
    let prov = ctx.provenance("g2");
    if ctx.json() {
        ctx.sink.json(&format!("{name}.json"), &prov, &r)?;
    } else {
        let body = format!("# g2_zero={}\n{}", r.g2_zero, r.histogram.to_csv());
        ctx.sink.csv(&format!("{name}.csv"), &prov, &body)?;
    }
    Ok(())
}

pub fn hom(
    ctx: &Context,
    inputs: Option<(&Path, &Path)>,
    duration: f64,
    bin_ps: f64,
    tolerance_ps: f64,
) -> Result<(), CliError> {
    let (co, cross) = match inputs {
        Some((a, b)) => (load_stream(a)?, load_stream(b)?),
        None => {
            let setup = ctx.cfg.setup();
            let seed = ctx.cfg.seed;
            (
                simulate(&setup, &Arrangement::Hom { copolarized: true }, duration, sub_seed(seed, 0))?,
                simulate(&setup, &Arrangement::Hom { copolarized: false }, duration, sub_seed(seed, 1))?,
            )
        }
    };
    let r = hom_histogram(&co, &cross, bin_ps, tolerance_ps)?;
    println!(
        "V = {:.4} ± {:.4} (central areas {} co / {} cross, delay mismatch {:.1} ps)",
        r.visibility, r.visibility_err, r.co_central, r.cross_central, r.mismatch_ps
    );
    let prov = ctx.provenance("hom");
    if ctx.json() {
        ctx.sink.json("hom.json", &prov, &r)?;
    } else {
        let note = format!("# visibility={}\n# visibility_err={}\n", r.visibility, r.visibility_err);
        ctx.sink.csv("hom_co.csv", &prov, &format!("{note}{}", r.co.to_csv()))?;
        ctx.sink.csv("hom_cross.csv", &prov, &format!("{note}{}", r.cross.to_csv()))?;
    }
    Ok(())
}

pub fn fourfold_scan(ctx: &Context, delays: &[f64], gate: Option<f64>, duration: f64) -> Result<(), CliError> {
    let gate = gate.or(ctx.cfg.bsm.gate_ps);
    let points = simulate_delay_scan(&ctx.cfg.setup(), delays, duration, gate, ctx.cfg.seed)?;
    let co: Vec<f64> = points.iter().map(|p| p.co.fourfolds as f64).collect();
    let fit = fit_double_exponential(delays, &co);
    if let Ok(f) = &fit {
        println!(
            "co-diagonal peak at {:.1} ps, amplitude {:.1}, decay rates {:.4} / {:.4} per ps",
            f.center, f.amplitude, f.left_rate, f.right_rate
        );
    }
    let prov = ctx.provenance("fourfold-scan");
    if ctx.json() {
        #[derive(Serialize)]
        struct Body<'a> {
            gate_ps: Option<f64>,
            points: &'a [swapsim::mc::ScanPoint],
            fit: Option<&'a DoubleExpFit>,
        }
        ctx.sink.json("fourfold_scan.json", &prov, Body { gate_ps: gate, points: &points, fit: fit.as_ref().ok() })?;
    } else {
        let mut csv = String::new();
        if let Ok(f) = &fit {
            let _ = writeln!(csv, "# fit center_ps={} amplitude={} offset={}", f.center, f.amplitude, f.offset);
        }
        csv.push_str("delay_ps,co_heralds,co_fourfolds,cross_heralds,cross_fourfolds\n");
        for p in &points {
            let _ = writeln!(
                csv,
                "{},{},{},{},{}",
                p.delay_ps, p.co.heralds, p.co.fourfolds, p.cross.heralds, p.cross.fourfolds
            );
        }
        ctx.sink.csv("fourfold_scan.csv", &prov, &csv)?;
    }
    fit.map(|_| ()).map_err(CliError::from)
}

#[derive(Debug, Clone, Serialize)]
struct Quantity {
    name: &'static str,
    value: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    uncertainty: Option<f64>,
}

fn q(name: &'static str, value: f64) -> Quantity {
    Quantity { name, value, uncertainty: None }
}

fn q_err(name: &'static str, value: f64, err: f64) -> Quantity {
    Quantity { name, value, uncertainty: Some(err) }
}

pub fn report(ctx: &Context, gate: Option<f64>, periods: u64, analytic_only: bool) -> Result<(), CliError> {
    let cfg = &ctx.cfg;
    let gate = gate.or(cfg.bsm.gate_ps).unwrap_or(REPORT_DEFAULT_GATE_PS);
    let rows = predict(&cfg.source, &cfg.bsm, &[None, Some(gate)])?;
    let (ungated, gated) = (&rows[0], &rows[1]);
    let best = swap_at(&cfg.source, 1.0, cfg.bsm.convention)?;
    let rho4 = source_state(&cfg.source)?;
    let control = control_no_heralding(&rho4)?;
    let mixed = DensityMatrix::maximally_mixed(control.labels())?;
    let phi = swapsim::qstate::bell_state(BellKind::PhiPlus);
    let mut out = vec![
        q("source_fidelity_1", fidelity_pure(&emit_pair(&cfg.source, Emission::First)?, &phi)?),
        q("source_fidelity_2", fidelity_pure(&emit_pair(&cfg.source, Emission::Second)?, &phi)?),
        q("hom_visibility", hom_visibility(cfg.bsm.indistinguishability)?),
        q("fidelity_ungated", ungated.fidelity),
        q("s_value_ungated", ungated.s_value),
        q("herald_prob", ungated.herald_prob),
        q("fidelity_max", best.fidelity),
        q("s_value_max", best.s_value),
        q("gate_ps", gate),
        q("i_eff_gated", gated.i_eff),
        q("fidelity_gated", gated.fidelity),
        q("s_value_gated", gated.s_value),
        q("rate_factor_gated", gated.rate_factor),
        q("control_fidelity_mixed", fidelity_mixed(&control, &mixed)?),
    ];
    if !analytic_only {
        out.extend(monte_carlo(cfg, periods)?);
    }
    for x in &out {
        match x.uncertainty {
            Some(e) => println!("{:<28} {:.4} ± {:.4}", x.name, x.value, e),
            None => println!("{:<28} {:.4}", x.name, x.value),
        }
    }
    let prov = ctx.provenance("report");
    if ctx.json() {
        #[derive(Serialize)]
        struct Body<'a> {
            periods: Option<u64>,
            quantities: &'a [Quantity],
        }
        ctx.sink.json("report.json", &prov, Body { periods: (!analytic_only).then_some(periods), quantities: &out })?;
    } else {
        let mut csv = String::from("quantity,value,uncertainty\n");
        for x in &out {
            let _ = writeln!(csv, "{},{},{}", x.name, x.value, fmt_opt(x.uncertainty));
        }
        ctx.sink.csv("report.csv", &prov, &csv)?;
    }
    Ok(())
}

/// Event-level counterparts at unit efficiency and without dead time.
fn monte_carlo(cfg: &RunConfig, periods: u64) -> Result<Vec<Quantity>, CliError> {
    let mut setup = cfg.setup();
    setup.apparatus.efficiency = Some([1.0; 4]);
    setup.apparatus.dead_time_ns = 0.0;
    let period_s = setup.apparatus.period_ps() * 1e-12;
    let duration = periods as f64 * period_s;
    let seed = cfg.seed;

    let co = simulate(&setup, &Arrangement::Hom { copolarized: true }, duration, sub_seed(seed, 0))?;
    let cross = simulate(&setup, &Arrangement::Hom { copolarized: false }, duration, sub_seed(seed, 1))?;
    let hom = hom_histogram(&co, &cross, 50.0, 30.0)?;
    let g2 = |line, k| -> Result<f64, CliError> {
        let s = simulate(&setup, &Arrangement::Hbt { line }, duration, sub_seed(seed, k))?;
        Ok(g2_histogram(&s, (0, 1), 100.0, 5.5 * s.meta.period_ps)?.g2_zero)
    };
    let (g2_x, g2_xx) = (g2(Line::X, 2)?, g2(Line::Xx, 3)?);

    let settings = standard_settings(SettingSet::from_count(cfg.tomography.settings)?);
    let per_setting = duration / 5.0;
    let t = mc_tomography(&setup, &settings, per_setting, cfg.bsm.gate_ps, Conditioning::Heralded, sub_seed(seed, 4))?;
    let rho = mle_reconstruct(&t.run)?;
    let target = heralded_bell_state(cfg.bsm.convention);
    let fidelity = fidelity_pure(&rho, &target)?;
    let errors = bootstrap_errors(&t.run, cfg.tomography.bootstrap, sub_seed(seed, 5))?;
    // bootstrap spreads exist for Φ+ and Ψ+ only
    let err = (cfg.bsm.convention == Convention::PsiPlus).then_some(errors.fidelity_psiplus);
    let analytic = predict(&cfg.source, &cfg.bsm, &[cfg.bsm.gate_ps])?[0].fidelity;
    Ok(vec![
        q_err("mc_hom_visibility", hom.visibility, hom.visibility_err),
        q("mc_g2_x", g2_x),
        q("mc_g2_xx", g2_xx),
        q("mc_heralds", t.heralds as f64),
        q("mc_fourfolds", t.run.total()),
        Quantity { name: "mc_fidelity", value: fidelity, uncertainty: err },
        q("analytic_fidelity_same_gate", analytic),
        q_err("mc_s_value", StateSummary::of(&rho)?.s_value, errors.s_value),
    ])
}
