use std::io::Write;
use std::path::{Path, PathBuf};

use nuclear_readout::analysis::{
    exact_count_pmf, fidelity_report, fit_flip_rate, fit_shot_model, major_minor,
    optimize_threshold, predict_dual_step, predict_single_read, scenario, ClassifierConfig,
    CountHistogram, FidelityReport, FitOptions, FlipFit, JointHistogram, ModelFit, PeakPair,
    ReadoutMode, ScenarioOverrides, ScenarioReport, ShotTotals, ThresholdChoice,
};
use nuclear_readout::model::{odmr_spectrum, LevelDiagram};
use nuclear_readout::optics::{
    default_constraints, expected_cycle_photons, fit_pump_rates, propagate, OpticalModel,
    Populations,
};
use nuclear_readout::protocol::ProtocolSpec;
use nuclear_readout::trajectory::{cycle_detection_curve, simulate_batch, DetectionCurve};
use nuclear_readout::{Electron, Nuclear, RegisterState, ShotModel};
use serde::Serialize;
use serde_json::json;

use crate::batch_io::{read_batch, write_batch, ShotLine};
use crate::config::{ReadoutKind, RunConfig};
use crate::error::{CliError, CliResult};
use crate::manifest::Run;

const UP_FILE: &str = "batch_up.jsonl";
const DN_FILE: &str = "batch_dn.jsonl";

/// Time step of pump-curve propagation, and the CSV sampling stride.
const PUMP_STEP_US: f64 = 1e-4;
const PUMP_STRIDE: usize = 100;

fn csv<T>(
    run: &mut Run,
    name: &str,
    f: impl FnOnce(&mut Vec<u8>) -> std::io::Result<T>,
) -> CliResult<PathBuf> {
    run.write_with(name, |buf| f(buf).map(|_| ()))
}

fn simulate_pair(
    config: &RunConfig,
    model: &ShotModel,
    protocol: &ProtocolSpec,
    seed: u64,
) -> CliResult<(nuclear_readout::BatchResult, nuclear_readout::BatchResult)> {
    let up = simulate_batch(model, protocol, Nuclear::Up, config.shots, seed)?;
    let dn = simulate_batch(model, protocol, Nuclear::Down, config.shots, seed)?;
    Ok((up, dn))
}

pub fn simulate(config: &RunConfig, mode: Option<ReadoutMode>) -> CliResult<()> {
    let kind = match mode {
        Some(ReadoutMode::DualStep) => ReadoutKind::DualStep,
        _ => config.protocol.readout,
    };
    let protocol = config.protocol_of(kind)?;
    let herald = config.classifier.herald_cycles;
    let mut run = Run::start("simulate", &config.out_dir)?;
    let (up, dn) = simulate_pair(config, &config.shot_model, &protocol, config.seed)?;
    for (name, batch) in [(UP_FILE, &up), (DN_FILE, &dn)] {
        run.write_with(name, |buf| write_batch(buf, batch, herald, config.full_cycles))?;
    }
    let summary = json!({
        "readout": kind,
        "cycles": protocol.cycles,
        "reads_per_cycle": protocol.reads_per_cycle,
        "shots_per_preparation": config.shots,
        "mean_total_up": up.mean_total1(),
        "mean_total_dn": dn.mean_total1(),
        "model_fingerprint": format!("{:016x}", up.model_fingerprint),
        "protocol_fingerprint": format!("{:016x}", up.protocol_fingerprint),
    });
    eprintln!(
        "simulated {} shots per preparation ({} readout, {} cycles): mean totals {:.4} / {:.4}",
        config.shots,
        match kind {
            ReadoutKind::Standard => "standard",
            ReadoutKind::DualStep => "dual-step",
        },
        protocol.cycles,
        up.mean_total1(),
        dn.mean_total1()
    );
    run.finish(config, summary)?;
    Ok(())
}

fn load_totals(path: &Path, prepared: Nuclear, herald: u32) -> CliResult<Vec<ShotTotals>> {
    let lines = read_batch(path)?;
    if let Some(bad) = lines.iter().find(|l| l.prepared != prepared) {
        return Err(CliError::Config(format!(
            "{} should hold {}-prepared shots but has a {}-prepared one (seed {})",
            path.display(),
            prepared.symbol(),
            bad.prepared.symbol(),
            bad.seed
        )));
    }
    lines.iter().map(|l: &ShotLine| l.totals(herald)).collect()
}

fn conditional_histogram(shots: &[ShotTotals]) -> CountHistogram {
    let mut h = CountHistogram::default();
    for s in shots {
        let kept = match s.prepared {
            Nuclear::Up => s.herald_count > 0,
            Nuclear::Down => s.herald_count == 0,
        };
        if kept {
            h.add(s.prepared, s.total1);
        }
    }
    h
}

/// Writes the report for one mode plus the histograms that mode needs.
fn emit_mode(
    run: &mut Run,
    up: &[ShotTotals],
    dn: &[ShotTotals],
    classifier: &ClassifierConfig,
    mode: ReadoutMode,
) -> CliResult<FidelityReport> {
    let report = fidelity_report(up, dn, classifier, mode)?;
    match mode {
        ReadoutMode::Raw => {
            let h = CountHistogram::from_totals(up.iter().chain(dn));
            csv(run, "histogram_raw.csv", |w| h.write_csv(w))?;
        }
        ReadoutMode::Conditional => {
            let mut h = conditional_histogram(up);
            h.merge(&conditional_histogram(dn));
            csv(run, "histogram_conditional.csv", |w| h.write_csv(w))?;
        }
        ReadoutMode::DualStep => {
            let ju = JointHistogram::from_totals(Nuclear::Up, up)?;
            let jd = JointHistogram::from_totals(Nuclear::Down, dn)?;
            csv(run, "joint_up.csv", |w| ju.write_csv(w))?;
            csv(run, "joint_dn.csv", |w| jd.write_csv(w))?;
        }
    }
    run.write_json(&format!("report_{}.json", mode_slug(mode)), &report)?;
    println!("{report}");
    Ok(report)
}

fn mode_slug(mode: ReadoutMode) -> &'static str {
    match mode {
        ReadoutMode::Raw => "raw",
        ReadoutMode::Conditional => "conditional",
        ReadoutMode::DualStep => "dual_step",
    }
}

pub fn analyze(
    config: &RunConfig,
    mode: Option<ReadoutMode>,
    up_path: Option<PathBuf>,
    dn_path: Option<PathBuf>,
) -> CliResult<()> {
    let up_path = up_path.unwrap_or_else(|| config.out_dir.join(UP_FILE));
    let dn_path = dn_path.unwrap_or_else(|| config.out_dir.join(DN_FILE));
    let herald = config.classifier.herald_cycles;
    let up = load_totals(&up_path, Nuclear::Up, herald)?;
    let dn = load_totals(&dn_path, Nuclear::Down, herald)?;
    let has_second = up.iter().chain(&dn).all(|s| s.total2.is_some());
    let modes = match mode {
        Some(m) => vec![m],
        None if has_second => vec![ReadoutMode::Raw, ReadoutMode::Conditional, ReadoutMode::DualStep],
        None => vec![ReadoutMode::Raw, ReadoutMode::Conditional],
    };
    let mut run = Run::start("analyze", &config.out_dir)?;
    run.input(&up_path);
    run.input(&dn_path);
    let mut summary = serde_json::Map::new();
    for m in modes {
        let r = emit_mode(&mut run, &up, &dn, &config.classifier, m)?;
        summary.insert(
            mode_slug(m).into(),
            json!({
                "fidelity": r.fidelity,
                "p_up_given_dn": r.p_up_given_dn(),
                "p_dn_given_up": r.p_dn_given_up(),
                "efficiency_up": r.selection_bright.success_efficiency,
                "efficiency_dn": r.selection_dark.success_efficiency,
            }),
        );
    }
    run.finish(config, summary.into())?;
    Ok(())
}

fn curve_from_lines(lines: &[ShotLine], path: &Path) -> CliResult<DetectionCurve> {
    let mut detections: Vec<u64> = Vec::new();
    for l in lines {
        let counts = l.counts_read1.as_ref().ok_or_else(|| {
            CliError::Config(format!(
                "{} has no per-cycle counts; simulate with --full-cycles",
                path.display()
            ))
        })?;
        if detections.is_empty() {
            detections = vec![0; counts.len()];
        } else if counts.len() != detections.len() {
            return Err(CliError::Config(format!(
                "{}: shots have different cycle counts",
                path.display()
            )));
        }
        for (d, &c) in detections.iter_mut().zip(counts) {
            *d += u64::from(c > 0);
        }
    }
    Ok(DetectionCurve {
        shots: lines.len() as u64,
        detections,
    })
}

pub struct FitFlipArgs {
    pub input: Option<PathBuf>,
    pub cycles: u32,
    pub flip_db: f64,
}

fn detection_curve(
    config: &RunConfig,
    model: &ShotModel,
    cycles: u32,
    seed: u64,
) -> CliResult<DetectionCurve> {
    let protocol = config.protocol_of(ReadoutKind::Standard)?.with_cycles(cycles)?;
    let batch = simulate_batch(model, &protocol, Nuclear::Up, config.shots, seed)?;
    Ok(cycle_detection_curve(&batch)?)
}

fn emit_flip_fit(run: &mut Run, curve: &DetectionCurve) -> CliResult<FlipFit> {
    csv(run, "detection_curve.csv", |w| curve.write_csv(w))?;
    let fit = fit_flip_rate(curve)?;
    run.write_json("flip_fit.json", &fit)?;
    Ok(fit)
}

pub fn fit_flip(config: &RunConfig, args: FitFlipArgs) -> CliResult<()> {
    let mut run = Run::start("fit-flip", &config.out_dir)?;
    let curve = match &args.input {
        Some(path) => {
            run.input(path);
            curve_from_lines(&read_batch(path)?, path)?
        }
        None => {
            let model = ShotModel {
                flip_db: args.flip_db,
                ..config.shot_model
            };
            model.validate()?;
            detection_curve(config, &model, args.cycles, config.seed)?
        }
    };
    let fit = emit_flip_fit(&mut run, &curve)?;
    println!(
        "flip probability per cycle {:.4e} [{:.4e}, {:.4e}]{}",
        fit.flip,
        fit.interval.lower,
        fit.interval.upper,
        if fit.pinned_at_zero { " (pinned at zero)" } else { "" }
    );
    run.finish(config, json!({ "flip": fit.flip, "interval": fit.interval }))?;
    Ok(())
}

fn calibrate(config: &RunConfig) -> CliResult<ModelFit> {
    let options = FitOptions {
        cycles: config.protocol.timing.cycles,
        classifier: config.classifier,
        ..FitOptions::default()
    };
    Ok(fit_shot_model(&config.fit_targets, &options)?)
}

pub fn fit_model(config: &RunConfig) -> CliResult<()> {
    let mut run = Run::start("fit-model", &config.out_dir)?;
    let fit = calibrate(config)?;
    run.write_json("fitted_model.json", &fit)?;
    println!("{}", serde_json::to_string_pretty(&fit.model).expect("serializable"));
    eprintln!(
        "fit converged after {} evaluations; worst statistic {} off by {:.2} %",
        fit.evaluations,
        fit.worst_statistic,
        100.0 * fit.worst_relative_error
    );
    run.finish(
        config,
        json!({
            "model": fit.model,
            "chi_square": fit.residual,
            "worst_statistic": fit.worst_statistic,
            "worst_relative_error": fit.worst_relative_error,
        }),
    )?;
    Ok(())
}

pub struct OdmrArgs {
    pub p_up: Option<f64>,
    pub span: f64,
    pub step: f64,
}

fn emit_odmr(run: &mut Run, config: &RunConfig, args: &OdmrArgs) -> CliResult<PeakPair> {
    if !(args.step > 0.0 && args.span > 0.0) {
        return Err(CliError::Config("ODMR span and step must be > 0".into()));
    }
    let n = (2.0 * args.span / args.step).round() as usize;
    let grid: Vec<f64> = (0..=n).map(|i| -args.span + i as f64 * args.step).collect();
    let p = args.p_up.unwrap_or(config.physical.nuclear_init_fidelity);
    let signal = odmr_spectrum(&config.physical, &LevelDiagram::standard(), (p, 1.0 - p), &grid)?;
    csv(run, "odmr_spectrum.csv", |w| {
        writeln!(w, "frequency_mhz,contrast")?;
        for (f, s) in grid.iter().zip(&signal) {
            writeln!(w, "{f},{s}")?;
        }
        Ok(())
    })?;
    let pair = major_minor(&grid, &signal)?;
    run.write_json("odmr_peaks.json", &pair)?;
    Ok(pair)
}

pub fn odmr(config: &RunConfig, args: OdmrArgs) -> CliResult<()> {
    let mut run = Run::start("odmr", &config.out_dir)?;
    let pair = emit_odmr(&mut run, config, &args)?;
    println!(
        "major peak {:.4} MHz, minor peak {:.4} MHz, ratio {:.4}, separation {:.4} MHz",
        pair.major.frequency, pair.minor.frequency, pair.ratio, pair.separation
    );
    run.finish(config, serde_json::to_value(pair).expect("serializable"))?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct PumpSummary {
    model: OpticalModel,
    fitted: bool,
    fit_residual: Option<f64>,
    fit_iterations: Option<usize>,
    pumped_at_1p5_us: f64,
    photons_per_window: f64,
    laser_window_us: f64,
}

fn emit_pump(run: &mut Run, config: &RunConfig, fit: bool, duration_us: f64) -> CliResult<PumpSummary> {
    let (model, residual, iterations) = if fit {
        let f = fit_pump_rates(&OpticalModel::unfitted(&config.physical), &default_constraints())?;
        (f.model, Some(f.residual), Some(f.iterations))
    } else {
        (config.optics, None, None)
    };
    let window = config.protocol.timing.laser_window_us;
    let curve = propagate(
        &model.with_start(Populations::in_g32()),
        duration_us.max(1.5),
        PUMP_STEP_US,
    )?;
    csv(run, "pump_curve.csv", |w| curve.write_csv(w, PUMP_STRIDE))?;
    let photons = expected_cycle_photons(
        &model,
        window,
        &RegisterState::new(Electron::PlusThreeHalves, Nuclear::Up),
    )?;
    let summary = PumpSummary {
        pumped_at_1p5_us: curve.target_at(1.5).unwrap_or(0.0),
        photons_per_window: photons,
        laser_window_us: window,
        model,
        fitted: fit,
        fit_residual: residual,
        fit_iterations: iterations,
    };
    run.write_json("pump.json", &summary)?;
    Ok(summary)
}

pub fn pump(config: &RunConfig, fit: bool, duration_us: f64) -> CliResult<()> {
    if !(duration_us > 0.0 && duration_us.is_finite()) {
        return Err(CliError::Config("duration must be > 0".into()));
    }
    let mut run = Run::start("pump", &config.out_dir)?;
    let s = emit_pump(&mut run, config, fit, duration_us)?;
    println!(
        "pumped out of ±3/2 at 1.5 µs: {:.4}; photons per {} µs window: {:.5}",
        s.pumped_at_1p5_us, s.laser_window_us, s.photons_per_window
    );
    run.finish(config, serde_json::to_value(&s).expect("serializable"))?;
    Ok(())
}

pub fn threshold(
    config: &RunConfig,
    up_path: Option<PathBuf>,
    dn_path: Option<PathBuf>,
) -> CliResult<()> {
    let mut run = Run::start("optimize-threshold", &config.out_dir)?;
    let (choice, source): (ThresholdChoice, &str) = match (up_path, dn_path) {
        (Some(u), Some(d)) => {
            let herald = config.classifier.herald_cycles;
            let up = load_totals(&u, Nuclear::Up, herald)?;
            let dn = load_totals(&d, Nuclear::Down, herald)?;
            run.input(&u);
            run.input(&d);
            let h = CountHistogram::from_totals(up.iter().chain(&dn));
            let as_f64 = |v: &[u64]| v.iter().map(|&c| c as f64).collect::<Vec<_>>();
            (optimize_threshold(&as_f64(&h.up), &as_f64(&h.dn))?, "batches")
        }
        (None, None) => {
            let cycles = config.protocol.timing.cycles;
            let up = exact_count_pmf(&config.shot_model, cycles, Nuclear::Up)?;
            let dn = exact_count_pmf(&config.shot_model, cycles, Nuclear::Down)?;
            (optimize_threshold(&up, &dn)?, "exact")
        }
        _ => {
            return Err(CliError::Usage(
                "give both --up and --dn batches, or neither for the exact model".into(),
            ))
        }
    };
    run.write_json("threshold.json", &choice)?;
    println!(
        "best cutoff N = {} ({source}): fidelity {:.5}, p(↑|↓) {:.5}, p(↓|↑) {:.5}",
        choice.cutoff, choice.fidelity, choice.misread_bright, choice.misread_dark
    );
    run.finish(config, json!({ "source": source, "choice": choice }))?;
    Ok(())
}

fn emit_scenario(
    run: &mut Run,
    config: &RunConfig,
    model: &ShotModel,
    overrides: &ScenarioOverrides,
) -> CliResult<ScenarioReport> {
    let protocol = config.protocol_of(ReadoutKind::Standard)?;
    let report = scenario(model, &protocol, &config.classifier, overrides)?;
    run.write_json("scenario.json", &report)?;
    Ok(report)
}

pub fn scenario_cmd(config: &RunConfig, overrides: ScenarioOverrides) -> CliResult<()> {
    let mut run = Run::start("scenario", &config.out_dir)?;
    let r = emit_scenario(&mut run, config, &config.shot_model, &overrides)?;
    let c = &r.conditional_optimized;
    println!(
        "{} cycles ({:.1} µs readout, {:.1} µs total)\n  raw: fidelity {:.5} at N = {}\n  \
         conditional: fidelity {:.5} at N = {}, herald {} cycles, kept {:.3} / {:.3}",
        r.cycles,
        r.readout_duration_us,
        r.total_duration_us,
        r.raw_optimized.fidelity,
        r.raw_optimized.cutoff,
        c.threshold.fidelity,
        c.threshold.cutoff,
        c.herald_cycles,
        c.kept_bright,
        c.kept_dark
    );
    run.finish(
        config,
        json!({
            "fidelity": r.fidelity,
            "cycles": r.cycles,
            "readout_duration_us": r.readout_duration_us,
        }),
    )?;
    Ok(())
}

/// One line of the reproduction summary.
#[derive(Debug, Clone, Serialize)]
pub struct SummaryRow {
    pub quantity: &'static str,
    pub reference: f64,
    /// Accepted band `[low, high]` around the reference.
    pub low: f64,
    pub high: f64,
    pub simulated: f64,
    pub within: bool,
}

fn row(quantity: &'static str, reference: f64, low: f64, high: f64, simulated: f64) -> SummaryRow {
    SummaryRow {
        quantity,
        reference,
        low,
        high,
        simulated,
        within: simulated >= low && simulated <= high,
    }
}

fn band(quantity: &'static str, reference: f64, tol: f64, simulated: f64) -> SummaryRow {
    row(quantity, reference, reference - tol, reference + tol, simulated)
}

pub fn reproduce(config: &RunConfig) -> CliResult<Vec<SummaryRow>> {
    let mut run = Run::start("reproduce-paper", &config.out_dir)?;
    let mut rows = Vec::new();

    eprintln!("[1/7] fitting optical pump rates");
    let pump = emit_pump(&mut run, config, true, 3.0)?;
    rows.push(row("pumped_fraction_1p5us", 0.985, 0.985, 1.0, pump.pumped_at_1p5_us));
    rows.push(band("photons_per_window", 0.028, 0.002, pump.photons_per_window));

    eprintln!("[2/7] calibrating the shot model");
    let fit = calibrate(config)?;
    run.write_json("fitted_model.json", &fit)?;
    let model = fit.model;

    eprintln!("[3/7] ODMR spectrum");
    let odmr_args = OdmrArgs {
        p_up: None,
        span: 15.0,
        step: 0.01,
    };
    let pair = emit_odmr(&mut run, config, &odmr_args)?;
    rows.push(band("odmr_minor_major_ratio", 0.075, 0.01, pair.ratio));
    rows.push(band("odmr_separation_mhz", 8.0, odmr_args.step, pair.separation));

    eprintln!("[4/7] detection curve over 500 cycles");
    let curve = detection_curve(config, &model, 500, config.seed.wrapping_add(2))?;
    let flip = emit_flip_fit(&mut run, &curve)?;
    rows.push(row("flip_per_cycle", 7.7e-4, 6.9e-4, 8.5e-4, flip.flip));

    eprintln!("[5/7] single-read batches");
    let single = config.protocol_of(ReadoutKind::Standard)?;
    let herald = config.classifier.herald_cycles;
    let (up, dn) = simulate_pair(config, &model, &single, config.seed)?;
    let (up, dn) = (ShotTotals::from_batch(&up, herald), ShotTotals::from_batch(&dn, herald));
    let mean = |s: &[ShotTotals]| s.iter().map(|t| t.total1 as f64).sum::<f64>() / s.len() as f64;
    rows.push(band("mean_total_bright", 6.24, 0.15, mean(&up)));
    rows.push(band("mean_total_dark", 0.40, 0.05, mean(&dn)));
    let raw = emit_mode(&mut run, &up, &dn, &config.classifier, ReadoutMode::Raw)?;
    rows.push(band("raw_fidelity", 0.8805, 0.02, raw.fidelity));
    rows.push(band("raw_p_up_given_dn", 0.191, 0.02, raw.p_up_given_dn()));
    rows.push(band("raw_p_dn_given_up", 0.048, 0.02, raw.p_dn_given_up()));
    let cond = emit_mode(&mut run, &up, &dn, &config.classifier, ReadoutMode::Conditional)?;
    rows.push(band("conditional_fidelity", 0.9815, 0.005, cond.fidelity));
    rows.push(band("conditional_p_up_given_dn", 0.028, 0.005, cond.p_up_given_dn()));
    rows.push(band("conditional_p_dn_given_up", 0.009, 0.005, cond.p_dn_given_up()));

    eprintln!("[6/7] dual-step batches");
    let dual = config.protocol_of(ReadoutKind::DualStep)?;
    let (up, dn) = simulate_pair(config, &model, &dual, config.seed.wrapping_add(1))?;
    let (up, dn) = (ShotTotals::from_batch(&up, herald), ShotTotals::from_batch(&dn, herald));
    let d = emit_mode(&mut run, &up, &dn, &config.classifier, ReadoutMode::DualStep)?;
    rows.push(band("dual_step_fidelity_bright", 0.995, 0.003, d.fidelity_bright));
    rows.push(band("dual_step_fidelity_dark", 0.995, 0.003, d.fidelity_dark));
    rows.push(band(
        "dual_step_efficiency_bright",
        0.898,
        0.02,
        d.selection_bright.success_efficiency,
    ));
    rows.push(band(
        "dual_step_efficiency_dark",
        0.898,
        0.02,
        d.selection_dark.success_efficiency,
    ));

    eprintln!("[7/7] improvement scenario");
    let overrides = ScenarioOverrides {
        lambda_bright_scale: Some(5.0),
        readout_budget_us: Some(200.0),
        ..Default::default()
    };
    let sc = emit_scenario(&mut run, config, &model, &overrides)?;
    rows.push(row("scenario_fidelity", 0.997, 0.997, 1.0, sc.fidelity));

    let predicted = predict_single_read(&model, single.cycles, &config.classifier)?;
    let predicted_dual = predict_dual_step(&model, dual.cycles, &config.classifier)?;
    csv(&mut run, "summary.csv", |w| {
        writeln!(w, "quantity,reference,low,high,simulated,within")?;
        for r in &rows {
            writeln!(
                w,
                "{},{},{},{},{},{}",
                r.quantity, r.reference, r.low, r.high, r.simulated, r.within
            )?;
        }
        Ok(())
    })?;
    print_table(&rows);
    run.finish(
        config,
        json!({
            "rows": rows,
            "fitted_model": model,
            "exact_single_read": predicted,
            "exact_dual_step": predicted_dual,
        }),
    )?;
    Ok(rows)
}

fn print_table(rows: &[SummaryRow]) {
    println!(
        "{:<28} {:>10} {:>23} {:>11}  ok",
        "quantity", "reference", "band", "simulated"
    );
    for r in rows {
        println!(
            "{:<28} {:>10.5} {:>23} {:>11.5}  {}",
            r.quantity,
            r.reference,
            format!("[{:.5}, {:.5}]", r.low, r.high),
            r.simulated,
            if r.within { "yes" } else { "NO" }
        );
    }
}
