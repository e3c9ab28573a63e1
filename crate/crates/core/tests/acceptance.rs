//! Acceptance suite: one PASS/FAIL line per criterion. Exits non-zero if any
//! criterion fails.

use std::time::{Duration, Instant};

use nuclear_readout::analysis::{
    exact_count_pmf, fidelity_report, fit_flip_rate, major_minor, optimize_threshold, scenario,
    ClassifierConfig, ReadoutMode, ScenarioOverrides, ShotTotals,
};
use nuclear_readout::model::{odmr_spectrum, LevelDiagram};
use nuclear_readout::optics::{expected_cycle_photons, propagate, OpticalModel, Populations};
use nuclear_readout::protocol::{
    build_dual_step_readout, build_standard_readout, parse_sequence, print_blocks, Block, Pulse,
    ReadChannel,
};
use nuclear_readout::stats::total_variation;
use nuclear_readout::trajectory::{cycle_detection_curve, simulate_batch};
use nuclear_readout::{Electron, Nuclear, PhysicalParams, RegisterState, ShotModel};
use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SHOTS: usize = 1_000_000;

struct Outcome {
    id: u32,
    name: &'static str,
    pass: bool,
    detail: String,
}

type Check = Result<(bool, String), Box<dyn std::error::Error>>;

fn within(x: f64, target: f64, tol: f64) -> bool {
    (x - target).abs() <= tol
}

struct SingleRead {
    up: Vec<ShotTotals>,
    dn: Vec<ShotTotals>,
    mean_up: f64,
    mean_dn: f64,
    elapsed: Duration,
}

fn single_read(config: &ClassifierConfig) -> Result<SingleRead, Box<dyn std::error::Error>> {
    let protocol = build_standard_readout(&PhysicalParams::default())?;
    let model = ShotModel::default();
    let start = Instant::now();
    let up = simulate_batch(&model, &protocol, Nuclear::Up, SHOTS, 1)?;
    let dn = simulate_batch(&model, &protocol, Nuclear::Down, SHOTS, 2)?;
    let elapsed = start.elapsed();
    Ok(SingleRead {
        mean_up: up.mean_total1(),
        mean_dn: dn.mean_total1(),
        up: ShotTotals::from_batch(&up, config.herald_cycles),
        dn: ShotTotals::from_batch(&dn, config.herald_cycles),
        elapsed,
    })
}

fn criterion_1(run: &SingleRead) -> Check {
    let pass = within(run.mean_up, 6.24, 0.15)
        && within(run.mean_dn, 0.40, 0.05)
        && run.elapsed.as_secs_f64() <= 60.0;
    Ok((
        pass,
        format!(
            "bright mean {:.4} (6.24 ± 0.15), dark mean {:.4} (0.40 ± 0.05), 2×10⁶ shots in {:.1} s (≤ 60 s)",
            run.mean_up,
            run.mean_dn,
            run.elapsed.as_secs_f64()
        ),
    ))
}

fn criterion_2(run: &SingleRead, config: &ClassifierConfig) -> Check {
    let r = fidelity_report(&run.up, &run.dn, config, ReadoutMode::Raw)?;
    let pass = within(r.fidelity, 0.8805, 0.02)
        && within(r.p_up_given_dn(), 0.191, 0.02)
        && within(r.p_dn_given_up(), 0.048, 0.02);
    Ok((
        pass,
        format!(
            "fidelity {:.4} (0.8805 ± 0.02), p(↑|↓) {:.4} (0.191 ± 0.02), p(↓|↑) {:.4} (0.048 ± 0.02)",
            r.fidelity,
            r.p_up_given_dn(),
            r.p_dn_given_up()
        ),
    ))
}

fn criterion_3(run: &SingleRead, config: &ClassifierConfig) -> Check {
    let r = fidelity_report(&run.up, &run.dn, config, ReadoutMode::Conditional)?;
    let pass = within(r.fidelity, 0.9815, 0.005)
        && within(r.p_up_given_dn(), 0.028, 0.005)
        && within(r.p_dn_given_up(), 0.009, 0.005);
    Ok((
        pass,
        format!(
            "fidelity {:.4} (0.9815 ± 0.005), p(↑|↓) {:.4} (0.028 ± 0.005), p(↓|↑) {:.4} (0.009 ± 0.005), kept {:.3}/{:.3}",
            r.fidelity,
            r.p_up_given_dn(),
            r.p_dn_given_up(),
            r.selection_bright.success_efficiency,
            r.selection_dark.success_efficiency
        ),
    ))
}

fn criterion_4(config: &ClassifierConfig) -> Check {
    let protocol = build_dual_step_readout(&PhysicalParams::default())?;
    let model = ShotModel::default();
    let up = simulate_batch(&model, &protocol, Nuclear::Up, SHOTS, 3)?;
    let dn = simulate_batch(&model, &protocol, Nuclear::Down, SHOTS, 4)?;
    let r = fidelity_report(
        &ShotTotals::from_batch(&up, config.herald_cycles),
        &ShotTotals::from_batch(&dn, config.herald_cycles),
        config,
        ReadoutMode::DualStep,
    )?;
    let (eb, ed) = (
        r.selection_bright.success_efficiency,
        r.selection_dark.success_efficiency,
    );
    let pass = within(r.fidelity_bright, 0.995, 0.003)
        && within(r.fidelity_dark, 0.995, 0.003)
        && within(eb, 0.898, 0.02)
        && within(ed, 0.898, 0.02);
    Ok((
        pass,
        format!(
            "fidelity bright {:.4} / dark {:.4} (0.995 ± 0.003), efficiency bright {:.4} / dark {:.4} (0.898 ± 0.02), average {:.4}",
            r.fidelity_bright, r.fidelity_dark, eb, ed, r.fidelity
        ),
    ))
}

fn criterion_5() -> Check {
    // Only bright-to-dark flips: the detection curve then decays at flip_bd.
    let model = ShotModel {
        flip_bd: 7.7e-4,
        flip_db: 0.0,
        ..ShotModel::default()
    };
    let protocol = build_standard_readout(&PhysicalParams::default())?.with_cycles(500)?;
    let batch = simulate_batch(&model, &protocol, Nuclear::Up, SHOTS, 5)?;
    let fit = fit_flip_rate(&cycle_detection_curve(&batch)?)?;
    let pass = (6.9e-4..=8.5e-4).contains(&fit.flip);
    Ok((
        pass,
        format!(
            "f = {:.3e} [{:.3e}, {:.3e}] (within [6.9e-4, 8.5e-4])",
            fit.flip, fit.interval.lower, fit.interval.upper
        ),
    ))
}

fn criterion_6() -> Check {
    let protocol = build_standard_readout(&PhysicalParams::default())?;
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut models = vec![ShotModel::default()];
    for _ in 0..4 {
        models.push(ShotModel {
            lambda_bright: rng.random_range(0.01..0.06),
            lambda_dark: rng.random_range(0.0..0.004),
            flip_bd: rng.random_range(0.0..2e-3),
            flip_db: rng.random_range(0.0..2e-3),
            nuclear_init_error: rng.random_range(0.0..0.15),
            charge_error: rng.random_range(0.0..0.2),
            ..ShotModel::default()
        });
    }
    let mut worst: f64 = 0.0;
    let mut parts = Vec::new();
    for (i, model) in models.iter().enumerate() {
        for prepared in [Nuclear::Up, Nuclear::Down] {
            let exact = exact_count_pmf(model, protocol.cycles, prepared)?;
            let batch = simulate_batch(model, &protocol, prepared, SHOTS, 600 + i as u64)?;
            let tv = total_variation(&exact, &batch.total1_distribution());
            worst = worst.max(tv);
            parts.push(format!("{tv:.4}"));
        }
    }
    Ok((
        worst < 0.005,
        format!("max TV {worst:.4} (< 0.005) over 5 models × 2 preparations: {}", parts.join(" ")),
    ))
}

fn criterion_7() -> Check {
    let optics = OpticalModel::default();
    let curve = propagate(&optics.with_start(Populations::in_g32()), 1.5, 1e-4)?;
    let fidelity = curve.target_at(1.5).expect("sampled at 1.5 µs");
    let photons = expected_cycle_photons(
        &optics,
        1.5,
        &RegisterState::new(Electron::PlusThreeHalves, Nuclear::Up),
    )?;
    Ok((
        fidelity >= 0.985 && within(photons, 0.028, 0.002),
        format!("pumped {fidelity:.4} at 1.5 µs (≥ 0.985), photons per window {photons:.5} (0.028 ± 0.002)"),
    ))
}

fn criterion_8() -> Check {
    let params = PhysicalParams::default();
    let step = 0.01;
    let grid: Vec<f64> = (0..=3000).map(|i| -15.0 + i as f64 * step).collect();
    let p = params.nuclear_init_fidelity;
    let spectrum = odmr_spectrum(&params, &LevelDiagram::standard(), (p, 1.0 - p), &grid)?;
    let pair = major_minor(&grid, &spectrum)?;
    Ok((
        within(pair.ratio, 0.075, 0.01) && within(pair.separation, 8.0, step),
        format!(
            "ratio {:.4} (0.075 ± 0.01), separation {:.4} MHz (8.0 ± {step})",
            pair.ratio, pair.separation
        ),
    ))
}

fn criterion_9() -> Check {
    let protocol = build_standard_readout(&PhysicalParams::default())?;
    let overrides = ScenarioOverrides {
        lambda_bright_scale: Some(5.0),
        readout_budget_us: Some(200.0),
        ..Default::default()
    };
    let r = scenario(&ShotModel::default(), &protocol, &ClassifierConfig::default(), &overrides)?;
    Ok((
        r.fidelity >= 0.997,
        format!(
            "optimized fidelity {:.4} (≥ 0.997) at {} cycles, N = {}, readout {:.1} µs, kept {:.3}/{:.3}; raw optimum {:.4}",
            r.fidelity,
            r.conditional_optimized.cycles,
            r.conditional_optimized.threshold.cutoff,
            r.readout_duration_us,
            r.conditional_optimized.kept_bright,
            r.conditional_optimized.kept_dark,
            r.raw_optimized.fidelity
        ),
    ))
}

fn pulse() -> impl Strategy<Value = Pulse> {
    let read = prop_oneof![
        Just(None),
        Just(Some(ReadChannel::Read1)),
        Just(Some(ReadChannel::Read2))
    ];
    prop_oneof![
        prop::sample::select(vec!["MW1A", "MW1B", "MW3A", "MW3B"]).prop_map(Pulse::mw),
        (prop::sample::select(vec!["A1", "A2"]), 1e-3f64..1e3, read)
            .prop_map(|(l, d, r)| Pulse::laser(l, d, r)),
        (1e-3f64..1e3).prop_map(|d| Pulse::Wait { duration_us: d }),
        (1e-3f64..1e3).prop_map(|d| Pulse::Swap { duration_us: d }),
    ]
}

fn criterion_10() -> Check {
    let mut failures = Vec::new();
    let mut runner = TestRunner::new(Config::with_cases(64));

    let conservation = runner.run(
        &(0.0f64..200.0, 0.0f64..50.0, 0.0f64..20.0, 0.01f64..3.0),
        |(pump, isc, back, t)| {
            let mut m = OpticalModel::default();
            m.rates.pump_a2 = pump;
            m.rates.isc_e32 = isc;
            m.rates.m_to_g32 = back;
            let curve = propagate(&m, t, 1e-3).expect("stable step");
            for p in &curve.populations {
                prop_assert!((p.total() - 1.0).abs() < 1e-9);
            }
            Ok(())
        },
    );
    if let Err(e) = conservation {
        failures.push(format!("population conservation: {e}"));
    }

    let blocks = prop::collection::vec(
        pulse().prop_map(Block::Pulse).prop_recursive(2, 16, 4, |inner| {
            (1u32..12, prop::collection::vec(inner, 1..4))
                .prop_map(|(count, body)| Block::Repeat { count, body })
        }),
        1..6,
    );
    if let Err(e) = runner.run(&blocks, |b| {
        let text = print_blocks(&b);
        let parsed = parse_sequence(&text).expect("printed text parses");
        prop_assert_eq!(parsed.blocks, b);
        Ok(())
    }) {
        failures.push(format!("parse/print round trip: {e}"));
    }

    if let Err(e) = runner.run(&prop::collection::vec(0.0f64..1.0, 1..30), |p| {
        prop_assume!(p.iter().sum::<f64>() > 0.0);
        prop_assert_eq!(optimize_threshold(&p, &p).expect("normalizable").cutoff, 0);
        Ok(())
    }) {
        failures.push(format!("threshold tie-breaking: {e}"));
    }

    let protocol = build_standard_readout(&PhysicalParams::default())?;
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .expect("thread pool")
            .install(|| simulate_batch(&ShotModel::default(), &protocol, Nuclear::Up, 20_000, 10))
    };
    let reference = run(1)?;
    for threads in [2, 4, 7] {
        if run(threads)? != reference {
            failures.push(format!("determinism: {threads} threads differ from 1"));
        }
    }

    Ok((
        failures.is_empty(),
        if failures.is_empty() {
            "population conservation, parse/print round trip, threshold ties, thread-count determinism".into()
        } else {
            failures.join("; ")
        },
    ))
}

fn main() {
    let config = ClassifierConfig::default();
    let mut outcomes = Vec::new();
    let mut record = |id: u32, name: &'static str, check: Check| {
        let (pass, detail) = check.unwrap_or_else(|e| (false, format!("error: {e}")));
        let o = Outcome {
            id,
            name,
            pass,
            detail,
        };
        println!(
            "[{}] criterion {:>2} {}: {}",
            if o.pass { "PASS" } else { "FAIL" },
            o.id,
            o.name,
            o.detail
        );
        outcomes.push(o);
    };

    match single_read(&config) {
        Ok(run) => {
            record(1, "mean totals", criterion_1(&run));
            record(2, "raw fidelity", criterion_2(&run, &config));
            record(3, "conditional fidelity", criterion_3(&run, &config));
        }
        Err(e) => {
            for (id, name) in [(1, "mean totals"), (2, "raw fidelity"), (3, "conditional fidelity")] {
                record(id, name, Err(e.to_string().into()));
            }
        }
    }
    record(4, "dual-step readout", criterion_4(&config));
    record(5, "flip-rate recovery", criterion_5());
    record(6, "oracle equivalence", criterion_6());
    record(7, "optical pumping", criterion_7());
    record(8, "ODMR peaks", criterion_8());
    record(9, "improvement scenario", criterion_9());
    record(10, "property suite", criterion_10());

    let failed = outcomes.iter().filter(|o| !o.pass).count();
    println!(
        "acceptance: {} passed, {} failed",
        outcomes.len() - failed,
        failed
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
