use nuclear_readout::analysis::{
    exact_count_pmf, fidelity_report_batches, optimize_threshold, pmf_mean, predict_single_read,
    ClassifierConfig, CountHistogram, JointHistogram, ReadoutMode, ShotTotals,
};
use nuclear_readout::model::{odmr_spectrum, LevelDiagram};
use nuclear_readout::optics::{propagate, OpticalModel, OpticalRates, Populations};
use nuclear_readout::protocol::{
    build_dual_step_readout, build_standard_readout, gate_action, parse_sequence, print_blocks,
    Block, Pulse, ReadChannel, Sequence,
};
use nuclear_readout::trajectory::simulate_batch;
use nuclear_readout::{Electron, Nuclear, PhysicalParams, RegisterState, ShotModel};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn duration() -> impl Strategy<Value = f64> {
    prop_oneof![
        (1u32..5000).prop_map(|n| n as f64 / 100.0),
        (1e-3f64..1e3),
    ]
}

fn pulse() -> impl Strategy<Value = Pulse> {
    let read = prop_oneof![
        Just(None),
        Just(Some(ReadChannel::Read1)),
        Just(Some(ReadChannel::Read2))
    ];
    prop_oneof![
        prop::sample::select(vec!["MW1A", "MW1B", "MW3A", "MW3B"]).prop_map(Pulse::mw),
        (prop::sample::select(vec!["A1", "A2"]), duration(), read)
            .prop_map(|(l, d, r)| Pulse::laser(l, d, r)),
        duration().prop_map(|d| Pulse::Wait { duration_us: d }),
        duration().prop_map(|d| Pulse::Swap { duration_us: d }),
    ]
}

fn blocks() -> impl Strategy<Value = Vec<Block>> {
    let leaf = pulse().prop_map(Block::Pulse);
    let block = leaf.prop_recursive(3, 24, 4, |inner| {
        prop_oneof![
            pulse().prop_map(Block::Pulse),
            (1u32..12, prop::collection::vec(inner, 1..4))
                .prop_map(|(count, body)| Block::Repeat { count, body }),
        ]
    });
    prop::collection::vec(block, 1..6)
}

fn electron() -> impl Strategy<Value = Electron> {
    prop::sample::select(vec![
        Electron::PlusThreeHalves,
        Electron::PlusHalf,
        Electron::MinusHalf,
        Electron::MinusThreeHalves,
        Electron::Shelved,
    ])
}

fn nuclear() -> impl Strategy<Value = Nuclear> {
    prop_oneof![Just(Nuclear::Up), Just(Nuclear::Down)]
}

fn shot_model() -> impl Strategy<Value = ShotModel> {
    (
        0.005f64..0.08,
        0.0f64..0.004,
        0.0f64..3e-3,
        0.0f64..3e-3,
        0.0f64..0.2,
        0.0f64..0.2,
    )
        .prop_map(|(lb, ld, bd, db, init, charge)| ShotModel {
            lambda_bright: lb,
            lambda_dark: ld,
            flip_bd: bd,
            flip_db: db,
            nuclear_init_error: init,
            charge_error: charge,
            ..ShotModel::default()
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn parse_print_round_trip(blocks in blocks()) {
        let text = print_blocks(&blocks);
        let parsed = parse_sequence(&text).unwrap();
        prop_assert_eq!(&parsed.blocks, &blocks);
        prop_assert_eq!(print_blocks(&parsed.blocks), text);
    }

    #[test]
    fn flatten_matches_repeat_counts(blocks in blocks()) {
        let seq = Sequence { name: "s".into(), blocks };
        fn pulses(blocks: &[Block]) -> usize {
            blocks.iter().map(|b| match b {
                Block::Pulse(_) => 1,
                Block::Repeat { count, body } => *count as usize * pulses(body),
            }).sum()
        }
        prop_assert_eq!(seq.flatten().len(), pulses(&seq.blocks));
    }

    #[test]
    fn odmr_is_linear_in_populations(p in 0.0f64..=1.0, f in -20.0f64..20.0) {
        let params = PhysicalParams::default();
        let d = LevelDiagram::standard();
        let mixed = odmr_spectrum(&params, &d, (p, 1.0 - p), &[f]).unwrap()[0];
        let up = odmr_spectrum(&params, &d, (1.0, 0.0), &[f]).unwrap()[0];
        let dn = odmr_spectrum(&params, &d, (0.0, 1.0), &[f]).unwrap()[0];
        prop_assert!((mixed - (p * up + (1.0 - p) * dn)).abs() < 1e-12);
    }

    #[test]
    fn rate_equations_conserve_population(
        pump in 0.0f64..200.0,
        isc in 0.0f64..50.0,
        back12 in 0.0f64..20.0,
        back32 in 0.0f64..20.0,
        duration in 0.01f64..3.0,
        start in 0usize..5,
    ) {
        let mut pops = [0.0; 5];
        pops[start] = 1.0;
        let model = OpticalModel {
            populations: Populations { g12: pops[0], g32: pops[1], e12: pops[2], e32: pops[3], m: pops[4] },
            rates: OpticalRates {
                pump_a1: 0.3 * pump,
                pump_a2: pump,
                isc_e12: 0.5 * isc,
                isc_e32: isc,
                m_to_g12: back12,
                m_to_g32: back32,
                ..OpticalModel::default().rates
            },
            collection_efficiency: 0.01,
        };
        let curve = propagate(&model, duration, 1e-3).unwrap();
        for p in &curve.populations {
            prop_assert!((p.total() - 1.0).abs() < 1e-9);
            prop_assert!(p.as_array().iter().all(|&x| x > -1e-9));
        }
    }

    #[test]
    fn gates_never_touch_charge_state(e in electron(), n in nuclear(), charge in any::<bool>(), seed in any::<u64>()) {
        let params = PhysicalParams::default();
        let d = LevelDiagram::standard();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let state = RegisterState { electron: e, nuclear: n, charge_ok: charge };
        for pulse in [Pulse::mw("MW1A"), Pulse::mw("MW3B"), Pulse::laser("A2", 1.5, None), Pulse::Swap { duration_us: 50.0 }] {
            let next = gate_action(&pulse, state, &params, &d, &mut rng).unwrap();
            prop_assert_eq!(next.charge_ok, charge);
        }
    }

    #[test]
    fn threshold_invariant_under_scaling(
        up in prop::collection::vec(0u32..1000, 1..20),
        dn in prop::collection::vec(0u32..1000, 1..20),
        scale in 1u32..50,
    ) {
        prop_assume!(up.iter().any(|&c| c > 0) && dn.iter().any(|&c| c > 0));
        let a: Vec<f64> = up.iter().map(|&c| c as f64).collect();
        let b: Vec<f64> = dn.iter().map(|&c| c as f64).collect();
        let sa: Vec<f64> = a.iter().map(|c| c * scale as f64).collect();
        let sb: Vec<f64> = b.iter().map(|c| c * scale as f64).collect();
        let x = optimize_threshold(&a, &b).unwrap();
        let y = optimize_threshold(&sa, &sb).unwrap();
        prop_assert_eq!(x.cutoff, y.cutoff);
        prop_assert!((x.fidelity - y.fidelity).abs() < 1e-12);
    }

    #[test]
    fn identical_distributions_pick_zero(p in prop::collection::vec(0.0f64..1.0, 1..30)) {
        prop_assume!(p.iter().sum::<f64>() > 0.0);
        let c = optimize_threshold(&p, &p).unwrap();
        prop_assert_eq!(c.cutoff, 0);
        prop_assert!((c.fidelity - 0.5).abs() < 1e-9);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn exact_pmf_is_normalized(model in shot_model(), cycles in 1u32..400, up in any::<bool>()) {
        let prepared = if up { Nuclear::Up } else { Nuclear::Down };
        let pmf = exact_count_pmf(&model, cycles, prepared).unwrap();
        prop_assert!((pmf.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        prop_assert!(pmf.iter().all(|&p| p >= 0.0));
    }

    #[test]
    fn records_are_consistent(model in shot_model(), seed in any::<u64>()) {
        let protocol = build_dual_step_readout(&PhysicalParams::default()).unwrap();
        let batch = simulate_batch(&model, &protocol, Nuclear::Up, 200, seed).unwrap();
        for r in &batch.records {
            let c1 = r.counts_read1();
            let c2 = r.counts_read2().unwrap();
            prop_assert_eq!(c1.len(), 250);
            prop_assert_eq!(c2.len(), 250);
            prop_assert_eq!(c1.iter().sum::<u32>(), r.total1());
            prop_assert_eq!(c2.iter().sum::<u32>(), r.total2().unwrap());
        }
        let shots = ShotTotals::from_batch(&batch, 120);
        let joint = JointHistogram::from_totals(Nuclear::Up, &shots).unwrap();
        prop_assert_eq!(joint.marginal_read1(), CountHistogram::from_totals(&shots).up);
    }

    #[test]
    fn selection_counts_add_up(model in shot_model(), seed in any::<u64>(), mode in 0usize..3) {
        let mode = [ReadoutMode::Raw, ReadoutMode::Conditional, ReadoutMode::DualStep][mode];
        let protocol = build_dual_step_readout(&PhysicalParams::default()).unwrap();
        let up = simulate_batch(&model, &protocol, Nuclear::Up, 300, seed).unwrap();
        let dn = simulate_batch(&model, &protocol, Nuclear::Down, 300, seed).unwrap();
        if let Ok(r) = fidelity_report_batches(&up, &dn, &ClassifierConfig::default(), mode) {
            for s in [r.selection_bright, r.selection_dark] {
                prop_assert_eq!(s.kept + s.discarded, s.total);
                prop_assert!((s.success_efficiency - s.kept as f64 / s.total as f64).abs() == 0.0);
            }
            prop_assert!((0.0..=1.0).contains(&r.fidelity));
            prop_assert!((r.fidelity - (1.0 - 0.5 * (r.p_up_given_dn() + r.p_dn_given_up()))).abs() < 1e-15);
        }
    }
}

#[test]
fn batches_are_independent_of_thread_count() {
    let protocol = build_standard_readout(&PhysicalParams::default()).unwrap();
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| simulate_batch(&ShotModel::default(), &protocol, Nuclear::Up, 20_000, 99).unwrap())
    };
    let one = run(1);
    assert_eq!(one, run(3));
    assert_eq!(one, run(8));
}

#[test]
fn more_bright_to_dark_flips_lower_the_bright_mean() {
    let means: Vec<f64> = [3e-4, 7.7e-4, 2e-3]
        .iter()
        .map(|&f| {
            let m = ShotModel {
                flip_bd: f,
                ..ShotModel::default()
            };
            pmf_mean(&exact_count_pmf(&m, 250, Nuclear::Up).unwrap())
        })
        .collect();
    assert!(means[0] > means[1] && means[1] > means[2], "{means:?}");
}

#[test]
fn post_selection_does_not_hurt() {
    let s = predict_single_read(&ShotModel::default(), 250, &ClassifierConfig::default()).unwrap();
    assert!(s.raw_fidelity() <= s.conditional_fidelity());
}

#[test]
fn different_seeds_agree_statistically() {
    let protocol = build_standard_readout(&PhysicalParams::default()).unwrap();
    let a = simulate_batch(&ShotModel::default(), &protocol, Nuclear::Up, 50_000, 1).unwrap();
    let b = simulate_batch(&ShotModel::default(), &protocol, Nuclear::Up, 50_000, 2).unwrap();
    let var = |batch: &nuclear_readout::BatchResult| {
        let m = batch.mean_total1();
        batch
            .records
            .iter()
            .map(|r| (r.total1() as f64 - m).powi(2))
            .sum::<f64>()
            / (batch.len() - 1) as f64
    };
    let se = ((var(&a) + var(&b)) / 50_000.0).sqrt();
    assert!((a.mean_total1() - b.mean_total1()).abs() < 4.0 * se);
}
