use eisgan_soh::ecmoracle::{clean_spectrum, synth_dataset, DegradationTrajectory, SynthConfig};
use eisgan_soh::eisdata::{
    default_grid, perturb_curve, read_capacity_csv, read_eis_csv, write_capacity_csv, write_eis_csv,
    CapacityRecord, CsvOptions, EisCurve, NormStats,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn eis_csv_round_trip(
        values in prop::collection::vec(-1e3f64..1e3, 120),
        cycle in 0u32..5000,
        stage in 1u8..=9,
        id in "[A-Za-z][A-Za-z0-9_]{0,8}",
    ) {
        let (re, im) = values.split_at(60);
        let curve = EisCurve::new(id, stage, cycle, default_grid(), re.to_vec(), im.to_vec()).unwrap();
        let mut buf = Vec::new();
        write_eis_csv(&mut buf, std::slice::from_ref(&curve)).unwrap();
        let back = read_eis_csv(buf.as_slice(), CsvOptions::default()).unwrap();
        prop_assert_eq!(back, vec![curve]);
    }

    #[test]
    fn capacity_csv_round_trip(caps in prop::collection::vec(0.0f64..100.0, 1..20)) {
        let records: Vec<CapacityRecord> = caps
            .iter()
            .enumerate()
            .map(|(i, &c)| CapacityRecord { cell_id: "X1".into(), cycle: i as u32, capacity_mah: c })
            .collect();
        let mut buf = Vec::new();
        write_capacity_csv(&mut buf, &records).unwrap();
        prop_assert_eq!(read_capacity_csv(buf.as_slice()).unwrap(), records);
    }

    #[test]
    fn synthetic_spectra_are_physical(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cfg = SynthConfig::default();
        let traj = DegradationTrajectory::sample(&cfg, 150, &mut rng);
        prop_assert!(traj.capacity_clean_mah.windows(2).all(|w| w[1] <= w[0]));
        let grid = default_grid();
        for p in traj.params.iter().step_by(10) {
            let (re, im) = clean_spectrum(p, &grid);
            prop_assert!(re.iter().all(|&r| r > 0.0));
            let steps: Vec<f64> = (1..re.len()).map(|k| (re[k] - re[k - 1]).hypot(im[k] - im[k - 1])).collect();
            let limit = 10.0 * median(steps.clone());
            prop_assert!(steps.iter().all(|&s| s <= limit), "jump {:?} over {limit}", steps);
        }
    }
}

#[test]
fn normalization_inverts_and_zero_noise_is_identity() {
    let ds = synth_dataset(2, 1, 10, &[3, 5], 4, &SynthConfig::default()).unwrap();
    let curves: Vec<_> = ds.all_curves().cloned().collect();
    let stats = NormStats::fit(&curves).unwrap();
    for c in &curves {
        let back = stats.denormalize(&stats.normalize(c));
        for (a, b) in back.re_z_ohm.iter().chain(&back.im_z_ohm).zip(c.re_z_ohm.iter().chain(&c.im_z_ohm)) {
            assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    assert_eq!(perturb_curve(&curves[0], 0.0, &mut rng).unwrap(), curves[0]);
    assert!(perturb_curve(&curves[0], -1.0, &mut rng).is_err());
}

#[test]
fn equal_seeds_give_equal_datasets() {
    let cfg = SynthConfig::default();
    let a = synth_dataset(2, 2, 12, &[3, 4], 8, &cfg).unwrap();
    let b = synth_dataset(2, 2, 12, &[3, 4], 8, &cfg).unwrap();
    let c = synth_dataset(2, 2, 12, &[3, 4], 9, &cfg).unwrap();
    assert_eq!(a.all_curves().collect::<Vec<_>>(), b.all_curves().collect::<Vec<_>>());
    assert_ne!(a.all_curves().collect::<Vec<_>>(), c.all_curves().collect::<Vec<_>>());
}
