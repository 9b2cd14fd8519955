mod oracle;

use boldkit::design::{run_design, BlockDesign, DesignOptions};
use boldkit::duration::{
    average_runs, concatenate_runs, local_standard_deviation, peak_correlation, total_variation, RunSet,
};
use boldkit::preprocess::gaussian_smooth;
use boldkit::volume_io::{Dims3, Map3D, Mask3D, Volume4D, VolumeHeader};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_roi(rng: &mut ChaCha8Rng, dims: Dims3) -> Vec<usize> {
    // a random box intersected with a random sparse mask
    let lo: [usize; 3] = std::array::from_fn(|k| rng.random_range(0..dims.0[k]));
    let hi: [usize; 3] = std::array::from_fn(|k| rng.random_range(lo[k]..dims.0[k]) + 1);
    let keep = rng.random_range(0.3..1.0);
    let mut ids = Vec::new();
    for z in lo[2]..hi[2] {
        for y in lo[1]..hi[1] {
            for x in lo[0]..hi[0] {
                if rng.random::<f64>() < keep {
                    ids.push(dims.index(x, y, z));
                }
            }
        }
    }
    if ids.is_empty() {
        ids.push(dims.index(lo[0], lo[1], lo[2]));
    }
    ids
}

#[test]
fn lsd_and_tv_match_enumeration_oracles() {
    let dims = Dims3::new(11, 9, 7);
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for _ in 0..100 {
        let data: Vec<f64> = (0..dims.len()).map(|_| rng.random_range(-5.0..5.0)).collect();
        let map = Map3D::new(dims, data.clone()).unwrap();
        let ids = random_roi(&mut rng, dims);
        let roi = Mask3D::from_indices(dims, &ids).unwrap();
        let mut sorted = ids.clone();
        sorted.sort_unstable();
        let r = rng.random_range(1..3);
        let lsd = local_standard_deviation(&map, &roi, r).unwrap();
        let want = oracle::lsd_oracle(&data, dims.0, &sorted, r as i64);
        assert!((lsd - want).abs() < 1e-12 * want.max(1.0));
        let tv = total_variation(&map, &roi).unwrap();
        let want = oracle::tv_oracle(&data, dims.0, &sorted);
        assert!((tv - want).abs() < 1e-12 * want.max(1.0));
        let peak = peak_correlation(&map, &roi).unwrap();
        assert_eq!(peak, sorted.iter().map(|&v| data[v]).fold(f64::NEG_INFINITY, f64::max));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn lsd_tv_shift_invariant_and_scale_linear(seed in 0u64..10_000, c in -100.0f64..100.0, k in -4.0f64..4.0) {
        let dims = Dims3::new(8, 7, 6);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<f64> = (0..dims.len()).map(|_| rng.random_range(-3.0..3.0)).collect();
        let ids = random_roi(&mut rng, dims);
        let roi = Mask3D::from_indices(dims, &ids).unwrap();
        let base = Map3D::new(dims, data.clone()).unwrap();
        let shifted = Map3D::new(dims, data.iter().map(|v| v + c).collect()).unwrap();
        let scaled = Map3D::new(dims, data.iter().map(|v| v * k).collect()).unwrap();
        let l0 = local_standard_deviation(&base, &roi, 1).unwrap();
        let t0 = total_variation(&base, &roi).unwrap();
        prop_assert!((local_standard_deviation(&shifted, &roi, 1).unwrap() - l0).abs() < 1e-9);
        prop_assert!((total_variation(&shifted, &roi).unwrap() - t0).abs() < 1e-9);
        prop_assert!((local_standard_deviation(&scaled, &roi, 1).unwrap() - k.abs() * l0).abs() < 1e-9);
        prop_assert!((total_variation(&scaled, &roi).unwrap() - k.abs() * t0).abs() < 1e-9);
        prop_assert!(l0 >= 0.0 && t0 >= 0.0);
    }
}

fn noise_run(seed: u64, nt: usize) -> Volume4D {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = VolumeHeader::new([7, 6, 5, nt], [3.3, 3.3, 4.8], 3.0);
    let data = (0..7 * 6 * 5 * nt).map(|_| 100.0 + rng.random_range(-1.0..1.0)).collect();
    Volume4D::new(h, data).unwrap()
}

#[test]
fn averaging_commutes_with_smoothing() {
    let d = BlockDesign::finger_tapping();
    let (a, b) = (noise_run(1, 12), noise_run(2, 12));
    let set = RunSet::new(vec![a.clone(), b.clone()], vec![d.clone(), d.clone()]).unwrap();
    let avg_then = gaussian_smooth(&average_runs(&set).unwrap(), 8.0).unwrap();
    let smoothed = RunSet::new(
        vec![gaussian_smooth(&a, 8.0).unwrap(), gaussian_smooth(&b, 8.0).unwrap()],
        vec![d.clone(), d],
    )
    .unwrap();
    let then_avg = average_runs(&smoothed).unwrap();
    for (x, y) in avg_then.data().iter().zip(then_avg.data()) {
        assert!((x - y).abs() < 1e-9);
    }
}

#[test]
fn concatenated_design_keeps_full_rank() {
    let opts = DesignOptions::default();
    for (block, nt) in [(30.0, 100usize), (24.0, 100), (20.0, 80), (15.0, 60)] {
        let d = BlockDesign::alternating(block, nt as f64 * 3.0).unwrap();
        let single = run_design(&d, nt, 3.0, &opts, None).unwrap();
        assert!(!single.is_rank_deficient());
        let set = RunSet::new(vec![noise_run(3, nt), noise_run(4, nt)], vec![d.clone(), d]).unwrap();
        let (v, x) = concatenate_runs(&set, &opts).unwrap();
        assert_eq!(v.nt(), 2 * nt);
        assert_eq!(x.n_cols(), 1 + 2 * (single.n_cols() - 2) + 2);
        assert!(!x.is_rank_deficient());
        // task column repeats the single-run regressor in both halves
        for t in 0..nt {
            assert_eq!(x.values()[(t, 0)], single.values()[(t, 0)]);
            assert_eq!(x.values()[(t + nt, 0)], single.values()[(t, 0)]);
        }
    }
}
