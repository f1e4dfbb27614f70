use std::path::PathBuf;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use trsmpc::lcd::{
    load_sample_set, nn_distance_cv, optimize_lcd_set, parse_sample_set, save_sample_set,
    LcdSampleSet,
};
use trsmpc::Error;

fn median_random_cv(n: usize, d: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cvs: Vec<f64> = (0..100)
        .map(|_| {
            let x = DMatrix::<f64>::from_fn(n, d, |_, _| StandardNormal.sample(&mut rng));
            nn_distance_cv(&x)
        })
        .collect();
    cvs.sort_by(f64::total_cmp);
    0.5 * (cvs[49] + cvs[50])
}

#[test]
fn planar_set_is_more_homogeneous_than_random() {
    let opt = optimize_lcd_set(25, 2, 300, 7).unwrap();
    assert!(opt.set.quality().passes(2));
    let cv = nn_distance_cv(opt.set.points());
    let baseline = median_random_cv(25, 2, 8);
    assert!(cv < baseline, "lcd cv {cv} vs random median {baseline}");
}

#[test]
fn optimisation_is_deterministic() {
    let a = optimize_lcd_set(10, 3, 40, 5).unwrap().set;
    let b = optimize_lcd_set(10, 3, 40, 5).unwrap().set;
    assert_eq!(a.points(), b.points());
}

#[test]
fn save_load_round_trip_is_bit_exact() {
    let set = optimize_lcd_set(12, 3, 40, 9).unwrap().set;
    let path = std::env::temp_dir().join(format!("trsmpc_lcd_{}.txt", std::process::id()));
    save_sample_set(&set, &path).unwrap();
    let back = load_sample_set(&path).unwrap();
    std::fs::remove_file(&path).ok();
    assert_eq!(back.points(), set.points());
}

#[test]
fn malformed_files_are_rejected() {
    let short = "LCD v1\n2 3\n0.5 0.5\n-0.5 -0.5\n";
    assert!(matches!(
        parse_sample_set(short, "short"),
        Err(Error::Parse { .. })
    ));
    let nan = "LCD v1\n1 2\n1.0\nNaN\n";
    assert!(matches!(
        parse_sample_set(nan, "nan"),
        Err(Error::Parse { .. })
    ));
    let header = "LCD v2\n1 2\n1.0\n-1.0\n";
    assert!(parse_sample_set(header, "header").is_err());
    assert!(LcdSampleSet::from_points(DMatrix::from_element(2, 1, f64::INFINITY)).is_err());
}

fn shipped_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/lcd")
}

#[test]
fn shipped_sets_meet_their_invariants() {
    let Ok(entries) = std::fs::read_dir(shipped_dir()) else {
        return;
    };
    for entry in entries {
        let path = entry.unwrap().path();
        if path.extension().and_then(|e| e.to_str()) != Some("txt") {
            continue;
        }
        let set = load_sample_set(&path).unwrap();
        let q = set.quality();
        assert!(q.passes(set.dim()), "{}: {q:?}", path.display());
    }
}
