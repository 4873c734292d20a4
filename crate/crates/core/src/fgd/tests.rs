use super::*;
use ndarray::{array, Array1};
use proptest::prelude::*;

fn stats(mean: Array1<f64>, cov: Array2<f64>) -> GaussianStats {
    GaussianStats { mean, cov, n: 10 }
}

fn rotation(theta: f64) -> Array2<f64> {
    array![[theta.cos(), -theta.sin()], [theta.sin(), theta.cos()]]
}

/// Tr((S1 S2)^1/2) for 2x2 SPD inputs: the product has real positive
/// eigenvalues l1, l2 and sqrt(l1) + sqrt(l2) = sqrt(tr + 2 sqrt(det)).
fn frechet_2x2(m1: &Array1<f64>, s1: &Array2<f64>, m2: &Array1<f64>, s2: &Array2<f64>) -> f64 {
    let p = s1.dot(s2);
    let det = p[[0, 0]] * p[[1, 1]] - p[[0, 1]] * p[[1, 0]];
    let cross = (p[[0, 0]] + p[[1, 1]] + 2.0 * det.max(0.0).sqrt()).sqrt();
    (m1 - m2).mapv(|d| d * d).sum() + s1.diag().sum() + s2.diag().sum() - 2.0 * cross
}

#[test]
fn two_point_fit() {
    let g = fit_gaussian(array![[0.0, 0.0], [2.0, 0.0]].view()).unwrap();
    assert_eq!(g.mean, array![1.0, 0.0]);
    assert_eq!(g.cov, array![[2.0, 0.0], [0.0, 0.0]]);
    assert_eq!(g.n, 2);
}

#[test]
fn identical_rows_have_zero_covariance() {
    let x = Array2::from_shape_fn((5, 3), |(_, j)| j as f64 * 1.5);
    let g = fit_gaussian(x.view()).unwrap();
    assert!(g.cov.iter().all(|&v| v == 0.0));
}

#[test]
fn fit_needs_two_samples() {
    assert!(fit_gaussian(Array2::<f64>::zeros((1, 3)).view()).is_err());
    assert!(fit_gaussian(Array2::<f64>::zeros((0, 3)).view()).is_err());
}

#[test]
fn distance_to_self_is_zero() {
    let x = Array2::from_shape_fn((40, 5), |(i, j)| {
        ((i * 7 + j * 3) % 11) as f64 * 0.3 + (i as f64 * 0.1).sin()
    });
    let g = fit_gaussian(x.view()).unwrap();
    assert!(frechet_distance(&g, &g).unwrap().abs() < 1e-8);
}

#[test]
fn pure_mean_shift() {
    let d = 4;
    let a = stats(Array1::zeros(d), Array2::eye(d));
    let mut mu = Array1::zeros(d);
    mu[0] = 3.0;
    let b = stats(mu, Array2::eye(d));
    assert!((frechet_distance(&a, &b).unwrap() - 9.0).abs() < 1e-8);
}

#[test]
fn unequal_variances_in_one_dimension() {
    let a = stats(array![0.0], array![[1.0]]);
    let b = stats(array![0.0], array![[4.0]]);
    assert!((frechet_distance(&a, &b).unwrap() - 1.0).abs() < 1e-8);
}

#[test]
fn dimension_mismatch_is_rejected() {
    let a = stats(Array1::zeros(2), Array2::eye(2));
    let b = stats(Array1::zeros(3), Array2::eye(3));
    assert!(frechet_distance(&a, &b).is_err());
}

#[test]
fn indefinite_covariance_is_rejected() {
    let a = stats(Array1::zeros(2), array![[1.0, 0.0], [0.0, -0.5]]);
    let b = stats(Array1::zeros(2), Array2::eye(2));
    assert!(frechet_distance(&a, &b).is_err());
    // Rounding-level negatives are tolerated.
    let c = stats(Array1::zeros(2), array![[1.0, 0.0], [0.0, -1e-12]]);
    assert!(frechet_distance(&c, &b).is_ok());
}

#[test]
fn growing_mean_shift_grows_the_distance() {
    let x = Array2::from_shape_fn((30, 3), |(i, j)| ((i * 5 + j) % 7) as f64);
    let real = fit_gaussian(x.view()).unwrap();
    let mut last = -1.0;
    for k in 0..6 {
        let shifted = &x + k as f64 * 0.5;
        let d = frechet_distance(&real, &fit_gaussian(shifted.view()).unwrap()).unwrap();
        assert!(d > last);
        last = d;
    }
}

fn spd_2x2() -> impl Strategy<Value = Array2<f64>> {
    (0.1f64..5.0, 0.1f64..5.0, 0.0f64..std::f64::consts::PI).prop_map(|(a, b, th)| {
        let r = rotation(th);
        r.dot(&Array2::from_diag(&array![a, b])).dot(&r.t())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn matches_two_by_two_closed_form(
        s1 in spd_2x2(), s2 in spd_2x2(),
        m in prop::array::uniform4(-3.0f64..3.0),
    ) {
        let (m1, m2) = (array![m[0], m[1]], array![m[2], m[3]]);
        let d = frechet_distance(&stats(m1.clone(), s1.clone()), &stats(m2.clone(), s2.clone())).unwrap();
        let oracle = frechet_2x2(&m1, &s1, &m2, &s2);
        prop_assert!((d - oracle.max(0.0)).abs() < 1e-9 * (1.0 + oracle.abs()), "{} vs {}", d, oracle);
    }

    #[test]
    fn symmetric_in_its_arguments(s1 in spd_2x2(), s2 in spd_2x2(), shift in -2.0f64..2.0) {
        let a = stats(array![0.0, shift], s1);
        let b = stats(array![shift, 0.0], s2);
        let ab = frechet_distance(&a, &b).unwrap();
        let ba = frechet_distance(&b, &a).unwrap();
        prop_assert!((ab - ba).abs() < 1e-8);
    }

    #[test]
    fn commuting_covariances(
        diag_a in prop::collection::vec(0.0f64..4.0, 3),
        diag_b in prop::collection::vec(0.0f64..4.0, 3),
    ) {
        // Diagonal covariances commute: the distance is sum (sqrt a - sqrt b)^2.
        let a = stats(Array1::zeros(3), Array2::from_diag(&Array1::from(diag_a.clone())));
        let b = stats(Array1::zeros(3), Array2::from_diag(&Array1::from(diag_b.clone())));
        let oracle: f64 = diag_a.iter().zip(&diag_b).map(|(x, y)| (x.sqrt() - y.sqrt()).powi(2)).sum();
        prop_assert!((frechet_distance(&a, &b).unwrap() - oracle).abs() < 1e-8);
    }

    #[test]
    fn covariance_is_symmetric(rows in prop::collection::vec(prop::array::uniform3(-5.0f64..5.0), 2..20)) {
        let x = Array2::from_shape_fn((rows.len(), 3), |(i, j)| rows[i][j]);
        let g = fit_gaussian(x.view()).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                prop_assert!((g.cov[[i, j]] - g.cov[[j, i]]).abs() <= 1e-9);
            }
        }
    }
}

/// Smooth low-rank sequences: a few shared oscillators mixed into `width`
/// channels.
fn corpus(sessions: usize, frames: usize, width: usize, seed: u64) -> Vec<Array2<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mix = Array2::from_shape_simple_fn((4, width), || {
        let z: f64 = StandardNormal.sample(&mut rng);
        z
    });
    (0..sessions)
        .map(|k| {
            let z = Array2::from_shape_fn((frames, 4), |(t, i)| {
                ((t as f64) * 0.07 * (i + 1) as f64 + k as f64 * 0.9).sin()
            });
            z.dot(&mix)
        })
        .collect()
}

fn small_config(width: usize) -> AutoencoderConfig {
    AutoencoderConfig {
        window: 10,
        hidden: 24,
        latent: 8,
        epochs: 15,
        batch_size: 8,
        lr: 3e-3,
        stride: 2,
        ..AutoencoderConfig::new(width)
    }
}

#[test]
fn default_latent_width() {
    let c = AutoencoderConfig::new(6);
    assert_eq!((c.window, c.latent), (30, 32));
    let ae = MotionAutoencoder::new(c, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let z = ae.encode(&Array2::zeros((3, 180))).unwrap();
    assert_eq!(z.dim(), (3, 32));
    assert!(ae.encode(&Array2::zeros((3, 181))).is_err());
}

#[test]
fn window_extraction() {
    let m = Array2::from_shape_fn((7, 2), |(i, j)| (10 * i + j) as f64);
    let w = windows(&[m], 3, 2).unwrap();
    assert_eq!(w.dim(), (3, 6));
    assert_eq!(w.row(1).to_vec(), vec![20.0, 21.0, 30.0, 31.0, 40.0, 41.0]);
}

#[test]
fn training_reduces_reconstruction_error() {
    let data = corpus(4, 120, 6, 1);
    let ae = train_autoencoder(&data, small_config(6)).unwrap();
    let l = &ae.epoch_losses;
    assert_eq!(l.len(), 15);
    // Three-epoch moving average never rises.
    let smooth: Vec<f64> = l.windows(3).map(|w| w.iter().sum::<f64>() / 3.0).collect();
    for pair in smooth.windows(2) {
        assert!(pair[1] <= pair[0] * 1.001, "{smooth:?}");
    }
    assert!(l[l.len() - 1] < 0.5 * l[0]);
}

#[test]
fn training_is_deterministic() {
    let data = corpus(3, 100, 4, 2);
    let a = train_autoencoder(&data, small_config(4)).unwrap();
    let b = train_autoencoder(&data, small_config(4)).unwrap();
    assert_eq!(a.params(), b.params());
    assert_eq!(a.epoch_losses, b.epoch_losses);
}

#[test]
fn constant_pose_is_reconstructed() {
    let data = vec![Array2::from_elem((300, 4), 0.4)];
    let config = AutoencoderConfig {
        epochs: 30,
        lr: 1e-2,
        ..small_config(4)
    };
    let ae = train_autoencoder(&data, config).unwrap();
    let w = windows(&data, 10, 2).unwrap();
    let mse = ae.reconstruction_mse(&w).unwrap();
    assert!(mse < 1e-3, "mse {mse}");
}

#[test]
fn too_few_windows_is_an_error() {
    let data = corpus(1, 50, 4, 3);
    assert!(train_autoencoder(&data, small_config(4)).is_err());
}

#[test]
fn checkpoint_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ae.gdp");
    let data = corpus(3, 100, 4, 4);
    let ae = train_autoencoder(&data, small_config(4)).unwrap();
    ae.save(&path).unwrap();
    let back = MotionAutoencoder::load(&path).unwrap();
    assert_eq!(back.config(), ae.config());
    // Checkpoints store f32.
    for ((_, a), (_, b)) in back.params().iter().zip(ae.params().iter()) {
        assert!(a
            .iter()
            .zip(b.iter())
            .all(|(x, y)| (x - y).abs() <= 1e-6 * (1.0 + y.abs())));
    }
}

#[test]
fn report_of_identical_corpora_is_zero() {
    let data = corpus(4, 120, 6, 5);
    let ae = train_autoencoder(&data, small_config(6)).unwrap();
    for space in [RawSpace::Frames, RawSpace::Windows] {
        let r = fgd_report(&data, &data, &ae, space).unwrap();
        assert!(
            r.feature_space.abs() < 1e-6 && r.raw_space.abs() < 1e-6,
            "{space}: {r:?}"
        );
    }
}

#[test]
fn wide_rank_deficient_corpus_matches_itself() {
    // Fewer frames than dimensions, as with raw gesture frames.
    let data = corpus(2, 60, 300, 6);
    let all = ndarray::concatenate(Axis(0), &[data[0].view(), data[1].view()]).unwrap();
    let g = fit_gaussian(all.view()).unwrap();
    let d = frechet_distance(&g, &g).unwrap();
    assert!(d.abs() < 1e-6, "{d}");
}

#[test]
fn raw_offset_follows_the_mean_shift_identity() {
    let data = corpus(3, 80, 6, 7);
    let ae = train_autoencoder(&data, small_config(6)).unwrap();
    let c = 0.7;
    let shifted: Vec<Array2<f64>> = data
        .iter()
        .map(|m| {
            let mut m = m.clone();
            m.slice_mut(s![.., 0..2]).mapv_inplace(|v| v + c);
            m
        })
        .collect();
    let r = fgd_report(&data, &shifted, &ae, RawSpace::Frames).unwrap();
    assert!((r.raw_space - 2.0 * c * c).abs() < 1e-8, "{r:?}");
    assert!(r.feature_space > 0.0);
}

#[test]
fn empty_corpus_is_rejected() {
    let data = corpus(3, 80, 6, 8);
    let ae = train_autoencoder(&data, small_config(6)).unwrap();
    assert!(fgd_report(&data, &[], &ae, RawSpace::Frames).is_err());
    assert!(fgd_report(&[], &data, &ae, RawSpace::Frames).is_err());
}

#[test]
fn raw_space_parses() {
    assert_eq!("frames".parse::<RawSpace>().unwrap(), RawSpace::Frames);
    assert_eq!("windows".parse::<RawSpace>().unwrap(), RawSpace::Windows);
    assert!("pixels".parse::<RawSpace>().is_err());
}
