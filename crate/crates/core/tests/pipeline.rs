use csdr_core::simbench::{generate, random_rotation};
use csdr_core::{
    dmave_fit, dopg_fit, estimation_error, phd, rmave, save, sir, standardize, Basis, Dataset, DmaveConfig,
    DopgConfig, RmaveConfig, SimModel, SimModelSpec, SliceSpec,
};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn normal_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| StandardNormal.sample(rng))
}

/// `y = g(x'beta) + 0.2 e` with `beta = (1, 1, 0, ..., 0)/sqrt(2)`.
fn single_index(n: usize, p: usize, seed: u64, g: fn(f64) -> f64) -> (Dataset, Basis) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = normal_matrix(&mut rng, n, p);
    let mut beta = DVector::zeros(p);
    beta[0] = 1.0 / 2f64.sqrt();
    beta[1] = 1.0 / 2f64.sqrt();
    let y = DVector::from_fn(n, |i, _| {
        let e: f64 = StandardNormal.sample(&mut rng);
        g(x.row(i).dot(&beta.transpose())) + 0.2 * e
    });
    let truth = Basis::new(DMatrix::from_column_slice(p, 1, beta.as_slice())).unwrap();
    (Dataset::new(x, y).unwrap(), truth)
}

fn err(a: &Basis, b: &Basis) -> f64 {
    estimation_error(a, b).unwrap().value()
}

/// Basis of `A⁻¹ span(B)`: the image of a direction set under the covariate map `x ↦ Aᵀx`.
fn pull_back(a: &DMatrix<f64>, b: &Basis) -> Basis {
    Basis::from_columns(&(a.clone().try_inverse().unwrap() * b.matrix())).unwrap()
}

#[test]
fn every_method_recovers_a_single_index() {
    let (ds, truth) = single_index(200, 5, 3, |u| u + 0.5 * u.sin());
    let std = standardize(&ds).unwrap();
    let slices = SliceSpec::new(10).unwrap();
    let fits = [
        ("dmave", dmave_fit(&ds, 1, &DmaveConfig::default()).unwrap().basis),
        ("dopg", dopg_fit(&ds, 1, &DopgConfig::default()).unwrap().basis),
        ("rmave", rmave(&ds, 1, &RmaveConfig::default()).unwrap().basis),
        ("sir", sir(&std, 1, slices).unwrap()),
    ];
    for (name, b) in fits {
        assert!(err(&truth, &b) < 0.2, "{name}: {}", err(&truth, &b));
    }
}

#[test]
fn symmetric_link_separates_second_moment_methods() {
    let (ds, truth) = single_index(300, 5, 5, |u| u * u);
    let std = standardize(&ds).unwrap();
    let slices = SliceSpec::new(10).unwrap();
    assert!(err(&truth, &save(&std, 1, slices).unwrap()) < 0.3);
    assert!(err(&truth, &phd(&std, 1).unwrap()) < 0.3);
    assert!(err(&truth, &dmave_fit(&ds, 1, &DmaveConfig::default()).unwrap().basis) < 0.3);
    // The inverse mean is flat for an even link.
    assert!(err(&truth, &sir(&std, 1, slices).unwrap()) > 0.5);
}

#[test]
fn simulated_models_are_reproducible() {
    for model in [SimModel::SignLog, SimModel::MeanVariance, SimModel::RootN, SimModel::Circle] {
        let spec = SimModelSpec::new(model, 50, 10, 17);
        let (a, ta) = generate(&spec).unwrap();
        let (b, tb) = generate(&spec).unwrap();
        assert_eq!(a.x(), b.x());
        assert_eq!(a.y(), b.y());
        assert_eq!(ta.matrix(), tb.matrix());
        assert_eq!(ta.q(), model.default_q());
        let (c, _) = generate(&SimModelSpec::new(model, 50, 10, 18)).unwrap();
        assert_ne!(a.y(), c.y());
    }
}

#[test]
fn kernel_methods_follow_a_rotation_of_the_covariates() {
    let (ds, _) = single_index(120, 4, 9, |u| u.exp() / 2.0);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let q = random_rotation(4, &mut rng);
    let rotated = Dataset::new(ds.x() * &q, ds.y().clone()).unwrap();
    let cfg = DmaveConfig {
        max_iter: 5,
        ..DmaveConfig::default()
    };
    let a = dmave_fit(&ds, 1, &cfg).unwrap().basis;
    let b = dmave_fit(&rotated, 1, &cfg).unwrap().basis;
    assert!(err(&pull_back(&q, &a), &b) < 1e-6);
    let a = dopg_fit(&ds, 1, &DopgConfig::default()).unwrap().basis;
    let b = dopg_fit(&rotated, 1, &DopgConfig::default()).unwrap().basis;
    assert!(err(&pull_back(&q, &a), &b) < 1e-6);
}

#[test]
fn response_location_and_scale_do_not_matter() {
    let (ds, _) = single_index(100, 4, 21, |u| u.tanh());
    let y2 = ds.y().map(|v| 3.0 * v - 7.0);
    let shifted = Dataset::new(ds.x().clone(), y2).unwrap();
    let a = dmave_fit(&ds, 1, &DmaveConfig::default()).unwrap();
    let b = dmave_fit(&shifted, 1, &DmaveConfig::default()).unwrap();
    assert!(err(&a.basis, &b.basis) < 1e-8);
    let (sa, sb) = (standardize(&ds).unwrap(), standardize(&shifted).unwrap());
    let slices = SliceSpec::new(8).unwrap();
    assert!(err(&sir(&sa, 1, slices).unwrap(), &sir(&sb, 1, slices).unwrap()) < 1e-10);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn moment_methods_are_affine_equivariant(seed in 0u64..1000, mix in 0.05f64..0.5) {
        let (ds, _) = single_index(80, 4, seed, |u| u + u * u);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        let a = DMatrix::identity(4, 4) + normal_matrix(&mut rng, 4, 4) * mix;
        let shift = DVector::from_fn(4, |k, _| k as f64 - 1.5);
        let xa = DMatrix::from_fn(80, 4, |i, k| (ds.x().row(i) * &a)[k] + shift[k]);
        let moved = Dataset::new(xa, ds.y().clone()).unwrap();
        let (s0, s1) = (standardize(&ds).unwrap(), standardize(&moved).unwrap());
        let slices = SliceSpec::new(6).unwrap();
        for q in 1..=2 {
            let pairs = [
                (sir(&s0, q, slices).unwrap(), sir(&s1, q, slices).unwrap()),
                (save(&s0, q, slices).unwrap(), save(&s1, q, slices).unwrap()),
                (phd(&s0, q).unwrap(), phd(&s1, q).unwrap()),
            ];
            for (b0, b1) in pairs {
                prop_assert!(err(&pull_back(&a, &b0), &b1) < 1e-7);
            }
        }
    }

    #[test]
    fn fitted_bases_are_orthonormal(seed in 0u64..1000, q in 1usize..=3) {
        let (ds, _) = single_index(60, 5, seed, |u| u.sin());
        let cfg = DmaveConfig { max_iter: 3, ..DmaveConfig::default() };
        let b = dmave_fit(&ds, q, &cfg).unwrap().basis;
        let g = b.matrix().transpose() * b.matrix();
        prop_assert!((g - DMatrix::<f64>::identity(q, q)).amax() < 1e-10);
        prop_assert_eq!(b.p(), 5);
        prop_assert_eq!(b.q(), q);
    }
}
