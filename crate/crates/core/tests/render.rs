use prolif::diffcore::{finite_difference_check, DenseMatrix, DualBatch, Tape};
use prolif::lfnet::{DepthGrid, RadianceSamples};
use prolif::render::{
    composite, composite_adjoints, composite_depth_subdivision_check, composite_subdivision_gap, composite_values,
};
use prolif::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Transmittance recomputed from scratch for every sample.
fn naive(sigma: &[f64], color: &[f64], grid: &DepthGrid) -> ([f64; 3], f64, f64) {
    let d = grid.len();
    let delta = 1.0 / d as f64;
    let mut c = [0.0; 3];
    let mut acc = 0.0;
    let mut dh = 0.0;
    for i in 0..d {
        let mut t = 1.0;
        for j in 0..i {
            let alpha_j = 1.0 - (-delta * sigma[j]).exp();
            t *= 1.0 - alpha_j;
        }
        let alpha = 1.0 - (-delta * sigma[i]).exp();
        let w = t * alpha;
        for ch in 0..3 {
            c[ch] += w * color[3 * i + ch];
        }
        acc += w;
        dh += w * grid.values()[i];
    }
    (c, acc, dh)
}

fn run(sigma: &[f64], color: &[f64], grid: &DepthGrid) -> ([f64; 3], f64, f64) {
    let d = grid.len();
    let s = DualBatch::constant(DenseMatrix::from_vec(1, d, sigma.to_vec()).unwrap());
    let c = DualBatch::constant(DenseMatrix::from_vec(1, 3 * d, color.to_vec()).unwrap());
    let (oc, og) = composite_values(&s, &c, grid).unwrap();
    ([oc.primal()[0], oc.primal()[1], oc.primal()[2]], og.primal()[0], og.primal()[1])
}

#[test]
fn zero_density_is_black() {
    let grid = DepthGrid::new(8);
    let (c, acc, dh) = run(&[0.0; 8], &[0.7; 24], &grid);
    assert_eq!((c, acc, dh), ([0.0; 3], 0.0, 0.0));
}

#[test]
fn opaque_first_sample() {
    let grid = DepthGrid::new(16);
    let mut sigma = vec![0.5; 16];
    sigma[0] = 1e6;
    let mut color = vec![0.2; 48];
    color[..3].copy_from_slice(&[0.9, 0.1, 0.4]);
    let (c, acc, dh) = run(&sigma, &color, &grid);
    assert!((c[0] - 0.9).abs() < 1e-6 && (c[1] - 0.1).abs() < 1e-6 && (c[2] - 0.4).abs() < 1e-6);
    assert!((acc - 1.0).abs() < 1e-6);
    assert!((dh - grid.values()[0]).abs() < 1e-6);
}

#[test]
fn two_sample_closed_form() {
    let grid = DepthGrid::new(2);
    let (c, _, _) = run(&[1.0, 2.0], &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0], &grid);
    assert!((c[0] - (1.0 - (-0.5f64).exp())).abs() < 1e-15);
    assert!((c[1] - (-0.5f64).exp() * (1.0 - (-1.0f64).exp())).abs() < 1e-15);
    assert_eq!(c[2], 0.0);
}

#[test]
fn negative_density_rejected() {
    let grid = DepthGrid::new(2);
    let s = DualBatch::constant(DenseMatrix::from_vec(1, 2, vec![0.1, -0.1]).unwrap());
    let c = DualBatch::constant(DenseMatrix::zeros(1, 6));
    assert!(matches!(
        composite_values(&s, &c, &grid),
        Err(Error::NegativeDensity { ray: 0, sample: 1, .. })
    ));
    let c_bad = DualBatch::constant(DenseMatrix::zeros(1, 5));
    assert!(matches!(composite_values(&s, &c_bad, &grid), Err(Error::Dimension { .. })));
}

#[test]
fn matches_naive_loop_exactly() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for trial in 0..10_000 {
        let d = [1, 2, 4, 8, 16][trial % 5];
        let grid = DepthGrid::new(d);
        let sigma: Vec<f64> = (0..d).map(|_| rng.random_range(0.0..40.0)).collect();
        let color: Vec<f64> = (0..3 * d).map(|_| rng.random()).collect();
        assert_eq!(run(&sigma, &color, &grid), naive(&sigma, &color, &grid));
    }
}

#[test]
fn energy_bounds_and_monotone_weights() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..1000 {
        let grid = DepthGrid::new(8);
        let sigma: Vec<f64> = (0..8).map(|_| rng.random_range(0.0..100.0)).collect();
        let color: Vec<f64> = (0..24).map(|_| rng.random()).collect();
        let (c, acc, dh) = run(&sigma, &color, &grid);
        // the sum of weights may overshoot 1 by rounding
        assert!(acc >= 0.0 && acc <= 1.0 + 1e-15);
        assert!(c.iter().all(|&x| x <= acc + 1e-15));
        assert!(dh >= 0.0 && dh <= acc);
    }
}

#[test]
fn subdivision_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let grid = DepthGrid::new(8);
    let sigma = DenseMatrix::from_fn(1000, 8, |_, _| rng.random_range(0.0..30.0));
    let color = DenseMatrix::from_fn(1000, 24, |_, _| rng.random());
    assert!(composite_subdivision_gap(&sigma, &color, &grid).unwrap() <= 1e-12);
    assert!(composite_depth_subdivision_check(&sigma, &color, &grid));
    let zero: DenseMatrix<f64> = DenseMatrix::zeros(3, 8);
    assert_eq!(composite_subdivision_gap(&zero, &DenseMatrix::zeros(3, 24), &grid).unwrap(), 0.0);
}

fn rand_dual(rng: &mut ChaCha8Rng, n: usize, f: usize, k: usize, lo: f64, hi: f64) -> DualBatch<f64> {
    let p = DenseMatrix::from_fn(n, f, |_, _| rng.random_range(lo..hi));
    let t = (0..k).map(|_| DenseMatrix::from_fn(n, f, |_, _| rng.random_range(-1.0..1.0))).collect();
    DualBatch::new(p, t).unwrap()
}

#[test]
fn tangents_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let d = 6;
    let grid = DepthGrid::new(d);
    for _ in 0..20 {
        let s = rand_dual(&mut rng, 1, d, 1, 0.0, 20.0);
        let c = rand_dual(&mut rng, 1, 3 * d, 1, 0.0, 1.0);
        let (oc, og) = composite_values(&s, &c, &grid).unwrap();
        let x: Vec<f64> = s.primal().iter().chain(c.primal()).copied().collect();
        let dir: Vec<f64> = s.tangent(0).iter().chain(c.tangent(0)).copied().collect();
        let eps = 1e-6;
        let shifted = |h: f64| {
            let xs: Vec<f64> = x.iter().zip(&dir).map(|(a, b)| a + h * b).collect();
            let (sc, sg) = composite_values(
                &DualBatch::constant(DenseMatrix::from_vec(1, d, xs[..d].to_vec()).unwrap()),
                &DualBatch::constant(DenseMatrix::from_vec(1, 3 * d, xs[d..].to_vec()).unwrap()),
                &grid,
            )
            .unwrap();
            sc.primal().iter().chain(sg.primal()).copied().collect::<Vec<_>>()
        };
        let (p, m) = (shifted(eps), shifted(-eps));
        let analytic: Vec<f64> = oc.tangent(0).iter().chain(og.tangent(0)).copied().collect();
        for (j, a) in analytic.iter().enumerate() {
            let fd = (p[j] - m[j]) / (2.0 * eps);
            let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-3);
            assert!(rel <= 1e-6, "output {j}: tangent {a} vs fd {fd}");
        }
    }
}

#[test]
fn reverse_matches_finite_differences_over_all_channels() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (n, d, k) = (2, 5, 2);
    let grid = DepthGrid::new(d);
    let s = rand_dual(&mut rng, n, d, k, 0.0, 10.0);
    let c = rand_dual(&mut rng, n, 3 * d, k, 0.0, 1.0);
    let seed_c = rand_dual(&mut rng, n, 3, k, -1.0, 1.0);
    let seed_g = rand_dual(&mut rng, n, 2, k, -1.0, 1.0);

    let loss = |s: &DualBatch<f64>, c: &DualBatch<f64>| {
        let (oc, og) = composite_values(s, c, &grid).unwrap();
        let dot = |a: &DualBatch<f64>, b: &DualBatch<f64>| {
            a.stacked().data().iter().zip(b.stacked().data()).map(|(x, y)| x * y).sum::<f64>()
        };
        dot(&oc, &seed_c) + dot(&og, &seed_g)
    };

    let mut tape = Tape::new();
    let samples = RadianceSamples {
        sigma: tape.input(s.clone()).unwrap(),
        color: tape.input(c.clone()).unwrap(),
    };
    let out = composite(&samples, &grid, &mut tape).unwrap();
    assert_eq!(tape.value(out.color).unwrap(), &composite_values(&s, &c, &grid).unwrap().0);

    let grads = composite_adjoints(&s, &c, &grid, Some(&seed_c), Some(&seed_g)).unwrap();
    let xs: Vec<f64> = s.stacked().data().iter().chain(c.stacked().data()).copied().collect();
    let analytic: Vec<(usize, f64)> = grads.0.stacked().data().iter().chain(grads.1.stacked().data()).copied().enumerate().collect();
    let ss = s.stacked().data().len();
    let err = finite_difference_check(
        |x: &[f64]| {
            let sm = DenseMatrix::from_vec(s.stacked().rows(), d, x[..ss].to_vec()).unwrap();
            let cm = DenseMatrix::from_vec(c.stacked().rows(), 3 * d, x[ss..].to_vec()).unwrap();
            loss(
                &DualBatch::from_stacked(n, k, sm).unwrap(),
                &DualBatch::from_stacked(n, k, cm).unwrap(),
            )
        },
        &xs,
        &analytic,
        1e-5,
    )
    .unwrap();
    assert!(err <= 1e-5, "relative error {err}");
}
