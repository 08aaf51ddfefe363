use std::fs;

use prolif::eval::*;
use prolif::lfnet::{init_siren_at_stage, ProLiFNetwork, StageConfig};
use prolif::scene::*;
use prolif::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_image(rng: &mut ChaCha8Rng, w: usize, h: usize) -> ImageBuffer {
    ImageBuffer::from_fn(w, h, |_, _| [rng.random(), rng.random(), rng.random()])
}

#[test]
fn psnr_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = random_image(&mut rng, 9, 7);
    assert_eq!(psnr(&a, &a).unwrap(), PSNR_CAP_DB);

    let zero = ImageBuffer::new(4, 4);
    let grey = ImageBuffer::from_fn(4, 4, |_, _| [0.1; 3]);
    assert!((psnr(&zero, &grey).unwrap() - 20.0).abs() < 1e-12);

    for _ in 0..20 {
        let (a, b) = (random_image(&mut rng, 13, 5), random_image(&mut rng, 13, 5));
        let mut sum = 0.0;
        for i in 0..a.data.len() {
            let d = a.data[i] - b.data[i];
            sum += d * d;
        }
        let oracle = 10.0 * (1.0 / (sum / a.data.len() as f64)).log10();
        assert!((psnr(&a, &b).unwrap() - oracle).abs() <= 1e-9);
        assert_eq!(psnr(&a, &b).unwrap(), psnr(&b, &a).unwrap());
    }

    let wrong = ImageBuffer::new(4, 5);
    assert!(matches!(psnr(&zero, &wrong), Err(Error::Dimension { .. })));
}

/// Same integer generator the reference values below were produced with.
fn lcg_pair(i: usize) -> (ImageBuffer, ImageBuffer) {
    let (w, h) = (11 + 3 * i, 11 + 2 * i);
    let mut x = 1000 + i as u64;
    let mut next = || {
        x = x.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        x >> 56
    };
    let mut a = ImageBuffer::new(w, h);
    let mut b = ImageBuffer::new(w, h);
    let span = 17 + 48 * i as i64;
    let shift = 8 + 24 * i as i64;
    for y in 0..h {
        for xx in 0..w {
            let mut pa = [0.0; 3];
            let mut pb = [0.0; 3];
            for c in 0..3 {
                let av = next() as i64;
                let bv = (av + next() as i64 % span - shift).clamp(0, 255);
                pa[c] = av as f64 / 255.0;
                pb[c] = bv as f64 / 255.0;
            }
            a.set(xx, y, pa);
            b.set(xx, y, pb);
        }
    }
    (a, b)
}

/// scikit-image `structural_similarity(gaussian_weights=True, sigma=1.5,
/// use_sample_covariance=False, data_range=1, channel_axis=2)`.
const SSIM_REFERENCE: [f64; 10] = [
    0.997783029468597,
    0.9673590114321761,
    0.9258019805184152,
    0.8417685897168253,
    0.7331032944093305,
    0.6401811670873432,
    0.635301852870912,
    0.6148592702781597,
    0.5898725870791172,
    0.48426092167201684,
];

#[test]
fn ssim_matches_reference_implementation() {
    for (i, want) in SSIM_REFERENCE.iter().enumerate() {
        let (a, b) = lcg_pair(i);
        let got = ssim(&a, &b).unwrap();
        assert!((got - want).abs() <= 1e-4, "pair {i}: {got} vs {want}");
        assert!((got - ssim(&b, &a).unwrap()).abs() < 1e-15);
    }
}

#[test]
fn ssim_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let a = random_image(&mut rng, 16, 12);
    assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);

    let neg = ImageBuffer {
        data: a.data.iter().map(|v| 1.0 - v).collect(),
        ..a.clone()
    };
    assert!(ssim(&a, &neg).unwrap() < 0.0);

    let small = ImageBuffer::new(10, 20);
    assert!(ssim(&small, &small).is_err());
}

fn tiny_net(stage: usize, seed: u64) -> ProLiFNetwork<f64> {
    init_siren_at_stage(&StageConfig::tiny(4, 8, 4, 3), stage, seed).unwrap()
}

fn small_scene() -> (SceneManifest, Vec<ImageBuffer>) {
    let (_, m, imgs) = generate_synthetic(&SyntheticSpec {
        grid_side: 3,
        width: 20,
        height: 14,
        focal: 20.0,
        ..Default::default()
    })
    .unwrap();
    (m, imgs)
}

#[test]
fn chunking_is_bitwise_invariant() {
    let (m, _) = small_scene();
    for stage in 0..3 {
        let net = tiny_net(stage, 7 + stage as u64);
        let cam = &m.views[4].camera;
        let opts = |chunk| RenderOptions {
            chunk,
            ..Default::default()
        };
        let (one, s1) = render_view(&net, cam, &m.ndc, None, &opts(1)).unwrap();
        let (big, s2) = render_view(&net, cam, &m.ndc, None, &opts(4096)).unwrap();
        let (odd, _) = render_view(&net, cam, &m.ndc, None, &opts(37)).unwrap();
        assert_eq!(s1.chunks, 20 * 14);
        assert_eq!(s2.chunks, 1);
        assert!(one.data.iter().zip(&big.data).all(|(a, b)| a.to_bits() == b.to_bits()));
        assert!(odd.data.iter().zip(&big.data).all(|(a, b)| a.to_bits() == b.to_bits()));
        let par = RenderOptions {
            chunk: 16,
            parallel: true,
            ..Default::default()
        };
        assert_eq!(render_view(&net, cam, &m.ndc, None, &par).unwrap().0, big);
    }
}

#[test]
fn memory_budget_is_checked_before_rendering() {
    let (m, _) = small_scene();
    let net = tiny_net(2, 3);
    let opts = RenderOptions {
        chunk: 4096,
        memory_budget: 1024,
        parallel: false,
    };
    assert!(matches!(
        render_view(&net, &m.views[0].camera, &m.ndc, None, &opts),
        Err(Error::MemoryBudget { .. })
    ));
    let (_, stats) = render_view(&net, &m.views[0].camera, &m.ndc, None, &RenderOptions::default()).unwrap();
    assert!(stats.peak_chunk_bytes > 0);
    assert!(stats.peak_chunk_bytes <= stats.estimated_chunk_bytes);
}

#[test]
fn large_patch_in_one_chunk() {
    let (m, _) = small_scene();
    let net: ProLiFNetwork<f32> = tiny_net(2, 5).cast();
    let opts = RenderOptions {
        chunk: 300 * 300,
        ..Default::default()
    };
    let (img, stats) = render_view(&net, &m.views[0].camera, &m.ndc, Some((300, 300)), &opts).unwrap();
    assert_eq!((img.width, img.height), (300, 300));
    assert_eq!(stats.chunks, 1);
    assert!(stats.peak_chunk_bytes <= DEFAULT_MEMORY_BUDGET);
    assert!(img.data.iter().all(|v| (0.0..=1.0).contains(v)));
}

#[test]
fn trajectory_frames_and_endpoints() {
    let (m, _) = small_scene();
    let net = tiny_net(1, 9);
    let dir = tempfile::tempdir().unwrap();
    let opts = RenderOptions::default();
    for kind in [PathKind::Spiral, PathKind::Linear] {
        let spec = PathSpec {
            kind,
            from: 2,
            to: 6,
            frames: 5,
            radius: 0.05,
            turns: 1.0,
        };
        let out = dir.path().join(format!("{kind:?}"));
        let frames = render_trajectory(&net, &m, &spec, None, &out, &opts).unwrap();
        assert_eq!(frames.len(), 5);
        assert_eq!(fs::read_dir(&out).unwrap().count(), 5);
        for (k, view) in [(0, 2), (4, 6)] {
            let (want, _) = render_view(&net, &m.views[view].camera, &m.ndc, None, &opts).unwrap();
            assert_eq!(read_image(&frames[k].path).unwrap(), want.quantized());
        }
        let cams = path_cameras(&m, &spec).unwrap();
        for c in &cams {
            c.validate().unwrap();
        }
        assert_ne!(cams[2].cam_to_world, cams[0].cam_to_world);
    }

    let single = PathSpec {
        from: 3,
        to: 3,
        frames: 1,
        ..Default::default()
    };
    let frames = render_trajectory(&net, &m, &single, None, &dir.path().join("one"), &opts).unwrap();
    let (want, _) = render_view(&net, &m.views[3].camera, &m.ndc, None, &opts).unwrap();
    assert_eq!(read_image(&frames[0].path).unwrap(), want.quantized());
}

#[test]
fn evaluate_reports_means() {
    let (m, imgs) = small_scene();
    let net = tiny_net(0, 1);
    let scene = LoadedScene {
        dir: ".".into(),
        manifest: m,
        images: imgs,
    };
    let report = evaluate(&net, &scene, Split::Test, &RenderOptions::default()).unwrap();
    assert_eq!(report.views.len(), scene.indices(Split::Test).len());
    let mean = report.views.iter().map(|v| v.psnr).sum::<f64>() / report.views.len() as f64;
    assert!((report.mean_psnr - mean).abs() < 1e-12);
    let back: EvalReport = serde_json::from_str(&serde_json::to_string(&report).unwrap()).unwrap();
    assert_eq!(back, report);
    assert!(report.table().contains("mean"));
}

#[test]
fn identical_directories_score_at_cap() {
    let dir = tempfile::tempdir().unwrap();
    let (_, imgs) = small_scene();
    for sub in ["a", "b"] {
        fs::create_dir_all(dir.path().join(sub)).unwrap();
        for (i, img) in imgs.iter().take(3).enumerate() {
            write_image(img, &dir.path().join(sub).join(format!("{i}.ppm"))).unwrap();
        }
    }
    let report = compare_dirs(&dir.path().join("a"), &dir.path().join("b")).unwrap();
    assert_eq!(report.views.len(), 3);
    assert_eq!(report.mean_psnr, PSNR_CAP_DB);
    assert!((report.mean_ssim - 1.0).abs() < 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn metrics_are_symmetric(seed in any::<u64>(), w in 11usize..20, h in 11usize..20) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_image(&mut rng, w, h);
        let b = random_image(&mut rng, w, h);
        prop_assert_eq!(psnr(&a, &b).unwrap(), psnr(&b, &a).unwrap());
        let (s1, s2) = (ssim(&a, &b).unwrap(), ssim(&b, &a).unwrap());
        prop_assert!((s1 - s2).abs() < 1e-14);
        prop_assert!((-1.0..=1.0).contains(&s1));
    }
}
