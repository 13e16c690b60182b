use gath_core::data::{ImageTensor, RasterImage};
use gath_core::postprocess::{
    clahe, denormalize, nl_means_denoise, postprocess_pipeline, postprocess_raster, unsharp_mask, PostprocessConfig,
    Stages,
};
use gath_core::Tensor;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn luma(img: &RasterImage, y: usize, x: usize) -> f64 {
    0.299 * img.get(y, x, 0) as f64 + 0.587 * img.get(y, x, 1) as f64 + 0.114 * img.get(y, x, 2) as f64
}

fn luma_range(img: &RasterImage) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for y in 0..img.height {
        for x in 0..img.width {
            lo = lo.min(luma(img, y, x));
            hi = hi.max(luma(img, y, x));
        }
    }
    (lo, hi)
}

fn grey(width: usize, height: usize, f: impl Fn(usize, usize) -> u8) -> RasterImage {
    let mut img = RasterImage::filled(width, height, [0; 3]);
    for y in 0..height {
        for x in 0..width {
            let v = f(y, x);
            for c in 0..3 {
                img.set(y, x, c, v);
            }
        }
    }
    img
}

fn noisy_constant(side: usize, level: f64, sigma: f64, seed: u64) -> RasterImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = Normal::new(0.0, sigma).unwrap();
    let data = (0..side * side * 3)
        .map(|_| (level + n.sample(&mut rng)).round().clamp(0.0, 255.0) as u8)
        .collect();
    RasterImage::new(side, side, data).unwrap()
}

/// Smooth colour texture with some edges.
fn textured(width: usize, height: usize, seed: u64) -> RasterImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = Normal::new(0.0, 6.0).unwrap();
    let mut img = RasterImage::filled(width, height, [0; 3]);
    for y in 0..height {
        for x in 0..width {
            for c in 0..3 {
                let base = 110.0
                    + 50.0 * ((x as f64 * 0.21 + c as f64).sin() * (y as f64 * 0.17).cos())
                    + if (x / 7 + y / 5) % 3 == 0 { 25.0 } else { 0.0 };
                img.set(y, x, c, (base + n.sample(&mut rng)).round().clamp(0.0, 255.0) as u8);
            }
        }
    }
    img
}

fn crop(img: &RasterImage, y0: usize, x0: usize, h: usize, w: usize) -> RasterImage {
    let mut out = RasterImage::filled(w, h, [0; 3]);
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                out.set(y, x, c, img.get(y0 + y, x0 + x, c));
            }
        }
    }
    out
}

fn variance(img: &RasterImage) -> f64 {
    let n = img.data.len() as f64;
    let mean = img.data.iter().map(|&v| v as f64).sum::<f64>() / n;
    img.data.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n
}

fn max_level_diff(a: &RasterImage, b: &RasterImage) -> i32 {
    a.data
        .iter()
        .zip(&b.data)
        .map(|(&x, &y)| (x as i32 - y as i32).abs())
        .max()
        .unwrap()
}

#[test]
fn denormalize_maps_endpoints_and_midpoint() {
    let t = Tensor::from_vec(&[3, 1, 3], vec![-1.0, 0.0, 1.0, -1.0, 0.0, 1.0, -1.0, 0.0, 1.0]).unwrap();
    let r = denormalize(&ImageTensor::new(t).unwrap());
    assert_eq!((r.get(0, 0, 0), r.get(0, 1, 0), r.get(0, 2, 0)), (0, 128, 255));
}

#[test]
fn ramp_gains_contrast() {
    let ramp = grey(64, 64, |_, x| 100 + (x * 40 / 63) as u8);
    assert_eq!(luma_range(&ramp), (100.0, 140.0));
    let out = clahe(&ramp, &PostprocessConfig::default());
    let (lo, hi) = luma_range(&out);
    assert!(lo <= 100.0 && hi >= 140.0 && hi - lo > 40.0, "output luma range [{lo}, {hi}]");
}

#[test]
fn clahe_with_unit_clip_is_nearly_idempotent() {
    let cfg = PostprocessConfig {
        clahe_clip: 1.0,
        ..Default::default()
    };
    for img in [
        grey(64, 64, |_, x| 100 + (x * 40 / 63) as u8),
        textured(64, 64, 3),
        textured(48, 40, 4),
    ] {
        let once = clahe(&img, &cfg);
        let twice = clahe(&once, &cfg);
        let d = max_level_diff(&once, &twice);
        assert!(d <= 2, "second pass moved a value by {d} levels");
    }
}

#[test]
fn denoise_reduces_variance_of_noisy_constant() {
    let img = noisy_constant(32, 128.0, 10.0, 1);
    let out = nl_means_denoise(&img, &PostprocessConfig::default());
    let (before, after) = (variance(&img), variance(&out));
    assert!(after < before, "variance {before} -> {after}");
}

#[test]
fn vanishing_strength_returns_input() {
    let img = noisy_constant(24, 128.0, 10.0, 2);
    for h in [0.0, 1e-3] {
        let cfg = PostprocessConfig {
            nlm_strength: h,
            ..Default::default()
        };
        assert_eq!(nl_means_denoise(&img, &cfg), img);
    }
}

#[test]
fn sharpening_overshoots_both_sides_of_a_step() {
    let step = grey(32, 8, |_, x| if x < 16 { 80 } else { 160 });
    let out = unsharp_mask(&step, &PostprocessConfig::default());
    let row: Vec<u8> = (0..32).map(|x| out.get(4, x, 0)).collect();
    assert!(row[15] < 80, "dark side {row:?}");
    assert!(row[16] > 160, "bright side {row:?}");
    // Far from the edge nothing changes.
    assert_eq!((row[2], row[29]), (80, 160));
}

#[test]
fn zero_amount_is_identity() {
    let img = textured(20, 20, 5);
    let cfg = PostprocessConfig {
        unsharp_amount: 0.0,
        ..Default::default()
    };
    assert_eq!(unsharp_mask(&img, &cfg), img);
}

#[test]
fn empty_stage_set_only_denormalizes() {
    let img = textured(16, 16, 6);
    let x = ImageTensor::from_raster(&img);
    let cfg = PostprocessConfig::with_stages(Stages::NONE);
    assert_eq!(postprocess_pipeline(&x, &cfg).unwrap(), img);
}

#[test]
fn pipeline_runs_clahe_then_denoise_then_sharpen() {
    let img = textured(24, 24, 7);
    let x = ImageTensor::from_raster(&img);
    let cfg = PostprocessConfig::with_stages(Stages::ALL);
    let manual = unsharp_mask(&nl_means_denoise(&clahe(&img, &cfg), &cfg), &cfg);
    let first = postprocess_pipeline(&x, &cfg).unwrap();
    assert_eq!(first, manual);
    assert_eq!(postprocess_pipeline(&x, &cfg).unwrap(), first);
    let reordered: Stages = "sharpen,denoise,clahe".parse().unwrap();
    assert_eq!(reordered, Stages::ALL);
}

#[test]
fn clahe_commutes_with_tile_aligned_shifts() {
    // 80×80 with a 10×10 grid and 64×64 with an 8×8 grid share 8-pixel tiles.
    let big = textured(80, 80, 8);
    let small = crop(&big, 8, 8, 64, 64);
    let big_out = clahe(
        &big,
        &PostprocessConfig {
            clahe_tiles: (10, 10),
            ..Default::default()
        },
    );
    let small_out = clahe(&small, &PostprocessConfig::default());
    // Pixels whose four blending tiles are interior to both grids.
    assert_eq!(crop(&small_out, 12, 12, 40, 40), crop(&big_out, 20, 20, 40, 40));
}

#[test]
fn denoise_and_sharpen_commute_with_shifts_on_interior_crops() {
    let cfg = PostprocessConfig {
        nlm_window: 7,
        nlm_patch: 3,
        ..Default::default()
    };
    let big = textured(40, 40, 9);
    let shifted = crop(&big, 3, 5, 32, 32);
    let margin = 6;
    let a = nl_means_denoise(&big, &cfg);
    let b = nl_means_denoise(&shifted, &cfg);
    let inner = 32 - 2 * margin;
    assert_eq!(crop(&a, 3 + margin, 5 + margin, inner, inner), crop(&b, margin, margin, inner, inner));
    let a = unsharp_mask(&big, &cfg);
    let b = unsharp_mask(&shifted, &cfg);
    assert_eq!(crop(&a, 3 + margin, 5 + margin, inner, inner), crop(&b, margin, margin, inner, inner));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn constant_images_are_fixed_points(r in 0u8..=255, g in 0u8..=255, b in 0u8..=255, w in 4usize..24, h in 4usize..24) {
        let img = RasterImage::filled(w, h, [r, g, b]);
        let cfg = PostprocessConfig { nlm_window: 7, nlm_patch: 3, ..Default::default() };
        prop_assert_eq!(clahe(&img, &cfg), img.clone());
        prop_assert_eq!(nl_means_denoise(&img, &cfg), img.clone());
        prop_assert_eq!(unsharp_mask(&img, &cfg), img.clone());
        prop_assert_eq!(postprocess_raster(&img, &PostprocessConfig { stages: Stages::ALL, ..cfg }), img);
    }

    #[test]
    fn raster_tensor_round_trip_is_exact(data in proptest::collection::vec(any::<u8>(), 5 * 7 * 3)) {
        let img = RasterImage::new(5, 7, data).unwrap();
        prop_assert_eq!(denormalize(&ImageTensor::from_raster(&img)), img);
    }

    #[test]
    fn clahe_leaves_chroma_where_unclamped(seed in 0u64..1000) {
        let img = textured(24, 24, seed);
        let out = clahe(&img, &PostprocessConfig::default());
        for y in 0..24 {
            for x in 0..24 {
                let px: Vec<i32> = (0..3).map(|c| out.get(y, x, c) as i32).collect();
                if px.iter().any(|&v| v == 0 || v == 255) {
                    continue;
                }
                let src: Vec<i32> = (0..3).map(|c| img.get(y, x, c) as i32).collect();
                prop_assert_eq!(px[0] - px[1], src[0] - src[1]);
                prop_assert_eq!(px[2] - px[1], src[2] - src[1]);
            }
        }
    }

    #[test]
    fn every_stage_is_deterministic(seed in 0u64..1000) {
        let img = textured(16, 16, seed);
        let cfg = PostprocessConfig { stages: Stages::ALL, nlm_window: 7, nlm_patch: 3, ..Default::default() };
        prop_assert_eq!(postprocess_raster(&img, &cfg), postprocess_raster(&img, &cfg));
    }
}
