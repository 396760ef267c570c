use adaconv::data::{generate_synthetic_sequence, SceneSpec};
use adaconv::frame::Frame;
use adaconv::infer::{
    interpolate, interpolate_recursive, kernel_field_pixelwise, kernel_field_shift_stitch, InferMode, StitchPlan,
};
use adaconv::net::{KernelNet, NetworkConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn noise(w: usize, h: usize, rng: &mut ChaCha8Rng) -> Frame {
    let v: Vec<f32> = (0..3 * w * h).map(|_| rng.gen()).collect();
    Frame::new(w, h, v).unwrap()
}

fn two_down_convs() -> NetworkConfig {
    NetworkConfig {
        receptive_field: 23,
        patch_size: 11,
        down_convs: 2,
        conv_widths: vec![8, 16, 64],
        conv_sizes: vec![5, 3, 3, 1],
    }
}

fn max_field_diff(net: &KernelNet<f32>, a: &Frame, b: &Frame) -> f32 {
    let p = kernel_field_pixelwise(net, a, b).unwrap();
    let s = kernel_field_shift_stitch(net, a, b).unwrap();
    let (h, w) = a.dims();
    let mut worst = 0.0f32;
    for y in 0..h {
        for x in 0..w {
            for (u, v) in p.coefficients(y, x).iter().zip(s.coefficients(y, x)) {
                worst = worst.max((u - v).abs());
            }
        }
    }
    worst
}

#[test]
fn two_down_convolution_variant_is_valid() {
    let c = two_down_convs();
    let sides: Vec<usize> = c.layer_specs().unwrap().iter().map(|s| s.output_side).collect();
    assert_eq!(sides, vec![19, 9, 7, 3, 1, 1]);
    assert_eq!(c.stride_factor(), 4);
}

#[test]
fn stitch_plans_cover_every_phase() {
    for (config, count) in [(NetworkConfig::desk(), 4), (two_down_convs(), 16), (NetworkConfig::paper(), 64)] {
        let plan = StitchPlan::new(&config, 30, 21);
        assert_eq!(plan.shifts.len(), count);
        let covered: usize = plan.shifts.iter().map(|&s| {
            let (r, c) = plan.grid(s, 30, 21);
            r * c
        }).sum();
        assert_eq!(covered, 30 * 21);
    }
}

#[test]
fn shift_and_stitch_matches_pixelwise() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for (seed, config) in [(1, NetworkConfig::desk()), (2, two_down_convs())] {
        let net = KernelNet::<f32>::init(config, seed).unwrap();
        // Odd sizes exercise partial stitch grids.
        for (w, h) in [(32, 32), (19, 13)] {
            let (a, b) = (noise(w, h, &mut rng), noise(w, h, &mut rng));
            let diff = max_field_diff(&net, &a, &b);
            assert!(diff < 1e-5, "{w}x{h}: {diff}");
        }
    }
}

#[test]
fn both_modes_produce_the_same_frame() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let net = KernelNet::<f32>::init(NetworkConfig::desk(), 7).unwrap();
    let (a, b) = (noise(24, 20, &mut rng), noise(24, 20, &mut rng));
    let p = interpolate(&net, &a, &b, InferMode::Pixelwise).unwrap();
    let s = interpolate(&net, &a, &b, InferMode::ShiftStitch).unwrap();
    let worst = p.data().iter().zip(s.data()).map(|(u, v)| (u - v).abs()).fold(0.0, f32::max);
    assert!(worst < 1e-5);
}

#[test]
fn recursive_interpolation_orders_frames() {
    let scene = SceneSpec::global_shift(32, 32, 4.0, 0.0);
    let g = &generate_synthetic_sequence(&scene, 5).unwrap()[0];
    let net = KernelNet::<f32>::init(NetworkConfig::desk(), 3).unwrap();
    let frames = interpolate_recursive(&net, &g.f1, &g.f3, 2, InferMode::ShiftStitch).unwrap();
    assert_eq!(frames.len(), 3);
    let middle = interpolate(&net, &g.f1, &g.f3, InferMode::ShiftStitch).unwrap();
    assert_eq!(frames[1], middle);
    assert_eq!(frames[0], interpolate(&net, &g.f1, &middle, InferMode::ShiftStitch).unwrap());
    assert_eq!(frames[2], interpolate(&net, &middle, &g.f3, InferMode::ShiftStitch).unwrap());
    assert_eq!(interpolate_recursive(&net, &g.f1, &g.f3, 3, InferMode::ShiftStitch).unwrap().len(), 7);
}

#[test]
fn mismatched_frames_rejected() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let net = KernelNet::<f32>::init(NetworkConfig::desk(), 1).unwrap();
    let (a, b) = (noise(16, 16, &mut rng), noise(16, 17, &mut rng));
    assert!(interpolate(&net, &a, &b, InferMode::ShiftStitch).is_err());
    assert!(interpolate(&net, &a, &b, InferMode::Pixelwise).is_err());
}
