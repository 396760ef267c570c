use adaconv::frame::Patch;
use adaconv::net::{stack_receptive, split_kernels, KernelNet, LayerKind, NetworkConfig};
use adaconv::synth::{GroundTruth, LossWeights, Sample};
use adaconv::tensor::gradcheck::{check_gradients, GradCheckOptions};
use adaconv::train::NetworkProbe;
use adaconv::Phase;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_patch(side: usize, rng: &mut ChaCha8Rng) -> Patch<f64> {
    Patch::from_fn(side, |_, _, _| rng.gen_range(0.0..1.0))
}

fn random_sample(r: usize, rng: &mut ChaCha8Rng) -> Sample<f64> {
    let middle = random_patch(r, rng);
    Sample {
        r1: random_patch(r, rng),
        r2: random_patch(r, rng),
        truth: GroundTruth::from_patch(&middle).unwrap(),
    }
}

#[test]
fn desk_network_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let net = KernelNet::<f64>::init(NetworkConfig::desk(), 4).unwrap();
    let batch = (0..3).map(|_| random_sample(23, &mut rng)).collect();
    let mut probe = NetworkProbe {
        net,
        batch,
        weights: LossWeights { lambda: 1.0 },
    };
    // The loss is O(10), so a smaller step lets round-off swamp the tiniest gradients.
    let options = GradCheckOptions {
        perturbation: 1e-4,
        max_probes_per_tensor: Some(12),
        seed: 5,
        ..GradCheckOptions::default()
    };
    let report = check_gradients(&mut probe, &options).unwrap();
    assert!(report.probes > 100, "{report:?}");
    assert!(report.max_relative_error < 1e-4, "{report:?}");
}

#[test]
fn kernels_sum_to_one_for_any_input() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let net = KernelNet::<f32>::init(NetworkConfig::desk(), 9).unwrap();
    for _ in 0..20 {
        let (a, b) = (random_patch(23, &mut rng).cast(), random_patch(23, &mut rng).cast());
        let kernel = net.forward_kernel(&a, &b).unwrap();
        assert!(kernel.data().iter().all(|&v| v >= 0.0));
        assert!(kernel.is_normalized(1e-6));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn batched_inference_matches_single_samples(seed in 0u64..1000, n in 1usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = KernelNet::<f64>::init(NetworkConfig::desk(), seed).unwrap();
        let patches: Vec<(Patch<f64>, Patch<f64>)> =
            (0..n).map(|_| (random_patch(23, &mut rng), random_patch(23, &mut rng))).collect();
        let pairs: Vec<_> = patches.iter().map(|(a, b)| (a, b)).collect();
        let batched = split_kernels(&net.infer(&stack_receptive(&pairs, 23).unwrap()).unwrap(), 11).unwrap();
        for ((a, b), kernel) in patches.iter().zip(&batched) {
            let single = net.forward_kernel(a, b).unwrap();
            let diff = single.data().iter().zip(kernel.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
            prop_assert!(diff < 1e-12);
        }
    }

    #[test]
    fn checkpoint_round_trip_preserves_outputs(seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut net = KernelNet::<f32>::init(NetworkConfig::desk(), seed).unwrap();
        // Move the running statistics away from their initial values.
        let input: Vec<(Patch<f32>, Patch<f32>)> =
            (0..4).map(|_| (random_patch(23, &mut rng).cast(), random_patch(23, &mut rng).cast())).collect();
        let pairs: Vec<_> = input.iter().map(|(a, b)| (a, b)).collect();
        net.forward(&stack_receptive(&pairs, 23).unwrap(), Phase::Train).unwrap();
        let loaded = KernelNet::<f32>::from_bytes(&net.to_bytes().unwrap()).unwrap();
        prop_assert_eq!(&loaded.to_bytes().unwrap(), &net.to_bytes().unwrap());
        let (a, b) = &input[0];
        prop_assert_eq!(loaded.forward_kernel(a, b).unwrap(), net.forward_kernel(a, b).unwrap());
    }
}

#[test]
fn paper_configuration_shapes() {
    let c = NetworkConfig::paper();
    let specs = c.layer_specs().unwrap();
    let sides: Vec<usize> = specs.iter().map(|s| s.output_side).collect();
    assert_eq!(sides, vec![73, 36, 32, 16, 12, 6, 4, 1, 1]);
    let downs = specs.iter().filter(|s| s.kind == LayerKind::DownConv).count();
    assert_eq!(downs, 3);
    assert_eq!(c.stride_factor(), 8);
    assert_eq!(c.kernel_len(), 41 * 82);
    assert_eq!(specs.last().unwrap().out_channels, 41 * 82);
    assert!(!specs.last().unwrap().relu);
}

#[test]
fn init_is_seeded() {
    let a = KernelNet::<f32>::init(NetworkConfig::desk(), 1).unwrap();
    let b = KernelNet::<f32>::init(NetworkConfig::desk(), 1).unwrap();
    let c = KernelNet::<f32>::init(NetworkConfig::desk(), 2).unwrap();
    assert_eq!(a.to_bytes().unwrap(), b.to_bytes().unwrap());
    assert_ne!(a.to_bytes().unwrap(), c.to_bytes().unwrap());
}
