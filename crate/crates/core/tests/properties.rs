use proptest::prelude::*;

use oocs_core::builder::{build_oocs_network, OocsConfig, ResponseSource};
use oocs_core::data::{batches, BatchPlan, Dataset};
use oocs_core::imageops::{
    adjust_contrast, convolve2d, gamma_correct, invert, on_off_responses, perturb_gaussian, perturb_salt_pepper,
    ImageTensor, Padding,
};
use oocs_core::kernels::{build_oocs_kernel, DogParams, KernelMatrix, Polarity};
use oocs_core::nn::{
    forward, init_params, param_count, read_checkpoint, softmax, write_checkpoint, Graph, LayerKind, Mode,
    NetworkSpec, Params, Pathway, Tensor,
};
use oocs_core::OocsError;

fn image(side: usize) -> impl Strategy<Value = ImageTensor> {
    prop::collection::vec(0.0f64..=1.0, side * side).prop_map(move |d| ImageTensor::new(side, side, 1, d).unwrap())
}

fn kernel_params() -> impl Strategy<Value = (usize, f64)> {
    (prop::sample::select(vec![3usize, 5, 7, 9, 11]), 0.3f64..0.9)
}

fn try_kernel(k: usize, g: f64, p: Polarity) -> Option<KernelMatrix> {
    match build_oocs_kernel(k, g, p) {
        Ok(kern) => Some(kern),
        // some small (size, ratio) pairs leave a sign class empty
        Err(OocsError::DegenerateKernel { .. }) => None,
        Err(e) => panic!("unexpected error: {e}"),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn kernels_are_balanced_symmetric_and_antisymmetric((k, g) in kernel_params()) {
        let Some(on) = try_kernel(k, g, Polarity::On) else { return Ok(()) };
        let off = try_kernel(k, g, Polarity::Off).unwrap();
        let pos: f64 = on.weights().iter().filter(|v| **v > 0.0).sum();
        let neg: f64 = on.weights().iter().filter(|v| **v < 0.0).sum();
        prop_assert!((pos - 1.0).abs() < 1e-9);
        prop_assert!((neg + 1.0).abs() < 1e-9);
        for i in 0..k {
            for j in 0..k {
                prop_assert_eq!(off.get(i, j), -on.get(i, j));
                // the eight symmetries of the square
                let v = on.get(i, j);
                prop_assert_eq!(v, on.get(j, i));
                prop_assert_eq!(v, on.get(k - 1 - i, j));
                prop_assert_eq!(v, on.get(i, k - 1 - j));
            }
        }
        prop_assert!(on.get(k / 2, k / 2) > 0.0);
    }

    #[test]
    fn convolution_is_linear(x in image(10), y in image(10), a in -2.0f64..2.0, b in -2.0f64..2.0) {
        let kern = build_oocs_kernel(5, 2.0 / 3.0, Polarity::On).unwrap();
        let mix: Vec<f64> = x.data().iter().zip(y.data()).map(|(p, q)| a * p + b * q).collect();
        let lhs = convolve2d(&ImageTensor::new(10, 10, 1, mix).unwrap(), &kern, Padding::Same, 1).unwrap();
        let cx = convolve2d(&x, &kern, Padding::Same, 1).unwrap();
        let cy = convolve2d(&y, &kern, Padding::Same, 1).unwrap();
        for ((l, p), q) in lhs.data().iter().zip(cx.data()).zip(cy.data()) {
            prop_assert!((l - (a * p + b * q)).abs() < 1e-9);
        }
    }

    #[test]
    fn constant_images_vanish_inside(c in 0.0f64..=1.0, (k, g) in kernel_params()) {
        let Some(kern) = try_kernel(k, g, Polarity::On) else { return Ok(()) };
        let img = ImageTensor::filled(16, 16, 1, c);
        let out = convolve2d(&img, &kern, Padding::Same, 1).unwrap();
        for (y, x) in out.interior(k / 2) {
            prop_assert!(out.get(y, x, 0).abs() < 1e-12);
        }
    }

    #[test]
    fn inversion_duality(img in image(14), (k, g) in kernel_params()) {
        if try_kernel(k, g, Polarity::On).is_none() || k > 7 {
            return Ok(());
        }
        let p = DogParams::new(k, g, Polarity::On).unwrap();
        let a = on_off_responses(&invert(&img), &p).unwrap().on;
        let b = on_off_responses(&img, &p).unwrap().off;
        for (y, x) in img.interior(k / 2) {
            prop_assert!((a.get(y, x, 0) - b.get(y, x, 0)).abs() < 1e-9);
        }
    }

    #[test]
    fn perturbations_stay_in_range_and_fix_identity(img in image(8), m in 0.0f64..0.5, seed in any::<u64>()) {
        for out in [
            perturb_gaussian(&img, m, seed).unwrap(),
            perturb_salt_pepper(&img, m, seed).unwrap(),
            gamma_correct(&img, 1.0 + 4.0 * m).unwrap(),
            adjust_contrast(&img, 2.0 * m).unwrap(),
        ] {
            prop_assert!(out.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
        prop_assert_eq!(&perturb_gaussian(&img, 0.0, seed).unwrap(), &img);
        prop_assert_eq!(&perturb_salt_pepper(&img, 0.0, seed).unwrap(), &img);
        prop_assert_eq!(&gamma_correct(&img, 1.0).unwrap(), &img);
        prop_assert_eq!(&adjust_contrast(&img, 1.0).unwrap(), &img);
    }

    #[test]
    fn an_epoch_visits_every_sample_once(n in 1usize..300, bs in 1usize..80, seed in any::<u64>()) {
        let imgs = vec![ImageTensor::zeros(28, 28, 1); n];
        let labels = (0..n).map(|i| (i % 10) as u8).collect();
        let ds = Dataset::new("d", imgs, labels, 10).unwrap();
        let plan = BatchPlan::new(bs, seed).unwrap();
        let mut seen = vec![0u32; n];
        let mut sizes = Vec::new();
        for b in batches(&ds, &plan) {
            sizes.push(b.indices.len());
            for (&i, &l) in b.indices.iter().zip(&b.labels) {
                seen[i] += 1;
                prop_assert_eq!(l, (i % 10) as u8);
            }
        }
        prop_assert!(seen.iter().all(|&c| c == 1));
        prop_assert!(sizes[..sizes.len() - 1].iter().all(|&s| s == bs));
        prop_assert_eq!(sizes.len(), n.div_ceil(bs));
    }

    #[test]
    fn softmax_rows_sum_to_one(logits in prop::collection::vec(-30.0f64..30.0, 40)) {
        let t = Tensor::from_vec(4, 1, 1, 10, logits).unwrap();
        for row in softmax(&t) {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}

/// Random chain: conv blocks with optional pools, then a dense head.
fn chain() -> impl Strategy<Value = (NetworkSpec, Vec<(usize, usize)>, usize)> {
    (1usize..=3, prop::collection::vec((1usize..=8, any::<bool>()), 1..=3), 2usize..=12).prop_map(
        |(channels, convs, classes)| {
            let mut s = NetworkSpec::new(16, 16, channels);
            let mut c_in = channels;
            let mut side = 16;
            let mut conv_dims = Vec::new();
            for (i, (f, pool)) in convs.into_iter().enumerate() {
                let f = 2 * f;
                s.chain(&format!("conv{i}"), LayerKind::Conv2D { filters: f })
                    .chain(&format!("relu{i}"), LayerKind::ReLU);
                if pool {
                    s.chain(&format!("pool{i}"), LayerKind::MaxPool2x2);
                    side /= 2;
                }
                conv_dims.push((c_in, f));
                c_in = f;
            }
            s.chain("flat", LayerKind::Flatten)
                .chain("fc", LayerKind::Dense { units: classes })
                .chain("loss", LayerKind::SoftmaxCE);
            (s, conv_dims, side * side * c_in * classes + classes)
        },
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn param_count_matches_closed_form((spec, convs, head) in chain()) {
        let conv: usize = convs.iter().map(|(c, f)| 9 * c * f + f).sum();
        prop_assert_eq!(param_count(&spec).unwrap(), conv + head);
    }

    #[test]
    fn first_block_split_keeps_count_and_symmetry((spec, _, _) in chain(), pathway_src in any::<bool>(), post in any::<bool>()) {
        let end = if spec.node("pool0").is_some() { "pool0" } else { "relu0" };
        let ins = if post { "relu0" } else { "conv0" };
        let mut cfg = OocsConfig::new("conv0", end, ins, DogParams::new(3, 0.5, Polarity::On).unwrap());
        if pathway_src {
            cfg.response_source = ResponseSource::PathwayInput;
        }
        let net = build_oocs_network(&spec, &cfg).unwrap();
        prop_assert_eq!(param_count(&net).unwrap(), param_count(&spec).unwrap());
        prop_assert_eq!(net.output_shape().unwrap(), spec.output_shape().unwrap());
        // on and off pathways are the same graph up to names and polarity
        let strip = |p: Pathway| -> Vec<(String, String)> {
            net.nodes
                .iter()
                .filter(|n| n.pathway == p)
                .map(|n| {
                    let kind = match &n.kind {
                        LayerKind::FixedDogResidual(r) => format!("res{}x{}", r.kernel_size, r.downsample),
                        k => format!("{k:?}"),
                    };
                    let prefix = format!("{p}_");
                    (n.name.trim_start_matches(&prefix).to_string(), kind)
                })
                .collect()
        };
        prop_assert_eq!(strip(Pathway::On), strip(Pathway::Off));
        let text = net.to_text();
        let back = NetworkSpec::from_text(&text).unwrap();
        prop_assert_eq!(&back, &net);
        prop_assert_eq!(back.hash(), net.hash());
    }

    #[test]
    fn checkpoints_round_trip((spec, _, _) in chain(), seed in any::<u64>()) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let p: Params<f32> = init_params(&spec, seed).unwrap();
        write_checkpoint(&path, &spec, &p).unwrap();
        prop_assert_eq!(read_checkpoint::<f32>(&path, &spec).unwrap(), p);
    }
}

#[test]
fn dropout_is_identity_in_eval_mode() {
    let build = |rate: f64| {
        let mut s = NetworkSpec::new(6, 6, 1);
        s.chain("c", LayerKind::Conv2D { filters: 3 })
            .chain("r", LayerKind::ReLU)
            .chain("f", LayerKind::Flatten)
            .chain("d", LayerKind::Dropout { rate })
            .chain("fc", LayerKind::Dense { units: 4 })
            .chain("loss", LayerKind::SoftmaxCE);
        Graph::new(s).unwrap()
    };
    let (with, without) = (build(0.5), build(0.0));
    let p: Params<f64> = init_params(with.spec(), 3).unwrap();
    let x = Tensor::from_vec(3, 6, 6, 1, (0..108).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap();
    let a = forward(&with, &p, &x, Mode::Eval, 11).unwrap().0;
    let b = forward(&without, &p, &x, Mode::Eval, 11).unwrap().0;
    assert_eq!(a, b);
    let t = forward(&with, &p, &x, Mode::Train, 11).unwrap().0;
    assert_ne!(a, t);
}
