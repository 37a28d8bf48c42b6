use foodseg_core::{LabelMap, IGNORE};
use foodseg_nn::archive::{Archive, OPTIMIZER, WEIGHTS};
use foodseg_nn::backbone::{Encoder, EncoderConfig, EncoderKind};
use foodseg_nn::image::stack;
use foodseg_nn::{Graph, ParamStore, Tensor};
use foodseg_segmenter::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

fn small_encoder(kind: EncoderKind) -> EncoderConfig {
    EncoderConfig {
        kind,
        conv_widths: vec![4, 6, 8],
        vit_dim: 8,
        vit_heads: 2,
        vit_mlp: 16,
        vit_depth: 1,
        vit_grid: 4,
        ..EncoderConfig::default()
    }
}

fn config(kind: EncoderKind, decoder: DecoderKind) -> SegmenterConfig {
    SegmenterConfig {
        encoder: small_encoder(kind),
        decoder,
        num_classes: 4,
        decoder_width: 8,
        crop_size: 16,
        batch_size: 2,
        max_iters: 10,
        base_lr: 0.01,
        ..SegmenterConfig::default()
    }
}

const VALID: [(EncoderKind, DecoderKind); 4] = [
    (EncoderKind::Convolutional, DecoderKind::DilationHead),
    (EncoderKind::Convolutional, DecoderKind::FpnHead),
    (EncoderKind::Transformer, DecoderKind::TransformerNaiveHead),
    (EncoderKind::Transformer, DecoderKind::DilationHead),
];

fn random_image(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Tensor {
    Tensor::new(&[3, h, w], (0..3 * h * w).map(|_| rng.gen_range(-1.0..1.0)).collect())
}

/// Vertical bands of classes, colored per class.
fn banded(h: usize, w: usize, classes: usize) -> (Tensor, LabelMap) {
    let labels: Vec<u8> = (0..h * w).map(|i| ((i % w) * classes / w) as u8).collect();
    let palette = [[0.9, -0.8, -0.2], [-0.7, 0.8, 0.1], [0.1, 0.2, -0.9], [-0.5, -0.5, 0.7]];
    let mut data = vec![0.0; 3 * h * w];
    for (i, &l) in labels.iter().enumerate() {
        for c in 0..3 {
            data[c * h * w + i] = palette[l as usize % 4][c];
        }
    }
    (Tensor::new(&[3, h, w], data), LabelMap::new(h, w, labels).unwrap())
}

#[test]
fn forward_yields_full_resolution_logits() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for (enc, dec) in VALID {
        let model = Segmenter::new(&config(enc, dec)).unwrap();
        for (h, w) in [(16, 16), (24, 20)] {
            let x = stack(&[&random_image(&mut rng, h, w), &random_image(&mut rng, h, w)]);
            assert_eq!(model.logits(&x).unwrap().shape(), &[2, 4, h, w], "{enc} {dec}");
        }
    }
}

#[test]
fn incompatible_pairs_are_rejected() {
    for (enc, dec) in [
        (EncoderKind::Convolutional, DecoderKind::TransformerNaiveHead),
        (EncoderKind::Transformer, DecoderKind::FpnHead),
    ] {
        assert!(matches!(Segmenter::new(&config(enc, dec)), Err(SegError::Incompatible { .. })));
    }
}

fn decode_with(model: &Segmenter, x: &Tensor, edit: impl Fn(usize, &Tensor) -> Tensor) -> Tensor {
    let mut g = Graph::new(&model.store);
    let xv = g.input(x.clone());
    let feats = model.features(&mut g, xv);
    let edited: Vec<_> = feats
        .iter()
        .enumerate()
        .map(|(i, f)| {
            let v = g.value(*f).clone();
            g.input(edit(i, &v))
        })
        .collect();
    let out = model.decoder.forward(&mut g, &edited, x.dim(2), x.dim(3));
    g.value(out).clone()
}

#[test]
fn dilation_head_ignores_intermediate_stages() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let model = Segmenter::new(&config(EncoderKind::Convolutional, DecoderKind::DilationHead)).unwrap();
    let x = stack(&[&random_image(&mut rng, 16, 16)]);
    let base = decode_with(&model, &x, |_, t| t.clone());
    let zeroed = decode_with(&model, &x, |i, t| if i < 2 { Tensor::zeros(t.shape()) } else { t.clone() });
    assert_eq!(base, zeroed);
    assert_eq!(base, model.logits(&x).unwrap());
}

#[test]
fn fpn_head_depends_on_every_level() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let model = Segmenter::new(&config(EncoderKind::Convolutional, DecoderKind::FpnHead)).unwrap();
    let x = stack(&[&random_image(&mut rng, 16, 16)]);
    let base = decode_with(&model, &x, |_, t| t.clone());
    for level in 0..3 {
        let perturbed = decode_with(&model, &x, |i, t| if i == level { t.map(|v| v + 0.5) } else { t.clone() });
        assert!(base.max_abs_diff(&perturbed) > 1e-9, "level {level} had no effect");
    }
}

fn pretrained_archive(kind: EncoderKind, seed: u64) -> (Archive, ParamStore, Encoder) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let cfg = small_encoder(kind);
    let enc = Encoder::new(&mut store, "vision.encoder", &cfg, &mut rng);
    let archive = Archive::new(json!({ "encoder": cfg.descriptor() }))
        .with_section(WEIGHTS, store.export("vision.encoder"));
    (archive, store, enc)
}

#[test]
fn init_from_pretrained_copies_encoder_only() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for (enc_kind, dec) in VALID {
        let (archive, src_store, src_enc) = pretrained_archive(enc_kind, 42);
        let mut model = Segmenter::new(&config(enc_kind, dec)).unwrap();
        let decoder_before = model.decoder_checksum();
        model.init_from_relem(&archive).unwrap();
        assert_eq!(model.decoder_checksum(), decoder_before);
        let x = stack(&[&random_image(&mut rng, 16, 16)]);
        let dilated = model.dilated();
        let mut g1 = Graph::new(&src_store);
        let x1 = g1.input(x.clone());
        let a = src_enc.forward(&mut g1, x1, dilated);
        let mut g2 = Graph::new(&model.store);
        let x2 = g2.input(x.clone());
        let b = model.features(&mut g2, x2);
        for (fa, fb) in a.iter().zip(&b) {
            assert_eq!(g1.value(*fa).max_abs_diff(g2.value(*fb)), 0.0);
        }
    }
    let (conv_archive, _, _) = pretrained_archive(EncoderKind::Convolutional, 1);
    let mut vit = Segmenter::new(&config(EncoderKind::Transformer, DecoderKind::TransformerNaiveHead)).unwrap();
    assert!(vit.init_from_relem(&conv_archive).is_err());
}

#[test]
fn decoder_init_depends_on_seed_and_encoder_trains_after_init() {
    let cfg = config(EncoderKind::Convolutional, DecoderKind::DilationHead);
    let a = Segmenter::new(&cfg).unwrap();
    let b = Segmenter::new(&SegmenterConfig { seed: 1, ..cfg.clone() }).unwrap();
    assert_ne!(a.decoder_checksum(), b.decoder_checksum());

    let (archive, _, _) = pretrained_archive(EncoderKind::Convolutional, 9);
    let mut model = Segmenter::new(&cfg).unwrap();
    model.init_from_relem(&archive).unwrap();
    let before = model.encoder_checksum();
    let (img, mask) = banded(16, 16, 4);
    let mut t = Trainer::new(model, SegDataset { images: vec![img], masks: vec![mask] }).unwrap();
    t.step().unwrap();
    assert_ne!(t.model.encoder_checksum(), before);
}

#[test]
fn pixel_ce_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let h = 1e-6;
    for _ in 0..100 {
        let c = rng.gen_range(2..6);
        let shape = [1, c, 2, 3];
        let z: Vec<f64> = (0..c * 6).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let labels: Vec<u8> = (0..6)
            .map(|_| if rng.gen_bool(0.2) { IGNORE } else { rng.gen_range(0..c) as u8 })
            .collect();
        let logits = Tensor::new(&shape, z.clone());
        let l = pixel_ce_loss(&logits, &labels).unwrap();
        let i = rng.gen_range(0..z.len());
        let mut up = z.clone();
        up[i] += h;
        let mut down = z;
        down[i] -= h;
        let fu = pixel_ce_loss(&Tensor::new(&shape, up), &labels).unwrap().value;
        let fd = pixel_ce_loss(&Tensor::new(&shape, down), &labels).unwrap().value;
        let numeric = (fu - fd) / (2.0 * h);
        let a = l.grad.data()[i];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
        assert!(rel < 1e-4 || (a - numeric).abs() < 1e-10, "analytic {a} numeric {numeric}");
    }
}

#[test]
fn pixel_ce_limits() {
    let c = 5;
    let uniform = pixel_ce_loss(&Tensor::zeros(&[1, c, 2, 2]), &[0, 1, 4, IGNORE]).unwrap();
    assert!((uniform.value - (c as f64).ln()).abs() < 1e-12);
    let mut z = vec![0.0; c * 4];
    let labels = [0u8, 3, 2, 1];
    for (px, &l) in labels.iter().enumerate() {
        z[l as usize * 4 + px] = 100.0;
    }
    let perfect = pixel_ce_loss(&Tensor::new(&[1, c, 2, 2], z), &labels).unwrap();
    assert!(perfect.value < 1e-40);
    assert!(pixel_ce_loss(&Tensor::zeros(&[1, c, 2, 2]), &[0, 1, 2]).is_err());
}

#[test]
fn training_is_deterministic_and_logs_the_schedule() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let data = SegDataset {
        images: (0..3).map(|_| random_image(&mut rng, 20, 18)).collect(),
        masks: (0..3)
            .map(|_| LabelMap::new(20, 18, (0..360).map(|_| rng.gen_range(0..4)).collect()).unwrap())
            .collect(),
    };
    for (enc, dec) in VALID {
        let cfg = config(enc, dec);
        let (_, s1, c1) = train(Segmenter::new(&cfg).unwrap(), data.clone()).unwrap();
        let (_, s2, c2) = train(Segmenter::new(&cfg).unwrap(), data.clone()).unwrap();
        assert_eq!(s1.checksums, s2.checksums);
        assert_eq!(c1.to_bytes(), c2.to_bytes());
        assert_eq!(s1.iteration, 10);
        assert_eq!(s1.lr_history.len(), 11);
        for (i, lr) in s1.lr_history.iter().enumerate() {
            assert_eq!(*lr, poly_lr(i, cfg.base_lr, cfg.max_iters, cfg.poly_power).unwrap());
        }
        assert_eq!(*s1.lr_history.last().unwrap(), 0.0);
        assert!(c1.section(OPTIMIZER).unwrap().len() > 0);
    }
}

#[test]
fn empty_split_is_an_error() {
    let model = Segmenter::new(&config(EncoderKind::Convolutional, DecoderKind::DilationHead)).unwrap();
    assert!(matches!(Trainer::new(model, SegDataset::default()), Err(SegError::EmptyTrainSplit)));
}

#[test]
fn overfits_a_single_image() {
    let (img, mask) = banded(16, 16, 4);
    let cfg = SegmenterConfig {
        base_lr: 0.01,
        max_iters: 120,
        batch_size: 1,
        augment: AugmentConfig { enabled: false, ..AugmentConfig::default() },
        ..config(EncoderKind::Convolutional, DecoderKind::DilationHead)
    };
    let (model, state, _) = train(Segmenter::new(&cfg).unwrap(), SegDataset { images: vec![img.clone()], masks: vec![mask.clone()] }).unwrap();
    let first = state.loss_history[0];
    let last = *state.loss_history.last().unwrap();
    assert!(last < 0.1 * first, "loss {first} -> {last}");
    let pred = model.predict(&img).unwrap();
    let correct = pred.data().iter().zip(mask.data()).filter(|(a, b)| a == b).count();
    assert!(correct as f64 / 256.0 > 0.9);
}

#[test]
fn checkpoint_roundtrip_and_mismatch() {
    let cfg = config(EncoderKind::Convolutional, DecoderKind::FpnHead);
    let (img, mask) = banded(16, 16, 4);
    let (model, _, ckpt) = train(Segmenter::new(&cfg).unwrap(), SegDataset { images: vec![img.clone()], masks: vec![mask] }).unwrap();
    let back = Archive::from_bytes(&ckpt.to_bytes()).unwrap();
    let restored = Segmenter::from_checkpoint(&cfg, &back).unwrap();
    assert_eq!(restored.predict(&img).unwrap(), model.predict(&img).unwrap());
    let other = SegmenterConfig { num_classes: 3, ..cfg };
    assert!(matches!(
        Segmenter::from_checkpoint(&other, &back),
        Err(SegError::Nn(foodseg_nn::NnError::ArchitectureMismatch(_)))
    ));
}

#[test]
fn predict_is_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let model = Segmenter::new(&config(EncoderKind::Transformer, DecoderKind::TransformerNaiveHead)).unwrap();
    let img = random_image(&mut rng, 16, 16);
    assert_eq!(model.predict(&img).unwrap(), model.predict(&img).unwrap());
    assert!(model.predict(&Tensor::zeros(&[3, 4])).is_err());
}

proptest! {
    #[test]
    fn argmax_invariant_under_monotone_maps(
        z in prop::collection::vec(-5.0f64..5.0, 4 * 6),
        scale in 0.1f64..10.0,
        shift in -3.0f64..3.0,
    ) {
        let t = Tensor::new(&[1, 4, 2, 3], z);
        let a = argmax_labels(&t).unwrap();
        let b = argmax_labels(&t.map(|v| (v * scale + shift).exp())).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn poly_schedule_is_monotone(base in 1e-5f64..1.0, max in 1usize..500, power in 0.1f64..3.0) {
        let lrs: Vec<f64> = (0..=max).map(|i| poly_lr(i, base, max, power).unwrap()).collect();
        prop_assert_eq!(lrs[0], base);
        prop_assert_eq!(lrs[max], 0.0);
        prop_assert!(lrs.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn pixel_ce_is_nonnegative(z in prop::collection::vec(-30.0f64..30.0, 3 * 4), labels in prop::collection::vec(0u8..3, 4)) {
        prop_assert!(pixel_ce_loss(&Tensor::new(&[1, 3, 2, 2], z), &labels).unwrap().value >= 0.0);
    }
}
