use georope::attention::{
    attention_forward, encode_qk, gradient_check, Block, AttentionLayer, Encoder, Model, ModelConfig, Objective,
};
use georope::baseline::RopeExponent;
use georope::geo::{make_position, Geotoken};
use georope::linalg::{dot, Matrix};
use georope::spherical::{apply_blockwise, build_encoding, relative_rotation, EncodingConfig, EncodingMode, PadPolicy};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const ENCODERS: [Encoder; 4] = [
    Encoder::None,
    Encoder::Sinusoidal,
    Encoder::Rope {
        exponent: RopeExponent::OddOffset,
    },
    Encoder::Spherical {
        mode: EncodingMode::UniformAngle,
        pad: PadPolicy::RejectNonMultipleOf3,
    },
];

fn tokens(n: usize, d: usize, seed: u64) -> Vec<Geotoken> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let pos = make_position(rng.random_range(-90.0..=90.0), rng.random_range(-180.0..180.0)).unwrap();
            let f = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
            Geotoken::new(format!("t{i}"), pos, f).unwrap()
        })
        .collect()
}

fn config(encoder: Encoder) -> ModelConfig {
    ModelConfig {
        dim: 6,
        heads: 2,
        layers: 2,
        ff_width: 5,
        seed: 11,
        encoder,
    }
}

#[test]
fn projection_matches_hand_matvec() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut rand_mat = || Matrix::from_fn(6, 6, |_, _| rng.random_range(-1.0..1.0));
    let (wq, wk, wv) = (rand_mat(), rand_mat(), rand_mat());
    let layer = AttentionLayer::new(wq.clone(), wk, wv, 1, Encoder::None).unwrap();
    let x = [0.2, -0.7, 1.1, 0.0, 0.5, -0.3];
    let (q, _, _) = layer.project_qkv(&x).unwrap();
    for r in 0..6 {
        let mut acc = 0.0;
        for c in 0..6 {
            acc += wq[(r, c)] * x[c];
        }
        assert!((q[r] - acc).abs() < 1e-13);
    }
    let ident = AttentionLayer::new(Matrix::identity(6), Matrix::identity(6), Matrix::identity(6), 1, Encoder::None).unwrap();
    assert_eq!(ident.project_qkv(&x).unwrap().0, x.to_vec());
    assert_eq!(layer.project_qkv(&[0.0; 6]).unwrap().1, vec![0.0; 6]);
    assert!(layer.project_qkv(&[0.0; 5]).is_err());
}

#[test]
fn encode_qk_relative_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let enc = Encoder::spherical_uniform();
    let cfg = EncodingConfig::uniform(9).unwrap();
    for _ in 0..200 {
        let q: Vec<f64> = (0..9).map(|_| rng.random_range(-1.0..1.0)).collect();
        let k: Vec<f64> = (0..9).map(|_| rng.random_range(-1.0..1.0)).collect();
        let a = make_position(rng.random_range(-90.0..=90.0), rng.random_range(-180.0..180.0)).unwrap();
        let b = make_position(rng.random_range(-90.0..=90.0), rng.random_range(-180.0..180.0)).unwrap();
        let (qr, kr) = encode_qk(&q, &k, &a, &b, &enc).unwrap();
        let rel = relative_rotation(&build_encoding(&a, &cfg).unwrap(), &build_encoding(&b, &cfg).unwrap()).unwrap();
        assert!((dot(&qr, &kr) - dot(&q, &apply_blockwise(&rel, &k).unwrap())).abs() < 1e-10);
        let (qs, ks) = encode_qk(&q, &k, &a, &a, &enc).unwrap();
        assert!((dot(&qs, &ks) - dot(&q, &k)).abs() < 1e-10);
        let (qn, kn) = encode_qk(&q, &k, &a, &b, &Encoder::None).unwrap();
        assert_eq!((qn, kn), (q, k));
    }
    assert!(encode_qk(&[0.0; 4], &[0.0; 4], &make_position(0.0, 0.0).unwrap(), &make_position(0.0, 0.0).unwrap(), &enc).is_err());
}

#[test]
fn softmax_hand_values() {
    let pos = make_position(0.0, 0.0).unwrap();
    // W_q = W_k = I on d=1 gives logit x_i·x_j
    let layer = AttentionLayer::new(Matrix::identity(1), Matrix::identity(1), Matrix::identity(1), 1, Encoder::None).unwrap();
    let single = vec![Geotoken::new("a", pos, vec![0.7]).unwrap()];
    assert_eq!(attention_forward(&layer, &single).unwrap().weights[0][(0, 0)], 1.0);

    let two = vec![
        Geotoken::new("a", pos, vec![1.0]).unwrap(),
        Geotoken::new("b", pos, vec![3f64.ln()]).unwrap(),
    ];
    let w = &attention_forward(&layer, &two).unwrap().weights[0];
    // row 0 logits are 1·1 and 1·ln 3
    let (l0, l1) = (1.0, 3f64.ln());
    let e = (l1 - l0).exp();
    assert!((w[(0, 0)] - 1.0 / (1.0 + e)).abs() < 1e-12);

    let flat = AttentionLayer::new(Matrix::zeros(1, 1), Matrix::identity(1), Matrix::identity(1), 1, Encoder::None).unwrap();
    let w = &attention_forward(&flat, &two).unwrap().weights[0];
    assert_eq!((w[(0, 0)], w[(0, 1)]), (0.5, 0.5));

    let gap = vec![
        Geotoken::new("a", pos, vec![1.0]).unwrap(),
        Geotoken::new("b", pos, vec![1.0 + 3f64.ln()]).unwrap(),
    ];
    // q0 = 1: logits 1 and 1 + ln 3
    let w = &attention_forward(&layer, &gap).unwrap().weights[0];
    assert!((w[(0, 0)] - 0.25).abs() < 1e-12 && (w[(0, 1)] - 0.75).abs() < 1e-12);
    assert!(attention_forward(&layer, &[]).is_err());
}

#[test]
fn rows_are_distributions_and_permutation_equivariant() {
    let toks = tokens(7, 6, 3);
    let perm = [3usize, 0, 6, 2, 5, 1, 4];
    let shuffled: Vec<Geotoken> = perm.iter().map(|&i| toks[i].clone()).collect();
    for encoder in ENCODERS {
        let model = Model::new(config(encoder)).unwrap();
        let pass = model.forward(&toks, None).unwrap();
        for w in &pass.last_attention().weights {
            for r in 0..7 {
                let row: Vec<f64> = (0..7).map(|c| w[(r, c)]).collect();
                assert!(row.iter().all(|&x| x >= 0.0));
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
        let moved = model.forward(&shuffled, None).unwrap();
        for (new_i, &old_i) in perm.iter().enumerate() {
            for c in 0..6 {
                assert!((moved.output[new_i][c] - pass.output[old_i][c]).abs() < 1e-12, "{}", encoder.name());
            }
        }
    }
}

#[test]
fn encoders_add_no_parameters() {
    let counts: Vec<usize> = ENCODERS.iter().map(|&e| Model::new(config(e)).unwrap().parameter_count()).collect();
    assert!(counts.windows(2).all(|w| w[0] == w[1]));
}

#[test]
fn gradients_match_finite_differences() {
    let toks = tokens(4, 6, 5);
    let targets: Vec<Vec<f64>> = tokens(4, 6, 6).iter().map(|t| t.features().to_vec()).collect();
    let dist = [0.0, 0.6, 0.3, 0.1];
    for encoder in ENCODERS {
        let model = Model::new(config(encoder)).unwrap();
        let names: Vec<String> = model.tensors().into_iter().map(|(n, _)| n).collect();
        for (mask, obj) in [
            (None, Objective::Mse { targets: &targets }),
            (Some(0), Objective::AnchorCrossEntropy { anchor: 0, target: &dist }),
        ] {
            let report = gradient_check(&model, &toks, mask, &obj, 1e-5).unwrap();
            let covered: Vec<&str> = report.tensors.iter().map(|t| t.name.as_str()).collect();
            assert_eq!(covered, names.iter().map(String::as_str).collect::<Vec<_>>());
            assert!(report.max_rel_error() < 1e-4, "{} {:?}", encoder.name(), report);
        }
    }
}

#[test]
fn zero_weights_give_zero_gradient_at_zero_targets() {
    let cfg = ModelConfig {
        ff_width: 0,
        layers: 1,
        ..config(Encoder::spherical_uniform())
    };
    let model = Model::new(cfg).unwrap();
    let mut blocks = model.blocks().to_vec();
    for b in &mut blocks {
        let d = b.attention().dim();
        *b = Block::attention_only(
            AttentionLayer::new(Matrix::zeros(d, d), Matrix::zeros(d, d), Matrix::zeros(d, d), 2, cfg.encoder).unwrap(),
        );
    }
    let zeroed = Model::from_parts(cfg, blocks).unwrap();
    let toks: Vec<Geotoken> = tokens(4, 6, 8)
        .into_iter()
        .map(|t| Geotoken::new(t.id(), *t.position(), vec![0.0; 6]).unwrap())
        .collect();
    let targets = vec![vec![0.0; 6]; 4];
    let pass = zeroed.forward(&toks, None).unwrap();
    let (loss, grads) = zeroed.backward(&pass, &Objective::Mse { targets: &targets }).unwrap();
    assert_eq!(loss, 0.0);
    assert!(grads.iter().flatten().all(|&g| g == 0.0));
}
