use nalgebra::{DMatrix, DVector};

use super::*;
use crate::linalg::sym_eigenvalues;
use crate::rng::seeded;
use crate::synthetic::{affine_generator, mlp_generator, MlpSpec};

fn fd_jacobian(net: &GeneratorNet, z: &DVector<f64>, h: f64) -> DMatrix<f64> {
    let mut jac = DMatrix::zeros(net.output_dim(), net.latent_dim());
    for j in 0..z.len() {
        let mut zp = z.clone();
        let mut zm = z.clone();
        zp[j] += h;
        zm[j] -= h;
        let col = (net.g_mean(&zp).unwrap() - net.g_mean(&zm).unwrap()) / (2.0 * h);
        jac.set_column(j, &col);
    }
    jac
}

fn zero_head(variant: CovVariant, p: usize, d: usize, eps: f64) -> CovHead {
    let raw = DVector::zeros(variant.raw_len(d));
    CovHead::constant(variant, raw, p, d, eps).unwrap()
}

#[test]
fn affine_mean_at_origin_is_bias() {
    let net = affine_generator(3, 5, 0.1, 1).unwrap();
    let Layer::Dense { b, .. } = &net.mean_network().layers()[0] else {
        unreachable!()
    };
    assert_eq!(net.g_mean(&DVector::zeros(3)).unwrap(), *b);
}

#[test]
fn identity_tanh_by_hand() {
    let mean = Network::new(
        vec![
            Layer::dense(DMatrix::identity(1, 1), DVector::zeros(1)),
            Layer::Activation(Activation::Tanh),
        ],
        1,
    )
    .unwrap();
    let net = GeneratorNet::new(mean, zero_head(CovVariant::Isotropic, 1, 1, 1e-4), None).unwrap();
    let out = net.g_mean(&DVector::from_element(1, 0.5)).unwrap();
    assert!((out[0] - 0.46211715726000974).abs() < 1e-15);
    assert_eq!(out, net.g_mean(&DVector::from_element(1, 0.5)).unwrap());
}

#[test]
fn covariance_head_variants() {
    let mean = Network::new(vec![Layer::dense(DMatrix::zeros(4, 2), DVector::zeros(4))], 2).unwrap();
    let z = DVector::from_vec(vec![0.3, -1.2]);

    let iso = GeneratorNet::new(mean.clone(), zero_head(CovVariant::Isotropic, 2, 4, 1e-4), None).unwrap();
    let g = iso.gamma(&z).unwrap().to_dense();
    let expect = DMatrix::<f64>::identity(4, 4) * (std::f64::consts::LN_2 + 1e-4);
    assert!((g - expect).amax() < 1e-15);

    let spec = MlpSpec { cov_variant: CovVariant::Diagonal, ..MlpSpec::tanh(2, 6, 4) };
    let diag = mlp_generator(&spec, 5).unwrap().gamma(&z).unwrap().to_dense();
    for i in 0..4 {
        for j in 0..4 {
            if i != j {
                assert_eq!(diag[(i, j)], 0.0);
            }
        }
    }

    let full = GeneratorNet::new(mean, zero_head(CovVariant::Full, 2, 4, 1e-3), None).unwrap();
    let g = full.gamma(&z).unwrap().to_dense();
    assert!((g - DMatrix::<f64>::identity(4, 4) * 1e-3).amax() < 1e-18);
}

#[test]
fn affine_jacobian_is_weight_matrix() {
    let net = affine_generator(3, 7, 0.1, 2).unwrap();
    let Layer::Dense { w, .. } = &net.mean_network().layers()[0] else {
        unreachable!()
    };
    assert_eq!(net.jacobian(&DVector::from_vec(vec![1.0, -2.0, 0.5])).unwrap(), *w);
}

#[test]
fn jacobian_matches_finite_differences() {
    let mut rng = seeded(11);
    for case in 0..100u64 {
        let act = [None, Some(Activation::Sigmoid), Some(Activation::Softplus)][(case % 3) as usize];
        let spec = MlpSpec {
            output_activation: act,
            input_scale: 1.5,
            ..MlpSpec::tanh(1 + (case % 4) as usize, 8, 6)
        };
        let net = mlp_generator(&spec, case).unwrap();
        let z = crate::rng::standard_normal_vec(&mut rng, spec.latent_dim);
        let exact = net.jacobian(&z).unwrap();
        let fd = fd_jacobian(&net, &z, 1e-5);
        let rel = (&exact - &fd).norm() / exact.norm();
        assert!(rel < 1e-6, "case {case}: rel {rel:e}");
    }
}

#[test]
fn saturated_tanh_has_vanishing_jacobian() {
    let w = DMatrix::from_element(3, 2, 30.0);
    let mean = Network::new(
        vec![Layer::dense(w, DVector::zeros(3)), Layer::Activation(Activation::Tanh)],
        2,
    )
    .unwrap();
    let net = GeneratorNet::new(mean, zero_head(CovVariant::Isotropic, 2, 3, 1e-4), None).unwrap();
    let jac = net.jacobian(&DVector::from_vec(vec![1.0, 1.0])).unwrap();
    assert!(jac.amax() < 1e-15);
}

#[test]
fn encoder_contract() {
    let net = affine_generator(2, 4, 0.1, 3).unwrap();
    assert!(matches!(
        net.encoder_mean(&DVector::zeros(4)),
        Err(crate::Error::Unsupported(_))
    ));

    let Layer::Dense { w, b } = net.mean_network().layers()[0].clone() else {
        unreachable!()
    };
    let pinv = w.clone().pseudo_inverse(1e-14).unwrap();
    let c = -(&pinv * &b);
    let enc = Network::new(vec![Layer::dense(pinv, c.clone())], 4).unwrap();
    let net = net.with_encoder(enc).unwrap();
    assert_eq!(net.encoder_mean(&DVector::zeros(4)).unwrap(), c);
    let z = DVector::from_vec(vec![0.7, -1.1]);
    let back = net.encoder_mean(&net.g_mean(&z).unwrap()).unwrap();
    assert!((back - z).amax() < 1e-10);
}

#[test]
fn encoder_shape_is_validated() {
    let net = affine_generator(2, 4, 0.1, 3).unwrap();
    let bad = Network::new(vec![Layer::dense(DMatrix::zeros(3, 4), DVector::zeros(3))], 4).unwrap();
    assert!(matches!(net.with_encoder(bad), Err(crate::Error::Validation(_))));
}

#[test]
fn constant_generator_draws_concentrate() {
    let eps = 1e-6;
    let m = DVector::from_vec(vec![0.2, 0.8, 0.5]);
    let net = GeneratorNet::affine(DMatrix::zeros(3, 2), m.clone(), 2.0 * eps, eps).unwrap();
    let n = 10_000;
    let mut mean = DVector::zeros(3);
    for s in 0..n {
        mean += net.sample_prior_draw(s).unwrap();
    }
    mean /= n as f64;
    let tol = 3.0 * (2.0 * eps / n as f64).sqrt() + 0.01;
    assert!((mean - m).amax() < tol);
    assert_eq!(net.sample_prior_draw(9).unwrap(), net.sample_prior_draw(9).unwrap());
}

#[test]
fn affine_push_forward_moments() {
    let gamma = 0.2;
    let net = affine_generator(2, 3, gamma, 4).unwrap();
    let Layer::Dense { w, b } = net.mean_network().layers()[0].clone() else {
        unreachable!()
    };
    let n = 100_000;
    let draws: Vec<DVector<f64>> = (0..n).map(|s| net.sample_prior_draw(s).unwrap()).collect();
    let mean = draws.iter().fold(DVector::zeros(3), |acc, x| acc + x) / n as f64;
    let mut cov = DMatrix::zeros(3, 3);
    for x in &draws {
        let r = x - &mean;
        cov += &r * r.transpose();
    }
    cov /= (n - 1) as f64;
    let expect = &w * w.transpose() + DMatrix::<f64>::identity(3, 3) * gamma;
    assert!((&mean - &b).amax() < 0.02);
    assert!((&cov - &expect).norm() / expect.norm() < 0.05);
}

#[test]
fn gamma_respects_eigenvalue_floor() {
    let mut rng = seeded(21);
    for variant in [CovVariant::Isotropic, CovVariant::Diagonal, CovVariant::Full] {
        let spec = MlpSpec {
            cov_variant: variant,
            gamma: 1e-3,
            eps_gamma: 1e-4,
            cov_scale: 4.0,
            ..MlpSpec::tanh(3, 5, 4)
        };
        let net = mlp_generator(&spec, 8).unwrap();
        for _ in 0..1000 {
            let z = crate::rng::standard_normal_vec(&mut rng, 3) * 3.0;
            let g = net.gamma(&z).unwrap();
            let lo = sym_eigenvalues(&g.to_dense())[0];
            assert!(lo >= 1e-4 * (1.0 - 1e-9), "{variant:?}: {lo:e}");
        }
    }
}

#[test]
fn log_joint_gradient_matches_finite_differences() {
    for (k, variant) in [CovVariant::Isotropic, CovVariant::Diagonal, CovVariant::Full].into_iter().enumerate() {
        let spec = MlpSpec { cov_variant: variant, cov_scale: 0.8, ..MlpSpec::tanh(3, 6, 5) };
        let net = mlp_generator(&spec, 30 + k as u64).unwrap();
        let x = DVector::from_fn(5, |i, _| 0.1 * i as f64 - 0.2);
        let z = DVector::from_vec(vec![0.4, -0.3, 0.9]);
        let analytic = net.log_joint_grad(&x, &z).unwrap();
        let fd = crate::optim::fd_gradient(|v| net.log_joint(&x, v).unwrap(), &z, 1e-6);
        let rel = (&analytic - &fd).norm() / fd.norm().max(1e-12);
        assert!(rel < 1e-5, "{variant:?}: {rel:e}");
    }
}

#[test]
fn weights_round_trip_is_exact() {
    for variant in [CovVariant::Isotropic, CovVariant::Diagonal, CovVariant::Full] {
        let spec = MlpSpec {
            cov_variant: variant,
            output_activation: Some(Activation::Sigmoid),
            ..MlpSpec::tanh(2, 5, 4)
        };
        let mut net = mlp_generator(&spec, 77).unwrap();
        let enc = Network::new(
            vec![
                Layer::dense(DMatrix::from_fn(3, 4, |i, j| (i as f64 + 1.0) / (j as f64 + 3.0)), DVector::zeros(3)),
                Layer::Activation(Activation::Softplus),
                Layer::dense(DMatrix::from_fn(2, 3, |i, j| 0.1 * (i + j) as f64 - 1.0 / 3.0), DVector::from_element(2, 0.1)),
            ],
            4,
        )
        .unwrap();
        net = net.with_encoder(enc).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.json");
        save_weights(&net, &path).unwrap();
        let back = load_weights(&path).unwrap();
        assert_eq!(back, net);
    }
}

#[test]
fn weights_shape_error_names_layer() {
    let text = r#"{"version":1,"latent_dim":2,"output_dim":3,
        "mean_layers":[{"type":"dense","rows":3,"cols":2,"W":[1,2,3,4,5,6],"b":[0,0,0]},
                       {"type":"tanh"},
                       {"type":"dense","rows":3,"cols":3,"W":[1,2,3,4,5],"b":[0,0,0]}],
        "cov_head":{"variant":"isotropic","eps_gamma":1e-4,
                    "layers":[{"type":"dense","rows":1,"cols":2,"W":[0,0],"b":[0]}]}}"#;
    match parse_weights(text) {
        Err(crate::Error::Validation(msg)) => assert!(msg.contains("mean_layers[2]"), "{msg}"),
        other => panic!("expected validation error, got {other:?}"),
    }

    let mismatch = text.replace(r#""rows":3,"cols":3,"W":[1,2,3,4,5]"#, r#""rows":3,"cols":4,"W":[1,2,3,4,5,6,7,8,9,10,11,12]"#);
    match parse_weights(&mismatch) {
        Err(crate::Error::Validation(msg)) => assert!(msg.contains("layer 2"), "{msg}"),
        other => panic!("expected validation error, got {other:?}"),
    }
}

#[test]
fn weights_unknown_activation_is_parse_error() {
    let text = r#"{"version":1,"latent_dim":1,"output_dim":1,
        "mean_layers":[{"type":"relu"}],
        "cov_head":{"variant":"isotropic","eps_gamma":1e-4,"layers":[]}}"#;
    match parse_weights(text) {
        Err(crate::Error::Parse(msg)) => assert!(msg.contains("relu"), "{msg}"),
        other => panic!("expected parse error, got {other:?}"),
    }
    let missing = r#"{"version":1,"output_dim":1,"mean_layers":[],
        "cov_head":{"variant":"isotropic","eps_gamma":1e-4,"layers":[]}}"#;
    match parse_weights(missing) {
        Err(crate::Error::Parse(msg)) => assert!(msg.contains("latent_dim"), "{msg}"),
        other => panic!("expected parse error, got {other:?}"),
    }
}
