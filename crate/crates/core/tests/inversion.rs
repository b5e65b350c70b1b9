//! Tied layers and the mirrored stack: round trips, shared storage and
//! parameter accounting.

use invauto_core::init::{normal, rng_for};
use invauto_core::layers::{
    build_inverted_stack, inv_leaky_relu, inv_leaky_relu_inverse, parameter_count, untied_parameter_count, Init,
    Layer, LayerSpec, Network, Role, StackSpec,
};
use invauto_core::linearize::LinearizedMap;
use invauto_core::{Error, ParamStore, Tensor};
use proptest::prelude::*;

fn spec(input: &[usize], layers: Vec<LayerSpec>) -> StackSpec {
    StackSpec {
        input: input.to_vec(),
        layers,
    }
}

fn tied(spec: &StackSpec, store: &mut ParamStore<f64>, seed: u64) -> Network {
    build_inverted_stack(spec, store, "m", Init::Normal(0.5), &mut rng_for(seed, 0)).unwrap()
}

fn set(store: &mut ParamStore<f64>, name: &str, shape: &[usize], data: Vec<f64>) {
    let id = store.find(name).unwrap_or_else(|| panic!("no {name}"));
    store.set_value(id, Tensor::new(shape, data).unwrap()).unwrap();
}

fn round_trip(net: &Network, store: &ParamStore<f64>, x: &Tensor<f64>) -> Tensor<f64> {
    let z = net.encoder.apply(store, x).unwrap();
    net.decoder.apply(store, &z).unwrap()
}

/// Rows of a random matrix orthonormalized by modified Gram-Schmidt.
fn orthogonal(n: usize, seed: u64) -> Vec<f64> {
    let a: Tensor<f64> = normal(&[n, n], 1.0, &mut rng_for(seed, 21));
    let mut q: Vec<Vec<f64>> = Vec::new();
    for i in 0..n {
        let mut v: Vec<f64> = a.data()[i * n..(i + 1) * n].to_vec();
        for u in &q {
            let d: f64 = v.iter().zip(u).map(|(x, y)| x * y).sum();
            v.iter_mut().zip(u).for_each(|(x, y)| *x -= d * y);
        }
        let nrm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        q.push(v.into_iter().map(|x| x / nrm).collect());
    }
    q.concat()
}

#[test]
fn activation_examples() {
    let x = Tensor::new(&[3], vec![4.0f64, -1.0, 0.0]).unwrap();
    let y = inv_leaky_relu(&x, 2.0).unwrap();
    assert_eq!(y.data(), &[2.0, -2.0, 0.0]);
    assert_eq!(inv_leaky_relu_inverse(&y, 2.0).unwrap(), x);
    assert_eq!(inv_leaky_relu_inverse(&Tensor::scalar(0.0f64), 2.0).unwrap().item().unwrap(), 0.0);
    for bad in [0.0, -1.0] {
        assert!(matches!(inv_leaky_relu(&x, bad), Err(Error::Parameter(_))));
        assert!(matches!(inv_leaky_relu_inverse(&x, bad), Err(Error::Parameter(_))));
    }
}

proptest! {
    /// Exactness holds whenever multiplying and dividing by alpha is exact,
    /// i.e. for powers of two away from the subnormal range.
    #[test]
    fn activation_round_trip_is_exact(xs in prop::collection::vec(-1e6f64..1e6, 1..200), e in -4i32..=4) {
        let alpha = 2f64.powi(e);
        let x = Tensor::new(&[xs.len()], xs).unwrap();
        let back = inv_leaky_relu_inverse(&inv_leaky_relu(&x, alpha).unwrap(), alpha).unwrap();
        prop_assert_eq!(back, x);
    }

    #[test]
    fn activation_round_trip_f32(xs in prop::collection::vec(-1e6f32..1e6, 1..200), e in -4i32..=4) {
        let alpha = 2f32.powi(e);
        let x = Tensor::new(&[xs.len()], xs).unwrap();
        let back = inv_leaky_relu_inverse(&inv_leaky_relu(&x, alpha).unwrap(), alpha).unwrap();
        prop_assert_eq!(back, x);
    }

    /// Round trip within relative rounding for arbitrary positive alpha.
    #[test]
    fn activation_round_trip_any_alpha(x in -1e3f64..1e3, alpha in 0.01f64..100.0) {
        let t = Tensor::scalar(x);
        let back = inv_leaky_relu_inverse(&inv_leaky_relu(&t, alpha).unwrap(), alpha).unwrap().item().unwrap();
        prop_assert!((back - x).abs() <= 4.0 * f64::EPSILON * x.abs());
    }
}

#[test]
fn linear_identity_and_rotation() {
    let s = spec(&[2], vec![LayerSpec::Linear { out: 2 }]);
    let mut store = ParamStore::new();
    let net = tied(&s, &mut store, 0);
    set(&mut store, "m.0.weight", &[2, 2], vec![1.0, 0.0, 0.0, 1.0]);
    let x = Tensor::new(&[1, 2], vec![0.3, -0.7]).unwrap();
    assert_eq!(net.encoder.apply(&store, &x).unwrap(), x);
    assert_eq!(net.decoder.apply(&store, &x).unwrap(), x);

    let (s30, c30) = (30f64.to_radians().sin(), 30f64.to_radians().cos());
    set(&mut store, "m.0.weight", &[2, 2], vec![c30, -s30, s30, c30]);
    let r = round_trip(&net, &store, &x);
    assert!(r.max_abs_diff(&x).unwrap() < 1e-6);
}

#[test]
fn linear_inverse_is_the_transpose_product() {
    let s = spec(&[3], vec![LayerSpec::Linear { out: 4 }]);
    let mut store = ParamStore::new();
    let net = tied(&s, &mut store, 1);
    let w = store.value(store.find("m.0.weight").unwrap()).clone();
    assert_eq!(w.shape(), &[4, 3]);
    let y: Tensor<f64> = normal(&[1, 4], 1.0, &mut rng_for(1, 1));
    let got = net.decoder.apply(&store, &y).unwrap();
    let want = w.transpose().unwrap().matmul(&y.transpose().unwrap()).unwrap().transpose().unwrap();
    assert_eq!(got, want);
}

#[test]
fn bias_examples() {
    let s = spec(&[2], vec![LayerSpec::Bias]);
    let mut store = ParamStore::new();
    let net = tied(&s, &mut store, 0);
    let zero = Tensor::new(&[1, 2], vec![0.0, 0.0]).unwrap();
    let x = Tensor::new(&[1, 2], vec![0.25, 8.0]).unwrap();
    assert_eq!(net.encoder.apply(&store, &x).unwrap(), x);
    assert_eq!(net.decoder.apply(&store, &x).unwrap(), x);
    set(&mut store, "m.0.bias", &[2], vec![1.0, -1.0]);
    let y = net.encoder.apply(&store, &zero).unwrap();
    assert_eq!(y.data(), &[1.0, -1.0]);
    assert_eq!(net.decoder.apply(&store, &y).unwrap(), zero);
}

proptest! {
    #[test]
    fn bias_round_trip_is_exact(b in prop::collection::vec(-1e3f64..1e3, 3), x in prop::collection::vec(-1e3f64..1e3, 6)) {
        // On a 1/1024 grid below 2^10, adding and subtracting is exact.
        let q = |v: f64| (v * 1024.0).round() / 1024.0;
        let s = spec(&[3], vec![LayerSpec::Bias]);
        let mut store = ParamStore::new();
        let net = tied(&s, &mut store, 0);
        set(&mut store, "m.0.bias", &[3], b.into_iter().map(q).collect());
        let x = Tensor::new(&[2, 3], x.into_iter().map(q).collect()).unwrap();
        prop_assert_eq!(round_trip(&net, &store, &x), x);
    }
}

#[test]
fn residual_block_with_zero_kernels_is_the_activation() {
    let s = spec(&[2, 3, 3], vec![LayerSpec::InvRes { k: 3, alpha: 2.0 }]);
    let mut store = ParamStore::new();
    let net = build_inverted_stack(&s, &mut store, "m", Init::Zeros, &mut rng_for(0, 0)).unwrap();
    let x: Tensor<f64> = normal(&[2, 2, 3, 3], 1.0, &mut rng_for(3, 3));
    let y = net.encoder.apply(&store, &x).unwrap();
    assert_eq!(y, inv_leaky_relu(&x, 2.0).unwrap());
    assert_eq!(round_trip(&net, &store, &x), x);
}

#[test]
fn residual_block_scalar_orthonormal() {
    let s = spec(&[1, 4, 4], vec![LayerSpec::InvRes { k: 1, alpha: 2.0 }]);
    let mut store = ParamStore::new();
    let net = tied(&s, &mut store, 0);
    set(&mut store, "m.0.k1", &[1, 1, 1, 1], vec![1.0]);
    set(&mut store, "m.0.k2", &[1, 1, 1, 1], vec![-2.0]);
    let x: Tensor<f64> = normal(&[3, 1, 4, 4], 1.0, &mut rng_for(4, 4));
    // Linear part is 1 + (-2)(1) = -1.
    let y = net.encoder.apply(&store, &x).unwrap();
    assert_eq!(y, inv_leaky_relu(&x.map(|v| -v), 2.0).unwrap());
    assert!(round_trip(&net, &store, &x).max_abs_diff(&x).unwrap() < 1e-6);
}

#[test]
fn residual_block_materializations_are_transposes() {
    for seed in 0..5 {
        let s = spec(&[2, 5, 4], vec![LayerSpec::InvRes { k: 3, alpha: 2.0 }]);
        let mut store = ParamStore::new();
        let net = tied(&s, &mut store, seed);
        let m = LinearizedMap::of_network(&net, &store).unwrap();
        assert!(m.tying_error().unwrap() < 1e-5);
        assert_eq!(m.tying_error().unwrap(), 0.0);
    }
}

#[test]
fn residual_block_rejects_even_kernels() {
    let s = spec(&[1, 4, 4], vec![LayerSpec::InvRes { k: 2, alpha: 2.0 }]);
    let mut store = ParamStore::<f64>::new();
    let r = build_inverted_stack(&s, &mut store, "m", Init::LeCun, &mut rng_for(0, 0));
    assert!(matches!(r, Err(Error::Dimension(_))));
}

#[test]
fn mirrored_stack_layout() {
    let s = spec(&[3], vec![LayerSpec::Linear { out: 3 }, LayerSpec::Bias, LayerSpec::InvAct { alpha: 2.0 }]);
    let mut store = ParamStore::<f64>::new();
    let net = tied(&s, &mut store, 0);
    let kinds: Vec<_> = net.decoder.layers.iter().map(|l| (l.kind(), l.role())).collect();
    assert_eq!(
        kinds,
        [("inv-act", Role::Inverse), ("bias", Role::Inverse), ("linear", Role::Inverse)]
    );
    let enc_ids = net.encoder.param_ids();
    let mut dec_ids = net.decoder.param_ids();
    dec_ids.reverse();
    assert_eq!(enc_ids, dec_ids);
    assert_eq!(parameter_count(&net, &store), 12);

    let empty = tied(&spec(&[3], vec![]), &mut ParamStore::new(), 0);
    assert!(empty.encoder.is_empty() && empty.decoder.is_empty());
}

#[test]
fn non_invertible_layer_is_a_construction_error() {
    for l in [LayerSpec::LeakyRelu { slope: 0.2 }, LayerSpec::Tanh, LayerSpec::LinearT { out: 2 }] {
        let s = spec(&[2], vec![LayerSpec::Linear { out: 2 }, l]);
        let r = build_inverted_stack(&s, &mut ParamStore::<f64>::new(), "m", Init::LeCun, &mut rng_for(0, 0));
        assert!(matches!(r, Err(Error::Construction(_))));
    }
    let l = Layer::Tanh;
    assert!(matches!(l.inverse(), Err(Error::Construction(_))));
}

#[test]
fn writing_a_weight_changes_both_directions() {
    let s = spec(&[4], vec![LayerSpec::Linear { out: 4 }]);
    let mut store = ParamStore::new();
    let net = tied(&s, &mut store, 2);
    let x: Tensor<f64> = normal(&[2, 4], 1.0, &mut rng_for(2, 2));
    let (e0, d0) = (net.encoder.apply(&store, &x).unwrap(), net.decoder.apply(&store, &x).unwrap());
    let id = store.find("m.0.weight").unwrap();
    let doubled = store.value(id).map(|v| 2.0 * v);
    store.set_value(id, doubled).unwrap();
    let (e1, d1) = (net.encoder.apply(&store, &x).unwrap(), net.decoder.apply(&store, &x).unwrap());
    assert_eq!(e1, e0.map(|v| 2.0 * v));
    assert_eq!(d1, d0.map(|v| 2.0 * v));
}

#[test]
fn parameter_count_examples() {
    let s = spec(&[4], vec![LayerSpec::Linear { out: 4 }, LayerSpec::Bias]);
    let mut store = ParamStore::<f64>::new();
    let net = tied(&s, &mut store, 0);
    assert_eq!(parameter_count(&net, &store), 20);
    assert_eq!(untied_parameter_count(&net, &store), 36);
}

fn symmetric_spec() -> impl Strategy<Value = StackSpec> {
    let layer = prop_oneof![
        (1usize..6).prop_map(|c| LayerSpec::Conv { c_out: c, k: 3, stride: 1, pad: 1 }),
        (1usize..6).prop_map(|c| LayerSpec::Conv { c_out: c, k: 3, stride: 2, pad: 1 }),
        Just(LayerSpec::InvRes { k: 3, alpha: 2.0 }),
        Just(LayerSpec::InvAct { alpha: 2.0 }),
    ];
    (1usize..4, prop::collection::vec(layer, 0..4)).prop_map(|(c, layers)| spec(&[c, 8, 8], layers))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn tied_count_is_half_without_biases(s in symmetric_spec()) {
        let mut store = ParamStore::<f64>::new();
        let net = tied(&s, &mut store, 0);
        let (t, u) = (parameter_count(&net, &store), untied_parameter_count(&net, &store));
        prop_assert_eq!(2 * t, u);
        prop_assert_eq!(t, u.div_ceil(2));
        if t > 0 {
            prop_assert!(t < u);
        }
    }

    /// With rows orthonormal to within `delta`, the mirrored stack inverts
    /// the encoder to within a multiple of `delta`, biases and activations
    /// notwithstanding.
    #[test]
    fn near_orthonormal_stack_inverts(
        n in 2usize..7,
        depth in 1usize..4,
        seed in any::<u64>(),
        alpha in 0.5f64..2.0,
        noise in prop::sample::select(vec![0.0, 1e-9, 1e-6, 1e-4]),
    ) {
        let mut layers = Vec::new();
        for _ in 0..depth {
            layers.extend([LayerSpec::Linear { out: n }, LayerSpec::Bias, LayerSpec::InvAct { alpha }]);
        }
        let s = spec(&[n], layers);
        let mut store = ParamStore::new();
        let net = tied(&s, &mut store, seed);
        let rng = &mut rng_for(seed, 77);
        let mut delta = 0.0f64;
        let mut bias_max = 0.0f64;
        for i in 0..depth {
            let p: Tensor<f64> = normal(&[n, n], noise, rng);
            let w = Tensor::new(&[n, n], orthogonal(n, seed ^ i as u64)).unwrap().zip_map(&p, |a, b| a + b).unwrap();
            let wtw = w.transpose().unwrap().matmul(&w).unwrap();
            delta = delta.max(wtw.max_abs_diff(&Tensor::eye(n)).unwrap());
            let b: Tensor<f64> = normal(&[n], 1.0, rng);
            bias_max = bias_max.max(b.max_abs());
            store.set_value(store.find(&format!("m.{}.weight", 3 * i)).unwrap(), w).unwrap();
            store.set_value(store.find(&format!("m.{}.bias", 3 * i + 1)).unwrap(), b).unwrap();
        }
        let x: Tensor<f64> = normal(&[4, n], 1.0, rng);
        let err = round_trip(&net, &store, &x).max_abs_diff(&x).unwrap();
        let lip = (alpha.max(1.0 / alpha)).powi(2 * depth as i32);
        let bound = 10.0 * n as f64 * lip * (delta + 1e-15) * (x.max_abs() + bias_max + 1.0);
        prop_assert!(err <= bound, "err {err} bound {bound} delta {delta}");
    }
}
