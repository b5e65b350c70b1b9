//! Gradients through shared storage, losses, Adam, and the two training
//! loops.

use invauto_core::data::{make_synthetic_domains, Dataset, Normalization, Split, SyntheticKind};
use invauto_core::init::{normal, rng_for};
use invauto_core::layers::{build_inverted_stack, build_stack, Init, LayerSpec, Network, StackSpec};
use invauto_core::linearize::LinearizedMap;
use invauto_core::losses::{
    adversarial_loss, auto_loss, cycle_loss, cycle_pair_loss, discriminator_loss, kl_divergence, total_loss, GenLoss,
};
use invauto_core::models::{ModelKind, ReconArch};
use invauto_core::optim::{Adam, AdamConfig};
use invauto_core::train::{train_reconstruction, GanConfig, GanSession, ReconConfig, ReconSession};
use invauto_core::translator::TranslatorConfig;
use invauto_core::{ParamStore, Tape, Tensor, Var};
use proptest::prelude::*;

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * b.abs().max(1.0)
}

fn scalar(tape: &Tape<f64>, v: Var) -> f64 {
    tape.value(v).item().unwrap()
}

fn values(store: &ParamStore<f64>) -> Vec<Tensor<f64>> {
    store.ids().map(|id| store.value(id).clone()).collect()
}

fn identity(_: &mut Tape<f64>, v: Var) -> invauto_core::Result<Var> {
    Ok(v)
}

// ---- reverse mode ----

#[test]
fn tied_weight_gradient_is_the_sum_over_sites() {
    let rng = &mut rng_for(1, 1);
    let mut store = ParamStore::<f64>::new();
    let w0: Tensor<f64> = normal(&[3, 4], 1.0, rng);
    let id = store.add("w", w0.clone()).unwrap();
    let x: Tensor<f64> = normal(&[4, 1], 1.0, rng);
    let y: Tensor<f64> = normal(&[3, 1], 1.0, rng);

    // loss = |W x|^2 + |W^T y|^2, with `mask` replacing a site by a constant.
    let grad_with = |mask: [bool; 2]| {
        let mut tape = Tape::new();
        let wp = tape.param(&store, id);
        let wc = tape.leaf(w0.clone());
        let (w1, w2) = (if mask[0] { wc } else { wp }, if mask[1] { wc } else { wp });
        let xv = tape.leaf(x.clone());
        let yv = tape.leaf(y.clone());
        let a = tape.matmul(w1, false, xv, false).unwrap();
        let b = tape.matmul(w2, true, yv, false).unwrap();
        let a2 = tape.mul(a, a).unwrap();
        let b2 = tape.mul(b, b).unwrap();
        let (sa, sb) = (tape.sum(a2), tape.sum(b2));
        let l = tape.add(sa, sb).unwrap();
        let g1 = tape.grads(l).unwrap().param(id).cloned();
        let g2 = tape.grads(l).unwrap().param(id).cloned();
        assert_eq!(g1, g2, "replaying the tape must be deterministic");
        g1
    };
    let both = grad_with([false, false]).unwrap();
    // Closed form: 2 W x x^T + 2 y y^T W.
    let wx = w0.matmul(&x).unwrap();
    let yyw = y.matmul(&y.transpose().unwrap()).unwrap().matmul(&w0).unwrap();
    let want = wx.matmul(&x.transpose().unwrap()).unwrap().zip_map(&yyw, |a, b| 2.0 * a + 2.0 * b).unwrap();
    assert!(both.max_abs_diff(&want).unwrap() < 1e-12);

    let first = grad_with([false, true]).unwrap();
    let second = grad_with([true, false]).unwrap();
    let summed = first.zip_map(&second, |a, b| a + b).unwrap();
    assert!(both.max_abs_diff(&summed).unwrap() < 1e-12);
    assert!(grad_with([true, true]).is_none());
}

#[test]
fn tied_stack_gradient_accumulates_in_one_slot() {
    let spec = StackSpec {
        input: vec![3],
        layers: vec![LayerSpec::Linear { out: 3 }],
    };
    let mut store = ParamStore::<f64>::new();
    let net = build_inverted_stack(&spec, &mut store, "m", Init::Normal(1.0), &mut rng_for(0, 0)).unwrap();
    assert_eq!(store.len(), 1);
    let x: Tensor<f64> = normal(&[2, 3], 1.0, &mut rng_for(0, 1));
    let mut tape = Tape::new();
    let xv = tape.leaf(x);
    let l = auto_loss(&mut tape, &store, &net, xv).unwrap();
    tape.backward(l, &mut store).unwrap();
    let g = store.grad(store.find("m.0.weight").unwrap()).unwrap().clone();
    assert_eq!(g.shape(), &[3, 3]);
    assert!(g.max_abs() > 0.0);
}

// ---- losses ----

fn untied_linear(n: usize, store: &mut ParamStore<f64>, init: Init) -> Network {
    let spec = StackSpec {
        input: vec![n],
        layers: vec![LayerSpec::Linear { out: n }],
    };
    let rng = &mut rng_for(5, 5);
    Network {
        encoder: build_stack(&spec, store, "e", init, rng).unwrap(),
        decoder: build_stack(&spec, store, "d", init, rng).unwrap(),
    }
}

#[test]
fn auto_loss_examples() {
    let mut store = ParamStore::<f64>::new();
    let net = untied_linear(2, &mut store, Init::Zeros);
    for name in ["e.0.weight", "d.0.weight"] {
        store.set_value(store.find(name).unwrap(), Tensor::eye(2)).unwrap();
    }
    let x = Tensor::new(&[2, 2], vec![0.6, 0.8, 1.0, 0.0]).unwrap();
    let mut tape = Tape::new();
    let xv = tape.leaf(x.clone());
    let l = auto_loss(&mut tape, &store, &net, xv).unwrap();
    assert_eq!(scalar(&tape, l), 0.0);

    store.set_value(store.find("d.0.weight").unwrap(), Tensor::zeros(&[2, 2])).unwrap();
    let mut tape = Tape::new();
    let xv = tape.leaf(x.clone());
    let l = auto_loss(&mut tape, &store, &net, xv).unwrap();
    let mean_sq = x.data().iter().map(|v| v * v).sum::<f64>() / 4.0;
    assert!(close(scalar(&tape, l), mean_sq, 1e-15));

    // Hand-computed: W_e = [[1,2],[0,1]], W_d = [[1,0],[0,0.5]], x = [1, -1].
    store.set_value(store.find("e.0.weight").unwrap(), Tensor::new(&[2, 2], vec![1.0, 2.0, 0.0, 1.0]).unwrap()).unwrap();
    store.set_value(store.find("d.0.weight").unwrap(), Tensor::new(&[2, 2], vec![1.0, 0.0, 0.0, 0.5]).unwrap()).unwrap();
    let mut tape = Tape::new();
    let xv = tape.leaf(Tensor::new(&[1, 2], vec![1.0, -1.0]).unwrap());
    let l = auto_loss(&mut tape, &store, &net, xv).unwrap();
    // z = [-1, -1], r = [-1, -0.5], err = [-2, 0.5] -> (4 + 0.25) / 2.
    assert!(close(scalar(&tape, l), 2.125, 1e-15));
}

#[test]
fn cycle_pair_loss_examples() {
    let rng = &mut rng_for(2, 2);
    let xa: Tensor<f64> = normal(&[3, 2], 1.0, rng);
    let xb: Tensor<f64> = normal(&[3, 2], 1.0, rng);
    let mut tape = Tape::new();
    let (a, b) = (tape.leaf(xa.clone()), tape.leaf(xb.clone()));
    let l = cycle_pair_loss(&mut tape, identity, identity, a, b).unwrap();
    assert_eq!(scalar(&tape, l), 0.0);

    let c = 0.75;
    let plus = |t: &mut Tape<f64>, v: Var| Ok(t.add_scalar(v, c));
    let minus = |t: &mut Tape<f64>, v: Var| Ok(t.add_scalar(v, -c));
    let l = cycle_pair_loss(&mut tape, plus, minus, a, b).unwrap();
    assert!(scalar(&tape, l).abs() < 1e-30);

    // Linear maps P, Q: mse(PQ xb, xb) + mse(QP xa, xa), per element.
    let p: Tensor<f64> = normal(&[2, 2], 1.0, rng);
    let q: Tensor<f64> = normal(&[2, 2], 1.0, rng);
    let (pv, qv) = (tape.leaf(p.clone()), tape.leaf(q.clone()));
    let fp = |t: &mut Tape<f64>, v: Var| t.matmul(v, false, pv, true);
    let fq = |t: &mut Tape<f64>, v: Var| t.matmul(v, false, qv, true);
    let l = cycle_pair_loss(&mut tape, fp, fq, a, b).unwrap();
    let pq = p.matmul(&q).unwrap();
    let qp = q.matmul(&p).unwrap();
    let err = |m: &Tensor<f64>, x: &Tensor<f64>| {
        let r = x.matmul(&m.transpose().unwrap()).unwrap();
        r.data().iter().zip(x.data()).map(|(u, v)| (u - v) * (u - v)).sum::<f64>() / x.len() as f64
    };
    assert!(close(scalar(&tape, l), err(&pq, &xb) + err(&qp, &xa), 1e-12));
}

#[test]
fn kl_examples() {
    let mut tape = Tape::new();
    let z = tape.leaf(Tensor::<f64>::zeros(&[2, 3]));
    let k = kl_divergence(&mut tape, z, z).unwrap();
    assert_eq!(scalar(&tape, k), 0.0);
    let one = tape.leaf(Tensor::full(&[1, 1], 1.0));
    let zero = tape.leaf(Tensor::zeros(&[1, 1]));
    let k = kl_divergence(&mut tape, one, zero).unwrap();
    assert!(close(scalar(&tape, k), 0.5, 1e-15));

    let rng = &mut rng_for(3, 3);
    let mu: Tensor<f64> = normal(&[4, 3], 1.0, rng);
    let lv: Tensor<f64> = normal(&[4, 3], 0.5, rng);
    let (m, l) = (tape.leaf(mu.clone()), tape.leaf(lv.clone()));
    let k = kl_divergence(&mut tape, m, l).unwrap();
    let want: f64 = mu
        .data()
        .iter()
        .zip(lv.data())
        .map(|(m, l)| 0.5 * (m * m + l.exp() - l - 1.0))
        .sum::<f64>()
        / 4.0;
    assert!(close(scalar(&tape, k), want, 1e-12));
}

#[test]
fn adversarial_examples() {
    let mut tape = Tape::new();
    let half = tape.leaf(Tensor::full(&[4, 1], 0.5f64));
    let (d, g) = adversarial_loss(&mut tape, half, half, GenLoss::NonSaturating).unwrap();
    assert!((scalar(&tape, d) - 1.3863).abs() < 1e-4);
    assert!(close(scalar(&tape, g), 2f64.ln(), 1e-12));

    let real = tape.leaf(Tensor::full(&[2], 1.0 - 1e-9));
    let fake = tape.leaf(Tensor::full(&[2], 1e-9));
    let d = discriminator_loss(&mut tape, real, fake).unwrap();
    assert!(scalar(&tape, d) < 1e-6);

    // Random logits against a summation oracle; probabilities are clamped
    // to [1e-7, 1 - 1e-7] before the logarithm.
    let rng = &mut rng_for(4, 4);
    let lr: Tensor<f64> = normal(&[6], 3.0, rng);
    let lf: Tensor<f64> = normal(&[6], 3.0, rng);
    let (a, b) = (tape.leaf(lr.clone()), tape.leaf(lf.clone()));
    let (pr, pf) = (tape.sigmoid(a), tape.sigmoid(b));
    let (d, g) = adversarial_loss(&mut tape, pr, pf, GenLoss::Minimax).unwrap();
    let sig = |v: f64| (1.0 / (1.0 + (-v).exp())).clamp(1e-7, 1.0 - 1e-7);
    let er: f64 = lr.data().iter().map(|&v| sig(v).ln()).sum::<f64>() / 6.0;
    let ef: f64 = lf.data().iter().map(|&v| (1.0 - sig(v)).ln()).sum::<f64>() / 6.0;
    assert!(close(scalar(&tape, d), -(er + ef), 1e-12));
    assert!(close(scalar(&tape, g), ef, 1e-12));
}

#[test]
fn cycle_loss_examples() {
    let rng = &mut rng_for(6, 6);
    let xa: Tensor<f64> = normal(&[2, 3], 1.0, rng);
    let xb: Tensor<f64> = normal(&[2, 3], 1.0, rng);
    let mut tape = Tape::new();
    let (a, b) = (tape.leaf(xa.clone()), tape.leaf(xb.clone()));
    let l = cycle_loss(&mut tape, identity, identity, a, b).unwrap();
    assert_eq!(scalar(&tape, l), 0.0);
    let l = cycle_loss(
        &mut tape,
        |t: &mut Tape<f64>, v| Ok(t.add_scalar(v, -0.5)),
        |t: &mut Tape<f64>, v| Ok(t.add_scalar(v, 0.5)),
        a,
        b,
    )
    .unwrap();
    assert!(scalar(&tape, l).abs() < 1e-15);

    // Gen_A doubles, Gen_B negates: round trips are -2x.
    let l = cycle_loss(
        &mut tape,
        |t: &mut Tape<f64>, v| Ok(t.scale(v, 2.0)),
        |t: &mut Tape<f64>, v| Ok(t.scale(v, -1.0)),
        a,
        b,
    )
    .unwrap();
    let oracle = |x: &Tensor<f64>| x.data().iter().map(|v| (-2.0 * v - v).abs()).sum::<f64>() / x.len() as f64;
    assert!(close(scalar(&tape, l), oracle(&xa) + oracle(&xb), 1e-12));
}

#[test]
fn total_loss_examples() {
    let mut tape = Tape::<f64>::new();
    let cyc = tape.leaf(Tensor::scalar(0.3));
    let (g1, g2) = (tape.leaf(Tensor::scalar(0.7)), tape.leaf(Tensor::scalar(1.1)));
    let t = total_loss(&mut tape, cyc, &[g1, g2], 0.0).unwrap();
    assert!(close(scalar(&tape, t), 1.8, 1e-15));
    let zero = tape.leaf(Tensor::scalar(0.0));
    let t = total_loss(&mut tape, zero, &[zero, zero], 10.0).unwrap();
    assert_eq!(scalar(&tape, t), 0.0);
    let t = total_loss(&mut tape, cyc, &[g1, g2], 10.0).unwrap();
    assert!(close(scalar(&tape, t), 10.0 * 0.3 + 0.7 + 1.1, 1e-15));
}

proptest! {
    #[test]
    fn total_loss_is_monotone_in_lambda(cyc in 1e-6f64..10.0, adv in prop::collection::vec(-5f64..5.0, 0..3), l1 in 0f64..100.0, dl in 0f64..100.0) {
        let mut tape = Tape::<f64>::new();
        let c = tape.leaf(Tensor::scalar(cyc));
        let a: Vec<Var> = adv.iter().map(|&v| tape.leaf(Tensor::scalar(v))).collect();
        let lo = total_loss(&mut tape, c, &a, l1).unwrap();
        let hi = total_loss(&mut tape, c, &a, l1 + dl).unwrap();
        prop_assert!(scalar(&tape, hi) >= scalar(&tape, lo));
    }
}

// ---- Adam ----

fn one_param(v: Vec<f64>) -> (ParamStore<f64>, invauto_core::ParamId) {
    let mut s = ParamStore::new();
    let n = v.len();
    let id = s.add("p", Tensor::new(&[n], v).unwrap()).unwrap();
    (s, id)
}

#[test]
fn adam_first_step_moves_by_lr() {
    let (mut s, id) = one_param(vec![1.0, -2.0]);
    let cfg = AdamConfig {
        lr: 0.01,
        beta1: 0.9,
        beta2: 0.999,
        eps: 1e-8,
        weight_decay: 0.0,
    };
    let mut opt = Adam::new(cfg, &[id], &s);
    s.accumulate_grad(id, &Tensor::full(&[2], 1.0)).unwrap();
    opt.step(&mut s).unwrap();
    let p = s.value(id).data();
    assert!((p[0] - 0.99).abs() < 1e-8 && (p[1] + 2.01).abs() < 1e-8);
}

#[test]
fn adam_matches_hand_trace_on_quadratic() {
    // f(p) = (p - 3)^2 with l2 weight 0.01.
    let cfg = AdamConfig {
        lr: 0.1,
        beta1: 0.5,
        beta2: 0.999,
        eps: 1e-8,
        weight_decay: 0.01,
    };
    let (mut s, id) = one_param(vec![0.0]);
    let mut opt = Adam::new(cfg, &[id], &s);
    let (mut p, mut m, mut v) = (0.0f64, 0.0f64, 0.0f64);
    for t in 1..=3 {
        let g = 2.0 * (p - 3.0) + 0.01 * p;
        m = 0.5 * m + 0.5 * g;
        v = 0.999 * v + 0.001 * g * g;
        let mh = m / (1.0 - 0.5f64.powi(t));
        let vh = v / (1.0 - 0.999f64.powi(t));
        p -= 0.1 * mh / (vh.sqrt() + 1e-8);

        let cur = s.value(id).data()[0];
        s.zero_grads();
        s.accumulate_grad(id, &Tensor::full(&[1], 2.0 * (cur - 3.0))).unwrap();
        opt.step(&mut s).unwrap();
        assert!((s.value(id).data()[0] - p).abs() < 1e-7, "step {t}");
    }
    assert_eq!(opt.step_count(), 3);
}

proptest! {
    #[test]
    fn adam_with_zero_grad_and_no_decay_is_a_no_op(v in prop::collection::vec(-1e3f64..1e3, 1..16), steps in 1usize..5) {
        let (mut s, id) = one_param(v.clone());
        let mut opt = Adam::new(AdamConfig { weight_decay: 0.0, ..AdamConfig::GAN }, &[id], &s);
        for _ in 0..steps {
            s.zero_grads();
            s.accumulate_grad(id, &Tensor::zeros(&[v.len()])).unwrap();
            opt.step(&mut s).unwrap();
        }
        prop_assert_eq!(s.value(id).data(), &v[..]);
    }
}

// ---- reconstruction training ----

fn random_dataset(n: usize, dim: usize, seed: u64) -> Dataset<f64> {
    let t: Tensor<f64> = normal(&[n, dim], 0.5, &mut rng_for(seed, 31));
    Dataset::new(vec![dim], t.into_data(), Split::Train, Normalization::Unit).unwrap()
}

fn small_mlp() -> ReconArch {
    ReconArch::Mlp {
        input: 12,
        hidden: vec![8, 4],
    }
}

#[test]
fn zero_epochs_leave_the_model_unchanged() {
    let data = random_dataset(20, 12, 0);
    let cfg = ReconConfig {
        epochs: 0,
        batch: 8,
        seed: 4,
        ..ReconConfig::default()
    };
    let fresh = ReconSession::<f64>::new(ModelKind::InvAuto, &small_mlp(), cfg).unwrap();
    let (trained, log) = train_reconstruction(ModelKind::InvAuto, &small_mlp(), &data, None, cfg).unwrap();
    assert!(log.is_empty());
    assert_eq!(values(&trained.store), values(&fresh.store));
}

#[test]
fn tied_linear_layer_learns_an_orthonormal_map() {
    let (n, k) = (8, 3);
    // Columns of Q: the first k of a Gram-Schmidt basis.
    let a: Tensor<f64> = normal(&[k, n], 1.0, &mut rng_for(9, 0));
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for i in 0..k {
        let mut v = a.data()[i * n..(i + 1) * n].to_vec();
        for u in &rows {
            let d: f64 = v.iter().zip(u).map(|(x, y)| x * y).sum();
            v.iter_mut().zip(u).for_each(|(x, y)| *x -= d * y);
        }
        let nrm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        rows.push(v.into_iter().map(|x| x / nrm).collect());
    }
    let qt = Tensor::new(&[k, n], rows.concat()).unwrap();
    let gen = |m: usize, seed| {
        let z: Tensor<f64> = normal(&[m, k], 1.0, &mut rng_for(seed, 1));
        z.matmul(&qt).unwrap()
    };
    let (train, test) = (gen(256, 1), gen(128, 2));
    let spec = StackSpec {
        input: vec![n],
        layers: vec![LayerSpec::Linear { out: k }],
    };
    let mut store = ParamStore::<f64>::new();
    let net = build_inverted_stack(&spec, &mut store, "m", Init::LeCun, &mut rng_for(9, 2)).unwrap();
    let cfg = AdamConfig {
        lr: 0.02,
        weight_decay: 0.0,
        ..ReconConfig::ADAM
    };
    let mut opt = Adam::new(cfg, &net.param_ids(), &store);
    for step in 0..200 {
        let idx: Vec<usize> = (0..32).map(|i| (step * 32 + i) % 256).collect();
        let mut tape = Tape::new();
        let x = tape.leaf(train.gather_rows(&idx).unwrap());
        let l = auto_loss(&mut tape, &store, &net, x).unwrap();
        store.zero_grads();
        tape.backward(l, &mut store).unwrap();
        opt.step(&mut store).unwrap();
    }
    let mut tape = Tape::new();
    let x = tape.leaf(test);
    let l = auto_loss(&mut tape, &store, &net, x).unwrap();
    let mse = scalar(&tape, l);
    assert!(mse < 1e-3, "{mse}");
}

#[test]
fn reconstruction_is_deterministic_and_resumable() {
    let data = random_dataset(40, 12, 1);
    let test = random_dataset(10, 12, 2);
    for kind in ModelKind::ALL {
        let cfg = ReconConfig {
            epochs: 3,
            batch: 16,
            seed: 7,
            ..ReconConfig::default()
        };
        let (s1, l1) = train_reconstruction(kind, &small_mlp(), &data, Some(&test), cfg).unwrap();
        let (s2, l2) = train_reconstruction(kind, &small_mlp(), &data, Some(&test), cfg).unwrap();
        assert_eq!(l1, l2, "{}", kind.name());
        assert_eq!(values(&s1.store), values(&s2.store));

        // Interrupt after four steps (mid-epoch), rebuild, continue.
        let mut a = ReconSession::<f64>::new(kind, &small_mlp(), cfg).unwrap();
        for _ in 0..4 {
            a.run_step(&data).unwrap();
        }
        let mut b = ReconSession::from_parts(cfg, a.model.clone(), a.store.clone(), a.opt.clone());
        for _ in 0..3 {
            let (la, lb) = (a.run_step(&data).unwrap(), b.run_step(&data).unwrap());
            assert!((la - lb).abs() <= 1e-12);
        }
    }
}

#[test]
fn empty_dataset_is_rejected() {
    let empty = Dataset::<f64>::new(vec![12], vec![], Split::Train, Normalization::Unit).unwrap();
    let mut s = ReconSession::<f64>::new(ModelKind::Auto, &small_mlp(), ReconConfig::default()).unwrap();
    assert!(s.run_step(&empty).is_err());
}

// ---- adversarial training ----

fn tiny_translator() -> TranslatorConfig {
    TranslatorConfig {
        name: "tiny".into(),
        image_size: 8,
        channels: vec![4, 8],
        blocks_per_side: 1,
        disc_channels: vec![4, 8],
        ..TranslatorConfig::desk()
    }
}

#[test]
fn adversarial_loop_keeps_core_tied_and_is_deterministic() {
    let d = make_synthetic_domains::<f64>(SyntheticKind::Invert, 6, 8, 3).unwrap();
    let cfg = GanConfig {
        iterations: 3,
        seed: 2,
        ..GanConfig::default()
    };
    let untouched = GanSession::<f64>::new(&tiny_translator(), GanConfig { iterations: 0, ..cfg }).unwrap();
    let mut zero = GanSession::<f64>::new(&tiny_translator(), GanConfig { iterations: 0, ..cfg }).unwrap();
    zero.train(&d.a, &d.b, |_| {}).unwrap();
    assert_eq!(values(&zero.store), values(&untouched.store));

    let mut runs = Vec::new();
    for _ in 0..2 {
        let mut s = GanSession::<f64>::new(&tiny_translator(), cfg).unwrap();
        let mut log = Vec::new();
        s.train(&d.a, &d.b, |r| log.push(*r)).unwrap();
        assert_eq!(log.len(), 3);
        let m = LinearizedMap::of_network(&s.model.core, &s.store).unwrap();
        assert_eq!(m.tying_error().unwrap(), 0.0);
        assert_ne!(values(&s.store), values(&untouched.store));
        runs.push((log, values(&s.store)));
    }
    assert_eq!(runs[0], runs[1]);
}

#[test]
fn adversarial_loop_rejects_empty_domains() {
    let d = make_synthetic_domains::<f64>(SyntheticKind::Invert, 2, 8, 3).unwrap();
    let empty = Dataset::<f64>::new(vec![3, 8, 8], vec![], Split::Train, Normalization::Symmetric).unwrap();
    let mut s = GanSession::<f64>::new(&tiny_translator(), GanConfig::default()).unwrap();
    assert!(s.run_step(&empty, &d.b).is_err());
    assert!(s.run_step(&d.a, &empty).is_err());
}
