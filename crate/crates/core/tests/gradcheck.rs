//! Finite-difference checks (f64, eps 1e-4, relative error below 1e-4) for
//! every layer type, the tied stacks and the losses.

use invauto_core::gradcheck::grad_check;
use invauto_core::init::{normal, rng_for};
use invauto_core::layers::{build_inverted_stack, build_stack, Init, LayerSpec, StackSpec};
use invauto_core::losses;
use invauto_core::models::{ModelKind, ReconArch, ReconModel};
use invauto_core::{ParamStore, Tape, Tensor};

const EPS: f64 = 1e-4;
const TOL: f64 = 1e-4;

fn input(shape: &[usize], seed: u64) -> Tensor<f64> {
    // Keep values away from the activation kinks so the central difference
    // never straddles one.
    normal::<f64>(shape, 1.0, &mut rng_for(seed, 99)).map(|v: f64| if v.abs() < 0.05 { v + 0.1 } else { v })
}

/// Gradient of `sum(out * probe)` through a single-spec stack.
fn check_stack(spec: StackSpec, tied: bool, batch: usize) -> f64 {
    let mut store = ParamStore::<f64>::new();
    let rng = &mut rng_for(7, 1);
    let net = if tied {
        let n = build_inverted_stack(&spec, &mut store, "s", Init::Normal(0.3), rng).unwrap();
        vec![n.encoder, n.decoder]
    } else {
        vec![build_stack(&spec, &mut store, "s", Init::Normal(0.3), rng).unwrap()]
    };
    // Non-zero biases so their gradients are exercised away from zero.
    for id in store.ids().collect::<Vec<_>>() {
        if store.name(id).ends_with("bias") {
            let b = normal(store.value(id).shape(), 0.2, rng);
            store.set_value(id, b).unwrap();
        }
    }
    let mut shape = vec![batch];
    shape.extend(&spec.input);
    let x = input(&shape, 3);
    let mut out_shape = vec![batch];
    out_shape.extend(net.last().unwrap().output_shape(&store).unwrap());
    let probe = input(&out_shape, 4);
    grad_check(&mut store, EPS, |tape: &mut Tape<f64>, s: &ParamStore<f64>| {
        let mut v = tape.leaf(x.clone());
        for st in &net {
            v = st.forward(tape, s, v)?;
        }
        let p = tape.leaf(probe.clone());
        let m = tape.mul(v, p)?;
        Ok(tape.sum(m))
    })
    .unwrap()
}

fn spec(input: &[usize], layers: Vec<LayerSpec>) -> StackSpec {
    StackSpec {
        input: input.to_vec(),
        layers,
    }
}

#[test]
fn linear_and_bias() {
    let e = check_stack(spec(&[5], vec![LayerSpec::Linear { out: 3 }, LayerSpec::Bias]), false, 4);
    assert!(e < TOL, "{e}");
    let e = check_stack(spec(&[3], vec![LayerSpec::LinearT { out: 5 }]), false, 4);
    assert!(e < TOL, "{e}");
}

#[test]
fn conv_and_transposed_conv() {
    let c = LayerSpec::Conv {
        c_out: 3,
        k: 3,
        stride: 2,
        pad: 1,
    };
    let e = check_stack(spec(&[2, 5, 5], vec![c, LayerSpec::Bias]), false, 2);
    assert!(e < TOL, "{e}");
    let t = LayerSpec::ConvT {
        c_out: 2,
        k: 3,
        stride: 2,
        pad: 1,
        out_hw: (5, 5),
    };
    let e = check_stack(spec(&[3, 3, 3], vec![t]), false, 2);
    assert!(e < TOL, "{e}");
}

#[test]
fn activations_and_normalization() {
    let layers = vec![
        LayerSpec::Conv {
            c_out: 3,
            k: 3,
            stride: 1,
            pad: 1,
        },
        LayerSpec::InstanceNorm,
        LayerSpec::LeakyRelu { slope: 0.2 },
        LayerSpec::Conv {
            c_out: 2,
            k: 2,
            stride: 1,
            pad: 0,
        },
        LayerSpec::Tanh,
        LayerSpec::Bias,
        LayerSpec::Sigmoid,
    ];
    let e = check_stack(spec(&[2, 4, 4], layers), false, 2);
    assert!(e < TOL, "{e}");
}

#[test]
fn invertible_activation_both_roles() {
    let e = check_stack(
        spec(&[4], vec![LayerSpec::Linear { out: 4 }, LayerSpec::InvAct { alpha: 2.0 }]),
        true,
        3,
    );
    assert!(e < TOL, "{e}");
}

#[test]
fn residual_block_both_roles() {
    let e = check_stack(spec(&[2, 4, 4], vec![LayerSpec::InvRes { k: 3, alpha: 2.0 }]), true, 2);
    assert!(e < TOL, "{e}");
}

#[test]
fn tied_stack_accumulates_both_uses() {
    let layers = vec![
        LayerSpec::Conv {
            c_out: 3,
            k: 3,
            stride: 2,
            pad: 1,
        },
        LayerSpec::Bias,
        LayerSpec::InvAct { alpha: 2.0 },
        LayerSpec::InvRes { k: 3, alpha: 4.0 },
        LayerSpec::Conv {
            c_out: 4,
            k: 3,
            stride: 1,
            pad: 1,
        },
        LayerSpec::Bias,
        LayerSpec::InvAct { alpha: 0.5 },
    ];
    let e = check_stack(spec(&[2, 5, 5], layers), true, 2);
    assert!(e < TOL, "{e}");
}

#[test]
fn every_reconstruction_model() {
    let arch = ReconArch::Mlp {
        input: 6,
        hidden: vec![5, 3],
    };
    for kind in ModelKind::ALL {
        let mut store = ParamStore::<f64>::new();
        // Seeds chosen so no leaky-ReLU pre-activation lies within EPS of
        // its kink; the central difference is meaningless across one.
        let model = ReconModel::build(kind, &arch, &mut store, 1).unwrap();
        let x = normal::<f64>(&[4, 6], 1.0, &mut rng_for(1, 9));
        let e = grad_check(&mut store, EPS, |tape: &mut Tape<f64>, s: &ParamStore<f64>| {
            let v = tape.leaf(x.clone());
            // Fixed noise: the same draw for every evaluation.
            model.train_loss(tape, s, v, &mut rng_for(1, 2))
        })
        .unwrap();
        assert!(e < TOL, "{}: {e}", kind.name());
    }
}

#[test]
fn adversarial_and_cycle_losses() {
    let mut store = ParamStore::<f64>::new();
    let rng = &mut rng_for(2, 2);
    let g = build_stack(
        &spec(&[3], vec![LayerSpec::Linear { out: 3 }, LayerSpec::Tanh]),
        &mut store,
        "g",
        Init::Normal(0.5),
        rng,
    )
    .unwrap();
    let f = build_stack(
        &spec(&[3], vec![LayerSpec::Linear { out: 3 }, LayerSpec::Tanh]),
        &mut store,
        "f",
        Init::Normal(0.5),
        rng,
    )
    .unwrap();
    let d = build_stack(
        &spec(&[3], vec![LayerSpec::Linear { out: 1 }, LayerSpec::Bias, LayerSpec::Sigmoid]),
        &mut store,
        "d",
        Init::Normal(0.5),
        rng,
    )
    .unwrap();
    let (xa, xb) = (input(&[2, 3], 1), input(&[2, 3], 2));
    let e = grad_check(&mut store, EPS, |tape: &mut Tape<f64>, s: &ParamStore<f64>| {
        let a = tape.leaf(xa.clone());
        let b = tape.leaf(xb.clone());
        let cyc = losses::cycle_loss(tape, losses::stack_fn(&f, s), losses::stack_fn(&g, s), a, b)?;
        let fake = g.forward(tape, s, a)?;
        let dr = d.forward(tape, s, b)?;
        let df = d.forward(tape, s, fake)?;
        let (dl, gl) = losses::adversarial_loss(tape, dr, df, losses::GenLoss::NonSaturating)?;
        let gm = losses::generator_loss(tape, df, losses::GenLoss::Minimax);
        let t = losses::total_loss(tape, cyc, &[gl, gm], 10.0)?;
        tape.add(t, dl)
    })
    .unwrap();
    assert!(e < TOL, "{e}");
}
