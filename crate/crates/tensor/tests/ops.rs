use ess_tensor::{gradcheck, Tape, Tensor, TensorError};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let len = shape.iter().product();
    let data = (0..len).map(|_| rng.random_range(-1.0..1.0)).collect();
    Tensor::from_vec(shape, data).unwrap()
}

fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
    Tensor::from_f64(shape, data).unwrap()
}

#[test]
fn matmul_identity_and_hand_values() {
    let mut tape = Tape::<f64>::new();
    let eye = tape
        .constant(t(&[3, 3], &[1., 0., 0., 0., 1., 0., 0., 0., 1.]))
        .unwrap();
    let a = tape.constant(random(&[3, 4], 1)).unwrap();
    let ia = tape.matmul(eye, a).unwrap();
    assert_eq!(tape.value(ia), tape.value(a));

    let x = tape.constant(t(&[2, 2], &[1., 2., 3., 4.])).unwrap();
    let ones = tape.constant(t(&[2, 1], &[1., 1.])).unwrap();
    let y = tape.matmul(x, ones).unwrap();
    assert_eq!(tape.value(y).data(), &[3.0, 7.0]);
}

#[test]
fn matmul_shape_mismatch_names_both_shapes() {
    let mut tape = Tape::<f64>::new();
    let a = tape.constant(Tensor::zeros(&[2, 3])).unwrap();
    let b = tape.constant(Tensor::zeros(&[2, 3])).unwrap();
    let err = tape.matmul(a, b).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("[2, 3]") && msg.contains("matmul"), "{msg}");
}

#[test]
fn matmul_gradient() {
    let inputs = [random(&[4, 5], 2), random(&[5, 3], 3)];
    let err = gradcheck::check(&inputs, &|tape: &mut Tape<f64>, v: &[_]| {
        let y = tape.matmul(v[0], v[1])?;
        let y2 = tape.square(y)?;
        tape.sum(y2)
    })
    .unwrap();
    assert!(err < 1e-4, "rel err {err}");
}

#[test]
fn conv2d_zero_and_identity_kernels() {
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(random(&[2, 5, 6], 4)).unwrap();
    let zero = tape.constant(Tensor::zeros(&[3, 2, 3, 3])).unwrap();
    let y = tape.conv2d(x, zero, 1).unwrap();
    assert_eq!(tape.value(y).shape(), &[3, 5, 6]);
    assert!(tape.value(y).data().iter().all(|&v| v == 0.0));

    let img = tape.constant(random(&[1, 7, 5], 5)).unwrap();
    let mut k = Tensor::zeros(&[1, 1, 3, 3]);
    k.data_mut()[4] = 1.0;
    let k = tape.constant(k).unwrap();
    let same = tape.conv2d(img, k, 1).unwrap();
    assert_eq!(tape.value(same), tape.value(img));
}

#[test]
fn conv2d_output_extents() {
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(random(&[1, 8, 7], 6)).unwrap();
    let k = tape.constant(random(&[2, 1, 3, 3], 7)).unwrap();
    let y = tape.conv2d(x, k, 2).unwrap();
    // floor((h - 3 + 2) / 2) + 1
    assert_eq!(tape.value(y).shape(), &[2, 4, 4]);
    let bad = tape.constant(random(&[2, 2, 3, 3], 8)).unwrap();
    assert!(matches!(tape.conv2d(x, bad, 1), Err(TensorError::ShapeMismatch { .. })));
}

#[test]
fn conv2d_gradient() {
    for stride in [1, 2] {
        let inputs = [random(&[3, 8, 8], 9), random(&[4, 3, 3, 3], 10)];
        let err = gradcheck::check(&inputs, &|tape: &mut Tape<f64>, v: &[_]| {
            let y = tape.conv2d(v[0], v[1], stride)?;
            let y2 = tape.square(y)?;
            tape.sum(y2)
        })
        .unwrap();
        assert!(err < 1e-4, "stride {stride}: rel err {err}");
    }
}

#[test]
fn relu_pool_and_friends() {
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(t(&[3], &[-1.0, 0.0, 2.0])).unwrap();
    let r = tape.relu(x).unwrap();
    assert_eq!(tape.value(r).data(), &[0.0, 0.0, 2.0]);

    let c = tape.constant(Tensor::full(&[2, 4, 6], 1.5)).unwrap();
    let p = tape.avg_pool2(c).unwrap();
    assert_eq!(tape.value(p).shape(), &[2, 2, 3]);
    assert!(tape.value(p).data().iter().all(|&v| v == 1.5));

    let a = tape.constant(t(&[1, 2], &[1.0, 2.0])).unwrap();
    let b = tape.constant(t(&[2, 2], &[3.0, 4.0, 5.0, 6.0])).unwrap();
    let cat = tape.concat(&[a, b]).unwrap();
    assert_eq!(tape.value(cat).shape(), &[3, 2]);
    let s = tape.scale(cat, 0.5).unwrap();
    assert_eq!(tape.value(s).data(), &[0.5, 1.0, 1.5, 2.0, 2.5, 3.0]);
    assert!(tape.add(a, b).is_err());
}

#[test]
fn relu_subgradient_at_zero_is_zero() {
    let mut tape = Tape::<f64>::new();
    let x = tape.param(t(&[3], &[-1.0, 0.0, 2.0])).unwrap();
    let r = tape.relu(x).unwrap();
    let s = tape.sum(r).unwrap();
    let g = tape.backward(s).unwrap();
    assert_eq!(g.get(x).unwrap().data(), &[0.0, 0.0, 1.0]);
}

#[test]
fn composite_mlp_gradient() {
    let inputs = [
        random(&[1, 6], 11),
        random(&[6, 5], 12),
        random(&[5], 13),
        random(&[5, 3], 14),
        random(&[3], 15),
        random(&[1, 2], 16),
    ];
    let err = gradcheck::check(&inputs, &|tape: &mut Tape<f64>, v: &[_]| {
        let h = tape.linear(v[0], v[1], v[2])?;
        let h = tape.relu(h)?;
        let o = tape.linear(h, v[3], v[4])?;
        let extra = tape.concat(&[v[5]])?;
        let o = tape.reshape(o, &[3, 1])?;
        let e = tape.reshape(extra, &[2, 1])?;
        let joined = tape.concat(&[o, e])?;
        let doubled = tape.add(joined, joined)?;
        let diff = tape.sub(doubled, joined)?;
        let prod = tape.mul(diff, joined)?;
        let scaled = tape.scale(prod, 0.3)?;
        tape.sum(scaled)
    })
    .unwrap();
    assert!(err < 1e-4, "rel err {err}");
}

#[test]
fn conv_relu_pool_stack_gradient() {
    let inputs = [random(&[3, 8, 8], 17), random(&[4, 3, 3, 3], 18), random(&[4], 19)];
    let err = gradcheck::check(&inputs, &|tape: &mut Tape<f64>, v: &[_]| {
        let y = tape.conv2d(v[0], v[1], 1)?;
        let y = tape.add_bias(y, v[2], 0)?;
        let y = tape.relu(y)?;
        let y = tape.avg_pool2(y)?;
        let y = tape.square(y)?;
        tape.sum(y)
    })
    .unwrap();
    assert!(err < 1e-4, "rel err {err}");
}

#[test]
fn l2_normalize_values_and_errors() {
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(t(&[2], &[3.0, 4.0])).unwrap();
    let n = tape.l2_normalize(x).unwrap();
    let d = tape.value(n).data();
    assert!((d[0] - 0.6).abs() < 1e-15 && (d[1] - 0.8).abs() < 1e-15);

    let unit = tape.constant(t(&[3], &[0.0, 1.0, 0.0])).unwrap();
    let same = tape.l2_normalize(unit).unwrap();
    assert_eq!(tape.value(same), tape.value(unit));

    let tiny = tape.constant(t(&[2], &[1e-13, 0.0])).unwrap();
    assert!(matches!(tape.l2_normalize(tiny), Err(TensorError::NearZeroNorm(_))));
}

#[test]
fn l2_normalize_gradient() {
    let inputs = [random(&[8], 20), random(&[8], 21)];
    let err = gradcheck::check(&inputs, &|tape: &mut Tape<f64>, v: &[_]| {
        let n = tape.l2_normalize(v[0])?;
        let p = tape.mul(n, v[1])?;
        tape.sum(p)
    })
    .unwrap();
    assert!(err < 1e-4, "rel err {err}");
}

#[test]
fn log_sum_exp_and_cross_entropy_values() {
    let mut tape = Tape::<f64>::new();
    let z = tape.constant(t(&[2], &[0.0, 0.0])).unwrap();
    let l = tape.log_sum_exp(z).unwrap();
    assert!((tape.value(l).item() - 2f64.ln()).abs() < 1e-12);

    let dom = tape.constant(t(&[2], &[100.0, 0.0])).unwrap();
    let ce = tape.cross_entropy(dom, 0).unwrap();
    assert!(tape.value(ce).item() < 1e-40);
    assert!(tape.value(ce).item() >= 0.0);

    let big = tape.constant(t(&[3], &[1000.0, 999.0, -1000.0])).unwrap();
    let l = tape.log_sum_exp(big).unwrap();
    assert!((tape.value(l).item() - (1000.0 + (1.0 + (-1f64).exp()).ln())).abs() < 1e-9);

    assert!(tape.cross_entropy(dom, 2).is_err());
}

#[test]
fn log_sum_exp_and_cross_entropy_gradients() {
    let inputs = [random(&[10], 22)];
    let err = gradcheck::check(&inputs, &|tape: &mut Tape<f64>, v: &[_]| {
        let s = tape.scale(v[0], 3.0)?;
        tape.log_sum_exp(s)
    })
    .unwrap();
    assert!(err < 1e-4, "lse rel err {err}");
    let err = gradcheck::check(&inputs, &|tape: &mut Tape<f64>, v: &[_]| {
        let s = tape.scale(v[0], 3.0)?;
        tape.cross_entropy(s, 4)
    })
    .unwrap();
    assert!(err < 1e-4, "ce rel err {err}");
    let weights = [0.0, 0.5, 0.0, 0.25, 0.25, 0.0, 0.0, 0.0, 0.0, 0.0];
    let err = gradcheck::check(&inputs, &|tape: &mut Tape<f64>, v: &[_]| {
        tape.soft_cross_entropy(v[0], &weights)
    })
    .unwrap();
    assert!(err < 1e-4, "soft ce rel err {err}");
}

#[test]
fn pick_slice_and_angle_error() {
    let inputs = [t(&[4], &[0.3, -1.2, 2.0, 350.0])];
    let err = gradcheck::check(&inputs, &|tape: &mut Tape<f64>, v: &[_]| {
        let head = tape.slice(v[0], 0, 3)?;
        let sq = tape.square(head)?;
        let pos = tape.sum(sq)?;
        let r = tape.slice(v[0], 3, 1)?;
        let e = tape.angle_error(r, &[10.0])?;
        let e2 = tape.square(e)?;
        let e2 = tape.sum(e2)?;
        let picked = tape.pick(v[0], 1)?;
        let a = tape.add(pos, e2)?;
        tape.add(a, picked)
    })
    .unwrap();
    assert!(err < 1e-4, "rel err {err}");

    let mut tape = Tape::<f64>::new();
    let r = tape.constant(t(&[3], &[359.0, 0.0, 180.0])).unwrap();
    let e = tape.angle_error(r, &[1.0, 180.0, 0.0]).unwrap();
    assert_eq!(tape.value(e).data(), &[2.0, 180.0, 180.0]);
}

#[test]
fn backward_of_sum_is_ones() {
    let mut tape = Tape::<f64>::new();
    let w = tape.param(random(&[3, 4], 23)).unwrap();
    let s = tape.sum(w).unwrap();
    let g = tape.backward(s).unwrap();
    assert!(g.get(w).unwrap().data().iter().all(|&v| v == 1.0));
}

#[test]
fn stop_gradient_blocks_everything() {
    let mut tape = Tape::<f64>::new();
    let w = tape.param(random(&[5], 24)).unwrap();
    let sq = tape.square(w).unwrap();
    let d = tape.detach(sq).unwrap();
    let s = tape.sum(d).unwrap();
    assert!(!tape.requires_grad(s));
    let g = tape.backward(s).unwrap();
    assert!(g.get(w).is_none());
    assert!(g.get(sq).is_none());
}

#[test]
fn partial_stop_gradient() {
    // loss = sum(w * detach(w)); only the live branch carries gradient.
    let mut tape = Tape::<f64>::new();
    let w = tape.param(t(&[2], &[2.0, -3.0])).unwrap();
    let d = tape.detach(w).unwrap();
    let p = tape.mul(w, d).unwrap();
    let s = tape.sum(p).unwrap();
    let g = tape.backward(s).unwrap();
    assert_eq!(g.get(w).unwrap().data(), &[2.0, -3.0]);
}

#[test]
fn backward_rejects_non_scalar() {
    let mut tape = Tape::<f64>::new();
    let w = tape.param(random(&[3], 25)).unwrap();
    assert!(matches!(tape.backward(w), Err(TensorError::NonScalarLoss(_))));
}

#[test]
fn non_finite_values_are_hard_errors() {
    let mut tape = Tape::<f32>::new();
    let x = tape.constant(Tensor::from_f64(&[1], &[1e30]).unwrap()).unwrap();
    let err = tape.square(x).unwrap_err();
    assert!(matches!(err, TensorError::NonFinite { op: "square" }));
    assert!(tape.constant(Tensor::from_f64(&[1], &[f64::NAN]).unwrap()).is_err());
}

#[test]
fn flipped_gradient_is_detected() {
    let inputs = [random(&[4, 5], 26), random(&[5, 3], 27)];
    let build = |tape: &mut Tape<f64>, v: &[_]| {
        let y = tape.matmul(v[0], v[1])?;
        let y = tape.square(y)?;
        tape.sum(y)
    };
    let (_, mut a) = gradcheck::analytic(&inputs, &build).unwrap();
    let n = gradcheck::numeric(&inputs, &build, gradcheck::STEP).unwrap();
    assert!(gradcheck::max_relative_error(&a, &n) < 1e-4);
    a[1].data_mut()[0] *= -1.0;
    assert!(gradcheck::max_relative_error(&a, &n) > 1.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn forward_and_backward_stay_finite(
        c in 1usize..4, h in 3usize..10, w in 3usize..10, out in 1usize..4,
        magnitude in 1e-3f64..1e3, seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |shape: &[usize]| {
            let len: usize = shape.iter().product();
            Tensor::<f32>::from_vec(
                shape,
                (0..len).map(|_| (rng.random_range(-1.0..1.0) * magnitude) as f32).collect(),
            ).unwrap()
        };
        let mut tape = Tape::<f32>::new();
        let x = tape.param(draw(&[c, h, w])).unwrap();
        let k = tape.param(draw(&[out, c, 3, 3])).unwrap();
        let y = tape.conv2d(x, k, 1).unwrap();
        let y = tape.relu(y).unwrap();
        let y = tape.avg_pool2(y).unwrap();
        let len = tape.value(y).len();
        let flat = tape.reshape(y, &[len]).unwrap();
        let logits = tape.scale(flat, 1e-3).unwrap();
        let loss = tape.cross_entropy(logits, 0).unwrap();
        let grads = tape.backward(loss).unwrap();
        prop_assert!(tape.value(loss).is_finite());
        prop_assert!(grads.get(x).unwrap().is_finite());
        prop_assert!(grads.get(k).unwrap().is_finite());
    }
}
