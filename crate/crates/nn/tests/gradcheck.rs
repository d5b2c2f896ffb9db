//! Central finite-difference checks of every differentiable op.

use fast_nn::{BatchNormMode, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const STEP: f32 = 1e-2;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Projects `f(inputs)` onto a fixed random direction and compares the
/// analytic gradient of each input with central differences.
fn check(inputs: &[Tensor], f: impl Fn(&[Var]) -> Var, tol: f32) {
    let vars: Vec<Var> = inputs.iter().cloned().map(Var::leaf).collect();
    let out = f(&vars);
    let dir = Tensor::randn(out.shape(), 1.0, &mut rng(99));
    let project = |y: &Var| -> f64 { y.value().data().iter().zip(dir.data()).map(|(&a, &b)| a as f64 * b as f64).sum() };
    let loss = out.mul(&Var::constant(dir.clone())).sum_all();
    let grads = loss.backward();
    for (k, v) in vars.iter().enumerate() {
        let analytic = grads.get(v).expect("gradient for input").clone();
        for idx in 0..inputs[k].numel().min(40) {
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[idx] += STEP;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[idx] -= STEP;
            let lp = project(&f(&plus.into_iter().map(Var::constant).collect::<Vec<_>>()));
            let lm = project(&f(&minus.into_iter().map(Var::constant).collect::<Vec<_>>()));
            let numeric = ((lp - lm) / (2.0 * STEP as f64)) as f32;
            let a = analytic.data()[idx];
            let err = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-1);
            assert!(err < tol, "input {k} coord {idx}: analytic {a} numeric {numeric}");
        }
    }
}

fn randn(shape: &[usize], seed: u64) -> Tensor {
    Tensor::randn(shape, 1.0, &mut rng(seed))
}

fn positive(shape: &[usize], seed: u64) -> Tensor {
    randn(shape, seed).map(|v| v.abs() + 0.5)
}

#[test]
fn elementwise_ops() {
    let a = randn(&[2, 3, 4], 1);
    let b = positive(&[2, 3, 4], 2);
    check(&[a.clone(), b.clone()], |v| v[0].add(&v[1]), 1e-2);
    check(&[a.clone(), b.clone()], |v| v[0].sub(&v[1]), 1e-2);
    check(&[a.clone(), b.clone()], |v| v[0].mul(&v[1]), 1e-2);
    check(&[a.clone(), b.clone()], |v| v[0].div(&v[1]), 2e-2);
    check(std::slice::from_ref(&a), |v| v[0].sigmoid(), 1e-2);
    check(std::slice::from_ref(&a), |v| v[0].tanh(), 1e-2);
    check(std::slice::from_ref(&a), |v| v[0].sqr().add_scalar(1.0).mul_scalar(0.3), 1e-2);
    check(std::slice::from_ref(&b), |v| v[0].pow_pos(0.3), 2e-2);
    check(&[a.clone(), Tensor::scalar(0.7)], |v| v[0].scale_by(&v[1]), 1e-2);
}

#[test]
fn structural_ops() {
    let a = randn(&[2, 3, 4], 3);
    check(std::slice::from_ref(&a), |v| v[0].transpose12(), 1e-2);
    check(std::slice::from_ref(&a), |v| v[0].softmax_last(), 2e-2);
    check(std::slice::from_ref(&a), |v| v[0].reshape(&[6, 4]), 1e-2);
    let b = randn(&[2, 4, 5], 4);
    check(&[a.clone(), b], |v| v[0].bmm(&v[1]), 2e-2);
    let x = randn(&[2, 2, 3, 4], 5);
    let y = randn(&[2, 1, 3, 4], 6);
    check(&[x.clone(), y], |v| Var::cat_channels(&[&v[0], &v[1]]), 1e-2);
    check(std::slice::from_ref(&x), |v| v[0].mean_spatial(), 1e-2);
    check(std::slice::from_ref(&x), |v| v[0].avg_pool2(), 1e-2);
    check(std::slice::from_ref(&x), |v| v[0].upsample_bilinear2(), 1e-2);
    let big = randn(&[1, 2, 12, 13], 7);
    let kern = [0.1, 0.2, 0.4, 0.2, 0.1];
    check(&[big], move |v| v[0].separable_filter_valid(&kern), 2e-2);
}

#[test]
fn convolutions() {
    let x = randn(&[2, 3, 6, 8], 8);
    let w = randn(&[4, 3, 3, 3], 9).map(|v| v * 0.3);
    let b = randn(&[4], 10);
    check(&[x.clone(), w.clone(), b], |v| v[0].conv2d(&v[1], Some(&v[2]), 1, 1), 2e-2);
    let w4 = randn(&[4, 3, 4, 4], 11).map(|v| v * 0.3);
    check(&[x.clone(), w4], |v| v[0].conv2d(&v[1], None, 2, 1), 2e-2);
    let w1 = randn(&[5, 3, 1, 1], 12);
    check(&[x.clone(), w1], |v| v[0].conv2d(&v[1], None, 1, 0), 2e-2);
    let wt = randn(&[3, 2, 4, 4], 13).map(|v| v * 0.3);
    check(&[x, wt], |v| v[0].conv_transpose2d(&v[1], 2, 1), 2e-2);
}

#[test]
fn batch_norm_train_and_eval() {
    let x = randn(&[3, 2, 3, 3], 14);
    let g = positive(&[2], 15);
    let b = randn(&[2], 16);
    check(&[x.clone(), g.clone(), b.clone()], |v| v[0].batch_norm(&v[1], &v[2], BatchNormMode::Train { eps: 1e-5 }).0, 3e-2);
    let rm = [0.1f32, -0.2];
    let rv = [1.5f32, 0.7];
    check(&[x, g, b], |v| {
        v[0].batch_norm(&v[1], &v[2], BatchNormMode::Eval { running_mean: &rm, running_var: &rv, eps: 1e-5 }).0
    }, 2e-2);
}

#[test]
fn reductions_and_losses() {
    let a = randn(&[2, 3, 4], 17);
    let b = randn(&[2, 3, 4], 18);
    check(&[a.clone(), b.clone()], |v| v[0].mse(&v[1]), 1e-2);
    check(&[a.clone(), b.clone()], |v| v[0].l1(&v[1]), 1e-2);
    check(std::slice::from_ref(&a), |v| v[0].mean_all(), 1e-2);
    let p = randn(&[2, 5], 19).map(|v| 1.0 / (1.0 + (-v).exp()));
    check(std::slice::from_ref(&p), |v| v[0].bce_const(1.0, 1e-7), 3e-2);
    check(std::slice::from_ref(&p), |v| v[0].bce_const(0.0, 1e-7), 3e-2);
    let t = randn(&[2, 5], 20).map(|v| if v > 0.0 { 1.0 } else { 0.0 });
    check(&[p], move |v| v[0].bce(&Var::constant(t.clone()), 1e-7), 3e-2);
}

#[test]
fn max_pool_routes_to_argmax() {
    let x = Tensor::new(&[1, 1, 2, 2], vec![0.1, 0.9, 0.3, 0.2]).unwrap();
    let v = Var::leaf(x);
    let g = v.max_pool2().sum_all().backward();
    assert_eq!(g.get(&v).unwrap().data(), &[0.0, 1.0, 0.0, 0.0]);
}

#[test]
fn untracked_inputs_receive_no_gradient() {
    let a = Var::leaf(randn(&[3], 21));
    let c = Var::constant(randn(&[3], 22));
    let mut g = a.mul(&c).sum_all().backward();
    assert!(g.get(&c).is_none());
    assert!(g.take(&a).is_some());
}
