//! Finite-difference verification for every differentiable primitive.
//!
//! Each case builds a scalar loss through one operation (plus cheap
//! reductions) and compares every recorded gradient coordinate against
//! central differences at the standard step.

use vlrisk_core::gradcheck::{check_all, FD_STEP};
use vlrisk_core::tensor::Tensor;
use vlrisk_core::{Result, Rng};

fn named(ts: &[(&str, &Tensor)]) -> Vec<(String, Tensor)> {
    ts.iter().map(|(n, t)| (n.to_string(), (*t).clone())).collect()
}

fn assert_grads(loss_fn: impl FnMut() -> Result<Tensor>, params: &[(String, Tensor)]) {
    let report = check_all(loss_fn, params, FD_STEP).expect("loss evaluation failed");
    assert!(
        report.all_pass(),
        "gradient mismatch: {:?}",
        report
            .failures()
            .map(|c| (c.param.clone(), c.index, c.analytic, c.numeric))
            .collect::<Vec<_>>()
    );
}

fn rand_param(shape: &[usize], rng: &mut Rng) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::param(shape, (0..n).map(|_| rng.uniform(-1.4, 1.4)).collect())
}

#[test]
fn elementwise_binary_ops() {
    let mut rng = Rng::new(101);
    let a = rand_param(&[3, 4], &mut rng);
    let b = rand_param(&[3, 4], &mut rng);
    let params = named(&[("a", &a), ("b", &b)]);
    assert_grads(|| Ok(a.add(&b).sum()), &params);
    assert_grads(|| Ok(a.sub(&b).sum()), &params);
    assert_grads(|| Ok(a.mul(&b).sum()), &params);
    assert_grads(|| Ok(a.mul(&a).sum()), &params); // square fast path
    // keep divisors away from zero
    let c = Tensor::param(&[3, 4], (0..12).map(|i| 1.5 + 0.1 * i as f64).collect());
    let params_div = named(&[("a", &a), ("c", &c)]);
    assert_grads(|| Ok(a.div(&c).sum()), &params_div);
}

#[test]
fn scalar_broadcast_ops() {
    let mut rng = Rng::new(102);
    let a = rand_param(&[5], &mut rng);
    let s = Tensor::param(&[1], vec![1.7]);
    let params = named(&[("a", &a), ("s", &s)]);
    assert_grads(|| Ok(a.add_scalar(0.3).sum()), &params);
    assert_grads(|| Ok(a.mul_scalar(-2.5).sum()), &params);
    assert_grads(|| Ok(a.neg().sum()), &params);
    assert_grads(|| Ok(a.scale_by(&s).sum()), &params);
    assert_grads(|| Ok(a.div_by(&s).sum()), &params);
}

#[test]
fn unary_math_ops() {
    let mut rng = Rng::new(103);
    let a = rand_param(&[6], &mut rng);
    let params_a = named(&[("a", &a)]);
    assert_grads(|| Ok(a.exp().sum()), &params_a);
    assert_grads(|| Ok(a.sin().sum()), &params_a);
    assert_grads(|| Ok(a.cos().sum()), &params_a);
    assert_grads(|| Ok(a.sigmoid().sum()), &params_a);

    // strictly positive inputs for ln/sqrt
    let p = Tensor::param(&[6], (0..6).map(|i| 0.4 + 0.3 * i as f64).collect());
    let params_p = named(&[("p", &p)]);
    assert_grads(|| Ok(p.ln().sum()), &params_p);
    assert_grads(|| Ok(p.sqrt().sum()), &params_p);

    // kink-bearing ops evaluated away from their kinks
    let k = Tensor::param(&[4], vec![-1.2, 0.7, 2.3, -0.4]);
    let params_k = named(&[("k", &k)]);
    assert_grads(|| Ok(k.relu().sum()), &params_k);
    assert_grads(|| Ok(k.clamp_min(-0.9).sum()), &params_k);
}

#[test]
fn matrix_ops() {
    let mut rng = Rng::new(104);
    let a = rand_param(&[3, 4], &mut rng);
    let b = rand_param(&[4, 2], &mut rng);
    let v = rand_param(&[4], &mut rng);
    let params = named(&[("a", &a), ("b", &b), ("v", &v)]);
    assert_grads(|| Ok(a.matmul(&b).sum()), &params);
    assert_grads(|| Ok(a.matvec(&v).sum()), &params);
    assert_grads(|| Ok(a.transpose().matmul(&a).sum()), &params);
}

#[test]
fn reduction_ops() {
    let mut rng = Rng::new(105);
    let a = rand_param(&[3, 5], &mut rng);
    let u = rand_param(&[7], &mut rng);
    let w = rand_param(&[7], &mut rng);
    let params = named(&[("a", &a), ("u", &u), ("w", &w)]);
    assert_grads(|| Ok(a.sum()), &params);
    assert_grads(|| Ok(a.mean()), &params);
    assert_grads(|| Ok(u.dot(&w)), &params);
    assert_grads(|| Ok(u.dot(&u)), &params); // dot_self fast path
    assert_grads(|| Ok(u.logsumexp()), &params);
    assert_grads(|| Ok(a.row_mean().dot(&a.row_mean())), &params);
}

#[test]
fn broadcast_ops() {
    let mut rng = Rng::new(106);
    let a = rand_param(&[3, 4], &mut rng);
    let row = rand_param(&[4], &mut rng);
    let col = Tensor::param(&[3], vec![1.3, -0.8, 2.1]);
    let params = named(&[("a", &a), ("row", &row), ("col", &col)]);
    assert_grads(|| Ok(a.add_vec_row(&row).sum()), &params);
    assert_grads(|| Ok(a.mul_vec_row(&row).sum()), &params);
    assert_grads(|| Ok(a.sub_col(&col).sum()), &params);
    assert_grads(|| Ok(a.div_col(&col).sum()), &params);
}

#[test]
fn structural_ops() {
    let mut rng = Rng::new(107);
    let r0 = rand_param(&[4], &mut rng);
    let r1 = rand_param(&[4], &mut rng);
    let m = rand_param(&[3, 4], &mut rng);
    let table = rand_param(&[6, 3], &mut rng);
    let params = named(&[("r0", &r0), ("r1", &r1), ("m", &m), ("table", &table)]);
    assert_grads(
        || {
            let s = Tensor::stack_rows(&[r0.clone(), r1.clone(), r0.clone()]);
            Ok(s.mul(&s).sum())
        },
        &params,
    );
    assert_grads(
        || {
            let c = Tensor::concat(&[r0.clone(), r1.clone()]);
            Ok(c.dot(&c))
        },
        &params,
    );
    assert_grads(|| Ok(m.select_row(1).dot(&m.select_row(2))), &params);
    assert_grads(|| Ok(r0.element(2).mul(&r1.element(0))), &params);
    assert_grads(
        || {
            // repeated id exercises scatter-add accumulation
            let e = Tensor::embedding_rows(&table, &[0, 2, 2, 5]);
            Ok(e.mul(&e).sum())
        },
        &params,
    );
}

#[test]
fn softmax_and_logsumexp_ops() {
    let mut rng = Rng::new(108);
    let a = rand_param(&[3, 5], &mut rng);
    let w = rand_param(&[3, 5], &mut rng);
    let params = named(&[("a", &a), ("w", &w)]);
    for temp in [0.5, 1.0, 2.0] {
        assert_grads(|| Ok(a.softmax_rows(temp)?.mul(&w).sum()), &params);
    }
}

#[test]
fn dropout_with_frozen_mask() {
    let mut outer = Rng::new(109);
    let a = rand_param(&[8], &mut outer);
    let params = named(&[("a", &a)]);
    // fresh rng per evaluation -> identical mask on every rebuild
    assert_grads(
        || {
            let mut rng = Rng::new(44);
            Ok(a.dropout(0.4, &mut rng, true)?.sum())
        },
        &params,
    );
}

#[test]
fn causal_attention_op() {
    let mut rng = Rng::new(110);
    let q = rand_param(&[4, 6], &mut rng);
    let k = rand_param(&[4, 6], &mut rng);
    let v = rand_param(&[4, 6], &mut rng);
    let probe = Tensor::constant(&[4, 6], (0..24).map(|_| rng.uniform(-1.0, 1.0)).collect());
    let params = named(&[("q", &q), ("k", &k), ("v", &v)]);
    for heads in [1, 2, 3] {
        assert_grads(
            || Ok(Tensor::causal_attention(&q, &k, &v, heads).mul(&probe).sum()),
            &params,
        );
    }
}

#[test]
fn normalize_composite() {
    let mut rng = Rng::new(111);
    let a = rand_param(&[5], &mut rng);
    let b = rand_param(&[5], &mut rng);
    let params = named(&[("a", &a), ("b", &b)]);
    assert_grads(
        || Ok(a.l2_normalize()?.dot(&b.l2_normalize()?)),
        &params,
    );
}
