//! Central finite-difference verification of recorded gradients.
//!
//! The loss closure rebuilds its graph on every call against the same
//! parameter tensors, so a coordinate can be nudged, re-evaluated, and
//! restored. Comparison uses a relative tolerance with an absolute
//! floor: `|ad - fd| <= ABS_FLOOR + REL_TOL * max(|ad|, |fd|)`; the
//! floor keeps near-zero gradients (dead ReLU paths) from tripping on
//! finite-difference noise.

use alloc::string::String;
use alloc::vec::Vec;

use crate::error::Result;
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Central-difference step mandated throughout the project.
pub const FD_STEP: f64 = 1e-3;
/// Relative tolerance on the analytic/numeric agreement.
pub const REL_TOL: f64 = 1e-4;
/// Absolute floor for near-zero gradients.
pub const ABS_FLOOR: f64 = 1e-6;

/// One verified coordinate.
#[derive(Clone, Debug)]
pub struct CoordCheck {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

impl CoordCheck {
    pub fn passes(&self) -> bool {
        (self.analytic - self.numeric).abs()
            <= ABS_FLOOR + REL_TOL * self.analytic.abs().max(self.numeric.abs())
    }

    /// Error normalized by the allowed bound; values above 1 fail.
    pub fn severity(&self) -> f64 {
        (self.analytic - self.numeric).abs()
            / (ABS_FLOOR + REL_TOL * self.analytic.abs().max(self.numeric.abs()))
    }
}

/// Outcome of a gradient check run.
#[derive(Clone, Debug, Default)]
pub struct GradReport {
    pub checks: Vec<CoordCheck>,
}

impl GradReport {
    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(CoordCheck::passes)
    }

    pub fn failures(&self) -> impl Iterator<Item = &CoordCheck> {
        self.checks.iter().filter(|c| !c.passes())
    }

    pub fn worst(&self) -> Option<&CoordCheck> {
        self.checks
            .iter()
            .max_by(|a, b| a.severity().partial_cmp(&b.severity()).unwrap())
    }
}

fn numeric_grad(
    loss_fn: &mut dyn FnMut() -> Result<Tensor>,
    param: &Tensor,
    index: usize,
    step: f64,
) -> Result<f64> {
    let original = param.value_at(index);
    param.update_values(|v| v[index] = original + step);
    let plus = loss_fn()?.item();
    param.update_values(|v| v[index] = original - step);
    let minus = loss_fn()?.item();
    param.update_values(|v| v[index] = original);
    Ok((plus - minus) / (2.0 * step))
}

/// Check explicit `(param index, coordinate)` pairs.
pub fn check_coords(
    mut loss_fn: impl FnMut() -> Result<Tensor>,
    params: &[(String, Tensor)],
    coords: &[(usize, usize)],
    step: f64,
) -> Result<GradReport> {
    for (_, p) in params {
        p.zero_grad();
    }
    let loss = loss_fn()?;
    loss.backward()?;
    let analytic: Vec<f64> = coords
        .iter()
        .map(|&(p, i)| params[p].1.grad_at(i))
        .collect();

    let mut report = GradReport::default();
    for (&(p, i), &ad) in coords.iter().zip(&analytic) {
        let fd = numeric_grad(&mut loss_fn, &params[p].1, i, step)?;
        report.checks.push(CoordCheck {
            param: params[p].0.clone(),
            index: i,
            analytic: ad,
            numeric: fd,
        });
    }
    Ok(report)
}

/// Check every coordinate of every parameter.
pub fn check_all(
    loss_fn: impl FnMut() -> Result<Tensor>,
    params: &[(String, Tensor)],
    step: f64,
) -> Result<GradReport> {
    let mut coords = Vec::new();
    for (p, (_, t)) in params.iter().enumerate() {
        for i in 0..t.len() {
            coords.push((p, i));
        }
    }
    check_coords(loss_fn, params, &coords, step)
}

/// Check `n` coordinates sampled uniformly across all parameters.
pub fn check_sampled(
    loss_fn: impl FnMut() -> Result<Tensor>,
    params: &[(String, Tensor)],
    n: usize,
    rng: &mut Rng,
    step: f64,
) -> Result<GradReport> {
    let total: usize = params.iter().map(|(_, t)| t.len()).sum();
    let mut coords = Vec::with_capacity(n);
    for _ in 0..n {
        let mut flat = rng.below(total);
        for (p, (_, t)) in params.iter().enumerate() {
            if flat < t.len() {
                coords.push((p, flat));
                break;
            }
            flat -= t.len();
        }
    }
    check_coords(loss_fn, params, &coords, step)
}

/// Verify every differentiable primitive at fixed random points (kinks
/// avoided), merging one report across the operation families. Backs
/// the command-line gradient check.
pub fn primitive_suite(seed: u64) -> Result<GradReport> {
    use crate::tensor::Tensor;
    use alloc::string::ToString;
    use alloc::vec;

    let mut rng = Rng::new(seed);
    let mut merged = GradReport::default();
    let mut absorb = |r: GradReport| merged.checks.extend(r.checks);

    // dense arithmetic, reductions, broadcasts
    {
        let a = Tensor::param(&[3, 4], (0..12).map(|_| rng.uniform(-1.2, 1.2)).collect());
        let b = Tensor::param(&[3, 4], (0..12).map(|_| rng.uniform(0.6, 1.8)).collect());
        let w = Tensor::param(&[4, 3], (0..12).map(|_| rng.uniform(-1.0, 1.0)).collect());
        let row = Tensor::param(&[4], (0..4).map(|_| rng.uniform(-1.0, 1.0)).collect());
        let col = Tensor::param(&[3], (0..3).map(|_| rng.uniform(0.7, 1.5)).collect());
        let s = Tensor::param(&[1], vec![1.3]);
        let params = vec![
            ("a".to_string(), a.clone()),
            ("b".to_string(), b.clone()),
            ("w".to_string(), w.clone()),
            ("row".to_string(), row.clone()),
            ("col".to_string(), col.clone()),
            ("s".to_string(), s.clone()),
        ];
        absorb(check_all(
            || {
                let mixed = a
                    .add(&b)
                    .mul(&b)
                    .sub(&a.div(&b))
                    .add_scalar(0.3)
                    .mul_scalar(0.7)
                    .add_vec_row(&row)
                    .mul_vec_row(&row)
                    .sub_col(&col)
                    .div_col(&col)
                    .scale_by(&s)
                    .div_by(&s);
                let prod = mixed.matmul(&w).transpose();
                let vec_path = prod.matvec(&col).sigmoid();
                let reduced = prod
                    .row_mean()
                    .dot(&vec_path)
                    .add(&mixed.sum())
                    .add(&mixed.mean())
                    .add(&b.ln().sum())
                    .add(&b.sqrt().sum())
                    .add(&a.exp().mul_scalar(0.05).sum())
                    .add(&a.sin().cos().sum())
                    .add(&a.add_scalar(3.0).relu().sum())
                    .add(&a.clamp_min(-0.9).sum())
                    .add(&a.select_row(1).element(2));
                Ok(reduced)
            },
            &params,
            FD_STEP,
        )?);
    }

    // attention, softmax, embeddings, dropout, normalization
    {
        let q = Tensor::param(&[4, 6], (0..24).map(|_| rng.uniform(-1.0, 1.0)).collect());
        let k = Tensor::param(&[4, 6], (0..24).map(|_| rng.uniform(-1.0, 1.0)).collect());
        let v = Tensor::param(&[4, 6], (0..24).map(|_| rng.uniform(-1.0, 1.0)).collect());
        let table = Tensor::param(&[5, 4], (0..20).map(|_| rng.uniform(-1.0, 1.0)).collect());
        let u = Tensor::param(&[6], (0..6).map(|_| rng.uniform(0.4, 1.4)).collect());
        let probe = Tensor::constant(&[4, 6], (0..24).map(|_| rng.uniform(-1.0, 1.0)).collect());
        let params = vec![
            ("q".to_string(), q.clone()),
            ("k".to_string(), k.clone()),
            ("v".to_string(), v.clone()),
            ("table".to_string(), table.clone()),
            ("u".to_string(), u.clone()),
        ];
        absorb(check_all(
            || {
                let att = Tensor::causal_attention(&q, &k, &v, 2).mul(&probe).sum();
                let soft = q.softmax_rows(0.8)?.mul(&probe).sum();
                let emb = Tensor::embedding_rows(&table, &[0, 2, 2, 4]);
                let emb_loss = emb.mul(&emb).sum();
                let mut drop_rng = Rng::new(11);
                let dropped = u.dropout(0.3, &mut drop_rng, true)?.sum();
                let normed = u.l2_normalize()?.logsumexp();
                let stacked = Tensor::stack_rows(&[u.clone(), u.neg()]);
                let cat = Tensor::concat(&[stacked.row_mean(), u.clone()]).sum();
                Ok(att.add(&soft).add(&emb_loss).add(&dropped).add(&normed).add(&cat))
            },
            &params,
            FD_STEP,
        )?);
    }

    Ok(merged)
}
