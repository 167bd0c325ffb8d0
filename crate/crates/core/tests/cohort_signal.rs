//! Signal-floor oracle: a plain logistic probe on concatenated raw
//! features must reach AUROC >= 0.70 on a held-out half of a binary
//! 2000-patient cohort. The probe is independent of the model pipeline.

use vlrisk_core::cohort::{generate_cohort, CohortConfig, PatientRecord};
use vlrisk_core::metrics::auroc_binary;

fn raw_features(p: &PatientRecord, d_img: usize, vocab: usize, n_codes: usize) -> Vec<f64> {
    let t = p.visits.len() as f64;
    let mut img_mean = vec![0.0; d_img];
    let mut tok_freq = vec![0.0; vocab];
    let mut dx_ind = vec![0.0; n_codes];
    for v in &p.visits {
        for (a, b) in img_mean.iter_mut().zip(&v.img) {
            *a += b / t;
        }
        for &tok in &v.tokens {
            tok_freq[tok as usize] += 1.0;
        }
        for &d in &v.dx {
            if (d as usize) < n_codes {
                dx_ind[d as usize] = 1.0;
            }
        }
    }
    let total_tok: f64 = tok_freq.iter().sum::<f64>().max(1.0);
    for f in tok_freq.iter_mut() {
        *f /= total_tok;
    }
    let mut out = img_mean;
    out.extend(tok_freq);
    out.extend(dx_ind);
    out.push((p.age as f64 - 58.0) / 20.0);
    out.push(t / 8.0);
    out
}

/// Plain-gradient logistic regression, L2-regularized.
fn logistic_probe(xs: &[Vec<f64>], ys: &[f64], epochs: usize, lr: f64) -> Vec<f64> {
    let d = xs[0].len();
    let n = xs.len() as f64;
    let mut w = vec![0.0; d + 1];
    for _ in 0..epochs {
        let mut grad = vec![0.0; d + 1];
        for (x, &y) in xs.iter().zip(ys) {
            let z: f64 = w[d] + x.iter().zip(&w[..d]).map(|(a, b)| a * b).sum::<f64>();
            let p = 1.0 / (1.0 + (-z).exp());
            let err = p - y;
            for (g, xi) in grad[..d].iter_mut().zip(x) {
                *g += err * xi / n;
            }
            grad[d] += err / n;
        }
        for i in 0..d {
            w[i] -= lr * (grad[i] + 1e-4 * w[i]);
        }
        w[d] -= lr * grad[d];
    }
    w
}

#[test]
fn logistic_probe_reaches_signal_floor() {
    let cfg = CohortConfig {
        n_patients: 2000,
        seed: 314,
        ..CohortConfig::default()
    };
    let cohort = generate_cohort(&cfg).unwrap();
    let features: Vec<Vec<f64>> = cohort
        .iter()
        .map(|p| raw_features(p, cfg.d_img, cfg.vocab, cfg.n_codes))
        .collect();
    let labels: Vec<f64> = cohort.iter().map(|p| p.label as f64).collect();

    let half = cohort.len() / 2;
    let w = logistic_probe(&features[..half], &labels[..half], 300, 2.0);
    let d = features[0].len();
    let scores: Vec<f64> = features[half..]
        .iter()
        .map(|x| w[d] + x.iter().zip(&w[..d]).map(|(a, b)| a * b).sum::<f64>())
        .collect();
    let flags: Vec<bool> = labels[half..].iter().map(|&y| y > 0.5).collect();
    let auroc = auroc_binary(&scores, &flags).unwrap();
    assert!(auroc >= 0.70, "probe AUROC {auroc} below the 0.70 sanity floor");
    println!("probe AUROC: {auroc:.4}");
}
