use sclfish::data::{generate_synthetic, tokenize, EncodedPlatform, PlatformDataset, SynthConfig};
use sclfish::model::ModelSpec;
use sclfish::trainers::{Algorithm, TrainConfig, Trainer};

fn is_spurious(token: &str) -> bool {
    token.strip_prefix('p').is_some_and(|rest| rest.contains("spur"))
}

fn point_biserial(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let cov: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let vx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let vy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}

#[test]
fn spurious_correlation_is_calibrated() {
    let cfg = SynthConfig {
        samples_per_platform: 10_000,
        seed: 4,
        ..SynthConfig::default()
    };
    for (platform, d) in cfg.platforms.iter().zip(generate_synthetic(&cfg).unwrap()) {
        let presence: Vec<f64> = d
            .examples
            .iter()
            .map(|e| f64::from(u8::from(tokenize(&e.text).iter().any(|t| is_spurious(t)))))
            .collect();
        let labels: Vec<f64> = d.examples.iter().map(|e| f64::from(e.label)).collect();
        let r = point_biserial(&presence, &labels);
        assert!((r - platform.rho).abs() <= 0.05, "{}: {r} vs {}", d.platform, platform.rho);
    }
}

fn task_counts(d: &PlatformDataset, vocab: usize) -> Vec<(Vec<f64>, f64)> {
    d.examples
        .iter()
        .map(|e| {
            let mut x = vec![0.0; vocab + 1];
            x[vocab] = 1.0;
            for t in tokenize(&e.text) {
                if let Some(i) = t.strip_prefix("task").and_then(|s| s.parse::<usize>().ok()) {
                    x[i] += 1.0;
                }
            }
            (x, f64::from(e.label))
        })
        .collect()
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

#[test]
fn task_words_alone_are_linearly_separable_enough() {
    let cfg = SynthConfig::default();
    let data = generate_synthetic(&cfg).unwrap();
    let train: Vec<(Vec<f64>, f64)> = data
        .iter()
        .zip(&cfg.platforms)
        .filter(|(_, p)| !p.held_out)
        .flat_map(|(d, _)| task_counts(d, cfg.task_vocab))
        .collect();
    let dim = cfg.task_vocab + 1;
    let mut w = vec![0.0; dim];
    for _ in 0..300 {
        let mut g = vec![0.0; dim];
        for (x, y) in &train {
            let err = sigmoid(w.iter().zip(x).map(|(a, b)| a * b).sum()) - y;
            for (gk, xk) in g.iter_mut().zip(x) {
                *gk += err * xk / train.len() as f64;
            }
        }
        for (wk, gk) in w.iter_mut().zip(&g) {
            *wk -= 0.5 * gk;
        }
    }
    for d in &data {
        let rows = task_counts(d, cfg.task_vocab);
        let correct = rows
            .iter()
            .filter(|(x, y)| {
                let z: f64 = w.iter().zip(x).map(|(a, b)| a * b).sum();
                (z > 0.0) == (*y == 1.0)
            })
            .count();
        let acc = correct as f64 / rows.len() as f64;
        assert!(acc >= 0.85, "{}: task-word accuracy {acc}", d.platform);
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

/// Ĝ over per-platform diagnostic minibatches, sampled at matched sample
/// counts: one Fish iteration consumes as many samples as S ERM steps.
#[test]
fn fish_raises_inter_platform_gradient_alignment() {
    let spec = ModelSpec::new(4096, 32, 16).unwrap();
    let (mut erm_all, mut fish_all) = (Vec::new(), Vec::new());
    for seed in 0..5 {
        let data = generate_synthetic(&SynthConfig {
            seed,
            ..SynthConfig::default()
        })
        .unwrap();
        let train: Vec<EncodedPlatform> = data[..3].iter().map(|d| d.encode(spec.hash_buckets)).collect();
        let base = TrainConfig {
            epochs: 1,
            seed,
            trace_gip: true,
            ..TrainConfig::default()
        };
        let erm = TrainConfig {
            inner_lr: 0.05,
            ..base.clone()
        };
        let fish = TrainConfig {
            inner_lr: 1.0,
            meta_lr: 0.05,
            ..base
        };
        let e = Trainer::new(Algorithm::Erm, spec, erm, &train).unwrap().run().unwrap();
        let f = Trainer::new(Algorithm::Fish, spec, fish, &train).unwrap().run().unwrap();
        erm_all.extend(e.trace.iter().skip(2).step_by(3).map(|r| r.gip_hat.unwrap()));
        fish_all.extend(f.trace.iter().map(|r| r.gip_hat.unwrap()));
    }
    let (me, mf) = (median(erm_all), median(fish_all));
    assert!(mf > me, "median Ĝ: fish {mf} vs erm {me}");
}
