use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

use crate::data::{EncodedPlatform, Sample};
use crate::model::{ModelSpec, ParamVector};

use super::{ce_gradient, check_platforms, scl_gradient, MetaSign, TraceRecord, TrainConfig, TrainError, TrainState};

#[derive(Debug, Clone)]
struct Cursor {
    order: Vec<usize>,
    pos: usize,
}

/// Per-platform minibatch cursors plus the platform visiting order.
///
/// Each platform walks through a random permutation of its samples in
/// chunks of the batch size (the last chunk may be short); when the
/// permutation is used up a fresh one is drawn from the identity. With a
/// single platform this visits minibatches exactly as ERM does.
#[derive(Debug, Clone)]
pub struct DomainBatchSchedule {
    cursors: Vec<Cursor>,
}

impl DomainBatchSchedule {
    pub fn new(platforms: &[EncodedPlatform]) -> Result<Self, TrainError> {
        check_platforms(platforms)?;
        Ok(Self {
            cursors: platforms
                .iter()
                .map(|p| Cursor {
                    order: Vec::new(),
                    pos: p.len(),
                })
                .collect(),
        })
    }

    pub fn platforms(&self) -> usize {
        self.cursors.len()
    }

    /// A fresh random visiting order over all platforms; every platform
    /// appears exactly once.
    pub fn next_order(&self, rng: &mut ChaCha8Rng) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.cursors.len()).collect();
        order.shuffle(rng);
        order
    }

    /// Sample indices of the next minibatch of `platform`.
    pub fn next_batch(&mut self, platform: usize, batch_size: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
        let cursor = &mut self.cursors[platform];
        if cursor.pos >= cursor.order.len() {
            let n = cursor.order.len().max(cursor.pos);
            cursor.order = (0..n).collect();
            cursor.order.shuffle(rng);
            cursor.pos = 0;
        }
        let end = (cursor.pos + batch_size).min(cursor.order.len());
        let batch = cursor.order[cursor.pos..end].to_vec();
        cursor.pos = end;
        batch
    }
}

/// θ̃ starts as a copy of θ and takes one SGD step per minibatch, in
/// order, each gradient evaluated at the current θ̃. Returns θ̃ and the
/// cross-entropy of each minibatch.
pub fn fish_inner_loop(
    spec: &ModelSpec,
    params: &ParamVector,
    batches: &[Vec<&Sample>],
    inner_lr: f64,
) -> Result<(ParamVector, Vec<f64>), TrainError> {
    let mut clone = params.clone();
    let mut losses = Vec::with_capacity(batches.len());
    for batch in batches {
        let (loss, grad) = ce_gradient(spec, &clone, batch)?;
        clone.descend(&grad, inner_lr)?;
        losses.push(loss);
    }
    Ok((clone, losses))
}

/// θ ± ε(θ̃ − θ).
///
/// The `Toward` step is evaluated from whichever endpoint is nearer, so
/// ε = 0 returns θ and ε = 1 returns θ̃ bit for bit.
pub fn fish_meta_update(
    params: &ParamVector,
    inner: &ParamVector,
    meta_lr: f64,
    sign: MetaSign,
) -> Result<ParamVector, TrainError> {
    if params.len() != inner.len() {
        return Err(TrainError::LengthMismatch(params.len(), inner.len()));
    }
    let values = params
        .as_slice()
        .iter()
        .zip(inner.as_slice())
        .map(|(&t, &c)| match sign {
            MetaSign::Toward if meta_lr <= 0.5 => t + meta_lr * (c - t),
            MetaSign::Toward => c - (1.0 - meta_lr) * (c - t),
            MetaSign::Away => t - meta_lr * (c - t),
        })
        .collect();
    Ok(ParamVector::from_vec(values))
}

/// What one outer iteration observed.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub platform_losses: Vec<f64>,
    pub scl_loss: Option<f64>,
}

/// Inner loop over the given per-platform minibatches (already in visiting
/// order), then the meta step.
pub fn fish_step(
    state: &mut TrainState,
    batches: &[Vec<&Sample>],
    cfg: &TrainConfig,
) -> Result<StepOutcome, TrainError> {
    let iteration = state.step + 1;
    let (inner, losses) = fish_inner_loop(&state.spec, &state.params, batches, cfg.inner_lr)?;
    let updated = fish_meta_update(&state.params, &inner, cfg.meta_lr, cfg.meta_sign)?;
    if !updated.is_finite() || losses.iter().any(|l| !l.is_finite()) {
        return Err(TrainError::NonFinite { iteration });
    }
    state.params = updated;
    state.step = iteration;
    Ok(StepOutcome {
        platform_losses: losses,
        scl_loss: None,
    })
}

/// [`fish_step`], then contrastive updates: the samples consumed by the
/// inner loop are pooled, reshuffled into minibatches of the batch size,
/// and each one takes θ ← θ − α′·g_scl with g_scl evaluated at the current
/// (post-meta-step) θ.
pub fn scl_fish_step(
    state: &mut TrainState,
    batches: &[Vec<&Sample>],
    cfg: &TrainConfig,
) -> Result<StepOutcome, TrainError> {
    let mut outcome = fish_step(state, batches, cfg)?;
    let mut pool: Vec<&Sample> = batches.iter().flatten().copied().collect();
    pool.shuffle(&mut state.scl_rng);
    let mut total = 0.0;
    let mut count = 0usize;
    for chunk in pool.chunks(cfg.batch_size) {
        let (loss, grad) = scl_gradient(&state.spec, &state.params, chunk, cfg.temperature)?;
        if !loss.is_finite() || !state.params.descend(&grad, cfg.scl_lr)? {
            return Err(TrainError::NonFinite { iteration: state.step });
        }
        total += loss;
        count += 1;
    }
    outcome.scl_loss = Some(if count == 0 { 0.0 } else { total / count as f64 });
    Ok(outcome)
}

/// Outer iterations per epoch: enough for the platforms' combined sample
/// count to pass through once, i.e. ⌈N / (S·B)⌉.
fn iterations_per_epoch(platforms: &[EncodedPlatform], batch_size: usize) -> usize {
    let total: usize = platforms.iter().map(EncodedPlatform::len).sum();
    total.div_ceil(platforms.len() * batch_size)
}

fn fish_family_epoch(
    state: &mut TrainState,
    schedule: &mut DomainBatchSchedule,
    platforms: &[EncodedPlatform],
    cfg: &TrainConfig,
    contrastive: bool,
) -> Result<(), TrainError> {
    check_platforms(platforms)?;
    cfg.validate()?;
    if schedule.platforms() != platforms.len() {
        return Err(TrainError::LengthMismatch(schedule.platforms(), platforms.len()));
    }
    let mut loss_sum = 0.0;
    let iterations = iterations_per_epoch(platforms, cfg.batch_size);
    for _ in 0..iterations {
        let (gip_hat, idgm_penalty) = state.diagnose(platforms, cfg)?;
        let order = schedule.next_order(&mut state.data_rng);
        let batches: Vec<Vec<&Sample>> = order
            .iter()
            .map(|&p| {
                schedule
                    .next_batch(p, cfg.batch_size, &mut state.data_rng)
                    .into_iter()
                    .map(|i| &platforms[p].samples[i])
                    .collect()
            })
            .collect();

        let outcome = if contrastive {
            scl_fish_step(state, &batches, cfg)?
        } else {
            fish_step(state, &batches, cfg)?
        };

        loss_sum += outcome.platform_losses.iter().sum::<f64>() / outcome.platform_losses.len() as f64;
        let platform_losses: BTreeMap<String, f64> = order
            .iter()
            .zip(&outcome.platform_losses)
            .map(|(&p, &l)| (platforms[p].platform.clone(), l))
            .collect();
        state.trace.push(TraceRecord {
            iter: state.step,
            epoch: state.epoch + 1,
            platform_losses,
            scl_loss: outcome.scl_loss,
            gip_hat,
            idgm_penalty,
        });
    }
    state.epoch += 1;
    state.epoch_losses.push(loss_sum / iterations as f64);
    Ok(())
}

pub fn fish_epoch(
    state: &mut TrainState,
    schedule: &mut DomainBatchSchedule,
    platforms: &[EncodedPlatform],
    cfg: &TrainConfig,
) -> Result<(), TrainError> {
    fish_family_epoch(state, schedule, platforms, cfg, false)
}

pub fn scl_fish_epoch(
    state: &mut TrainState,
    schedule: &mut DomainBatchSchedule,
    platforms: &[EncodedPlatform],
    cfg: &TrainConfig,
) -> Result<(), TrainError> {
    fish_family_epoch(state, schedule, platforms, cfg, true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::FeatureVector;
    use crate::trainers::{erm_epoch, stream, DATA_STREAM};

    fn platform(name: &str, n: usize, offset: usize) -> EncodedPlatform {
        EncodedPlatform {
            platform: name.into(),
            samples: (0..n)
                .map(|i| Sample {
                    features: FeatureVector::from_counts(16, &[((i + offset) % 8, 1), (8 + (i * 5 + offset) % 8, 1)])
                        .unwrap(),
                    label: ((i / 2 + offset) % 2) as u8,
                })
                .collect(),
        }
    }

    fn spec() -> ModelSpec {
        ModelSpec::new(16, 4, 3).unwrap()
    }

    fn p(v: &[f64]) -> ParamVector {
        ParamVector::from_vec(v.to_vec())
    }

    #[test]
    fn meta_update_arithmetic() {
        let t = p(&[0.0, 0.0]);
        let c = p(&[1.0, 2.0]);
        assert_eq!(fish_meta_update(&t, &c, 0.5, MetaSign::Toward).unwrap(), p(&[0.5, 1.0]));
        assert_eq!(fish_meta_update(&t, &c, 0.0, MetaSign::Toward).unwrap(), t);
        assert_eq!(fish_meta_update(&t, &c, 1.0, MetaSign::Toward).unwrap(), c);
        assert_eq!(fish_meta_update(&t, &c, 0.5, MetaSign::Away).unwrap(), p(&[-0.5, -1.0]));
        assert!(fish_meta_update(&t, &p(&[1.0]), 0.5, MetaSign::Toward).is_err());
    }

    #[test]
    fn meta_update_endpoints_exact_for_awkward_values() {
        let t = p(&[1.0, -3.7e-12, 0.1, 123.456]);
        let c = p(&[2f64.powi(-60), 5.5, 0.30000000000000004, -9.0e10]);
        assert_eq!(fish_meta_update(&t, &c, 1.0, MetaSign::Toward).unwrap(), c);
        assert_eq!(fish_meta_update(&t, &c, 0.0, MetaSign::Toward).unwrap(), t);
    }

    #[test]
    fn inner_loop_with_zero_rate_is_identity() {
        let plats = [platform("a", 6, 0), platform("b", 6, 1)];
        let params = crate::model::init_params(&spec(), 2);
        let batches: Vec<Vec<&Sample>> = plats.iter().map(|p| p.samples.iter().take(3).collect()).collect();
        let (clone, losses) = fish_inner_loop(&spec(), &params, &batches, 0.0).unwrap();
        assert_eq!(clone, params);
        assert_eq!(losses.len(), 2);
    }

    #[test]
    fn inner_loop_single_platform_is_one_sgd_step() {
        let plat = platform("a", 5, 0);
        let params = crate::model::init_params(&spec(), 2);
        let batch: Vec<&Sample> = plat.samples.iter().collect();
        let (clone, _) = fish_inner_loop(&spec(), &params, std::slice::from_ref(&batch), 0.4).unwrap();
        let (_, g) = ce_gradient(&spec(), &params, &batch).unwrap();
        let mut expected = params.clone();
        expected.descend(&g, 0.4).unwrap();
        assert_eq!(clone, expected);
    }

    #[test]
    fn inner_loop_two_platforms_sequential_steps() {
        let plats = [platform("a", 4, 0), platform("b", 4, 3)];
        let params = crate::model::init_params(&spec(), 4);
        let b0: Vec<&Sample> = plats[0].samples.iter().collect();
        let b1: Vec<&Sample> = plats[1].samples.iter().collect();
        let (clone, _) = fish_inner_loop(&spec(), &params, &[b0.clone(), b1.clone()], 0.25).unwrap();
        let mut expected = params.clone();
        let (_, g0) = ce_gradient(&spec(), &expected, &b0).unwrap();
        expected.descend(&g0, 0.25).unwrap();
        let (_, g1) = ce_gradient(&spec(), &expected, &b1).unwrap();
        expected.descend(&g1, 0.25).unwrap();
        assert_eq!(clone, expected);
    }

    #[test]
    fn schedule_visits_every_platform_once_per_iteration() {
        let plats = [platform("a", 5, 0), platform("b", 9, 1), platform("c", 2, 2)];
        let mut sched = DomainBatchSchedule::new(&plats).unwrap();
        let mut rng = stream(3, DATA_STREAM);
        for _ in 0..20 {
            let mut order = sched.next_order(&mut rng);
            order.sort_unstable();
            assert_eq!(order, vec![0, 1, 2]);
        }
        // platform b (9 samples, batch 4): 4, 4, 1, then a fresh permutation
        let sizes: Vec<usize> = (0..4).map(|_| sched.next_batch(1, 4, &mut rng).len()).collect();
        assert_eq!(sizes, [4, 4, 1, 4]);
    }

    #[test]
    fn schedule_rejects_empty_platform() {
        let plats = [platform("a", 5, 0), EncodedPlatform { platform: "e".into(), samples: vec![] }];
        assert!(matches!(DomainBatchSchedule::new(&plats), Err(TrainError::EmptyPlatform(_))));
    }

    #[test]
    fn single_platform_full_meta_step_equals_erm() {
        let cfg = TrainConfig {
            inner_lr: 0.3,
            meta_lr: 1.0,
            scl_lr: 0.0,
            batch_size: 4,
            ..TrainConfig::default()
        };
        let plats = [platform("a", 11, 0)];
        let mut erm = TrainState::new(spec(), &cfg);
        let mut fish = TrainState::new(spec(), &cfg);
        let mut scl_fish = TrainState::new(spec(), &cfg);
        let mut s1 = DomainBatchSchedule::new(&plats).unwrap();
        let mut s2 = DomainBatchSchedule::new(&plats).unwrap();
        for _ in 0..4 {
            erm_epoch(&mut erm, &plats, &cfg).unwrap();
            fish_epoch(&mut fish, &mut s1, &plats, &cfg).unwrap();
            scl_fish_epoch(&mut scl_fish, &mut s2, &plats, &cfg).unwrap();
            assert_eq!(erm.params, fish.params);
            assert_eq!(erm.params, scl_fish.params);
        }
        assert_eq!(erm.step, fish.step);
    }

    #[test]
    fn zero_scl_rate_reproduces_fish() {
        let cfg = TrainConfig {
            inner_lr: 0.3,
            meta_lr: 0.2,
            scl_lr: 0.0,
            batch_size: 3,
            ..TrainConfig::default()
        };
        let plats = [platform("a", 7, 0), platform("b", 10, 1)];
        let mut fish = TrainState::new(spec(), &cfg);
        let mut scl = TrainState::new(spec(), &cfg);
        let mut s1 = DomainBatchSchedule::new(&plats).unwrap();
        let mut s2 = DomainBatchSchedule::new(&plats).unwrap();
        for _ in 0..3 {
            fish_epoch(&mut fish, &mut s1, &plats, &cfg).unwrap();
            scl_fish_epoch(&mut scl, &mut s2, &plats, &cfg).unwrap();
        }
        assert_eq!(fish.params, scl.params);
        assert_eq!(fish.epoch_losses, scl.epoch_losses);
    }

    #[test]
    fn frozen_when_meta_and_scl_rates_zero() {
        let cfg = TrainConfig {
            inner_lr: 0.3,
            meta_lr: 0.0,
            scl_lr: 0.0,
            batch_size: 3,
            ..TrainConfig::default()
        };
        let plats = [platform("a", 7, 0), platform("b", 10, 1)];
        let mut state = TrainState::new(spec(), &cfg);
        let before = state.params.clone();
        let mut sched = DomainBatchSchedule::new(&plats).unwrap();
        scl_fish_epoch(&mut state, &mut sched, &plats, &cfg).unwrap();
        assert_eq!(state.params, before);
    }

    #[test]
    fn scl_fish_step_matches_scripted_replay() {
        let cfg = TrainConfig {
            inner_lr: 0.3,
            meta_lr: 0.4,
            scl_lr: 0.2,
            temperature: 0.5,
            batch_size: 2,
            ..TrainConfig::default()
        };
        let plats = [platform("a", 4, 0), platform("b", 4, 1)];
        let mut state = TrainState::new(spec(), &cfg);
        let theta0 = state.params.clone();
        let mut sched = DomainBatchSchedule::new(&plats).unwrap();
        let order = sched.next_order(&mut state.data_rng);
        let batches: Vec<Vec<&Sample>> = order
            .iter()
            .map(|&p| sched.next_batch(p, 2, &mut state.data_rng).into_iter().map(|i| &plats[p].samples[i]).collect())
            .collect();
        let mut scl_rng = stream(cfg.seed, super::super::SCL_STREAM);
        scl_fish_step(&mut state, &batches, &cfg).unwrap();

        // replay: clone, two sequential SGD steps, meta step, then
        // contrastive steps over the reshuffled consumed samples
        let mut clone = theta0.clone();
        for b in &batches {
            let (_, g) = ce_gradient(&spec(), &clone, b).unwrap();
            clone.descend(&g, 0.3).unwrap();
        }
        let mut theta: Vec<f64> = theta0
            .as_slice()
            .iter()
            .zip(clone.as_slice())
            .map(|(t, c)| t + 0.4 * (c - t))
            .collect::<Vec<_>>();
        let mut pool: Vec<&Sample> = batches.iter().flatten().copied().collect();
        pool.shuffle(&mut scl_rng);
        for chunk in pool.chunks(2) {
            let params = ParamVector::from_vec(theta.clone());
            let (_, g) = scl_gradient(&spec(), &params, chunk, 0.5).unwrap();
            for (t, gi) in theta.iter_mut().zip(g.as_slice()) {
                *t -= 0.2 * gi;
            }
        }
        assert_eq!(state.params.as_slice(), theta.as_slice());
    }
}
