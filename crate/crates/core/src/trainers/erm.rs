use std::collections::BTreeMap;

use rand::seq::SliceRandom;

use crate::data::{EncodedPlatform, Sample};

use super::{ce_gradient, check_platforms, scl_gradient, TraceRecord, TrainConfig, TrainError, TrainState};

/// One pass of minibatch SGD over the concatenation of all platforms, in a
/// fresh random order. The last minibatch may be short.
pub fn erm_epoch(state: &mut TrainState, platforms: &[EncodedPlatform], cfg: &TrainConfig) -> Result<(), TrainError> {
    pooled_epoch(state, platforms, cfg, false)
}

/// Like [`erm_epoch`], but each cross-entropy step (rate α) is followed by a
/// contrastive step (rate α′) on the same minibatch.
pub fn scl_erm_epoch(
    state: &mut TrainState,
    platforms: &[EncodedPlatform],
    cfg: &TrainConfig,
) -> Result<(), TrainError> {
    pooled_epoch(state, platforms, cfg, true)
}

fn pooled_epoch(
    state: &mut TrainState,
    platforms: &[EncodedPlatform],
    cfg: &TrainConfig,
    contrastive: bool,
) -> Result<(), TrainError> {
    check_platforms(platforms)?;
    cfg.validate()?;
    let pool: Vec<&Sample> = platforms.iter().flat_map(|p| p.samples.iter()).collect();
    let mut order: Vec<usize> = (0..pool.len()).collect();
    order.shuffle(&mut state.data_rng);

    let mut loss_sum = 0.0;
    let mut batches = 0usize;
    for chunk in order.chunks(cfg.batch_size) {
        let (gip_hat, idgm_penalty) = state.diagnose(platforms, cfg)?;
        let batch: Vec<&Sample> = chunk.iter().map(|&i| pool[i]).collect();
        let iteration = state.step + 1;

        let (loss, grad) = ce_gradient(&state.spec, &state.params, &batch)?;
        if !loss.is_finite() || !state.params.descend(&grad, cfg.inner_lr)? {
            return Err(TrainError::NonFinite { iteration });
        }

        let scl_loss = if contrastive {
            let (l, g) = scl_gradient(&state.spec, &state.params, &batch, cfg.temperature)?;
            if !l.is_finite() || !state.params.descend(&g, cfg.scl_lr)? {
                return Err(TrainError::NonFinite { iteration });
            }
            Some(l)
        } else {
            None
        };

        state.step = iteration;
        loss_sum += loss;
        batches += 1;
        state.trace.push(TraceRecord {
            iter: iteration,
            epoch: state.epoch + 1,
            platform_losses: BTreeMap::from([("pooled".to_owned(), loss)]),
            scl_loss,
            gip_hat,
            idgm_penalty,
        });
    }
    state.epoch += 1;
    state.epoch_losses.push(loss_sum / batches as f64);
    Ok(())
}
