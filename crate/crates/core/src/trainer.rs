//! Training loop: seeded shuffling, one fresh negative per target and epoch,
//! Adam per batch, validation-driven model selection and early stopping.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::data::SplitDataset;
use crate::error::{Error, Result};
use crate::eval::{evaluate, with_pool, EvalSplit};
use crate::model::{MojitoModel, TrainingExample};
use crate::tensor::AdamConfig;

/// splitmix64 finalizer over a seed and two stream indices.
pub fn derive_seed(seed: u64, a: u64, b: u64) -> u64 {
    let mut z = seed
        .wrapping_add(a.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(b.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_ndcg10: f64,
    pub val_hr10: f64,
}

impl EpochLog {
    pub const HEADER: &'static str = "epoch\ttrain_loss\tval_ndcg10\tval_hr10";

    pub fn to_tsv(&self) -> String {
        format!(
            "{}\t{:.6}\t{:.6}\t{:.6}",
            self.epoch, self.train_loss, self.val_ndcg10, self.val_hr10
        )
    }
}

/// Stateful epoch runner over one split.
pub struct Trainer<'a> {
    pub model: MojitoModel,
    split: &'a SplitDataset,
    adam: AdamConfig,
    epoch: usize,
}

impl<'a> Trainer<'a> {
    pub fn new(model: MojitoModel, split: &'a SplitDataset) -> Result<Self> {
        if split.n_items != model.n_items || split.n_users != model.n_users {
            return Err(Error::Contract(format!(
                "model sized for {} users / {} items, split has {} / {}",
                model.n_users, model.n_items, split.n_users, split.n_items
            )));
        }
        if split.schema != model.config.schema {
            return Err(Error::Contract(format!(
                "model context schema {} differs from the dataset's {}",
                model.config.schema, split.schema
            )));
        }
        let adam = AdamConfig::with_lr(model.config.lr);
        Ok(Self {
            model,
            split,
            adam,
            epoch: 0,
        })
    }

    /// Number of completed epochs.
    pub fn epochs_done(&self) -> usize {
        self.epoch
    }

    /// One pass over all users; returns the summed training loss.
    pub fn run_epoch(&mut self) -> Result<f64> {
        let seed = self.model.config.seed;
        let epoch = self.epoch as u64;
        let mut order: Vec<usize> = (0..self.split.users.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(
            seed,
            epoch,
            u64::MAX,
        )));
        let mut total = 0.0;
        for batch in order.chunks(self.model.config.batch_size) {
            let model = &self.model;
            let split = self.split;
            let results = with_pool(|| {
                batch
                    .par_iter()
                    .map(|&i| {
                        let u = &split.users[i];
                        let mut rng =
                            ChaCha8Rng::seed_from_u64(derive_seed(seed, epoch, u.user as u64));
                        let Some(ex) = TrainingExample::from_events(
                            u.user,
                            &u.train,
                            &u.history,
                            &model.config,
                            split.n_items,
                            &mut rng,
                        )?
                        else {
                            return Ok(None);
                        };
                        model.example_gradients(&ex, &mut rng).map(Some)
                    })
                    .collect::<Result<Vec<_>>>()
            });
            let results = results.map_err(|e| match e {
                Error::NonFinite(msg) => {
                    let users: Vec<usize> = batch.iter().map(|&i| split.users[i].user).collect();
                    Error::NonFinite(format!(
                        "epoch {}: {msg}; batch users {users:?}",
                        self.epoch + 1
                    ))
                }
                other => other,
            })?;
            let mut any = false;
            for (loss, grads) in results.into_iter().flatten() {
                total += loss;
                self.model.store.accumulate(&grads)?;
                any = true;
            }
            if any {
                self.model.store.adam_step(&self.adam)?;
                if let Some((name, _)) =
                    self.model.store.iter().find(|(_, p)| !p.tensor.is_finite())
                {
                    return Err(Error::NonFinite(format!(
                        "parameter {name} after epoch {} update",
                        self.epoch + 1
                    )));
                }
            }
        }
        self.epoch += 1;
        Ok(total)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters of the epoch with the best validation NDCG@10.
    pub best: MojitoModel,
    pub best_epoch: usize,
    pub log: Vec<EpochLog>,
    pub stopped_early: bool,
}

/// Trains for up to `config.epochs` epochs, validating after each one.
/// `patience == 0` disables early stopping.
pub fn train(
    model: MojitoModel,
    split: &SplitDataset,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    let cfg = model.config.clone();
    let mut best = model.clone();
    let mut trainer = Trainer::new(model, split)?;
    let mut best_ndcg = f64::NEG_INFINITY;
    let mut best_epoch = 0;
    let mut since_best = 0;
    let mut log = Vec::new();
    let mut stopped_early = false;
    for _ in 0..cfg.epochs {
        let loss = trainer.run_epoch()?;
        let val = evaluate(
            &trainer.model,
            split,
            EvalSplit::Validation,
            cfg.seed,
            cfg.eval_negatives,
        )?;
        let entry = EpochLog {
            epoch: trainer.epochs_done(),
            train_loss: loss,
            val_ndcg10: val.ndcg10,
            val_hr10: val.hr10,
        };
        on_epoch(&entry);
        log.push(entry);
        if val.ndcg10 > best_ndcg {
            best_ndcg = val.ndcg10;
            best_epoch = entry.epoch;
            best = trainer.model.clone();
            since_best = 0;
        } else {
            since_best += 1;
            if cfg.patience > 0 && since_best >= cfg.patience {
                stopped_early = true;
                break;
            }
        }
    }
    Ok(TrainOutcome {
        best,
        best_epoch,
        log,
        stopped_early,
    })
}
