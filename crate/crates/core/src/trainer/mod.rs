//! Two-stage training: the auto-encoder on groundtruth masks first, then
//! the generator and discriminator alternately with the encoder frozen.

mod adam;
mod config;
mod log;

use std::time::Instant;

use ndarray::{Array2, Array4, Axis};
use rand::seq::SliceRandom;

use crate::data::{augment, augment_mask, SlicePair, Volume};
use crate::losses::{
    adversarial_loss_with_grad, combine, dice_loss_with_grad, discriminator_loss_with_grad, hard_dice,
    latent_loss_with_grad,
};
use crate::networks::{Decoder, Discriminator, Encoder, Generator, TrainingMeta};
use crate::nn::ParamStore;
use crate::rng::{keyed, Purpose};
use crate::{Error, Result};

pub use adam::{adam_step, AdamConfig, AdamState};
pub use config::{Ablation, LrSchedule, NetworkSettings, Optimizer, StageConfig, TrainConfig};
pub use log::{Stage, StepRecord, TrainLog};

/// Stacks slices into an `(n, 1, h, w)` batch.
pub fn to_batch<I>(slices: I) -> Array4<f32>
where
    I: IntoIterator<Item = Array2<f32>>,
{
    let views: Vec<Array2<f32>> = slices.into_iter().collect();
    let (h, w) = views[0].dim();
    let mut out = Array4::zeros((views.len(), 1, h, w));
    for (mut dst, src) in out.outer_iter_mut().zip(&views) {
        dst.index_axis_mut(Axis(0), 0).assign(src);
    }
    out
}

fn mask_f32(m: &Array2<u8>) -> Array2<f32> {
    m.mapv(f32::from)
}

fn check_size(what: &str, got: (usize, usize), want: (usize, usize)) -> Result<()> {
    if got != want {
        return Err(Error::Shape(format!("{what}: slice {got:?} but networks expect {want:?}")));
    }
    Ok(())
}

fn finite(value: f64, tensor: &str, step: u64) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::NonFinite {
            tensor: tensor.into(),
            step,
        })
    }
}

/// Seeded permutation of `0..n` for `epoch`.
pub fn epoch_order(seed: u64, epoch: usize, n: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut keyed(seed, Purpose::Shuffle, epoch as u64));
    order
}

/// Trained auto-encoder.
#[derive(Debug, Clone)]
pub struct CaeModel {
    pub encoder: Encoder<f32>,
    pub decoder: Decoder<f32>,
    pub log: TrainLog,
}

impl CaeModel {
    pub fn reconstruct(&self, masks: &Array4<f32>) -> Result<Array4<f32>> {
        self.decoder.forward(&self.encoder.forward(masks)?)
    }

    /// Mean per-mask hard Dice of the reconstructions, in `[0, 1]`.
    pub fn reconstruction_dice(&self, masks: &[Array2<u8>]) -> Result<f64> {
        if masks.is_empty() {
            return Err(Error::EmptyDataset("no masks to reconstruct".into()));
        }
        let mut scores = Vec::with_capacity(masks.len());
        for chunk in masks.chunks(32) {
            let y = to_batch(chunk.iter().map(mask_f32));
            scores.extend(hard_dice(&y, &self.reconstruct(&y)?)?);
        }
        Ok(scores.iter().sum::<f64>() / scores.len() as f64)
    }
}

/// Stage 1: fits `g(f(y)) ~ y` with the Dice loss on augmented masks.
/// Empty masks carry no shape and are dropped.
pub fn train_cae(masks: &[Array2<u8>], cfg: &TrainConfig) -> Result<CaeModel> {
    cfg.validate()?;
    let size = cfg.networks.input_size();
    for (k, m) in masks.iter().enumerate() {
        check_size("training mask", m.dim(), size)?;
        if m.iter().any(|&v| v > 1) {
            return Err(Error::Validation(format!("training mask {k} is not binary")));
        }
    }
    let masks: Vec<&Array2<u8>> = masks.iter().filter(|m| m.iter().any(|&v| v == 1)).collect();
    if masks.is_empty() {
        return Err(Error::EmptyDataset("no non-empty masks for auto-encoder training".into()));
    }
    let stage = &cfg.stage1;
    let mut encoder = Encoder::<f32>::new(cfg.networks.cae.clone(), cfg.seed)?;
    let mut decoder = Decoder::<f32>::new(cfg.networks.cae.clone(), cfg.seed)?;
    let mut ge = encoder.params().zeros_like();
    let mut gd = decoder.params().zeros_like();
    let mut se = AdamState::new(encoder.params(), cfg.adam);
    let mut sd = AdamState::new(decoder.params(), cfg.adam);
    let mut log = TrainLog::default();
    let n = masks.len();
    let mut step = 0u64;
    let clock = Instant::now();
    for epoch in 0..stage.epochs {
        let lr = stage.lr_at(epoch);
        let order = epoch_order(cfg.seed, epoch, n);
        for (b, chunk) in order.chunks(stage.batch_size).enumerate() {
            let base = (epoch * n + b * stage.batch_size) as u64;
            let y = to_batch(
                chunk
                    .iter()
                    .enumerate()
                    .map(|(i, &k)| mask_f32(&augment_mask(masks[k], &cfg.augmentation, base + i as u64))),
            );
            step += 1;
            let et = encoder.forward_train(&y)?;
            let dt = decoder.forward_train(et.code())?;
            let (loss, dout) = dice_loss_with_grad(&y, dt.output())?;
            let loss = finite(loss as f64, "cae loss", step)?;
            ge.fill_zero();
            gd.fill_zero();
            let dcode = decoder.backward(&dt, &dout, &mut gd);
            encoder.backward(&et, &dcode, Some(&mut ge));
            adam_step(encoder.params_mut(), &ge, &mut se, lr)?;
            adam_step(decoder.params_mut(), &gd, &mut sd, lr)?;
            log.push(StepRecord {
                stage: Stage::Cae,
                epoch,
                step,
                draw_index: base,
                batch_size: chunk.len(),
                lr,
                total: loss,
                dice: loss,
                adversarial: 0.0,
                latent: 0.0,
                lambda1: 0.0,
                lambda2: 0.0,
                discriminator: None,
                elapsed_ms: clock.elapsed().as_millis() as u64,
            });
        }
    }
    Ok(CaeModel {
        encoder,
        decoder,
        log,
    })
}

/// Trained segmenter with the checksums that witness the frozen encoder.
#[derive(Debug, Clone)]
pub struct SegmenterModel {
    pub generator: Generator<f32>,
    pub discriminator: Option<Discriminator<f32>>,
    pub log: TrainLog,
    pub encoder_checksum_before: Option<String>,
    pub encoder_checksum_after: Option<String>,
}

struct Adversary {
    net: Discriminator<f32>,
    grads: ParamStore<f32>,
    state: AdamState<f32>,
}

/// Stage 2. Per batch: `d_steps_per_g_step` discriminator updates on
/// `(x, y)` against `(x, G(x))` with `G` fixed, then one generator update on
/// Dice + λ1·adversarial (through the updated `D`) + λ2·latent (through the
/// frozen encoder). Ablations skip the networks they do not use.
pub fn train_segmenter(pairs: &[SlicePair], encoder: Option<&Encoder<f32>>, cfg: &TrainConfig) -> Result<SegmenterModel> {
    cfg.validate()?;
    let size = cfg.networks.input_size();
    if pairs.is_empty() {
        return Err(Error::EmptyDataset("no training slices".into()));
    }
    for p in pairs {
        check_size("training slice", p.image.dim(), size)?;
        check_size("training mask", p.mask.dim(), size)?;
    }
    let ablation = cfg.ablation;
    let w = cfg.effective_weights();
    let encoder = if ablation.uses_encoder() {
        let f = encoder.ok_or_else(|| {
            Error::config("ablation", format!("`{ablation}` needs a pre-trained encoder"))
        })?;
        if f.config() != &cfg.networks.cae {
            return Err(Error::Validation(format!(
                "encoder architecture {:?} does not match configured {:?}",
                f.config(),
                cfg.networks.cae
            )));
        }
        Some(f)
    } else {
        None
    };
    let checksum_before = encoder.map(|f| f.params().checksum());
    let stage = &cfg.stage2;
    let mut generator = Generator::<f32>::new(cfg.networks.generator.clone(), cfg.seed)?;
    let mut gg = generator.params().zeros_like();
    let mut sg = AdamState::new(generator.params(), cfg.adam);
    let mut adversary = if ablation.uses_discriminator() {
        let net = Discriminator::<f32>::new(cfg.networks.discriminator.clone(), cfg.seed)?;
        Some(Adversary {
            grads: net.params().zeros_like(),
            state: AdamState::new(net.params(), cfg.adam),
            net,
        })
    } else {
        None
    };

    let mut log = TrainLog::default();
    let n = pairs.len();
    let mut step = 0u64;
    let clock = Instant::now();
    for epoch in 0..stage.epochs {
        let lr = stage.lr_at(epoch);
        let order = epoch_order(cfg.seed, epoch, n);
        for (b, chunk) in order.chunks(stage.batch_size).enumerate() {
            let base = (epoch * n + b * stage.batch_size) as u64;
            let batch: Vec<SlicePair> = chunk
                .iter()
                .enumerate()
                .map(|(i, &k)| augment(&pairs[k], &cfg.augmentation, base + i as u64))
                .collect();
            let x = to_batch(batch.iter().map(|p| p.image.clone()));
            let y = to_batch(batch.iter().map(|p| mask_f32(&p.mask)));
            step += 1;

            let tape = generator.forward_train(&x)?;
            let p = tape.output();

            let mut d_loss = None;
            if let Some(adv) = adversary.as_mut() {
                let mut total = 0.0;
                for _ in 0..cfg.d_steps_per_g_step {
                    let real = adv.net.forward_train(&x, &y)?;
                    let fake = adv.net.forward_train(&x, p)?;
                    let (loss, dreal, dfake) = discriminator_loss_with_grad(real.scores(), fake.scores())?;
                    total += finite(loss as f64, "discriminator loss", step)?;
                    adv.grads.fill_zero();
                    adv.net.backward(&real, &dreal, Some(&mut adv.grads));
                    adv.net.backward(&fake, &dfake, Some(&mut adv.grads));
                    adam_step(adv.net.params_mut(), &adv.grads, &mut adv.state, lr)?;
                }
                if cfg.d_steps_per_g_step > 0 {
                    d_loss = Some(total / cfg.d_steps_per_g_step as f64);
                }
            }

            let (dice, mut dp) = dice_loss_with_grad(&y, p)?;
            let mut adversarial = 0.0f32;
            if let Some(adv) = adversary.as_ref() {
                let t = adv.net.forward_train(&x, p)?;
                let (loss, ds) = adversarial_loss_with_grad(t.scores())?;
                adversarial = loss;
                let (_, dm) = adv.net.backward(&t, &ds, None);
                dp.scaled_add(w.lambda1 as f32, &dm);
            }
            let mut latent = 0.0f32;
            if let Some(f) = encoder {
                let target = f.forward(&y)?;
                let t = f.forward_train(p)?;
                let (loss, dz) = latent_loss_with_grad(t.code(), &target)?;
                latent = loss;
                let dpf = f.backward(&t, &dz, None);
                dp.scaled_add(w.lambda2 as f32, &dpf);
            }
            let (dice, adversarial, latent) = (dice as f64, adversarial as f64, latent as f64);
            let total = finite(combine(dice, adversarial, latent, w), "generator loss", step)?;
            gg.fill_zero();
            generator.backward(&tape, &dp, &mut gg);
            adam_step(generator.params_mut(), &gg, &mut sg, lr)?;
            log.push(StepRecord {
                stage: Stage::Segmenter,
                epoch,
                step,
                draw_index: base,
                batch_size: chunk.len(),
                lr,
                total,
                dice,
                adversarial,
                latent,
                lambda1: w.lambda1,
                lambda2: w.lambda2,
                discriminator: d_loss,
                elapsed_ms: clock.elapsed().as_millis() as u64,
            });
        }
    }
    Ok(SegmenterModel {
        generator,
        discriminator: adversary.map(|a| a.net),
        log,
        encoder_checksum_after: encoder.map(|f| f.params().checksum()),
        encoder_checksum_before: checksum_before,
    })
}

/// Checkpoint provenance for a finished stage.
pub fn training_meta(stage: Stage, cfg: &TrainConfig, log: &TrainLog) -> TrainingMeta {
    let (name, s) = match stage {
        Stage::Cae => ("cae", &cfg.stage1),
        Stage::Segmenter => ("segmenter", &cfg.stage2),
    };
    TrainingMeta {
        stage: format!("{name}:{}", cfg.ablation),
        epochs: s.epochs,
        steps: log.records.iter().filter(|r| r.stage == stage).count() as u64,
        seed: cfg.seed,
        loss_curve: log.epoch_means(stage),
    }
}

/// Per-slice foreground probabilities of `volume`, in slice order.
pub fn predict_volume(generator: &Generator<f32>, volume: &Volume, batch_size: usize) -> Result<Vec<Array2<f32>>> {
    let (d, h, w) = volume.dim();
    check_size("prediction", (h, w), generator.config().input_size)?;
    let mut out = Vec::with_capacity(d);
    let idx: Vec<usize> = (0..d).collect();
    for chunk in idx.chunks(batch_size.max(1)) {
        let x = to_batch(chunk.iter().map(|&k| volume.voxels().index_axis(Axis(0), k).to_owned()));
        let p = generator.forward(&x)?;
        out.extend(p.outer_iter().map(|item| item.index_axis(Axis(0), 0).to_owned()));
    }
    Ok(out)
}
