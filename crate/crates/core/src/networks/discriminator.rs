use ndarray::{Array1, Array2, Array4};

use super::{check_batch, DiscriminatorConfig, NetworkCheckpoint, NetworkConfig, Role, TrainingMeta};
use crate::nn::{
    concat_channels, leaky_relu, leaky_relu_backward, sigmoid, sigmoid_backward, split_channels, Conv2d, Linear,
    ParamStore, Scalar,
};
use crate::rng::{keyed, Purpose};
use crate::{Error, Result};

const SLOPE: f64 = 0.2;

/// Conditional realism classifier `D(x, m)`: strided convolutions with leaky
/// ReLU over the channel stack `[x, m]`, global average pooling and a single
/// sigmoid unit.
#[derive(Debug, Clone)]
pub struct Discriminator<T> {
    config: DiscriminatorConfig,
    params: ParamStore<T>,
    convs: Vec<Conv2d>,
    fc: Linear,
}

pub struct DiscriminatorTape<T> {
    inputs: Vec<Array4<T>>,
    outputs: Vec<Array4<T>>,
    pooled: Array2<T>,
    scores: Array1<T>,
}

impl<T> DiscriminatorTape<T> {
    pub fn scores(&self) -> &Array1<T> {
        &self.scores
    }
}

impl<T: Scalar> Discriminator<T> {
    pub fn new(config: DiscriminatorConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = keyed(seed, Purpose::DiscriminatorInit, 0);
        let mut ps = ParamStore::new();
        let mut cin = if config.conditioning { 2 } else { 1 };
        let mut convs = Vec::with_capacity(config.depth);
        for level in 0..config.depth {
            let cout = config.base_channels << level;
            convs.push(Conv2d::new(&mut ps, &format!("disc{level}"), cin, cout, 3, 2, 1, &mut rng));
            cin = cout;
        }
        let fc = Linear::new(&mut ps, "disc.fc", cin, 1, &mut rng);
        Ok(Self {
            config,
            params: ps,
            convs,
            fc,
        })
    }

    pub fn from_checkpoint(ckpt: &NetworkCheckpoint<T>) -> Result<Self> {
        ckpt.expect_role(Role::Discriminator)?;
        let NetworkConfig::Discriminator(config) = &ckpt.config else {
            return Err(Error::Validation("discriminator checkpoint without discriminator config".into()));
        };
        let mut net = Self::new(config.clone(), 0)?;
        net.params.check_layout(&ckpt.params)?;
        net.params = ckpt.params.clone();
        Ok(net)
    }

    pub fn config(&self) -> &DiscriminatorConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    /// One realism probability per batch item.
    pub fn forward(&self, x: &Array4<T>, m: &Array4<T>) -> Result<Array1<T>> {
        Ok(self.forward_train(x, m)?.scores)
    }

    pub fn forward_train(&self, x: &Array4<T>, m: &Array4<T>) -> Result<DiscriminatorTape<T>> {
        check_batch("discriminator mask", m.dim(), 1, self.config.input_size)?;
        let input = if self.config.conditioning {
            check_batch("discriminator image", x.dim(), 1, self.config.input_size)?;
            if x.dim().0 != m.dim().0 {
                return Err(Error::Shape(format!(
                    "discriminator: image batch {} != mask batch {}",
                    x.dim().0,
                    m.dim().0
                )));
            }
            concat_channels(x, m)
        } else {
            m.clone()
        };
        let ps = &self.params;
        let slope = T::lit(SLOPE);
        let mut inputs = Vec::with_capacity(self.convs.len());
        let mut outputs = Vec::with_capacity(self.convs.len());
        let mut cur = input;
        for conv in &self.convs {
            let out = leaky_relu(conv.forward(ps, &cur), slope);
            inputs.push(std::mem::replace(&mut cur, out.clone()));
            outputs.push(out);
        }
        let (n, c, h, w) = cur.dim();
        let area = T::lit((h * w) as f64);
        let pooled = Array2::from_shape_fn((n, c), |(b, ch)| {
            cur.slice(ndarray::s![b, ch, .., ..]).sum() / area
        });
        let logits = self.fc.forward(ps, &pooled);
        let scores = logits.column(0).mapv(sigmoid);
        Ok(DiscriminatorTape {
            inputs,
            outputs,
            pooled,
            scores,
        })
    }

    /// Returns `(d/dx, d/dm)`; `d/dx` is `None` without conditioning.
    /// Parameter gradients are accumulated only when `grads` is given.
    pub fn backward(
        &self,
        tape: &DiscriminatorTape<T>,
        dscores: &Array1<T>,
        mut grads: Option<&mut ParamStore<T>>,
    ) -> (Option<Array4<T>>, Array4<T>) {
        let ps = &self.params;
        let n = dscores.len();
        let dlogits = Array2::from_shape_fn((n, 1), |(b, _)| sigmoid_backward(tape.scores[b], dscores[b]));
        let dpooled = self.fc.backward(ps, &tape.pooled, &dlogits, grads.as_deref_mut());
        let (_, c, h, w) = tape.outputs.last().expect("depth >= 1").dim();
        let area = T::lit((h * w) as f64);
        let mut dcur = Array4::from_shape_fn((n, c, h, w), |(b, ch, _, _)| dpooled[[b, ch]] / area);
        let slope = T::lit(SLOPE);
        for ((conv, input), output) in self.convs.iter().zip(&tape.inputs).zip(&tape.outputs).rev() {
            let d = leaky_relu_backward(output, &dcur, slope);
            dcur = conv.backward(ps, input, &d, grads.as_deref_mut());
        }
        if self.config.conditioning {
            let (dx, dm) = split_channels(&dcur, 1);
            (Some(dx), dm)
        } else {
            (None, dcur)
        }
    }

    pub fn to_checkpoint(&self, meta: TrainingMeta) -> NetworkCheckpoint<T> {
        NetworkCheckpoint {
            role: Role::Discriminator,
            config: NetworkConfig::Discriminator(self.config.clone()),
            params: self.params.clone(),
            training_meta: meta,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn one_score_per_item_in_unit_interval() {
        let d = Discriminator::<f32>::new(
            DiscriminatorConfig {
                input_size: (32, 32),
                depth: 3,
                base_channels: 4,
                conditioning: true,
            },
            3,
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Array::from_shape_fn((8, 1, 32, 32), |_| rng.gen_range(0.0..1.0f32));
        let m = Array::from_shape_fn((8, 1, 32, 32), |_| if rng.gen_bool(0.5) { 1.0f32 } else { 0.0 });
        let s = d.forward(&x, &m).unwrap();
        assert_eq!(s.len(), 8);
        assert!(s.iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn misaligned_batches_are_rejected() {
        let d = Discriminator::<f64>::new(
            DiscriminatorConfig {
                input_size: (16, 16),
                depth: 2,
                base_channels: 2,
                conditioning: true,
            },
            0,
        )
        .unwrap();
        let x = Array4::<f64>::zeros((2, 1, 16, 16));
        let m = Array4::<f64>::zeros((3, 1, 16, 16));
        assert!(d.forward(&x, &m).is_err());
    }
}
