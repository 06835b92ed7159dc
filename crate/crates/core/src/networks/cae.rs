use ndarray::{Array2, Array4};

use super::{check_batch, CaeConfig, NetworkCheckpoint, NetworkConfig, Role, TrainingMeta};
use crate::nn::{leaky_relu, leaky_relu_backward, sigmoid, sigmoid_backward, Conv2d, ConvTranspose2x2, Linear, ParamStore, Scalar};
use crate::rng::{keyed, Purpose};
use crate::{Error, Result};

fn cae_config<T: Scalar>(ckpt: &NetworkCheckpoint<T>, role: Role) -> Result<CaeConfig> {
    ckpt.expect_role(role)?;
    match &ckpt.config {
        NetworkConfig::Cae(c) => Ok(c.clone()),
        _ => Err(Error::Validation(format!("{role} checkpoint without auto-encoder config"))),
    }
}

const HEAD_BIAS: f64 = -2.0;

fn relu2<T: Scalar>(mut x: Array2<T>) -> Array2<T> {
    x.mapv_inplace(|v| if v > T::zero() { v } else { T::zero() });
    x
}

fn relu2_backward<T: Scalar>(y: &Array2<T>, dy: &Array2<T>) -> Array2<T> {
    let mut dx = dy.clone();
    dx.zip_mut_with(y, |g, &v| {
        if v <= T::zero() {
            *g = T::zero();
        }
    });
    dx
}

/// Shape encoder `f`: strided 3x3 convolutions down to a fully connected
/// latent code. No activation on the code itself.
#[derive(Debug, Clone)]
pub struct Encoder<T> {
    config: CaeConfig,
    params: ParamStore<T>,
    convs: Vec<Conv2d>,
    fc: Linear,
}

pub struct EncoderTape<T> {
    inputs: Vec<Array4<T>>,
    outputs: Vec<Array4<T>>,
    flat: Array2<T>,
    code: Array2<T>,
}

impl<T> EncoderTape<T> {
    pub fn code(&self) -> &Array2<T> {
        &self.code
    }
}

impl<T: Scalar> Encoder<T> {
    pub fn new(config: CaeConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = keyed(seed, Purpose::EncoderInit, 0);
        let mut ps = ParamStore::new();
        let mut convs = Vec::with_capacity(config.depth);
        let mut cin = 1;
        for level in 0..config.depth {
            let cout = config.base_channels << level;
            convs.push(Conv2d::new(&mut ps, &format!("enc{level}"), cin, cout, 3, 2, 1, &mut rng));
            cin = cout;
        }
        let (bh, bw) = config.bottleneck_size();
        let fc = Linear::new(&mut ps, "enc.fc", cin * bh * bw, config.latent_dim, &mut rng);
        Ok(Self {
            config,
            params: ps,
            convs,
            fc,
        })
    }

    pub fn from_checkpoint(ckpt: &NetworkCheckpoint<T>) -> Result<Self> {
        let config = cae_config(ckpt, Role::Encoder)?;
        let mut net = Self::new(config, 0)?;
        net.params.check_layout(&ckpt.params)?;
        net.params = ckpt.params.clone();
        Ok(net)
    }

    pub fn config(&self) -> &CaeConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    /// `(n, 1, H, W)` masks (soft or hard) to `(n, latent_dim)` codes.
    pub fn forward(&self, masks: &Array4<T>) -> Result<Array2<T>> {
        Ok(self.forward_train(masks)?.code)
    }

    pub fn forward_train(&self, masks: &Array4<T>) -> Result<EncoderTape<T>> {
        check_batch("encoder input", masks.dim(), 1, self.config.input_size)?;
        let ps = &self.params;
        let mut inputs = Vec::with_capacity(self.convs.len());
        let mut outputs = Vec::with_capacity(self.convs.len());
        let mut cur = masks.clone();
        for conv in &self.convs {
            let out = leaky_relu(conv.forward(ps, &cur), T::lit(0.1));
            inputs.push(std::mem::replace(&mut cur, out.clone()));
            outputs.push(out);
        }
        let n = cur.dim().0;
        let flat = cur
            .into_shape_with_order((n, self.fc.in_features))
            .expect("contiguous activations");
        let code = self.fc.forward(ps, &flat);
        Ok(EncoderTape {
            inputs,
            outputs,
            flat,
            code,
        })
    }

    /// Gradient of the code w.r.t. the input masks. Parameter gradients are
    /// accumulated only when `grads` is given (the encoder is frozen during
    /// segmentation training).
    pub fn backward(&self, tape: &EncoderTape<T>, dcode: &Array2<T>, mut grads: Option<&mut ParamStore<T>>) -> Array4<T> {
        let ps = &self.params;
        let dflat = self.fc.backward(ps, &tape.flat, dcode, grads.as_deref_mut());
        let last = tape.outputs.last().expect("depth >= 1").dim();
        let mut dcur = dflat.into_shape_with_order(last).expect("contiguous gradient");
        for ((conv, input), output) in self.convs.iter().zip(&tape.inputs).zip(&tape.outputs).rev() {
            let d = leaky_relu_backward(output, &dcur, T::lit(0.1));
            dcur = conv.backward(ps, input, &d, grads.as_deref_mut());
        }
        dcur
    }

    pub fn to_checkpoint(&self, meta: TrainingMeta) -> NetworkCheckpoint<T> {
        NetworkCheckpoint {
            role: Role::Encoder,
            config: NetworkConfig::Cae(self.config.clone()),
            params: self.params.clone(),
            training_meta: meta,
        }
    }
}

/// Shape decoder `g`: fully connected expansion, then per level a 2x
/// transposed convolution and a 3x3 convolution; sigmoid head.
#[derive(Debug, Clone)]
pub struct Decoder<T> {
    config: CaeConfig,
    params: ParamStore<T>,
    fc: Linear,
    levels: Vec<(ConvTranspose2x2, Conv2d)>,
    head: Conv2d,
}

pub struct DecoderTape<T> {
    code: Array2<T>,
    fc_out: Array2<T>,
    levels: Vec<(Array4<T>, Array4<T>, Array4<T>)>,
    head_input: Array4<T>,
    output: Array4<T>,
}

impl<T> DecoderTape<T> {
    pub fn output(&self) -> &Array4<T> {
        &self.output
    }
}

impl<T: Scalar> Decoder<T> {
    pub fn new(config: CaeConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = keyed(seed, Purpose::DecoderInit, 0);
        let mut ps = ParamStore::new();
        let (bh, bw) = config.bottleneck_size();
        let mut cin = config.bottleneck_channels();
        let fc = Linear::new(&mut ps, "dec.fc", config.latent_dim, cin * bh * bw, &mut rng);
        let mut levels = Vec::with_capacity(config.depth);
        for level in (0..config.depth).rev() {
            let cout = if level == 0 {
                config.base_channels
            } else {
                config.base_channels << (level - 1)
            };
            let up = ConvTranspose2x2::new(&mut ps, &format!("dec{level}.upconv"), cin, cout, &mut rng);
            let conv = Conv2d::new(&mut ps, &format!("dec{level}.conv"), cout, cout, 3, 1, 1, &mut rng);
            levels.push((up, conv));
            cin = cout;
        }
        let head = Conv2d::new(&mut ps, "dec.head", cin, 1, 3, 1, 1, &mut rng);
        // Start from a mostly-background prediction.
        ps.get_mut(head.bias).fill(T::lit(HEAD_BIAS));
        Ok(Self {
            config,
            params: ps,
            fc,
            levels,
            head,
        })
    }

    pub fn from_checkpoint(ckpt: &NetworkCheckpoint<T>) -> Result<Self> {
        let config = cae_config(ckpt, Role::Decoder)?;
        let mut net = Self::new(config, 0)?;
        net.params.check_layout(&ckpt.params)?;
        net.params = ckpt.params.clone();
        Ok(net)
    }

    pub fn config(&self) -> &CaeConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    /// `(n, latent_dim)` codes to `(n, 1, H, W)` probabilities.
    pub fn forward(&self, codes: &Array2<T>) -> Result<Array4<T>> {
        Ok(self.forward_train(codes)?.output)
    }

    pub fn forward_train(&self, codes: &Array2<T>) -> Result<DecoderTape<T>> {
        if codes.ncols() != self.config.latent_dim || codes.nrows() == 0 {
            return Err(Error::Shape(format!(
                "decoder input: expected (n>0, {}), got {:?}",
                self.config.latent_dim,
                codes.dim()
            )));
        }
        let ps = &self.params;
        let n = codes.nrows();
        let fc_out = relu2(self.fc.forward(ps, codes));
        let (bh, bw) = self.config.bottleneck_size();
        let mut cur = fc_out
            .clone()
            .into_shape_with_order((n, self.config.bottleneck_channels(), bh, bw))
            .expect("contiguous activations");
        let mut levels = Vec::with_capacity(self.levels.len());
        for (up, conv) in &self.levels {
            let upsampled = leaky_relu(up.forward(ps, &cur), T::lit(0.1));
            let out = leaky_relu(conv.forward(ps, &upsampled), T::lit(0.1));
            let input = std::mem::replace(&mut cur, out.clone());
            levels.push((input, upsampled, out));
        }
        let mut output = self.head.forward(ps, &cur);
        output.mapv_inplace(sigmoid);
        Ok(DecoderTape {
            code: codes.clone(),
            fc_out,
            levels,
            head_input: cur,
            output,
        })
    }

    pub fn backward(&self, tape: &DecoderTape<T>, doutput: &Array4<T>, grads: &mut ParamStore<T>) -> Array2<T> {
        let ps = &self.params;
        let mut dlogits = doutput.clone();
        dlogits.zip_mut_with(&tape.output, |g, &y| *g = sigmoid_backward(y, *g));
        let mut dcur = self.head.backward(ps, &tape.head_input, &dlogits, Some(grads));
        for ((up, conv), (input, upsampled, out)) in self.levels.iter().zip(&tape.levels).rev() {
            let d = leaky_relu_backward(out, &dcur, T::lit(0.1));
            let dup = conv.backward(ps, upsampled, &d, Some(grads));
            let d = leaky_relu_backward(upsampled, &dup, T::lit(0.1));
            dcur = up.backward(ps, input, &d, Some(grads));
        }
        let n = tape.code.nrows();
        let dfc = dcur
            .into_shape_with_order((n, self.fc.out_features))
            .expect("contiguous gradient");
        let dfc = relu2_backward(&tape.fc_out, &dfc);
        self.fc.backward(ps, &tape.code, &dfc, Some(grads))
    }

    pub fn to_checkpoint(&self, meta: TrainingMeta) -> NetworkCheckpoint<T> {
        NetworkCheckpoint {
            role: Role::Decoder,
            config: NetworkConfig::Cae(self.config.clone()),
            params: self.params.clone(),
            training_meta: meta,
        }
    }
}
