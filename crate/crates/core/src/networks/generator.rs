use ndarray::Array4;

use super::{check_batch, GeneratorConfig, NetworkCheckpoint, Role};
use crate::nn::{
    concat_channels, relu, relu_backward, sigmoid, sigmoid_backward, split_channels, Conv2d,
    ConvTranspose2x2, MaxPool2, ParamStore, Scalar,
};
use crate::rng::{keyed, Purpose};
use crate::{Error, Result};

/// Two 3x3 convolutions, each followed by ReLU.
#[derive(Debug, Clone)]
struct DoubleConv {
    first: Conv2d,
    second: Conv2d,
}

struct DoubleConvTape<T> {
    input: Array4<T>,
    mid: Array4<T>,
    out: Array4<T>,
}

impl DoubleConv {
    fn new<T: Scalar, R: rand::Rng>(ps: &mut ParamStore<T>, name: &str, cin: usize, cout: usize, rng: &mut R) -> Self {
        Self {
            first: Conv2d::new(ps, &format!("{name}.conv1"), cin, cout, 3, 1, 1, rng),
            second: Conv2d::new(ps, &format!("{name}.conv2"), cout, cout, 3, 1, 1, rng),
        }
    }

    fn forward<T: Scalar>(&self, ps: &ParamStore<T>, x: Array4<T>) -> DoubleConvTape<T> {
        let mid = relu(self.first.forward(ps, &x));
        let out = relu(self.second.forward(ps, &mid));
        DoubleConvTape { input: x, mid, out }
    }

    fn backward<T: Scalar>(
        &self,
        ps: &ParamStore<T>,
        tape: &DoubleConvTape<T>,
        dout: &Array4<T>,
        grads: &mut ParamStore<T>,
    ) -> Array4<T> {
        let d = relu_backward(&tape.out, dout);
        let dmid = self.second.backward(ps, &tape.mid, &d, Some(grads));
        let d = relu_backward(&tape.mid, &dmid);
        self.first.backward(ps, &tape.input, &d, Some(grads))
    }
}

#[derive(Debug, Clone)]
struct UpLevel {
    up: ConvTranspose2x2,
    convs: DoubleConv,
    skip_channels: usize,
}

/// UNet: `depth` pooling levels, channel-concatenation skips, 1x1 head.
#[derive(Debug, Clone)]
pub struct Generator<T> {
    config: GeneratorConfig,
    params: ParamStore<T>,
    down: Vec<DoubleConv>,
    bottom: DoubleConv,
    up: Vec<UpLevel>,
    head: Conv2d,
}

/// Intermediate activations recorded by [`Generator::forward_train`].
pub struct GeneratorTape<T> {
    down: Vec<(DoubleConvTape<T>, Vec<usize>)>,
    bottom: DoubleConvTape<T>,
    up: Vec<(Array4<T>, DoubleConvTape<T>)>,
    head_input: Array4<T>,
    output: Array4<T>,
}

impl<T> GeneratorTape<T> {
    pub fn output(&self) -> &Array4<T> {
        &self.output
    }
}

impl<T: Scalar> Generator<T> {
    /// Builds a freshly initialized network; the initial weights depend only
    /// on `(config, seed)`.
    pub fn new(config: GeneratorConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = keyed(seed, Purpose::GeneratorInit, 0);
        let mut ps = ParamStore::new();
        let base = config.base_channels;
        let mut down = Vec::with_capacity(config.depth);
        let mut cin = 1;
        for level in 0..config.depth {
            let cout = base << level;
            down.push(DoubleConv::new(&mut ps, &format!("down{level}"), cin, cout, &mut rng));
            cin = cout;
        }
        let bottom_ch = base << config.depth;
        let bottom = DoubleConv::new(&mut ps, "bottom", cin, bottom_ch, &mut rng);
        let mut up = Vec::with_capacity(config.depth);
        let mut cin = bottom_ch;
        for level in (0..config.depth).rev() {
            let skip = base << level;
            up.push(UpLevel {
                up: ConvTranspose2x2::new(&mut ps, &format!("up{level}.upconv"), cin, skip, &mut rng),
                convs: DoubleConv::new(&mut ps, &format!("up{level}"), 2 * skip, skip, &mut rng),
                skip_channels: skip,
            });
            cin = skip;
        }
        let head = Conv2d::new(&mut ps, "head", base, 1, 1, 1, 0, &mut rng);
        Ok(Self {
            config,
            params: ps,
            down,
            bottom,
            up,
            head,
        })
    }

    pub fn from_checkpoint(ckpt: &NetworkCheckpoint<T>) -> Result<Self> {
        ckpt.expect_role(Role::Generator)?;
        let super::NetworkConfig::Generator(config) = &ckpt.config else {
            return Err(Error::Validation("generator checkpoint without generator config".into()));
        };
        let mut net = Self::new(config.clone(), 0)?;
        net.params.check_layout(&ckpt.params)?;
        net.params = ckpt.params.clone();
        Ok(net)
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    /// `(n, 1, H, W)` intensities to `(n, 1, H, W)` foreground probabilities.
    pub fn forward(&self, x: &Array4<T>) -> Result<Array4<T>> {
        Ok(self.forward_train(x)?.output)
    }

    pub fn forward_train(&self, x: &Array4<T>) -> Result<GeneratorTape<T>> {
        check_batch("generator input", x.dim(), 1, self.config.input_size)?;
        let ps = &self.params;
        let mut down = Vec::with_capacity(self.down.len());
        let mut cur = x.clone();
        for level in &self.down {
            let tape = level.forward(ps, cur);
            let (pooled, idx) = MaxPool2.forward(&tape.out);
            down.push((tape, idx));
            cur = pooled;
        }
        let bottom = self.bottom.forward(ps, cur);
        let mut cur = bottom.out.clone();
        let mut up = Vec::with_capacity(self.up.len());
        for (lvl, (skip_tape, _)) in self.up.iter().zip(down.iter().rev()) {
            let upsampled = lvl.up.forward(ps, &cur);
            let joined = concat_channels(&skip_tape.out, &upsampled);
            let tape = lvl.convs.forward(ps, joined);
            let next = tape.out.clone();
            up.push((std::mem::replace(&mut cur, next), tape));
        }
        let mut output = self.head.forward(ps, &cur);
        if self.config.use_sigmoid_output {
            output.mapv_inplace(sigmoid);
        }
        Ok(GeneratorTape {
            down,
            bottom,
            up,
            head_input: cur,
            output,
        })
    }

    /// Back-propagates `doutput` (gradient w.r.t. the network output) and
    /// accumulates parameter gradients into `grads`. Returns the input gradient.
    pub fn backward(&self, tape: &GeneratorTape<T>, doutput: &Array4<T>, grads: &mut ParamStore<T>) -> Array4<T> {
        let ps = &self.params;
        let mut dlogits = doutput.clone();
        if self.config.use_sigmoid_output {
            dlogits.zip_mut_with(&tape.output, |g, &y| *g = sigmoid_backward(y, *g));
        }
        let mut dcur = self.head.backward(ps, &tape.head_input, &dlogits, Some(grads));
        let mut dskips: Vec<Array4<T>> = Vec::with_capacity(self.up.len());
        for (lvl, (up_input, conv_tape)) in self.up.iter().zip(tape.up.iter()).rev() {
            let djoined = lvl.convs.backward(ps, conv_tape, &dcur, grads);
            let (dskip, dup) = split_channels(&djoined, lvl.skip_channels);
            dskips.push(dskip);
            dcur = lvl.up.backward(ps, up_input, &dup, Some(grads));
        }
        // dskips is ordered from the shallowest level to the deepest.
        let mut dcur = self.bottom.backward(ps, &tape.bottom, &dcur, grads);
        for ((level, (conv_tape, idx)), dskip) in self
            .down
            .iter()
            .zip(tape.down.iter())
            .zip(dskips.iter())
            .rev()
        {
            let mut dout = MaxPool2.backward(conv_tape.out.dim(), idx, &dcur);
            dout += dskip;
            dcur = level.backward(ps, conv_tape, &dout, grads);
        }
        dcur
    }

    pub fn to_checkpoint(&self, meta: super::TrainingMeta) -> NetworkCheckpoint<T> {
        NetworkCheckpoint {
            role: Role::Generator,
            config: super::NetworkConfig::Generator(self.config.clone()),
            params: self.params.clone(),
            training_meta: meta,
        }
    }
}
