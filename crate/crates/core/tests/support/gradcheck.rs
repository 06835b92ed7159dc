//! Central finite differences against every analytic backward pass, in f64
//! on 16x16 inputs.
//!
//! ReLU, leaky ReLU and max-pool are piecewise linear. A network probe
//! whose `[-h, h]` interval straddles a kink has one-sided slopes that
//! disagree; it is re-measured with `H_KINK`. Probes still straddling a kink
//! there are skipped, at most `MAX_KINK_FRACTION` of one check. A wrong
//! backward pass shows up as a smooth mismatch and is never skipped.

use ndarray::{Array1, Array2, Array4, Dimension};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use shapeseg::losses::{
    adversarial_loss, adversarial_loss_with_grad, dice_loss, dice_loss_with_grad, discriminator_loss,
    discriminator_loss_with_grad, latent_loss, latent_loss_with_grad,
};
use shapeseg::networks::{
    CaeConfig, Decoder, Discriminator, DiscriminatorConfig, Encoder, Generator, GeneratorConfig,
};
use shapeseg::nn::ParamStore;

pub const H: f64 = 1e-4;
pub const RTOL: f64 = 1e-3;
/// Floor for entries whose true derivative is zero up to rounding.
const ATOL: f64 = 1e-9;
const SIZE: (usize, usize) = (16, 16);
/// Entries probed per parameter tensor.
const PER_TENSOR: usize = 6;
pub const H_KINK: f64 = 1e-6;
pub const MAX_KINK_FRACTION: f64 = 0.05;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn uniform4(seed: u64, shape: (usize, usize, usize, usize), lo: f64, hi: f64) -> Array4<f64> {
    let mut r = rng(seed);
    Array4::from_shape_fn(shape, |_| r.gen_range(lo..hi))
}

#[derive(Default)]
struct Tally {
    /// Smooth objectives are always compared at `H`.
    piecewise: bool,
    probes: usize,
    kinks: usize,
}

fn straddles(plus: f64, zero: f64, minus: f64, h: f64) -> bool {
    let (fwd, bwd) = ((plus - zero) / h, (zero - minus) / h);
    (fwd - bwd).abs() > RTOL * fwd.abs().max(bwd.abs()) + ATOL
}

impl Tally {
    fn piecewise() -> Self {
        Self {
            piecewise: true,
            ..Default::default()
        }
    }

    /// Compares one probe; `f(d)` is the objective with the entry moved by `d`.
    fn probe(&mut self, what: &str, analytic: f64, f: impl Fn(f64) -> f64) {
        self.probes += 1;
        let (mut plus, zero, mut minus) = (f(H), f(0.0), f(-H));
        let mut h = H;
        if self.piecewise && straddles(plus, zero, minus, H) {
            (plus, minus, h) = (f(H_KINK), f(-H_KINK), H_KINK);
            if straddles(plus, zero, minus, H_KINK) {
                self.kinks += 1;
                return;
            }
        }
        let numeric = (plus - minus) / (2.0 * h);
        let err = (analytic - numeric).abs();
        let tol = RTOL * analytic.abs().max(numeric.abs()) + ATOL;
        assert!(err <= tol, "{what}: analytic {analytic:e} numeric {numeric:e} (err {err:e} > {tol:e})");
    }

    fn finish(&self, label: &str) {
        assert!(self.probes > 0);
        assert!(
            self.kinks as f64 <= MAX_KINK_FRACTION * self.probes as f64,
            "{label}: {} of {} probes straddle a kink",
            self.kinks,
            self.probes
        );
    }
}

/// Probes `PER_TENSOR` spread-out entries of every tensor of `params`.
fn check_params<N: Clone>(
    label: &str,
    net: &N,
    store: fn(&mut N) -> &mut ParamStore<f64>,
    grads: &ParamStore<f64>,
    loss: impl Fn(&N) -> f64,
) {
    let mut tally = Tally::piecewise();
    for (t, g) in grads.iter().enumerate() {
        let len = g.value.len();
        let picks: Vec<usize> = (0..PER_TENSOR.min(len)).map(|k| (k * len / PER_TENSOR.min(len) + k) % len).collect();
        for flat in picks {
            let analytic = g.value.as_slice().unwrap()[flat];
            tally.probe(&format!("{label} {}[{flat}]", g.name), analytic, |d| {
                let mut n = net.clone();
                let p = store(&mut n).iter_mut().nth(t).unwrap();
                p.value.as_slice_mut().unwrap()[flat] += d;
                loss(&n)
            });
        }
    }
    tally.finish(label);
}

/// Probes every `stride`-th entry of an input array.
fn check_input<D: Dimension>(
    mut tally: Tally,
    label: &str,
    x: &ndarray::Array<f64, D>,
    analytic: &ndarray::Array<f64, D>,
    stride: usize,
    f: impl Fn(&ndarray::Array<f64, D>) -> f64,
) {
    assert_eq!(x.dim(), analytic.dim());
    for flat in (0..x.len()).step_by(stride) {
        tally.probe(&format!("{label} input[{flat}]"), analytic.as_slice().unwrap()[flat], |d| {
            let mut y = x.clone();
            y.as_slice_mut().unwrap()[flat] += d;
            f(&y)
        });
    }
    tally.finish(label);
}

fn weighted<D: Dimension>(out: &ndarray::Array<f64, D>, w: &ndarray::Array<f64, D>) -> f64 {
    (out * w).sum()
}

pub fn dice_loss_gradient() {
    let y = uniform4(1, (2, 1, 16, 16), 0.0, 1.0).mapv(|v| (v > 0.6) as u8 as f64);
    let p = uniform4(2, (2, 1, 16, 16), 0.05, 0.95);
    let (loss, g) = dice_loss_with_grad(&y, &p).unwrap();
    assert_eq!(loss, dice_loss(&y, &p).unwrap());
    check_input(Tally::default(), "dice", &p, &g, 1, |q| dice_loss(&y, q).unwrap());
    let empty = Array4::zeros((1, 1, 16, 16));
    let p1 = uniform4(3, (1, 1, 16, 16), 2e-4, 1e-3);
    let (_, g) = dice_loss_with_grad(&empty, &p1).unwrap();
    check_input(Tally::default(), "dice empty target", &p1, &g, 7, |q| dice_loss(&empty, q).unwrap());
}

pub fn latent_loss_gradient() {
    let mut r = rng(4);
    let a = Array2::from_shape_fn((3, 64), |_| r.gen_range(-2.0..2.0));
    let b = Array2::from_shape_fn((3, 64), |_| r.gen_range(-2.0..2.0));
    let (_, g) = latent_loss_with_grad(&a, &b).unwrap();
    check_input(Tally::default(), "latent", &a, &g, 1, |q| latent_loss(q, &b).unwrap());
}

pub fn adversarial_and_discriminator_loss_gradients() {
    let mut r = rng(5);
    let real = Array1::from_shape_fn(8, |_| r.gen_range(0.05..0.95));
    let fake = Array1::from_shape_fn(8, |_| r.gen_range(0.05..0.95));
    let (_, g) = adversarial_loss_with_grad(&fake).unwrap();
    check_input(Tally::default(), "adversarial", &fake, &g, 1, |q| adversarial_loss(q).unwrap());
    let (_, dr, df) = discriminator_loss_with_grad(&real, &fake).unwrap();
    check_input(Tally::default(), "discriminator loss real", &real, &dr, 1, |q| discriminator_loss(q, &fake).unwrap());
    check_input(Tally::default(), "discriminator loss fake", &fake, &df, 1, |q| discriminator_loss(&real, q).unwrap());
}

pub fn generator_forward_gradient() {
    let cfg = GeneratorConfig {
        input_size: SIZE,
        depth: 2,
        base_channels: 2,
        use_sigmoid_output: true,
    };
    let net = Generator::<f64>::new(cfg, 11).unwrap();
    let x = uniform4(6, (2, 1, 16, 16), 0.0, 1.0);
    let w = uniform4(7, (2, 1, 16, 16), -1.0, 1.0);
    let tape = net.forward_train(&x).unwrap();
    let mut grads = net.params().zeros_like();
    let dx = net.backward(&tape, &w, &mut grads);
    check_params("generator", &net, Generator::params_mut, &grads, |n| weighted(&n.forward(&x).unwrap(), &w));
    check_input(Tally::piecewise(), "generator", &x, &dx, 5, |q| weighted(&net.forward(q).unwrap(), &w));
}

fn cae_cfg() -> CaeConfig {
    CaeConfig {
        input_size: SIZE,
        depth: 2,
        base_channels: 2,
        latent_dim: 8,
    }
}

pub fn encoder_forward_gradient() {
    let net = Encoder::<f64>::new(cae_cfg(), 12).unwrap();
    let m = uniform4(8, (2, 1, 16, 16), 0.0, 1.0);
    let mut r = rng(9);
    let w = Array2::from_shape_fn((2, 8), |_| r.gen_range(-1.0..1.0));
    let tape = net.forward_train(&m).unwrap();
    let mut grads = net.params().zeros_like();
    let dm = net.backward(&tape, &w, Some(&mut grads));
    check_params("encoder", &net, Encoder::params_mut, &grads, |n| weighted(&n.forward(&m).unwrap(), &w));
    check_input(Tally::piecewise(), "encoder", &m, &dm, 5, |q| weighted(&net.forward(q).unwrap(), &w));
    let frozen = net.params().clone();
    let dm_only = net.backward(&tape, &w, None);
    assert_eq!(dm_only, dm);
    assert_eq!(net.params(), &frozen);
}

pub fn decoder_forward_gradient() {
    let net = Decoder::<f64>::new(cae_cfg(), 13).unwrap();
    let mut r = rng(10);
    let z = Array2::from_shape_fn((2, 8), |_| r.gen_range(-1.0..1.0));
    let w = uniform4(11, (2, 1, 16, 16), -1.0, 1.0);
    let tape = net.forward_train(&z).unwrap();
    let mut grads = net.params().zeros_like();
    let dz = net.backward(&tape, &w, &mut grads);
    check_params("decoder", &net, Decoder::params_mut, &grads, |n| weighted(&n.forward(&z).unwrap(), &w));
    check_input(Tally::piecewise(), "decoder", &z, &dz, 1, |q| weighted(&net.forward(q).unwrap(), &w));
}

pub fn discriminator_forward_gradient() {
    let cfg = DiscriminatorConfig {
        input_size: SIZE,
        depth: 2,
        base_channels: 2,
        conditioning: true,
    };
    let net = Discriminator::<f64>::new(cfg, 14).unwrap();
    let x = uniform4(12, (3, 1, 16, 16), 0.0, 1.0);
    let m = uniform4(13, (3, 1, 16, 16), 0.0, 1.0);
    let mut r = rng(14);
    let w = Array1::from_shape_fn(3, |_| r.gen_range(-1.0..1.0));
    let tape = net.forward_train(&x, &m).unwrap();
    let mut grads = net.params().zeros_like();
    let (dx, dm) = net.backward(&tape, &w, Some(&mut grads));
    check_params("discriminator", &net, Discriminator::params_mut, &grads, |n| {
        weighted(&n.forward(&x, &m).unwrap(), &w)
    });
    check_input(Tally::piecewise(), "discriminator mask", &m, &dm, 5, |q| weighted(&net.forward(&x, q).unwrap(), &w));
    check_input(Tally::piecewise(), "discriminator image", &x, &dx.unwrap(), 5, |q| weighted(&net.forward(q, &m).unwrap(), &w));
}

pub const ALL: [(&str, fn()); 7] = [
    ("dice_loss", dice_loss_gradient),
    ("latent_loss", latent_loss_gradient),
    ("adversarial_loss + discriminator_loss", adversarial_and_discriminator_loss_gradients),
    ("generator forward", generator_forward_gradient),
    ("encoder forward", encoder_forward_gradient),
    ("decoder forward", decoder_forward_gradient),
    ("discriminator forward", discriminator_forward_gradient),
];
