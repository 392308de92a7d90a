//! Dense feed-forward networks with hand-written reverse mode.
//!
//! Parameters live in one flat vector, layer by layer, each layer stored as
//! its `(out, in)` weight matrix in row-major order followed by its bias.
//! Keeping them flat lets Adam, Polyak averaging, checkpoints and gradient
//! checks all work on plain slices.

use std::sync::atomic::{AtomicU64, Ordering};

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

static PARAM_VERSION: AtomicU64 = AtomicU64::new(1);

fn next_version() -> u64 {
    PARAM_VERSION.fetch_add(1, Ordering::Relaxed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Head {
    Identity,
    Tanh,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DenseNet {
    widths: Vec<usize>,
    head: Head,
    params: Vec<f64>,
    #[serde(skip, default = "next_version")]
    version: u64,
}

impl PartialEq for DenseNet {
    fn eq(&self, other: &Self) -> bool {
        self.widths == other.widths && self.head == other.head && self.params == other.params
    }
}

/// Activations recorded by [`DenseNet::forward_recorded`].
#[derive(Debug, Clone)]
pub struct Tape {
    version: u64,
    /// Input to each layer.
    inputs: Vec<Array2<f64>>,
    /// Pre-activation output of each layer.
    pre: Vec<Array2<f64>>,
    output: Array2<f64>,
}

impl Tape {
    pub fn output(&self) -> &Array2<f64> {
        &self.output
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    /// Same layout as the network parameters.
    pub params: Vec<f64>,
    /// With respect to the batch input.
    pub input: Array2<f64>,
}

fn param_count(widths: &[usize]) -> usize {
    widths.windows(2).map(|w| w[1] * w[0] + w[1]).sum()
}

impl DenseNet {
    /// Zero-initialised network.
    pub fn zeros(widths: &[usize], head: Head) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(Error::Shape(format!("layer widths {widths:?} need >= 2 positive entries")));
        }
        Ok(DenseNet {
            widths: widths.to_vec(),
            head,
            params: vec![0.0; param_count(widths)],
            version: next_version(),
        })
    }

    /// Weights and biases uniform on `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    pub fn new<R: Rng + ?Sized>(widths: &[usize], head: Head, rng: &mut R) -> Result<Self> {
        let mut net = Self::zeros(widths, head)?;
        let mut off = 0;
        for w in widths.windows(2) {
            let bound = 1.0 / (w[0] as f64).sqrt();
            let len = w[1] * w[0] + w[1];
            for p in &mut net.params[off..off + len] {
                *p = rng.random_range(-bound..=bound);
            }
            off += len;
        }
        Ok(net)
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn head(&self) -> Head {
        self.head
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    /// Replaces every parameter; outstanding tapes become stale.
    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(Error::Shape(format!("{} parameters for a net with {}", params.len(), self.params.len())));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Divergence("non-finite parameter".into()));
        }
        self.params.copy_from_slice(params);
        self.version = next_version();
        Ok(())
    }

    /// Mutable parameter access; outstanding tapes become stale.
    pub fn params_mut(&mut self) -> &mut [f64] {
        self.version = next_version();
        &mut self.params
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    fn layer(&self, l: usize) -> (ArrayView2<'_, f64>, ArrayView1<'_, f64>) {
        let off: usize = self.widths[..=l].windows(2).map(|w| w[1] * w[0] + w[1]).sum();
        let (n_in, n_out) = (self.widths[l], self.widths[l + 1]);
        let w = ArrayView2::from_shape((n_out, n_in), &self.params[off..off + n_out * n_in]).expect("layout");
        let b = ArrayView1::from(&self.params[off + n_out * n_in..off + n_out * n_in + n_out]);
        (w, b)
    }

    fn n_layers(&self) -> usize {
        self.widths.len() - 1
    }

    fn check_input(&self, x: &Array2<f64>) -> Result<()> {
        if x.ncols() != self.input_dim() {
            return Err(Error::Shape(format!("input has {} columns, net expects {}", x.ncols(), self.input_dim())));
        }
        Ok(())
    }

    fn apply_head(&self, z: &Array2<f64>) -> Array2<f64> {
        match self.head {
            Head::Identity => z.clone(),
            Head::Tanh => z.mapv(f64::tanh),
        }
    }

    /// Evaluates a batch, one sample per row.
    pub fn forward(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        self.check_input(x)?;
        let mut h = x.clone();
        for l in 0..self.n_layers() {
            let (w, b) = self.layer(l);
            let z = h.dot(&w.t()) + b;
            h = if l + 1 == self.n_layers() {
                self.apply_head(&z)
            } else {
                z.mapv(|v| v.max(0.0))
            };
        }
        Ok(h)
    }

    pub fn forward_row(&self, x: &[f64]) -> Result<Vec<f64>> {
        let m = Array2::from_shape_vec((1, x.len()), x.to_vec()).expect("row");
        Ok(self.forward(&m)?.into_raw_vec_and_offset().0)
    }

    pub fn forward_recorded(&self, x: &Array2<f64>) -> Result<Tape> {
        self.check_input(x)?;
        let mut inputs = Vec::with_capacity(self.n_layers());
        let mut pre = Vec::with_capacity(self.n_layers());
        let mut h = x.clone();
        for l in 0..self.n_layers() {
            let (w, b) = self.layer(l);
            let z = h.dot(&w.t()) + b;
            let next = if l + 1 == self.n_layers() {
                self.apply_head(&z)
            } else {
                z.mapv(|v| v.max(0.0))
            };
            inputs.push(h);
            pre.push(z);
            h = next;
        }
        Ok(Tape {
            version: self.version,
            inputs,
            pre,
            output: h,
        })
    }

    /// Gradients of `sum(upstream * output)` for the recorded batch.
    pub fn backward(&self, tape: &Tape, upstream: &Array2<f64>) -> Result<Gradients> {
        if tape.version != self.version {
            return Err(Error::StaleTape {
                recorded: tape.version,
                current: self.version,
            });
        }
        if upstream.dim() != tape.output.dim() {
            return Err(Error::Shape(format!(
                "upstream {:?} vs output {:?}",
                upstream.dim(),
                tape.output.dim()
            )));
        }
        let mut grads = vec![0.0; self.params.len()];
        let mut g = match self.head {
            Head::Identity => upstream.clone(),
            Head::Tanh => upstream * &tape.output.mapv(|y| 1.0 - y * y),
        };
        let mut off = self.params.len();
        for l in (0..self.n_layers()).rev() {
            let (w, _) = self.layer(l);
            let (n_in, n_out) = (self.widths[l], self.widths[l + 1]);
            off -= n_out * n_in + n_out;
            let dw = g.t().dot(&tape.inputs[l]);
            let db = g.sum_axis(Axis(0));
            // Logical (row-major) order regardless of the memory layout.
            for (dst, src) in grads[off..off + n_out * n_in].iter_mut().zip(dw.iter()) {
                *dst = *src;
            }
            for (dst, src) in grads[off + n_out * n_in..off + n_out * n_in + n_out].iter_mut().zip(db.iter()) {
                *dst = *src;
            }
            let mut gin = g.dot(&w);
            if l > 0 {
                gin.zip_mut_with(&tape.pre[l - 1], |gv, z| {
                    if *z <= 0.0 {
                        *gv = 0.0;
                    }
                });
            }
            g = gin;
        }
        Ok(Gradients { params: grads, input: g })
    }
}

/// Adam with bias correction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(n_params: usize, lr: f64) -> Self {
        AdamState {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            step: 0,
        }
    }

    /// One descent step on `params` along `grads`.
    pub fn update(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::Shape(format!(
                "{} params / {} grads for optimizer state of {}",
                params.len(),
                grads.len(),
                self.m.len()
            )));
        }
        if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
            return Err(Error::Divergence(format!("gradient {i} is {}", grads[i])));
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }

    pub fn step_net(&mut self, net: &mut DenseNet, grads: &[f64]) -> Result<()> {
        let mut p = net.params.clone();
        self.update(&mut p, grads)?;
        net.set_params(&p)
    }
}

/// `target <- (1 - tau) * target + tau * online`.
pub fn polyak_update(target: &mut DenseNet, online: &DenseNet, tau: f64) -> Result<()> {
    if target.widths != online.widths {
        return Err(Error::Shape(format!("target {:?} vs online {:?}", target.widths, online.widths)));
    }
    if !(tau > 0.0 && tau <= 1.0) {
        return Err(Error::Config(format!("tau {tau} outside (0, 1]")));
    }
    for (t, o) in target.params_mut().iter_mut().zip(&online.params) {
        *t = (1.0 - tau) * *t + tau * o;
    }
    Ok(())
}
