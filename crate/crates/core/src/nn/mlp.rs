use rand::Rng;

use super::checkpoint::Checkpoint;
use super::tape::{guarded_norm, Tape, Var};
use super::tensor::{gemm_into, Tensor};
use crate::error::{Error, Result};

/// Leaky-ReLU slope used by every network in the crate.
pub const LEAKY_SLOPE: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputTransform {
    /// Rows are projected onto the unit sphere.
    L2Normalize,
    /// Scalar output `1 + e^y`.
    OnePlusExp,
    None,
}

impl OutputTransform {
    fn tag(self) -> &'static str {
        match self {
            OutputTransform::L2Normalize => "l2-normalize",
            OutputTransform::OnePlusExp => "one-plus-exp",
            OutputTransform::None => "none",
        }
    }

    fn from_tag(s: &str) -> Result<Self> {
        match s {
            "l2-normalize" => Ok(OutputTransform::L2Normalize),
            "one-plus-exp" => Ok(OutputTransform::OnePlusExp),
            "none" => Ok(OutputTransform::None),
            _ => Err(Error::Checkpoint(format!("unknown output transform {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpSpec {
    pub layer_dims: Vec<(usize, usize)>,
    pub slope: f64,
    pub output: OutputTransform,
}

impl MlpSpec {
    /// Builds a spec from a width chain `[d0, d1, …, dn]`.
    pub fn chain(widths: &[usize], output: OutputTransform) -> Result<Self> {
        let spec = MlpSpec {
            layer_dims: widths.windows(2).map(|w| (w[0], w[1])).collect(),
            slope: LEAKY_SLOPE,
            output,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_dims.is_empty() {
            return Err(Error::Config("an MLP needs at least one layer".into()));
        }
        if self.layer_dims.iter().any(|&(i, o)| i == 0 || o == 0) {
            return Err(Error::Config("layer widths must be positive".into()));
        }
        if self.layer_dims.windows(2).any(|w| w[0].1 != w[1].0) {
            return Err(Error::Config(format!(
                "layer dims do not chain: {:?}",
                self.layer_dims
            )));
        }
        if !(self.slope > 0.0 && self.slope < 1.0) {
            return Err(Error::Config(format!(
                "leaky slope must lie in (0, 1), got {}",
                self.slope
            )));
        }
        if self.output == OutputTransform::OnePlusExp && self.out_dim() != 1 {
            return Err(Error::Config("one-plus-exp head must be scalar".into()));
        }
        Ok(())
    }

    pub fn in_dim(&self) -> usize {
        self.layer_dims[0].0
    }

    pub fn out_dim(&self) -> usize {
        self.layer_dims[self.layer_dims.len() - 1].1
    }
}

/// Linear layers with leaky-ReLU between them, then the output transform.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    spec: MlpSpec,
    /// `in×out` weight matrices.
    weights: Vec<Tensor>,
    /// `1×out` bias rows.
    biases: Vec<Tensor>,
}

impl Mlp {
    /// Uniform fan-in initialization: weights `U(±√(6/fan_in))`, biases `U(±1/√fan_in)`.
    pub fn init<R: Rng + ?Sized>(spec: MlpSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for &(i, o) in &spec.layer_dims {
            let wb = (6.0 / i as f64).sqrt();
            let bb = 1.0 / (i as f64).sqrt();
            weights.push(Tensor::from_parts(
                i,
                o,
                (0..i * o).map(|_| rng.random_range(-wb..wb)).collect(),
            ));
            biases.push(Tensor::from_parts(
                1,
                o,
                (0..o).map(|_| rng.random_range(-bb..bb)).collect(),
            ));
        }
        Ok(Mlp {
            spec,
            weights,
            biases,
        })
    }

    pub fn from_params(spec: MlpSpec, weights: Vec<Tensor>, biases: Vec<Tensor>) -> Result<Self> {
        spec.validate()?;
        if weights.len() != spec.layer_dims.len() || biases.len() != spec.layer_dims.len() {
            return Err(Error::Config(
                "parameter count does not match the spec".into(),
            ));
        }
        for (l, &(i, o)) in spec.layer_dims.iter().enumerate() {
            if weights[l].shape() != [i, o] || biases[l].shape() != [1, o] {
                return Err(Error::Shape {
                    op: "mlp",
                    detail: format!("layer {l} expects {i}x{o}"),
                });
            }
        }
        Ok(Mlp {
            spec,
            weights,
            biases,
        })
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn num_params(&self) -> usize {
        self.weights
            .iter()
            .chain(&self.biases)
            .map(Tensor::len)
            .sum()
    }

    /// Parameters in the order `w0, b0, w1, b1, …`.
    pub fn params(&self) -> Vec<&Tensor> {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| [w, b])
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.weights
            .iter_mut()
            .zip(self.biases.iter_mut())
            .flat_map(|(w, b)| [w, b])
            .collect()
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.cols() != self.spec.in_dim() {
            return Err(Error::Shape {
                op: "mlp_forward",
                detail: format!(
                    "input has {} features, network expects {}",
                    x.cols(),
                    self.spec.in_dim()
                ),
            });
        }
        Ok(())
    }

    /// Output of the last linear layer, before the output transform.
    pub fn forward_linear(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        let n = x.rows();
        let last = self.weights.len() - 1;
        let mut h = x.clone();
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut next = Tensor::from_parts(n, w.cols(), b.data().repeat(n));
            gemm_into(&h, false, w, false, &mut next, 1.0);
            if l < last {
                let s = self.spec.slope;
                next.data_mut().iter_mut().for_each(|v| {
                    if *v < 0.0 {
                        *v *= s
                    }
                });
            }
            h = next;
        }
        Ok(h)
    }

    /// Plain (untaped) forward pass.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut h = self.forward_linear(x)?;
        match self.spec.output {
            OutputTransform::L2Normalize => {
                for r in 0..h.rows() {
                    let row = h.row_mut(r);
                    let n = guarded_norm(row);
                    row.iter_mut().for_each(|v| *v /= n);
                }
            }
            OutputTransform::OnePlusExp => h.data_mut().iter_mut().for_each(|v| *v = 1.0 + v.exp()),
            OutputTransform::None => {}
        }
        Ok(h)
    }

    /// Taped forward pass. When `trainable`, parameters enter as gradient
    /// leaves and are returned in [`Mlp::params`] order; otherwise they are
    /// constants and the returned list is empty.
    pub fn forward_tape(
        &self,
        tape: &mut Tape,
        x: Var,
        trainable: bool,
    ) -> Result<(Var, Vec<Var>)> {
        self.check_input(tape.value(x))?;
        let mut vars = Vec::new();
        let last = self.weights.len() - 1;
        let mut h = x;
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let (wv, bv) = if trainable {
                let wv = tape.param(w.clone());
                let bv = tape.param(b.clone());
                vars.push(wv);
                vars.push(bv);
                (wv, bv)
            } else {
                (tape.constant(w.clone()), tape.constant(b.clone()))
            };
            let lin = tape.matmul(h, wv)?;
            h = tape.add_row(lin, bv)?;
            if l < last {
                h = tape.leaky_relu(h, self.spec.slope);
            }
        }
        let out = match self.spec.output {
            OutputTransform::L2Normalize => tape.l2_normalize_rows(h),
            OutputTransform::OnePlusExp => {
                let e = tape.exp(h);
                tape.add_scalar(e, 1.0)
            }
            OutputTransform::None => h,
        };
        Ok((out, vars))
    }

    /// Replaces the last layer's output `y` by `scale·y + shift`.
    pub fn affine_output(&mut self, scale: f64, shift: f64) {
        let last = self.weights.len() - 1;
        self.weights[last]
            .data_mut()
            .iter_mut()
            .for_each(|v| *v *= scale);
        self.biases[last]
            .data_mut()
            .iter_mut()
            .for_each(|v| *v = *v * scale + shift);
    }

    pub fn write_to(&self, ckpt: &mut Checkpoint, prefix: &str) {
        let dims: Vec<String> = self
            .spec
            .layer_dims
            .iter()
            .map(|(i, o)| format!("{i}x{o}"))
            .collect();
        ckpt.set_meta(&format!("{prefix}.dims"), dims.join(","));
        ckpt.set_meta(&format!("{prefix}.slope"), format!("{:?}", self.spec.slope));
        ckpt.set_meta(&format!("{prefix}.output"), self.spec.output.tag());
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            ckpt.insert(&format!("{prefix}.w{l}"), w.clone());
            ckpt.insert(&format!("{prefix}.b{l}"), b.clone());
        }
    }

    pub fn read_from(ckpt: &Checkpoint, prefix: &str) -> Result<Self> {
        let bad = |what: &str| Error::Checkpoint(format!("{prefix}: malformed {what}"));
        let dims = ckpt
            .meta(&format!("{prefix}.dims"))?
            .split(',')
            .map(|pair| {
                let (i, o) = pair.split_once('x').ok_or_else(|| bad("dims"))?;
                Ok((
                    i.parse().map_err(|_| bad("dims"))?,
                    o.parse().map_err(|_| bad("dims"))?,
                ))
            })
            .collect::<Result<Vec<(usize, usize)>>>()?;
        let slope = ckpt
            .meta(&format!("{prefix}.slope"))?
            .parse()
            .map_err(|_| bad("slope"))?;
        let output = OutputTransform::from_tag(ckpt.meta(&format!("{prefix}.output"))?)?;
        let spec = MlpSpec {
            layer_dims: dims,
            slope,
            output,
        };
        let n = spec.layer_dims.len();
        let weights = (0..n)
            .map(|l| ckpt.tensor(&format!("{prefix}.w{l}")).cloned())
            .collect::<Result<Vec<_>>>()?;
        let biases = (0..n)
            .map(|l| ckpt.tensor(&format!("{prefix}.b{l}")).cloned())
            .collect::<Result<Vec<_>>>()?;
        Mlp::from_params(spec, weights, biases)
    }
}
