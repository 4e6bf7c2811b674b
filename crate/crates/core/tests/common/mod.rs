//! Helpers shared by integration tests.
#![allow(dead_code)]

use mcinfonce::losses::{
    loss, FreshDraws, LossConfig, LossInputs, LossKind, NegativeVars, PosteriorVars, ReplayDraws,
};
use mcinfonce::nn::{Mlp, MlpSpec, OutputTransform, Tape, Tensor};
use mcinfonce::rng::stream;
use mcinfonce::vmf::ReparamDraw;
use rand::Rng;

const B: usize = 3;
const M: usize = 2;

pub struct Toy {
    mu_head: Mlp,
    kappa_head: Mlp,
    x: Tensor,
    in_batch: bool,
}

impl Toy {
    fn new(seed: u64, in_batch: bool) -> Self {
        let mut rng = stream(seed, "toy");
        let mu_head = Mlp::init(
            MlpSpec::chain(&[3, 6, 3], OutputTransform::L2Normalize).unwrap(),
            &mut rng,
        )
        .unwrap();
        let mut kappa_head = Mlp::init(
            MlpSpec::chain(&[3, 6, 1], OutputTransform::OnePlusExp).unwrap(),
            &mut rng,
        )
        .unwrap();
        kappa_head.affine_output(1.0, 2.0);
        let rows = if in_batch { 2 * B } else { 2 * B + B * M };
        let x = Tensor::new(
            vec![rows, 3],
            (0..rows * 3).map(|_| rng.random::<f64>()).collect(),
        )
        .unwrap();
        Toy {
            mu_head,
            kappa_head,
            x,
            in_batch,
        }
    }

    /// Loss value and, when requested, gradients for all parameters
    /// (`mu_head` first, then `kappa_head`).
    fn eval(
        &self,
        cfg: &LossConfig,
        draws: &mut dyn mcinfonce::losses::DrawSource,
        grads: bool,
    ) -> (f64, Vec<Tensor>) {
        let mut tape = Tape::new();
        let xv = tape.constant(self.x.clone());
        let (mu, mp) = self.mu_head.forward_tape(&mut tape, xv, true).unwrap();
        let (kappa, kp) = self.kappa_head.forward_tape(&mut tape, xv, true).unwrap();
        let mut part = |a: usize, b: usize| PosteriorVars {
            mu: tape.slice_rows(mu, a, b).unwrap(),
            kappa: tape.slice_rows(kappa, a, b).unwrap(),
        };
        let refs = part(0, B);
        let positives = part(B, 2 * B);
        let negatives = if self.in_batch {
            NegativeVars::InBatch {
                partners: vec![2, 0, 1],
            }
        } else {
            NegativeVars::Explicit {
                posteriors: part(2 * B, 2 * B + B * M),
                per_ref: M,
            }
        };
        let inputs = LossInputs {
            refs,
            positives,
            negatives,
        };
        let out = loss(&mut tape, &inputs, cfg, draws).unwrap();
        let value = tape.value(out).item();
        if !grads {
            return (value, Vec::new());
        }
        let mut g = tape.backward(out).unwrap();
        let params: Vec<&Tensor> = self
            .mu_head
            .params()
            .into_iter()
            .chain(self.kappa_head.params())
            .collect();
        let vars: Vec<_> = mp.into_iter().chain(kp).collect();
        (
            value,
            vars.iter()
                .zip(params)
                .map(|(&v, p)| g.take_or_zeros(v, p))
                .collect(),
        )
    }

    fn param_mut(&mut self, idx: usize) -> &mut Tensor {
        let n_mu = self.mu_head.params().len();
        if idx < n_mu {
            self.mu_head.params_mut().swap_remove(idx)
        } else {
            self.kappa_head.params_mut().swap_remove(idx - n_mu)
        }
    }
}

/// Largest relative error between tape gradients and central finite
/// differences of the loss, with the Monte-Carlo draws replayed across
/// perturbations, over all parameters of a small D=3 encoder.
pub fn gradient_check(kind: LossKind, in_batch: bool, seed: u64) -> f64 {
    let cfg = LossConfig {
        kind,
        kappa_pos: 4.0,
        k: 3,
        hib_a: 1.0,
        hib_b: 0.0,
    };
    let mut toy = Toy::new(seed, in_batch);
    let mut rng = stream(seed, "draws");
    let mut fresh = FreshDraws::recording(&mut rng);
    let (_, grads) = toy.eval(&cfg, &mut fresh, true);
    let record: Vec<ReparamDraw> = fresh.into_record();
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for (pi, g) in grads.iter().enumerate() {
        for e in 0..g.len() {
            let orig = toy.param_mut(pi).data()[e];
            toy.param_mut(pi).data_mut()[e] = orig + h;
            let (up, _) = toy.eval(&cfg, &mut ReplayDraws::new(record.clone()), false);
            toy.param_mut(pi).data_mut()[e] = orig - h;
            let (down, _) = toy.eval(&cfg, &mut ReplayDraws::new(record.clone()), false);
            toy.param_mut(pi).data_mut()[e] = orig;
            let fd = (up - down) / (2.0 * h);
            let an = g.data()[e];
            let rel = (fd - an).abs() / an.abs().max(fd.abs()).max(1e-3);
            worst = worst.max(rel);
        }
    }
    worst
}
