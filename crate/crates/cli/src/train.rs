//! Position-wise toy regression: students learn a frozen random SwiGLU teacher.
//!
//! Every student sees the same i.i.d. normal tokens and minimizes the mean
//! squared error per element with Adam. The FlashMHF student trains through
//! the blockwise forward and [`flashmhf_backward`].

use flashmhf_core::grad::{flashmhf_backward, mhffn_backward, pkv_multihead_backward, swiglu_backward};
use flashmhf_core::init::{normal_tensor, role_rng};
use flashmhf_core::kernel::flashmhf_forward;
use flashmhf_core::model::{init_params_with_std, FlashDims, FlashMhfParams};
use flashmhf_core::naive::{mhffn_forward, pkv_multihead_forward, NaiveMhffnParams, PkvMultiHeadParams};
use flashmhf_core::reference::{swiglu_forward, SwiGluParams};
use flashmhf_core::{Error, HeadLayout, MemoryLedger, Result, Tensor, TileSpec};
use rand::Rng;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.95;
pub const ADAM_EPS: f64 = 1e-8;
pub const DIVERGENCE_FACTOR: f64 = 10.0;
pub const EVAL_FRACTION_DENOM: usize = 10;

/// Widths of the toy comparison. The non-FlashMHF students get intermediate
/// widths chosen so all four parameter counts sit within 5% of each other.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToyShape {
    pub d_model: usize,
    pub heads: usize,
    pub experts: usize,
    pub expert_dim: usize,
    pub swiglu_dff: usize,
    pub naive_dff: usize,
    pub pkv_dff: usize,
    pub teacher_dff: usize,
    pub teacher_std: f64,
    pub student_std: f64,
}

impl Default for ToyShape {
    fn default() -> Self {
        ToyShape {
            d_model: 32,
            heads: 2,
            experts: 2,
            expert_dim: 64,
            swiglu_dff: 150,
            naive_dff: 129,
            pkv_dff: 193,
            teacher_dff: 16,
            teacher_std: 0.2,
            student_std: 0.1,
        }
    }
}

impl ToyShape {
    pub fn flash_dims(&self) -> Result<FlashDims> {
        let layout = HeadLayout::new(self.d_model, self.heads)?;
        FlashDims::with_expert_dim(layout, self.experts, self.expert_dim)
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.heads
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum StudentKind {
    FlashMhf,
    SwiGlu,
    NaiveMhffn,
    Pkv,
}

impl StudentKind {
    pub const ALL: [StudentKind; 4] = [StudentKind::FlashMhf, StudentKind::SwiGlu, StudentKind::NaiveMhffn, StudentKind::Pkv];

    pub fn name(self) -> &'static str {
        match self {
            StudentKind::FlashMhf => "flashmhf",
            StudentKind::SwiGlu => "swiglu",
            StudentKind::NaiveMhffn => "naive_mhffn",
            StudentKind::Pkv => "pkv",
        }
    }
}

#[derive(Debug, Clone)]
pub enum Student {
    FlashMhf { dims: FlashDims, params: FlashMhfParams },
    SwiGlu(SwiGluParams),
    NaiveMhffn(NaiveMhffnParams),
    Pkv(PkvMultiHeadParams),
}

impl Student {
    pub fn init(kind: StudentKind, shape: &ToyShape, seed: u64) -> Result<Student> {
        let d = shape.d_model;
        let (h, d_h) = (shape.heads, shape.head_dim());
        let std = shape.student_std;
        let n = |dims: &[usize], role: &str| normal_tensor(dims, std, seed, role);
        Ok(match kind {
            StudentKind::FlashMhf => {
                let dims = shape.flash_dims()?;
                Student::FlashMhf { dims, params: init_params_with_std(&dims, seed, std) }
            }
            StudentKind::SwiGlu => Student::SwiGlu(SwiGluParams {
                w_up: n(&[d, shape.swiglu_dff], "swiglu.up"),
                w_gate: n(&[d, shape.swiglu_dff], "swiglu.gate"),
                w_down: n(&[shape.swiglu_dff, d], "swiglu.down"),
            }),
            StudentKind::NaiveMhffn => Student::NaiveMhffn(NaiveMhffnParams {
                w_in: n(&[d, d], "naive.w_in"),
                keys: n(&[h, shape.naive_dff, d_h], "naive.keys"),
                ups: n(&[h, shape.naive_dff, d_h], "naive.ups"),
                values: n(&[h, shape.naive_dff, d_h], "naive.values"),
                w_out: n(&[d, d], "naive.w_out"),
            }),
            StudentKind::Pkv => Student::Pkv(PkvMultiHeadParams {
                w_in: n(&[d, d], "pkv.w_in"),
                keys: n(&[h, shape.pkv_dff, d_h], "pkv.keys"),
                values: n(&[h, shape.pkv_dff, d_h], "pkv.values"),
                w_out: n(&[d, d], "pkv.w_out"),
            }),
        })
    }

    pub fn kind(&self) -> StudentKind {
        match self {
            Student::FlashMhf { .. } => StudentKind::FlashMhf,
            Student::SwiGlu(_) => StudentKind::SwiGlu,
            Student::NaiveMhffn(_) => StudentKind::NaiveMhffn,
            Student::Pkv(_) => StudentKind::Pkv,
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        match self {
            Student::FlashMhf { dims, params } => {
                flashmhf_forward(x, params, dims, TileSpec::default(), &mut MemoryLedger::counting_only())
            }
            Student::SwiGlu(p) => swiglu_forward(x, p),
            Student::NaiveMhffn(p) => mhffn_forward(x, p),
            Student::Pkv(p) => pkv_multihead_forward(x, p),
        }
    }

    /// Parameter gradients in [`Student::params_mut`] order.
    pub fn grads(&self, x: &Tensor, dy: &Tensor) -> Result<Vec<Tensor>> {
        Ok(match self {
            Student::FlashMhf { dims, params } => {
                let g = flashmhf_backward(x, params, dims, dy, TileSpec::default())?;
                g.params().into_iter().map(|(_, t)| t.clone()).collect()
            }
            Student::SwiGlu(p) => {
                let g = swiglu_backward(x, p, dy)?;
                vec![g.dw_up, g.dw_gate, g.dw_down]
            }
            Student::NaiveMhffn(p) => {
                let g = mhffn_backward(x, p, dy, TileSpec::default())?;
                vec![g.dw_in, g.dkeys, g.dups, g.dvalues, g.dw_out]
            }
            Student::Pkv(p) => {
                let g = pkv_multihead_backward(x, p, dy)?;
                vec![g.dw_in, g.dkeys, g.dvalues, g.dw_out]
            }
        })
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        match self {
            Student::FlashMhf { params, .. } => params.tensors_mut().into_iter().map(|(_, t)| t).collect(),
            Student::SwiGlu(p) => vec![&mut p.w_up, &mut p.w_gate, &mut p.w_down],
            Student::NaiveMhffn(p) => vec![&mut p.w_in, &mut p.keys, &mut p.ups, &mut p.values, &mut p.w_out],
            Student::Pkv(p) => vec![&mut p.w_in, &mut p.keys, &mut p.values, &mut p.w_out],
        }
    }

    pub fn param_count(&mut self) -> usize {
        self.params_mut().iter().map(|t| t.len()).sum()
    }
}

/// Adam without weight decay.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: i32,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam { lr, m: Vec::new(), v: Vec::new(), t: 0 }
    }

    pub fn step(&mut self, params: Vec<&mut Tensor>, grads: &[Tensor]) {
        if self.m.is_empty() {
            self.m = grads.iter().map(|g| vec![0.0; g.len()]).collect();
            self.v = self.m.clone();
        }
        self.t += 1;
        let c1 = 1.0 - BETA1.powi(self.t);
        let c2 = 1.0 - BETA2.powi(self.t);
        for (i, (p, g)) in params.into_iter().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (j, (w, &gj)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                m[j] = BETA1 * m[j] + (1.0 - BETA1) * gj;
                v[j] = BETA2 * v[j] + (1.0 - BETA2) * gj * gj;
                *w -= self.lr * (m[j] / c1) / ((v[j] / c2).sqrt() + ADAM_EPS);
            }
        }
    }
}

/// Mean squared error over every element and its gradient with respect to `y`.
pub fn mse(y: &Tensor, target: &Tensor) -> Result<(f64, Tensor)> {
    let diff = y.sub(target)?;
    let n = diff.len() as f64;
    let loss = diff.data().iter().map(|d| d * d).sum::<f64>() / n;
    Ok((loss, diff.scale(2.0 / n)))
}

#[derive(Debug, Clone)]
pub struct ToyData {
    pub train_x: Tensor,
    pub train_y: Tensor,
    pub eval_x: Tensor,
    pub eval_y: Tensor,
}

pub fn teacher(shape: &ToyShape, seed: u64) -> SwiGluParams {
    let (d, f, std) = (shape.d_model, shape.teacher_dff, shape.teacher_std);
    SwiGluParams {
        w_up: normal_tensor(&[d, f], std, seed, "teacher.up"),
        w_gate: normal_tensor(&[d, f], std, seed, "teacher.gate"),
        w_down: normal_tensor(&[f, d], std, seed, "teacher.down"),
    }
}

/// `tokens` i.i.d. `N(0, 1)` vectors labelled by the teacher; the first 90%
/// train, the rest evaluate.
pub fn toy_data(shape: &ToyShape, tokens: usize, seed: u64) -> Result<ToyData> {
    if tokens < 2 {
        return Err(Error::Config(format!("toy dataset needs at least 2 tokens, got {tokens}")));
    }
    let d = shape.d_model;
    let x: Tensor = normal_tensor(&[tokens, d], 1.0, seed, "toy.x");
    let y = swiglu_forward(&x, &teacher(shape, seed))?;
    let n_eval = (tokens / EVAL_FRACTION_DENOM).max(1);
    let n_train = tokens - n_eval;
    let rows = |t: &Tensor, lo: usize, hi: usize| Tensor::new(&[hi - lo, d], t.data()[lo * d..hi * d].to_vec());
    Ok(ToyData {
        train_x: rows(&x, 0, n_train)?,
        train_y: rows(&y, 0, n_train)?,
        eval_x: rows(&x, n_train, tokens)?,
        eval_y: rows(&y, n_train, tokens)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainSettings {
    pub steps: usize,
    pub seq_len: usize,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub method: StudentKind,
    pub seed: u64,
    pub params: usize,
    pub initial_eval: f64,
    pub final_eval: f64,
    /// Train MSE per completed step.
    pub curve: Vec<f64>,
    pub diverged: bool,
}

impl TrainOutcome {
    pub fn ratio(&self) -> f64 {
        self.final_eval / self.initial_eval
    }
}

pub fn train_student(
    kind: StudentKind,
    shape: &ToyShape,
    data: &ToyData,
    settings: TrainSettings,
    seed: u64,
) -> Result<(TrainOutcome, Student)> {
    let mut student = Student::init(kind, shape, seed)?;
    let params = student.param_count();
    let initial_eval = mse(&student.forward(&data.eval_x)?, &data.eval_y)?.0;
    let mut opt = Adam::new(settings.lr);
    let mut rng = role_rng(seed, kind.name());
    let d = shape.d_model;
    let n_train = data.train_x.shape()[0];
    let mut curve = Vec::with_capacity(settings.steps);
    let mut diverged = false;
    let mut bx = Tensor::zeros(&[settings.seq_len, d]);
    let mut by = Tensor::zeros(&[settings.seq_len, d]);
    for _ in 0..settings.steps {
        for r in 0..settings.seq_len {
            let i = rng.gen_range(0..n_train);
            bx.data_mut()[r * d..(r + 1) * d].copy_from_slice(&data.train_x.data()[i * d..(i + 1) * d]);
            by.data_mut()[r * d..(r + 1) * d].copy_from_slice(&data.train_y.data()[i * d..(i + 1) * d]);
        }
        let (loss, dy) = mse(&student.forward(&bx)?, &by)?;
        curve.push(loss);
        if !loss.is_finite() || loss > DIVERGENCE_FACTOR * curve[0] {
            diverged = true;
            break;
        }
        let grads = student.grads(&bx, &dy)?;
        opt.step(student.params_mut(), &grads);
    }
    let final_eval = mse(&student.forward(&data.eval_x)?, &data.eval_y)?.0;
    let outcome = TrainOutcome {
        method: kind,
        seed,
        params,
        initial_eval,
        final_eval,
        curve,
        diverged: diverged || !final_eval.is_finite(),
    };
    Ok((outcome, student))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parameter_counts_match_within_five_percent() {
        let shape = ToyShape::default();
        let mut counts = Vec::new();
        for kind in StudentKind::ALL {
            counts.push(Student::init(kind, &shape, 0).unwrap().param_count());
        }
        assert_eq!(counts[0], 14400);
        for &c in &counts {
            let rel = (c as f64 - counts[0] as f64).abs() / counts[0] as f64;
            assert!(rel < 0.05, "{counts:?}");
        }
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut w = Tensor::new(&[3], vec![1.0, 2.0, 3.0]).unwrap();
        let g = Tensor::new(&[3], vec![0.5, -4.0, 0.0]).unwrap();
        let mut opt = Adam::new(0.1);
        opt.step(vec![&mut w], &[g]);
        let want = [0.9, 2.1, 3.0];
        for (a, b) in w.data().iter().zip(want) {
            assert!((a - b).abs() < 1e-6, "{:?}", w.data());
        }
    }

    #[test]
    fn mse_gradient_is_scaled_difference() {
        let y = Tensor::new(&[2, 1], vec![1.0, 3.0]).unwrap();
        let t = Tensor::new(&[2, 1], vec![0.0, 1.0]).unwrap();
        let (loss, g) = mse(&y, &t).unwrap();
        assert_eq!(loss, 2.5);
        assert_eq!(g.data(), &[1.0, 2.0]);
    }

    #[test]
    fn split_is_ninety_ten() {
        let data = toy_data(&ToyShape::default(), 100, 3).unwrap();
        assert_eq!(data.train_x.shape(), &[90, 32]);
        assert_eq!(data.eval_y.shape(), &[10, 32]);
    }

    #[test]
    fn student_grads_align_with_params() {
        let shape = ToyShape::default();
        let x: Tensor = normal_tensor(&[4, 32], 1.0, 0, "x");
        for kind in StudentKind::ALL {
            let mut s = Student::init(kind, &shape, 1).unwrap();
            let g = s.grads(&x, &Tensor::full(&[4, 32], 1.0)).unwrap();
            let shapes: Vec<Vec<usize>> = s.params_mut().iter().map(|t| t.shape().to_vec()).collect();
            assert_eq!(g.iter().map(|t| t.shape().to_vec()).collect::<Vec<_>>(), shapes, "{}", kind.name());
        }
    }
}
