//! LSTM cell and sequence runner with backpropagation through time.
//!
//! Gate equations, all vectors of the layer width:
//!
//! ```text
//! i = sigmoid(W_i x + U_i h_prev + b_i)
//! f = sigmoid(W_f x + U_f h_prev + b_f)
//! g = cand(W_c x + U_c h_prev + b_c)
//! o = sigmoid(W_o x + U_o h_prev + b_o)
//! c = f * c_prev + i * g
//! h = o * out(c)
//! ```
//!
//! `cand` and `out` are configurable; the classifier runs both as identity,
//! the conventional cell uses tanh for both. Gates are always sigmoids.

use ndarray::{Array1, Array2};

use super::activations::Activation;
use super::params::TensorSet;
use super::{shape_mismatch, NnError};

#[derive(Debug, Clone)]
pub struct LstmParams {
    pub w_input: Array2<f64>,
    pub u_input: Array2<f64>,
    pub b_input: Array1<f64>,
    pub w_forget: Array2<f64>,
    pub u_forget: Array2<f64>,
    pub b_forget: Array1<f64>,
    pub w_candidate: Array2<f64>,
    pub u_candidate: Array2<f64>,
    pub b_candidate: Array1<f64>,
    pub w_output: Array2<f64>,
    pub u_output: Array2<f64>,
    pub b_output: Array1<f64>,
    pub candidate_activation: Activation,
    pub output_activation: Activation,
}

/// Everything the backward pass needs about one timestep.
#[derive(Debug, Clone)]
pub struct LstmStepCache {
    pub x: Array1<f64>,
    pub h_prev: Array1<f64>,
    pub c_prev: Array1<f64>,
    pub i: Array1<f64>,
    pub f: Array1<f64>,
    pub g: Array1<f64>,
    pub o: Array1<f64>,
    pub c: Array1<f64>,
    pub c_act: Array1<f64>,
    pub h: Array1<f64>,
}

/// Per-step caches plus the stacked hidden states (`T x units`).
#[derive(Debug, Clone)]
pub struct LstmSeqCache {
    pub steps: Vec<LstmStepCache>,
    pub h_seq: Array2<f64>,
}

impl LstmSeqCache {
    /// Hidden state after the last step; zeros for an empty sequence.
    pub fn final_h(&self) -> Array1<f64> {
        match self.steps.last() {
            Some(step) => step.h.clone(),
            None => Array1::zeros(self.h_seq.ncols()),
        }
    }
}

impl LstmParams {
    pub fn zeros(units: usize, input_dim: usize, candidate: Activation, output: Activation) -> Self {
        let w = || Array2::zeros((units, input_dim));
        let u = || Array2::zeros((units, units));
        let b = || Array1::zeros(units);
        LstmParams {
            w_input: w(),
            u_input: u(),
            b_input: b(),
            w_forget: w(),
            u_forget: u(),
            b_forget: b(),
            w_candidate: w(),
            u_candidate: u(),
            b_candidate: b(),
            w_output: w(),
            u_output: u(),
            b_output: b(),
            candidate_activation: candidate,
            output_activation: output,
        }
    }

    pub fn zeros_like(&self) -> Self {
        LstmParams::zeros(
            self.units(),
            self.input_dim(),
            self.candidate_activation,
            self.output_activation,
        )
    }

    pub fn units(&self) -> usize {
        self.b_input.len()
    }

    pub fn input_dim(&self) -> usize {
        self.w_input.ncols()
    }

    /// One cell step. State vectors must match the layer width.
    pub fn step(
        &self,
        x: &Array1<f64>,
        h_prev: &Array1<f64>,
        c_prev: &Array1<f64>,
    ) -> Result<LstmStepCache, NnError> {
        if x.len() != self.input_dim() || h_prev.len() != self.units() || c_prev.len() != self.units()
        {
            return Err(shape_mismatch(
                "lstm step",
                format!("x[{}], h[{u}], c[{u}]", self.input_dim(), u = self.units()),
                format!("x[{}], h[{}], c[{}]", x.len(), h_prev.len(), c_prev.len()),
            ));
        }
        let pre = |w: &Array2<f64>, u: &Array2<f64>, b: &Array1<f64>| w.dot(x) + u.dot(h_prev) + b;
        let i = super::sigmoid(&pre(&self.w_input, &self.u_input, &self.b_input));
        let f = super::sigmoid(&pre(&self.w_forget, &self.u_forget, &self.b_forget));
        let g = self
            .candidate_activation
            .apply(&pre(&self.w_candidate, &self.u_candidate, &self.b_candidate));
        let o = super::sigmoid(&pre(&self.w_output, &self.u_output, &self.b_output));
        let c = &f * c_prev + &i * &g;
        let c_act = self.output_activation.apply(&c);
        let h = &o * &c_act;
        Ok(LstmStepCache {
            x: x.clone(),
            h_prev: h_prev.clone(),
            c_prev: c_prev.clone(),
            i,
            f,
            g,
            o,
            c,
            c_act,
            h,
        })
    }

    /// Runs the whole sequence (`xs` is `T x input_dim`) from zero state,
    /// caching every step for BPTT.
    pub fn run_cached(&self, xs: &Array2<f64>) -> Result<LstmSeqCache, NnError> {
        if xs.ncols() != self.input_dim() {
            return Err(shape_mismatch(
                "lstm sequence",
                format!("{} input columns", self.input_dim()),
                format!("{}", xs.ncols()),
            ));
        }
        let t_len = xs.nrows();
        let mut steps = Vec::with_capacity(t_len);
        let mut h = Array1::zeros(self.units());
        let mut c = Array1::zeros(self.units());
        let mut h_seq = Array2::zeros((t_len, self.units()));
        for (t, x) in xs.rows().into_iter().enumerate() {
            let step = self.step(&x.to_owned(), &h, &c)?;
            h = step.h.clone();
            c = step.c.clone();
            h_seq.row_mut(t).assign(&step.h);
            steps.push(step);
        }
        Ok(LstmSeqCache { steps, h_seq })
    }

    /// Sequence of hidden states without caching, for inference.
    pub fn run(&self, xs: &Array2<f64>) -> Result<Array2<f64>, NnError> {
        Ok(self.run_cached(xs)?.h_seq)
    }

    /// Backpropagation through time. `dh_seq` carries the loss gradient on
    /// every hidden state (`T x units`); gradients accumulate into `grads`
    /// and the gradient on the inputs comes back (`T x input_dim`).
    pub fn bptt(
        &self,
        cache: &LstmSeqCache,
        dh_seq: &Array2<f64>,
        grads: &mut LstmParams,
    ) -> Result<Array2<f64>, NnError> {
        let t_len = cache.steps.len();
        if dh_seq.nrows() != t_len || dh_seq.ncols() != self.units() {
            return Err(shape_mismatch(
                "lstm bptt",
                format!("{t_len} x {}", self.units()),
                format!("{} x {}", dh_seq.nrows(), dh_seq.ncols()),
            ));
        }
        let mut dx_seq = Array2::zeros((t_len, self.input_dim()));
        let mut dh_next = Array1::zeros(self.units());
        let mut dc_next = Array1::zeros(self.units());
        for t in (0..t_len).rev() {
            let s = &cache.steps[t];
            let dh = &dh_next + &dh_seq.row(t);
            let d_o = &dh * &s.c_act;
            let dc = &dc_next + &(&dh * &s.o * self.output_activation.grad_from_output(&s.c_act));
            let d_i = &dc * &s.g;
            let d_g = &dc * &s.i;
            let d_f = &dc * &s.c_prev;
            dc_next = &dc * &s.f;

            // Back through the gate nonlinearities to the pre-activations.
            let dp_i = &d_i * &s.i * &s.i.mapv(|v| 1.0 - v);
            let dp_f = &d_f * &s.f * &s.f.mapv(|v| 1.0 - v);
            let dp_o = &d_o * &s.o * &s.o.mapv(|v| 1.0 - v);
            let dp_g = &d_g * &self.candidate_activation.grad_from_output(&s.g);

            accumulate(&mut grads.w_input, &mut grads.u_input, &mut grads.b_input, &dp_i, s);
            accumulate(&mut grads.w_forget, &mut grads.u_forget, &mut grads.b_forget, &dp_f, s);
            accumulate(
                &mut grads.w_candidate,
                &mut grads.u_candidate,
                &mut grads.b_candidate,
                &dp_g,
                s,
            );
            accumulate(&mut grads.w_output, &mut grads.u_output, &mut grads.b_output, &dp_o, s);

            let dx = self.w_input.t().dot(&dp_i)
                + self.w_forget.t().dot(&dp_f)
                + self.w_candidate.t().dot(&dp_g)
                + self.w_output.t().dot(&dp_o);
            dx_seq.row_mut(t).assign(&dx);
            dh_next = self.u_input.t().dot(&dp_i)
                + self.u_forget.t().dot(&dp_f)
                + self.u_candidate.t().dot(&dp_g)
                + self.u_output.t().dot(&dp_o);
        }
        Ok(dx_seq)
    }
}

fn accumulate(
    w: &mut Array2<f64>,
    u: &mut Array2<f64>,
    b: &mut Array1<f64>,
    dp: &Array1<f64>,
    step: &LstmStepCache,
) {
    for (mut row, &g) in w.rows_mut().into_iter().zip(dp.iter()) {
        row.scaled_add(g, &step.x);
    }
    for (mut row, &g) in u.rows_mut().into_iter().zip(dp.iter()) {
        row.scaled_add(g, &step.h_prev);
    }
    *b += dp;
}

impl TensorSet for LstmParams {
    // Visitation order mirrors field declaration order.
    fn visit(&self, f: &mut dyn FnMut(&str, &[f64])) {
        f("w_input", self.w_input.as_slice().expect("contiguous"));
        f("u_input", self.u_input.as_slice().expect("contiguous"));
        f("b_input", self.b_input.as_slice().expect("contiguous"));
        f("w_forget", self.w_forget.as_slice().expect("contiguous"));
        f("u_forget", self.u_forget.as_slice().expect("contiguous"));
        f("b_forget", self.b_forget.as_slice().expect("contiguous"));
        f("w_candidate", self.w_candidate.as_slice().expect("contiguous"));
        f("u_candidate", self.u_candidate.as_slice().expect("contiguous"));
        f("b_candidate", self.b_candidate.as_slice().expect("contiguous"));
        f("w_output", self.w_output.as_slice().expect("contiguous"));
        f("u_output", self.u_output.as_slice().expect("contiguous"));
        f("b_output", self.b_output.as_slice().expect("contiguous"));
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut [f64])) {
        f("w_input", self.w_input.as_slice_mut().expect("contiguous"));
        f("u_input", self.u_input.as_slice_mut().expect("contiguous"));
        f("b_input", self.b_input.as_slice_mut().expect("contiguous"));
        f("w_forget", self.w_forget.as_slice_mut().expect("contiguous"));
        f("u_forget", self.u_forget.as_slice_mut().expect("contiguous"));
        f("b_forget", self.b_forget.as_slice_mut().expect("contiguous"));
        f("w_candidate", self.w_candidate.as_slice_mut().expect("contiguous"));
        f("u_candidate", self.u_candidate.as_slice_mut().expect("contiguous"));
        f("b_candidate", self.b_candidate.as_slice_mut().expect("contiguous"));
        f("w_output", self.w_output.as_slice_mut().expect("contiguous"));
        f("u_output", self.u_output.as_slice_mut().expect("contiguous"));
        f("b_output", self.b_output.as_slice_mut().expect("contiguous"));
    }
}
