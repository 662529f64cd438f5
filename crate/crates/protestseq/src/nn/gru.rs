//! GRU cell and sequence runner with backpropagation through time.
//!
//! Convention (the update gate scales the *candidate*, and the reset gate
//! multiplies the previous state before the recurrent matmul):
//!
//! ```text
//! z = sigmoid(W_z x + U_z h_prev + b_z)
//! r = sigmoid(W_r x + U_r h_prev + b_r)
//! hc = cand(W_h x + U_h (r * h_prev) + b_h)
//! h = (1 - z) * h_prev + z * hc
//! ```

use ndarray::{Array1, Array2};

use super::activations::Activation;
use super::params::TensorSet;
use super::{shape_mismatch, NnError};

#[derive(Debug, Clone)]
pub struct GruParams {
    pub w_update: Array2<f64>,
    pub u_update: Array2<f64>,
    pub b_update: Array1<f64>,
    pub w_reset: Array2<f64>,
    pub u_reset: Array2<f64>,
    pub b_reset: Array1<f64>,
    pub w_candidate: Array2<f64>,
    pub u_candidate: Array2<f64>,
    pub b_candidate: Array1<f64>,
    pub candidate_activation: Activation,
}

#[derive(Debug, Clone)]
pub struct GruStepCache {
    pub x: Array1<f64>,
    pub h_prev: Array1<f64>,
    pub z: Array1<f64>,
    pub r: Array1<f64>,
    /// `r * h_prev`, the input to the candidate's recurrent matmul.
    pub rh: Array1<f64>,
    pub hc: Array1<f64>,
    pub h: Array1<f64>,
}

#[derive(Debug, Clone)]
pub struct GruSeqCache {
    pub steps: Vec<GruStepCache>,
    pub h_seq: Array2<f64>,
}

impl GruSeqCache {
    pub fn final_h(&self) -> Array1<f64> {
        match self.steps.last() {
            Some(step) => step.h.clone(),
            None => Array1::zeros(self.h_seq.ncols()),
        }
    }
}

impl GruParams {
    pub fn zeros(units: usize, input_dim: usize, candidate: Activation) -> Self {
        let w = || Array2::zeros((units, input_dim));
        let u = || Array2::zeros((units, units));
        let b = || Array1::zeros(units);
        GruParams {
            w_update: w(),
            u_update: u(),
            b_update: b(),
            w_reset: w(),
            u_reset: u(),
            b_reset: b(),
            w_candidate: w(),
            u_candidate: u(),
            b_candidate: b(),
            candidate_activation: candidate,
        }
    }

    pub fn zeros_like(&self) -> Self {
        GruParams::zeros(self.units(), self.input_dim(), self.candidate_activation)
    }

    pub fn units(&self) -> usize {
        self.b_update.len()
    }

    pub fn input_dim(&self) -> usize {
        self.w_update.ncols()
    }

    pub fn step(&self, x: &Array1<f64>, h_prev: &Array1<f64>) -> Result<GruStepCache, NnError> {
        if x.len() != self.input_dim() || h_prev.len() != self.units() {
            return Err(shape_mismatch(
                "gru step",
                format!("x[{}], h[{}]", self.input_dim(), self.units()),
                format!("x[{}], h[{}]", x.len(), h_prev.len()),
            ));
        }
        let z = super::sigmoid(&(self.w_update.dot(x) + self.u_update.dot(h_prev) + &self.b_update));
        let r = super::sigmoid(&(self.w_reset.dot(x) + self.u_reset.dot(h_prev) + &self.b_reset));
        let rh = &r * h_prev;
        let hc = self
            .candidate_activation
            .apply(&(self.w_candidate.dot(x) + self.u_candidate.dot(&rh) + &self.b_candidate));
        let h = (1.0 - &z) * h_prev + &z * &hc;
        Ok(GruStepCache {
            x: x.clone(),
            h_prev: h_prev.clone(),
            z,
            r,
            rh,
            hc,
            h,
        })
    }

    pub fn run_cached(&self, xs: &Array2<f64>) -> Result<GruSeqCache, NnError> {
        if xs.ncols() != self.input_dim() {
            return Err(shape_mismatch(
                "gru sequence",
                format!("{} input columns", self.input_dim()),
                format!("{}", xs.ncols()),
            ));
        }
        let t_len = xs.nrows();
        let mut steps = Vec::with_capacity(t_len);
        let mut h = Array1::zeros(self.units());
        let mut h_seq = Array2::zeros((t_len, self.units()));
        for (t, x) in xs.rows().into_iter().enumerate() {
            let step = self.step(&x.to_owned(), &h)?;
            h = step.h.clone();
            h_seq.row_mut(t).assign(&step.h);
            steps.push(step);
        }
        Ok(GruSeqCache { steps, h_seq })
    }

    pub fn run(&self, xs: &Array2<f64>) -> Result<Array2<f64>, NnError> {
        Ok(self.run_cached(xs)?.h_seq)
    }

    /// BPTT; see [`LstmParams::bptt`](super::lstm::LstmParams::bptt) for the
    /// calling convention.
    pub fn bptt(
        &self,
        cache: &GruSeqCache,
        dh_seq: &Array2<f64>,
        grads: &mut GruParams,
    ) -> Result<Array2<f64>, NnError> {
        let t_len = cache.steps.len();
        if dh_seq.nrows() != t_len || dh_seq.ncols() != self.units() {
            return Err(shape_mismatch(
                "gru bptt",
                format!("{t_len} x {}", self.units()),
                format!("{} x {}", dh_seq.nrows(), dh_seq.ncols()),
            ));
        }
        let mut dx_seq = Array2::zeros((t_len, self.input_dim()));
        let mut dh_next = Array1::zeros(self.units());
        for t in (0..t_len).rev() {
            let s = &cache.steps[t];
            let dh = &dh_next + &dh_seq.row(t);
            let dz = &dh * &(&s.hc - &s.h_prev);
            let dhc = &dh * &s.z;
            let mut dh_prev = &dh * &(1.0 - &s.z);

            let dp_hc = &dhc * &self.candidate_activation.grad_from_output(&s.hc);
            for (mut row, &g) in grads.w_candidate.rows_mut().into_iter().zip(dp_hc.iter()) {
                row.scaled_add(g, &s.x);
            }
            for (mut row, &g) in grads.u_candidate.rows_mut().into_iter().zip(dp_hc.iter()) {
                row.scaled_add(g, &s.rh);
            }
            grads.b_candidate += &dp_hc;

            let drh = self.u_candidate.t().dot(&dp_hc);
            let dr = &drh * &s.h_prev;
            dh_prev += &(&drh * &s.r);

            let dp_z = &dz * &s.z * &s.z.mapv(|v| 1.0 - v);
            let dp_r = &dr * &s.r * &s.r.mapv(|v| 1.0 - v);
            for (mut row, &g) in grads.w_update.rows_mut().into_iter().zip(dp_z.iter()) {
                row.scaled_add(g, &s.x);
            }
            for (mut row, &g) in grads.u_update.rows_mut().into_iter().zip(dp_z.iter()) {
                row.scaled_add(g, &s.h_prev);
            }
            grads.b_update += &dp_z;
            for (mut row, &g) in grads.w_reset.rows_mut().into_iter().zip(dp_r.iter()) {
                row.scaled_add(g, &s.x);
            }
            for (mut row, &g) in grads.u_reset.rows_mut().into_iter().zip(dp_r.iter()) {
                row.scaled_add(g, &s.h_prev);
            }
            grads.b_reset += &dp_r;

            let dx = self.w_update.t().dot(&dp_z)
                + self.w_reset.t().dot(&dp_r)
                + self.w_candidate.t().dot(&dp_hc);
            dx_seq.row_mut(t).assign(&dx);
            dh_prev += &self.u_update.t().dot(&dp_z);
            dh_prev += &self.u_reset.t().dot(&dp_r);
            dh_next = dh_prev;
        }
        Ok(dx_seq)
    }
}

impl TensorSet for GruParams {
    // Visitation order mirrors field declaration order.
    fn visit(&self, f: &mut dyn FnMut(&str, &[f64])) {
        f("w_update", self.w_update.as_slice().expect("contiguous"));
        f("u_update", self.u_update.as_slice().expect("contiguous"));
        f("b_update", self.b_update.as_slice().expect("contiguous"));
        f("w_reset", self.w_reset.as_slice().expect("contiguous"));
        f("u_reset", self.u_reset.as_slice().expect("contiguous"));
        f("b_reset", self.b_reset.as_slice().expect("contiguous"));
        f("w_candidate", self.w_candidate.as_slice().expect("contiguous"));
        f("u_candidate", self.u_candidate.as_slice().expect("contiguous"));
        f("b_candidate", self.b_candidate.as_slice().expect("contiguous"));
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut [f64])) {
        f("w_update", self.w_update.as_slice_mut().expect("contiguous"));
        f("u_update", self.u_update.as_slice_mut().expect("contiguous"));
        f("b_update", self.b_update.as_slice_mut().expect("contiguous"));
        f("w_reset", self.w_reset.as_slice_mut().expect("contiguous"));
        f("u_reset", self.u_reset.as_slice_mut().expect("contiguous"));
        f("b_reset", self.b_reset.as_slice_mut().expect("contiguous"));
        f("w_candidate", self.w_candidate.as_slice_mut().expect("contiguous"));
        f("u_candidate", self.u_candidate.as_slice_mut().expect("contiguous"));
        f("b_candidate", self.b_candidate.as_slice_mut().expect("contiguous"));
    }
}
