//! Two-layer bidirectional LSTM followed by a fully-connected head.
//!
//! Parameter layout, in declaration order: for each layer, for the forward
//! then the backward direction, `W_ih (4H×in)`, `W_hh (4H×H)`, `b (4H)`, with
//! gate rows ordered input, forget, cell, output. Then the head:
//! `W_fc (F×2H)`, `b_fc (F)`, `W_out (T×F)`, `b_out (T)`. The head reads the
//! last layer's forward state after the final step concatenated with its
//! backward state after the first step, passes it through `tanh(W_fc·z + b_fc)`
//! and projects to `T` outputs.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

use super::scorer::dot;

pub const LAYERS: usize = 2;
pub const HIDDEN: usize = 7;
pub const FC: usize = 14;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequencePredictorNet {
    width: usize,
    hidden: usize,
    fc: usize,
    params: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
struct DirLayout {
    input: usize,
    w_ih: usize,
    w_hh: usize,
    bias: usize,
}

#[derive(Debug, Clone)]
struct Layout {
    dirs: Vec<DirLayout>,
    w_fc: usize,
    b_fc: usize,
    w_out: usize,
    b_out: usize,
    total: usize,
}

fn layout(width: usize, hidden: usize, fc: usize) -> Layout {
    let mut off = 0;
    let mut dirs = Vec::with_capacity(2 * LAYERS);
    for layer in 0..LAYERS {
        let input = if layer == 0 { width } else { 2 * hidden };
        for _ in 0..2 {
            let w_ih = off;
            off += 4 * hidden * input;
            let w_hh = off;
            off += 4 * hidden * hidden;
            let bias = off;
            off += 4 * hidden;
            dirs.push(DirLayout { input, w_ih, w_hh, bias });
        }
    }
    let w_fc = off;
    off += fc * 2 * hidden;
    let b_fc = off;
    off += fc;
    let w_out = off;
    off += width * fc;
    let b_out = off;
    off += width;
    Layout {
        dirs,
        w_fc,
        b_fc,
        w_out,
        b_out,
        total: off,
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Per-step activations of one direction, in processing order.
struct DirTrace {
    inputs: Vec<Vec<f64>>,
    /// Post-activation gates `[i, f, g, o]`, each H wide.
    gates: Vec<Vec<f64>>,
    cells: Vec<Vec<f64>>,
    hiddens: Vec<Vec<f64>>,
}

struct Trace {
    /// `dirs[2·layer + dir]`
    dirs: Vec<DirTrace>,
    head_in: Vec<f64>,
    fc_act: Vec<f64>,
    output: Vec<f64>,
}

impl SequencePredictorNet {
    pub fn param_count(width: usize, hidden: usize, fc: usize) -> usize {
        layout(width, hidden, fc).total
    }

    pub fn zeros(width: usize) -> Self {
        Self::zeros_with(width, HIDDEN, FC)
    }

    pub fn zeros_with(width: usize, hidden: usize, fc: usize) -> Self {
        Self {
            width,
            hidden,
            fc,
            params: vec![0.0; Self::param_count(width, hidden, fc)],
        }
    }

    pub fn init(width: usize, seed: u64) -> Self {
        Self::init_with(width, HIDDEN, FC, seed)
    }

    /// Uniform init in ±1/√fan_in, where fan_in is the column count of the
    /// matrix a parameter belongs to.
    pub fn init_with(width: usize, hidden: usize, fc: usize, seed: u64) -> Self {
        let mut net = Self::zeros_with(width, hidden, fc);
        let lay = layout(width, hidden, fc);
        let mut r = rng::rng(seed);
        let mut fill = |params: &mut [f64], fan_in: usize| {
            let bound = 1.0 / (fan_in as f64).sqrt();
            for p in params {
                *p = r.random_range(-bound..=bound);
            }
        };
        for d in &lay.dirs {
            fill(&mut net.params[d.w_ih..d.w_hh], d.input);
            fill(&mut net.params[d.w_hh..d.bias], hidden);
            fill(&mut net.params[d.bias..d.bias + 4 * hidden], hidden);
        }
        fill(&mut net.params[lay.w_fc..lay.w_out], 2 * hidden);
        fill(&mut net.params[lay.w_out..lay.total], fc);
        net
    }

    pub fn from_params(width: usize, hidden: usize, fc: usize, params: Vec<f64>) -> Result<Self> {
        let want = Self::param_count(width, hidden, fc);
        if params.len() != want {
            return Err(Error::Shape {
                expected: want,
                got: params.len(),
            });
        }
        Ok(Self { width, hidden, fc, params })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn fc(&self) -> usize {
        self.fc
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn check(&self, history: &[Vec<f64>]) -> Result<()> {
        if history.is_empty() {
            return Err(Error::Contract("empty score history".into()));
        }
        for step in history {
            if step.len() != self.width {
                return Err(Error::Shape {
                    expected: self.width,
                    got: step.len(),
                });
            }
        }
        Ok(())
    }

    /// Predicts the next score vector from `history` (oldest first).
    pub fn predict(&self, history: &[Vec<f64>]) -> Result<Vec<f64>> {
        self.check(history)?;
        Ok(self.trace(history).output)
    }

    fn run_direction(&self, d: &DirLayout, inputs: &[Vec<f64>], reverse: bool) -> DirTrace {
        let h = self.hidden;
        let p = &self.params;
        let steps = inputs.len();
        let mut trace = DirTrace {
            inputs: Vec::with_capacity(steps),
            gates: Vec::with_capacity(steps),
            cells: Vec::with_capacity(steps),
            hiddens: Vec::with_capacity(steps),
        };
        let mut h_prev = vec![0.0; h];
        let mut c_prev = vec![0.0; h];
        for s in 0..steps {
            let t = if reverse { steps - 1 - s } else { s };
            let x = &inputs[t];
            let mut gates = vec![0.0; 4 * h];
            for (row, g) in gates.iter_mut().enumerate() {
                let a = p[d.bias + row]
                    + dot(&p[d.w_ih + row * d.input..d.w_ih + (row + 1) * d.input], x)
                    + dot(&p[d.w_hh + row * h..d.w_hh + (row + 1) * h], &h_prev);
                *g = if (2 * h..3 * h).contains(&row) { a.tanh() } else { sigmoid(a) };
            }
            let mut c = vec![0.0; h];
            let mut hn = vec![0.0; h];
            for k in 0..h {
                let (i, f, g, o) = (gates[k], gates[h + k], gates[2 * h + k], gates[3 * h + k]);
                c[k] = f * c_prev[k] + i * g;
                hn[k] = o * c[k].tanh();
            }
            trace.inputs.push(x.clone());
            trace.gates.push(gates);
            trace.cells.push(c.clone());
            trace.hiddens.push(hn.clone());
            h_prev = hn;
            c_prev = c;
        }
        trace
    }

    fn trace(&self, history: &[Vec<f64>]) -> Trace {
        let lay = layout(self.width, self.hidden, self.fc);
        let steps = history.len();
        let h = self.hidden;
        let mut dirs = Vec::with_capacity(2 * LAYERS);
        let mut inputs: Vec<Vec<f64>> = history.to_vec();
        for layer in 0..LAYERS {
            let fwd = self.run_direction(&lay.dirs[2 * layer], &inputs, false);
            let bwd = self.run_direction(&lay.dirs[2 * layer + 1], &inputs, true);
            inputs = (0..steps)
                .map(|t| {
                    let mut v = fwd.hiddens[t].clone();
                    v.extend_from_slice(&bwd.hiddens[steps - 1 - t]);
                    v
                })
                .collect();
            dirs.push(fwd);
            dirs.push(bwd);
        }
        let top_f = &dirs[2 * LAYERS - 2];
        let top_b = &dirs[2 * LAYERS - 1];
        let mut head_in = top_f.hiddens[steps - 1].clone();
        head_in.extend_from_slice(&top_b.hiddens[steps - 1]);
        let p = &self.params;
        let fc_act: Vec<f64> = (0..self.fc)
            .map(|j| (p[lay.b_fc + j] + dot(&p[lay.w_fc + j * 2 * h..lay.w_fc + (j + 1) * 2 * h], &head_in)).tanh())
            .collect();
        let output = (0..self.width)
            .map(|k| p[lay.b_out + k] + dot(&p[lay.w_out + k * self.fc..lay.w_out + (k + 1) * self.fc], &fc_act))
            .collect();
        Trace {
            dirs,
            head_in,
            fc_act,
            output,
        }
    }

    /// Backpropagates one direction. `d_out[s]` is the gradient reaching the
    /// hidden state at processing step `s`; returns the gradient for the
    /// direction's inputs, indexed by time.
    fn backprop_direction(
        &self,
        d: &DirLayout,
        tr: &DirTrace,
        d_out: &[Vec<f64>],
        reverse: bool,
        grad: &mut [f64],
    ) -> Vec<Vec<f64>> {
        let h = self.hidden;
        let p = &self.params;
        let steps = tr.inputs.len();
        let mut d_inputs = vec![vec![0.0; d.input]; steps];
        let mut dh_next = vec![0.0; h];
        let mut dc_next = vec![0.0; h];
        let zeros = vec![0.0; h];
        for s in (0..steps).rev() {
            let gates = &tr.gates[s];
            let c = &tr.cells[s];
            let c_prev = if s > 0 { &tr.cells[s - 1] } else { &zeros };
            let h_prev = if s > 0 { &tr.hiddens[s - 1] } else { &zeros };
            let mut da = vec![0.0; 4 * h];
            for k in 0..h {
                let (i, f, g, o) = (gates[k], gates[h + k], gates[2 * h + k], gates[3 * h + k]);
                let dh = d_out[s][k] + dh_next[k];
                let tc = c[k].tanh();
                let d_o = dh * tc;
                let dc = dh * o * (1.0 - tc * tc) + dc_next[k];
                let di = dc * g;
                let dg = dc * i;
                let df = dc * c_prev[k];
                dc_next[k] = dc * f;
                da[k] = di * i * (1.0 - i);
                da[h + k] = df * f * (1.0 - f);
                da[2 * h + k] = dg * (1.0 - g * g);
                da[3 * h + k] = d_o * o * (1.0 - o);
            }
            let x = &tr.inputs[s];
            let t = if reverse { steps - 1 - s } else { s };
            dh_next.iter_mut().for_each(|v| *v = 0.0);
            for (row, &a) in da.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                grad[d.bias + row] += a;
                let wi = d.w_ih + row * d.input;
                for k in 0..d.input {
                    grad[wi + k] += a * x[k];
                    d_inputs[t][k] += a * p[wi + k];
                }
                let wh = d.w_hh + row * h;
                for k in 0..h {
                    grad[wh + k] += a * h_prev[k];
                    dh_next[k] += a * p[wh + k];
                }
            }
        }
        d_inputs
    }

    /// Adds `∂(Σ_k d_output[k]·output[k])/∂θ` into `grad`.
    fn backprop(&self, tr: &Trace, d_output: &[f64], grad: &mut [f64]) {
        let lay = layout(self.width, self.hidden, self.fc);
        let h = self.hidden;
        let p = &self.params;
        let steps = tr.dirs[0].inputs.len();

        let mut d_fc = vec![0.0; self.fc];
        for (k, &dy) in d_output.iter().enumerate() {
            grad[lay.b_out + k] += dy;
            for j in 0..self.fc {
                grad[lay.w_out + k * self.fc + j] += dy * tr.fc_act[j];
                d_fc[j] += dy * p[lay.w_out + k * self.fc + j];
            }
        }
        let mut d_head = vec![0.0; 2 * h];
        for j in 0..self.fc {
            let a = d_fc[j] * (1.0 - tr.fc_act[j] * tr.fc_act[j]);
            grad[lay.b_fc + j] += a;
            for k in 0..2 * h {
                grad[lay.w_fc + j * 2 * h + k] += a * tr.head_in[k];
                d_head[k] += a * p[lay.w_fc + j * 2 * h + k];
            }
        }

        // Gradient w.r.t. the top layer's per-time output [h_fwd(t), h_bwd(t)].
        let mut d_layer_out = vec![vec![0.0; 2 * h]; steps];
        d_layer_out[steps - 1][..h].copy_from_slice(&d_head[..h]);
        d_layer_out[0][h..].copy_from_slice(&d_head[h..]);

        for layer in (0..LAYERS).rev() {
            let fwd_d: Vec<Vec<f64>> = (0..steps).map(|s| d_layer_out[s][..h].to_vec()).collect();
            let bwd_d: Vec<Vec<f64>> = (0..steps).map(|s| d_layer_out[steps - 1 - s][h..].to_vec()).collect();
            let dx_f = self.backprop_direction(&lay.dirs[2 * layer], &tr.dirs[2 * layer], &fwd_d, false, grad);
            let dx_b = self.backprop_direction(&lay.dirs[2 * layer + 1], &tr.dirs[2 * layer + 1], &bwd_d, true, grad);
            d_layer_out = dx_f
                .into_iter()
                .zip(dx_b)
                .map(|(a, b)| a.iter().zip(&b).map(|(x, y)| x + y).collect())
                .collect();
        }
    }

    /// Mean squared error of the prediction against `target`, averaged over
    /// the `T` outputs, and its gradient.
    pub fn mse_and_grad(&self, history: &[Vec<f64>], target: &[f64]) -> Result<(f64, Vec<f64>)> {
        let mut grad = vec![0.0; self.params.len()];
        let loss = self.accumulate_mse_grad(history, target, 1.0, &mut grad)?;
        Ok((loss, grad))
    }

    /// Adds `scale · ∂mse/∂θ` into `grad` and returns the unscaled mse.
    pub fn accumulate_mse_grad(
        &self,
        history: &[Vec<f64>],
        target: &[f64],
        scale: f64,
        grad: &mut [f64],
    ) -> Result<f64> {
        self.check(history)?;
        if target.len() != self.width {
            return Err(Error::Shape {
                expected: self.width,
                got: target.len(),
            });
        }
        let tr = self.trace(history);
        let n = self.width as f64;
        let mut loss = 0.0;
        let d_output: Vec<f64> = tr
            .output
            .iter()
            .zip(target)
            .map(|(y, t)| {
                loss += (y - t) * (y - t);
                scale * 2.0 * (y - t) / n
            })
            .collect();
        self.backprop(&tr, &d_output, grad);
        Ok(loss / n)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Independent unrolled recurrence: reads every weight through explicit
    /// index arithmetic instead of the layout helpers.
    fn oracle(net: &SequencePredictorNet, hist: &[Vec<f64>]) -> Vec<f64> {
        let (t_w, h, f) = (net.width(), net.hidden(), net.fc());
        let p = net.params();
        let k = hist.len();
        let sig = |x: f64| 1.0 / (1.0 + (-x).exp());
        let mut off = 0usize;
        let mut layer_in: Vec<Vec<f64>> = hist.to_vec();
        for layer in 0..2 {
            let inp = if layer == 0 { t_w } else { 2 * h };
            let mut outs = [vec![vec![0.0; h]; k], vec![vec![0.0; h]; k]];
            for dir in 0..2 {
                let wih = off;
                let whh = wih + 4 * h * inp;
                let b = whh + 4 * h * h;
                off = b + 4 * h;
                let mut hp = vec![0.0; h];
                let mut cp = vec![0.0; h];
                let order: Vec<usize> = if dir == 0 { (0..k).collect() } else { (0..k).rev().collect() };
                for t in order {
                    let pre = |row: usize| {
                        let mut a = p[b + row];
                        for c in 0..inp {
                            a += p[wih + row * inp + c] * layer_in[t][c];
                        }
                        for c in 0..h {
                            a += p[whh + row * h + c] * hp[c];
                        }
                        a
                    };
                    let mut hn = vec![0.0; h];
                    let mut cn = vec![0.0; h];
                    for u in 0..h {
                        let i = sig(pre(u));
                        let fg = sig(pre(h + u));
                        let g = pre(2 * h + u).tanh();
                        let o = sig(pre(3 * h + u));
                        cn[u] = fg * cp[u] + i * g;
                        hn[u] = o * cn[u].tanh();
                    }
                    outs[dir][t] = hn.clone();
                    hp = hn;
                    cp = cn;
                }
            }
            layer_in = (0..k)
                .map(|t| outs[0][t].iter().chain(&outs[1][t]).copied().collect())
                .collect();
        }
        let z: Vec<f64> = layer_in[k - 1][..h].iter().chain(&layer_in[0][h..]).copied().collect();
        let wfc = off;
        let bfc = wfc + f * 2 * h;
        let wout = bfc + f;
        let bout = wout + t_w * f;
        let a: Vec<f64> = (0..f)
            .map(|j| {
                let mut s = p[bfc + j];
                for c in 0..2 * h {
                    s += p[wfc + j * 2 * h + c] * z[c];
                }
                s.tanh()
            })
            .collect();
        (0..t_w)
            .map(|o| {
                let mut s = p[bout + o];
                for j in 0..f {
                    s += p[wout + o * f + j] * a[j];
                }
                s
            })
            .collect()
    }

    fn history(seed: u64, k: usize, width: usize) -> Vec<Vec<f64>> {
        let mut r = rng::rng(seed);
        (0..k).map(|_| (0..width).map(|_| r.random_range(-2.0..2.0)).collect()).collect()
    }

    #[test]
    fn zero_net_predicts_zero() {
        let net = SequencePredictorNet::zeros(7);
        assert_eq!(net.predict(&history(0, 5, 7)).unwrap(), vec![0.0; 7]);
    }

    #[test]
    fn output_width_matches() {
        for t in [1, 3, 7] {
            let net = SequencePredictorNet::init(t, 5);
            assert_eq!(net.predict(&history(1, 5, t)).unwrap().len(), t);
        }
    }

    #[test]
    fn predict_matches_unrolled_oracle() {
        for seed in 0..5 {
            let net = SequencePredictorNet::init(7, seed);
            let hist = history(seed + 100, 5, 7);
            let got = net.predict(&hist).unwrap();
            let want = oracle(&net, &hist);
            for (a, b) in got.iter().zip(&want) {
                assert!((a - b).abs() < 1e-10, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn shape_errors() {
        let net = SequencePredictorNet::init(3, 0);
        assert!(matches!(net.predict(&history(0, 5, 4)), Err(Error::Shape { .. })));
        assert!(net.predict(&[]).is_err());
        assert!(matches!(net.mse_and_grad(&history(0, 5, 3), &[0.0; 2]), Err(Error::Shape { .. })));
    }

    #[test]
    fn param_count_default() {
        // Layer 0: 2·(28·7 + 28·7 + 28); layer 1: 2·(28·14 + 28·7 + 28);
        // head: 14·14 + 14 + 7·14 + 7.
        let want = 2 * (196 + 196 + 28) + 2 * (392 + 196 + 28) + 196 + 14 + 98 + 7;
        assert_eq!(SequencePredictorNet::param_count(7, HIDDEN, FC), want);
    }
}
