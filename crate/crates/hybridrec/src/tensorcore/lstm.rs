//! Standard LSTM returning the full hidden sequence.

use rand::Rng;

use super::tensor::{assert_same_shape, Param, ParamVisitor, Tensor};

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

/// Gated recurrence over `[batch, time, in_dim]` inputs producing
/// `[batch, time, units]` hidden states. Gate order in the packed weight
/// matrices is input, forget, cell, output.
#[derive(Clone, Debug)]
pub struct Lstm {
    pub w_input: Param,  // [in_dim, 4*units]
    pub w_hidden: Param, // [units, 4*units]
    pub bias: Param,     // [4*units], forget chunk initialized to 1.0
    cache: Option<LstmCache>,
}

#[derive(Clone, Debug)]
struct LstmCache {
    input: Tensor,
    hidden: Vec<Tensor>, // h_t per step, [batch, units]
    cell: Vec<Tensor>,   // c_t per step
    gates: Vec<Tensor>,  // activated gates per step, [batch, 4*units]
}

impl Lstm {
    pub fn new(in_dim: usize, units: usize, rng: &mut impl Rng) -> Self {
        let scale = 0.08;
        let wx = (0..in_dim * 4 * units)
            .map(|_| rng.random_range(-scale..scale))
            .collect();
        let wh = (0..units * 4 * units)
            .map(|_| rng.random_range(-scale..scale))
            .collect();
        let mut b = vec![0.0; 4 * units];
        // Forget-gate bias starts at 1.0 so early training does not flush state.
        for v in &mut b[units..2 * units] {
            *v = 1.0;
        }
        Lstm {
            w_input: Param::new(Tensor::from_vec(&[in_dim, 4 * units], wx)),
            w_hidden: Param::new(Tensor::from_vec(&[units, 4 * units], wh)),
            bias: Param::new(Tensor::from_vec(&[4 * units], b)),
            cache: None,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.w_input.value.shape[0]
    }

    pub fn units(&self) -> usize {
        self.w_hidden.value.shape[0]
    }

    pub fn forward(&mut self, x: &Tensor) -> Tensor {
        assert_eq!(x.rank(), 3, "lstm expects [batch, time, in_dim]");
        assert_same_shape("lstm input width", &[self.in_dim()], &[x.dim(2)]);
        let (batch, time, in_dim) = (x.dim(0), x.dim(1), x.dim(2));
        let u = self.units();
        let wx = &self.w_input.value.data;
        let wh = &self.w_hidden.value.data;
        let bias = &self.bias.value.data;

        let mut out = Tensor::zeros(&[batch, time, u]);
        let mut hidden = Vec::with_capacity(time);
        let mut cell = Vec::with_capacity(time);
        let mut gates = Vec::with_capacity(time);
        let mut h_prev = Tensor::zeros(&[batch, u]);
        let mut c_prev = Tensor::zeros(&[batch, u]);

        for t in 0..time {
            let mut gate = Tensor::zeros(&[batch, 4 * u]);
            let mut h_t = Tensor::zeros(&[batch, u]);
            let mut c_t = Tensor::zeros(&[batch, u]);
            for b in 0..batch {
                let xr = &x.data[(b * time + t) * in_dim..(b * time + t + 1) * in_dim];
                let gr = gate.row_mut(b);
                gr.copy_from_slice(bias);
                for (i, &xv) in xr.iter().enumerate() {
                    if xv != 0.0 {
                        let wr = &wx[i * 4 * u..(i + 1) * 4 * u];
                        for (g, &wv) in gr.iter_mut().zip(wr) {
                            *g += xv * wv;
                        }
                    }
                }
                let hr = h_prev.row(b);
                for (i, &hv) in hr.iter().enumerate() {
                    if hv != 0.0 {
                        let wr = &wh[i * 4 * u..(i + 1) * 4 * u];
                        for (g, &wv) in gr.iter_mut().zip(wr) {
                            *g += hv * wv;
                        }
                    }
                }
                let cr = c_prev.row(b);
                let htr = h_t.row_mut(b);
                let ctr = c_t.row_mut(b);
                for j in 0..u {
                    let ig = sigmoid(gr[j]);
                    let fg = sigmoid(gr[u + j]);
                    let gg = gr[2 * u + j].tanh();
                    let og = sigmoid(gr[3 * u + j]);
                    gr[j] = ig;
                    gr[u + j] = fg;
                    gr[2 * u + j] = gg;
                    gr[3 * u + j] = og;
                    let c = fg * cr[j] + ig * gg;
                    ctr[j] = c;
                    htr[j] = og * c.tanh();
                }
                out.data[(b * time + t) * u..(b * time + t + 1) * u].copy_from_slice(htr);
            }
            hidden.push(h_t.clone());
            cell.push(c_t.clone());
            gates.push(gate);
            h_prev = h_t;
            c_prev = c_t;
        }
        self.cache = Some(LstmCache {
            input: x.clone(),
            hidden,
            cell,
            gates,
        });
        out
    }

    pub fn backward(&mut self, grad_out: &Tensor) -> Tensor {
        let cache = self
            .cache
            .take()
            .expect("lstm backward called without forward");
        let x = &cache.input;
        let (batch, time, in_dim) = (x.dim(0), x.dim(1), x.dim(2));
        let u = self.units();
        assert_same_shape("lstm grad", &[batch, time, u], &grad_out.shape);

        let wx = &self.w_input.value.data;
        let wh = &self.w_hidden.value.data;
        let gwx = &mut self.w_input.grad.data;
        let gwh = &mut self.w_hidden.grad.data;
        let gb = &mut self.bias.grad.data;

        let mut grad_in = Tensor::zeros(&x.shape);
        let mut dh_next = Tensor::zeros(&[batch, u]);
        let mut dc_next = Tensor::zeros(&[batch, u]);

        for t in (0..time).rev() {
            let gates = &cache.gates[t];
            let c_t = &cache.cell[t];
            // Pre-activation gate gradients for this step.
            let mut da = Tensor::zeros(&[batch, 4 * u]);
            for b in 0..batch {
                let gr = gates.row(b);
                let ctr = c_t.row(b);
                let c_prev: &[f64] = if t > 0 {
                    cache.cell[t - 1].row(b)
                } else {
                    &[]
                };
                let dh_r = dh_next.row_mut(b);
                let dc_r = dc_next.row_mut(b);
                let dar = da.row_mut(b);
                for j in 0..u {
                    let dh = dh_r[j] + grad_out.data[(b * time + t) * u + j];
                    let (ig, fg, gg, og) = (gr[j], gr[u + j], gr[2 * u + j], gr[3 * u + j]);
                    let tc = ctr[j].tanh();
                    let d_og = dh * tc;
                    let mut dc = dc_r[j] + dh * og * (1.0 - tc * tc);
                    let d_ig = dc * gg;
                    let d_gg = dc * ig;
                    let cp = if t > 0 { c_prev[j] } else { 0.0 };
                    let d_fg = dc * cp;
                    dc *= fg; // gradient flowing to c_{t-1}
                    dar[j] = d_ig * ig * (1.0 - ig);
                    dar[u + j] = d_fg * fg * (1.0 - fg);
                    dar[2 * u + j] = d_gg * (1.0 - gg * gg);
                    dar[3 * u + j] = d_og * og * (1.0 - og);
                    dc_r[j] = dc;
                    dh_r[j] = 0.0; // recomputed below from W_h
                }
            }
            // Accumulate weight gradients and propagate to x_t and h_{t-1}.
            for b in 0..batch {
                let dar = da.row(b);
                for (g, &d) in gb.iter_mut().zip(dar) {
                    *g += d;
                }
                let xr = &x.data[(b * time + t) * in_dim..(b * time + t + 1) * in_dim];
                let gx = &mut grad_in.data[(b * time + t) * in_dim..(b * time + t + 1) * in_dim];
                for i in 0..in_dim {
                    let wr = &wx[i * 4 * u..(i + 1) * 4 * u];
                    gx[i] = wr.iter().zip(dar).map(|(&w, &d)| w * d).sum();
                    if xr[i] != 0.0 {
                        let gwr = &mut gwx[i * 4 * u..(i + 1) * 4 * u];
                        for (gw, &d) in gwr.iter_mut().zip(dar) {
                            *gw += xr[i] * d;
                        }
                    }
                }
                if t > 0 {
                    let hp = cache.hidden[t - 1].row(b);
                    let dh_r = dh_next.row_mut(b);
                    for i in 0..u {
                        let wr = &wh[i * 4 * u..(i + 1) * 4 * u];
                        dh_r[i] = wr.iter().zip(dar).map(|(&w, &d)| w * d).sum();
                        if hp[i] != 0.0 {
                            let gwr = &mut gwh[i * 4 * u..(i + 1) * 4 * u];
                            for (gw, &d) in gwr.iter_mut().zip(dar) {
                                *gw += hp[i] * d;
                            }
                        }
                    }
                }
            }
        }
        grad_in
    }
}

impl ParamVisitor for Lstm {
    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param)) {
        f(&mut self.w_input);
        f(&mut self.w_hidden);
        f(&mut self.bias);
    }
}
