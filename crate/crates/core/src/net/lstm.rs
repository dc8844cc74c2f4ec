//! Single LSTM layer over a flat parameter vector.
//!
//! Gate rows are stacked `[input, forget, cell, output]`, each `hidden` rows
//! tall. Weights are row-major.

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct LstmLayer {
    pub input: usize,
    pub hidden: usize,
    /// Offset of the `4h x input` input weights.
    pub wx: usize,
    /// Offset of the `4h x h` recurrent weights.
    pub wh: usize,
    /// Offset of the `4h` bias.
    pub b: usize,
}

/// Activations kept for backpropagation through time.
#[derive(Debug, Clone)]
pub(crate) struct LstmActivations {
    pub steps: usize,
    /// `T x input`
    pub xs: Vec<f64>,
    /// `(T + 1) x h`, row 0 is the zero initial state.
    pub hs: Vec<f64>,
    /// `(T + 1) x h`
    pub cs: Vec<f64>,
    /// `T x 4h`, post-nonlinearity gate values.
    pub gates: Vec<f64>,
    /// `T x h`
    pub tanh_c: Vec<f64>,
}

impl LstmActivations {
    pub fn last_hidden(&self) -> &[f64] {
        let h = self.hs.len() / (self.steps + 1);
        &self.hs[self.steps * h..]
    }

    /// Hidden states `h_1..h_T` as a `T x h` matrix.
    pub fn outputs(&self) -> &[f64] {
        let h = self.hs.len() / (self.steps + 1);
        &self.hs[h..]
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl LstmLayer {
    pub fn forward(&self, params: &[f64], xs: &[f64]) -> LstmActivations {
        let (n_in, h) = (self.input, self.hidden);
        let steps = xs.len() / n_in;
        let wx = &params[self.wx..self.wx + 4 * h * n_in];
        let wh = &params[self.wh..self.wh + 4 * h * h];
        let bias = &params[self.b..self.b + 4 * h];

        let mut hs = vec![0.0; (steps + 1) * h];
        let mut cs = vec![0.0; (steps + 1) * h];
        let mut gates = vec![0.0; steps * 4 * h];
        let mut tanh_c = vec![0.0; steps * h];
        for t in 0..steps {
            let x = &xs[t * n_in..(t + 1) * n_in];
            let g = &mut gates[t * 4 * h..(t + 1) * 4 * h];
            {
                let h_prev = &hs[t * h..(t + 1) * h];
                for (r, out) in g.iter_mut().enumerate() {
                    *out = bias[r]
                        + dot(&wx[r * n_in..(r + 1) * n_in], x)
                        + dot(&wh[r * h..(r + 1) * h], h_prev);
                }
            }
            for j in 0..h {
                let i = sigmoid(g[j]);
                let f = sigmoid(g[h + j]);
                let c_hat = g[2 * h + j].tanh();
                let o = sigmoid(g[3 * h + j]);
                g[j] = i;
                g[h + j] = f;
                g[2 * h + j] = c_hat;
                g[3 * h + j] = o;
                let c = f * cs[t * h + j] + i * c_hat;
                let tc = c.tanh();
                cs[(t + 1) * h + j] = c;
                tanh_c[t * h + j] = tc;
                hs[(t + 1) * h + j] = o * tc;
            }
        }
        LstmActivations {
            steps,
            xs: xs.to_vec(),
            hs,
            cs,
            gates,
            tanh_c,
        }
    }

    /// Accumulates parameter gradients into `grads` given the loss gradient
    /// with respect to every output hidden state (`T x h`). Returns the
    /// gradient with respect to the inputs when `want_dx` is set.
    pub fn backward(
        &self,
        params: &[f64],
        act: &LstmActivations,
        dh_out: &[f64],
        grads: &mut [f64],
        want_dx: bool,
    ) -> Option<Vec<f64>> {
        let (n_in, h) = (self.input, self.hidden);
        let steps = act.steps;
        let wx = &params[self.wx..self.wx + 4 * h * n_in];
        let wh = &params[self.wh..self.wh + 4 * h * h];

        let mut dx = want_dx.then(|| vec![0.0; steps * n_in]);
        let mut dh_rec = vec![0.0; h];
        let mut dc_rec = vec![0.0; h];
        let mut da = vec![0.0; 4 * h];
        for t in (0..steps).rev() {
            let g = &act.gates[t * 4 * h..(t + 1) * 4 * h];
            let c_prev = &act.cs[t * h..(t + 1) * h];
            let tc = &act.tanh_c[t * h..(t + 1) * h];
            for j in 0..h {
                let (i, f, c_hat, o) = (g[j], g[h + j], g[2 * h + j], g[3 * h + j]);
                let dh = dh_out[t * h + j] + dh_rec[j];
                let d_o = dh * tc[j];
                let dc = dc_rec[j] + dh * o * (1.0 - tc[j] * tc[j]);
                da[j] = dc * c_hat * i * (1.0 - i);
                da[h + j] = dc * c_prev[j] * f * (1.0 - f);
                da[2 * h + j] = dc * i * (1.0 - c_hat * c_hat);
                da[3 * h + j] = d_o * o * (1.0 - o);
                dc_rec[j] = dc * f;
            }
            let x = &act.xs[t * n_in..(t + 1) * n_in];
            let h_prev = &act.hs[t * h..(t + 1) * h];
            {
                let gwx = &mut grads[self.wx..self.wx + 4 * h * n_in];
                for (r, &d) in da.iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    for (gw, &xv) in gwx[r * n_in..(r + 1) * n_in].iter_mut().zip(x) {
                        *gw += d * xv;
                    }
                }
            }
            {
                let gwh = &mut grads[self.wh..self.wh + 4 * h * h];
                for (r, &d) in da.iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    for (gw, &hv) in gwh[r * h..(r + 1) * h].iter_mut().zip(h_prev) {
                        *gw += d * hv;
                    }
                }
            }
            for (gb, &d) in grads[self.b..self.b + 4 * h].iter_mut().zip(&da) {
                *gb += d;
            }
            dh_rec.iter_mut().for_each(|v| *v = 0.0);
            for (r, &d) in da.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                for (acc, &w) in dh_rec.iter_mut().zip(&wh[r * h..(r + 1) * h]) {
                    *acc += d * w;
                }
            }
            if let Some(dx) = dx.as_mut() {
                let dxt = &mut dx[t * n_in..(t + 1) * n_in];
                for (r, &d) in da.iter().enumerate() {
                    for (acc, &w) in dxt.iter_mut().zip(&wx[r * n_in..(r + 1) * n_in]) {
                        *acc += d * w;
                    }
                }
            }
        }
        dx
    }
}
