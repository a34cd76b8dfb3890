//! Single-layer LSTM with two heads: a 4-way softmax over host-core actions
//! and an independent sigmoid no-response score.
//!
//! All parameters live in one flat vector so the optimizer and the
//! finite-difference checker can walk them uniformly. Layout, in order:
//!
//! | block            | shape            |
//! |------------------|------------------|
//! | lstm weight      | 4H x (I + H)     |
//! | lstm bias        | 4H               |
//! | action weight    | 4 x H            |
//! | action bias      | 4                |
//! | no-response w    | H                |
//! | no-response bias | 1                |
//!
//! Gate rows are ordered input, forget, cell candidate, output. The weight
//! columns are the step input followed by the previous hidden state.

use rand::Rng;

use crate::intent::HOST_CORE;

pub const ACTIONS: usize = HOST_CORE.len();

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    pub input: usize,
    pub hidden: usize,
}

impl Layout {
    pub fn cols(&self) -> usize {
        self.input + self.hidden
    }
    pub fn w(&self) -> std::ops::Range<usize> {
        0..4 * self.hidden * self.cols()
    }
    pub fn b(&self) -> std::ops::Range<usize> {
        let s = self.w().end;
        s..s + 4 * self.hidden
    }
    pub fn wa(&self) -> std::ops::Range<usize> {
        let s = self.b().end;
        s..s + ACTIONS * self.hidden
    }
    pub fn ba(&self) -> std::ops::Range<usize> {
        let s = self.wa().end;
        s..s + ACTIONS
    }
    pub fn wn(&self) -> std::ops::Range<usize> {
        let s = self.ba().end;
        s..s + self.hidden
    }
    pub fn bn(&self) -> usize {
        self.wn().end
    }
    pub fn len(&self) -> usize {
        self.bn() + 1
    }
    pub fn is_empty(&self) -> bool {
        false
    }
}

/// Hidden and cell vectors carried between steps.
#[derive(Debug, Clone, PartialEq)]
pub struct RecurrentState {
    pub hidden: Vec<f64>,
    pub cell: Vec<f64>,
}

impl RecurrentState {
    pub fn zeros(hidden: usize) -> Self {
        Self {
            hidden: vec![0.0; hidden],
            cell: vec![0.0; hidden],
        }
    }

    pub fn reset(&mut self) {
        self.hidden.iter_mut().for_each(|x| *x = 0.0);
        self.cell.iter_mut().for_each(|x| *x = 0.0);
    }

    pub fn is_zero(&self) -> bool {
        self.hidden.iter().chain(&self.cell).all(|&x| x == 0.0)
    }
}

/// Post-activation outputs of one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolicyOutput {
    pub actions: [f64; ACTIONS],
    pub no_response: f64,
}

impl PolicyOutput {
    pub fn argmax(&self) -> usize {
        // First maximum wins ties.
        let mut best = 0;
        for k in 1..ACTIONS {
            if self.actions[k] > self.actions[best] {
                best = k;
            }
        }
        best
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softmax(z: &[f64; ACTIONS]) -> [f64; ACTIONS] {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut e = [0.0; ACTIONS];
    let mut sum = 0.0;
    for k in 0..ACTIONS {
        e[k] = (z[k] - m).exp();
        sum += e[k];
    }
    e.map(|v| v / sum)
}

/// Squared error against the target, with the softmax term dropped when the
/// target is no-response.
pub fn masked_loss(out: &PolicyOutput, target: Option<usize>) -> f64 {
    match target {
        None => (out.no_response - 1.0).powi(2),
        Some(k) => {
            let cat: f64 = (0..ACTIONS)
                .map(|i| {
                    let y = if i == k { 1.0 } else { 0.0 };
                    (out.actions[i] - y).powi(2)
                })
                .sum();
            cat + out.no_response.powi(2)
        }
    }
}

/// Intermediate values of one forward step, kept for backprop.
#[derive(Debug, Clone)]
pub struct StepCache {
    x: Vec<f64>,
    h_prev: Vec<f64>,
    c_prev: Vec<f64>,
    i: Vec<f64>,
    f: Vec<f64>,
    g: Vec<f64>,
    o: Vec<f64>,
    tanh_c: Vec<f64>,
    h: Vec<f64>,
    pub out: PolicyOutput,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Lstm {
    pub layout: Layout,
    pub theta: Vec<f64>,
}

impl Lstm {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        let layout = Layout { input, hidden };
        Self {
            theta: vec![0.0; layout.len()],
            layout,
        }
    }

    /// Every parameter drawn from U(-1/sqrt(H), 1/sqrt(H)).
    pub fn init<R: Rng>(input: usize, hidden: usize, rng: &mut R) -> Self {
        let mut net = Self::zeros(input, hidden);
        let k = 1.0 / (hidden as f64).sqrt();
        net.theta
            .iter_mut()
            .for_each(|p| *p = rng.random_range(-k..k));
        net
    }

    pub fn step(&self, state: &RecurrentState, x: &[f64]) -> (PolicyOutput, RecurrentState) {
        let cache = self.step_cached(state, x);
        let next = RecurrentState {
            hidden: cache.h.clone(),
            cell: cache
                .i
                .iter()
                .zip(&cache.g)
                .zip(cache.f.iter().zip(&cache.c_prev))
                .map(|((i, g), (f, c))| f * c + i * g)
                .collect(),
        };
        (cache.out, next)
    }

    pub fn step_cached(&self, state: &RecurrentState, x: &[f64]) -> StepCache {
        let Layout { input, hidden } = self.layout;
        debug_assert_eq!(x.len(), input);
        let cols = self.layout.cols();
        let w = &self.theta[self.layout.w()];
        let b = &self.theta[self.layout.b()];

        let mut z = b.to_vec();
        for (r, zr) in z.iter_mut().enumerate() {
            let row = &w[r * cols..(r + 1) * cols];
            let mut acc = 0.0;
            for (j, &xj) in x.iter().enumerate() {
                if xj != 0.0 {
                    acc += row[j] * xj;
                }
            }
            for (j, &hj) in state.hidden.iter().enumerate() {
                acc += row[input + j] * hj;
            }
            *zr += acc;
        }

        let gate = |g: usize| &z[g * hidden..(g + 1) * hidden];
        let i: Vec<f64> = gate(0).iter().map(|&v| sigmoid(v)).collect();
        let f: Vec<f64> = gate(1).iter().map(|&v| sigmoid(v)).collect();
        let g: Vec<f64> = gate(2).iter().map(|&v| v.tanh()).collect();
        let o: Vec<f64> = gate(3).iter().map(|&v| sigmoid(v)).collect();
        let c: Vec<f64> = (0..hidden)
            .map(|n| f[n] * state.cell[n] + i[n] * g[n])
            .collect();
        let tanh_c: Vec<f64> = c.iter().map(|v| v.tanh()).collect();
        let h: Vec<f64> = (0..hidden).map(|n| o[n] * tanh_c[n]).collect();

        let wa = &self.theta[self.layout.wa()];
        let ba = &self.theta[self.layout.ba()];
        let mut za = [0.0; ACTIONS];
        for k in 0..ACTIONS {
            za[k] = ba[k] + dot(&wa[k * hidden..(k + 1) * hidden], &h);
        }
        let wn = &self.theta[self.layout.wn()];
        let zn = self.theta[self.layout.bn()] + dot(wn, &h);

        StepCache {
            x: x.to_vec(),
            h_prev: state.hidden.clone(),
            c_prev: state.cell.clone(),
            i,
            f,
            g,
            o,
            tanh_c,
            h,
            out: PolicyOutput {
                actions: softmax(&za),
                no_response: sigmoid(zn),
            },
        }
    }

    /// Mean masked loss over a sequence started from a zero state, and its
    /// gradient with respect to every parameter.
    pub fn loss_and_grad(&self, steps: &[Vec<f64>], targets: &[Option<usize>]) -> (f64, Vec<f64>) {
        assert_eq!(steps.len(), targets.len());
        let Layout { input, hidden } = self.layout;
        let cols = self.layout.cols();
        let mut grad = vec![0.0; self.theta.len()];
        if steps.is_empty() {
            return (0.0, grad);
        }

        let mut state = RecurrentState::zeros(hidden);
        let mut caches = Vec::with_capacity(steps.len());
        let mut loss = 0.0;
        for (x, t) in steps.iter().zip(targets) {
            let cache = self.step_cached(&state, x);
            loss += masked_loss(&cache.out, *t);
            state = RecurrentState {
                hidden: cache.h.clone(),
                cell: (0..hidden)
                    .map(|n| cache.f[n] * cache.c_prev[n] + cache.i[n] * cache.g[n])
                    .collect(),
            };
            caches.push(cache);
        }
        let scale = 1.0 / steps.len() as f64;
        loss *= scale;

        let w = &self.theta[self.layout.w()];
        let wa = &self.theta[self.layout.wa()];
        let wn = &self.theta[self.layout.wn()];
        let (w_r, b_r, wa_r, ba_r, wn_r, bn_i) = (
            self.layout.w(),
            self.layout.b(),
            self.layout.wa(),
            self.layout.ba(),
            self.layout.wn(),
            self.layout.bn(),
        );

        let mut dh_next = vec![0.0; hidden];
        let mut dc_next = vec![0.0; hidden];
        let mut dz = vec![0.0; 4 * hidden];
        for (cache, target) in caches.iter().zip(targets).rev() {
            let out = &cache.out;
            // Output heads.
            let (dp, dnr) = match target {
                None => ([0.0; ACTIONS], 2.0 * (out.no_response - 1.0) * scale),
                Some(k) => {
                    let mut dp = [0.0; ACTIONS];
                    for (i, d) in dp.iter_mut().enumerate() {
                        let y = if i == *k { 1.0 } else { 0.0 };
                        *d = 2.0 * (out.actions[i] - y) * scale;
                    }
                    (dp, 2.0 * out.no_response * scale)
                }
            };
            let mut dza = [0.0; ACTIONS];
            if target.is_some() {
                let inner: f64 = (0..ACTIONS).map(|j| out.actions[j] * dp[j]).sum();
                for k in 0..ACTIONS {
                    dza[k] = out.actions[k] * (dp[k] - inner);
                }
            }
            let dzn = dnr * out.no_response * (1.0 - out.no_response);

            let mut dh = dh_next.clone();
            if target.is_some() {
                for k in 0..ACTIONS {
                    let row = wa_r.start + k * hidden;
                    for n in 0..hidden {
                        grad[row + n] += dza[k] * cache.h[n];
                        dh[n] += wa[k * hidden + n] * dza[k];
                    }
                    grad[ba_r.start + k] += dza[k];
                }
            }
            for n in 0..hidden {
                grad[wn_r.start + n] += dzn * cache.h[n];
                dh[n] += wn[n] * dzn;
            }
            grad[bn_i] += dzn;

            // Cell.
            for n in 0..hidden {
                let (i, f, g, o, tc) = (
                    cache.i[n],
                    cache.f[n],
                    cache.g[n],
                    cache.o[n],
                    cache.tanh_c[n],
                );
                let d_o = dh[n] * tc;
                let dc = dh[n] * o * (1.0 - tc * tc) + dc_next[n];
                let di = dc * g;
                let dg = dc * i;
                let df = dc * cache.c_prev[n];
                dc_next[n] = dc * f;
                dz[n] = di * i * (1.0 - i);
                dz[hidden + n] = df * f * (1.0 - f);
                dz[2 * hidden + n] = dg * (1.0 - g * g);
                dz[3 * hidden + n] = d_o * o * (1.0 - o);
            }

            for n in 0..hidden {
                dh_next[n] = 0.0;
            }
            for (r, &dzr) in dz.iter().enumerate() {
                grad[b_r.start + r] += dzr;
                let row = w_r.start + r * cols;
                for (j, &xj) in cache.x.iter().enumerate() {
                    if xj != 0.0 {
                        grad[row + j] += dzr * xj;
                    }
                }
                for n in 0..hidden {
                    grad[row + input + n] += dzr * cache.h_prev[n];
                    dh_next[n] += w[r * cols + input + n] * dzr;
                }
            }
        }
        (loss, grad)
    }

    pub fn loss(&self, steps: &[Vec<f64>], targets: &[Option<usize>]) -> f64 {
        let mut state = RecurrentState::zeros(self.layout.hidden);
        let mut total = 0.0;
        for (x, t) in steps.iter().zip(targets) {
            let (out, next) = self.step(&state, x);
            total += masked_loss(&out, *t);
            state = next;
        }
        if steps.is_empty() {
            0.0
        } else {
            total / steps.len() as f64
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Largest relative disagreement between the analytic gradient and central
/// differences, over every parameter. Gradients smaller than `1e-7` in both
/// estimates are compared on an absolute scale.
pub fn gradient_check(
    net: &Lstm,
    steps: &[Vec<f64>],
    targets: &[Option<usize>],
    epsilon: f64,
) -> f64 {
    let (_, analytic) = net.loss_and_grad(steps, targets);
    let mut probe = net.clone();
    let mut worst: f64 = 0.0;
    for p in 0..net.theta.len() {
        let orig = probe.theta[p];
        probe.theta[p] = orig + epsilon;
        let up = probe.loss(steps, targets);
        probe.theta[p] = orig - epsilon;
        let down = probe.loss(steps, targets);
        probe.theta[p] = orig;
        let numeric = (up - down) / (2.0 * epsilon);
        let a = analytic[p];
        let denom = a.abs().max(numeric.abs()).max(1e-7);
        worst = worst.max((a - numeric).abs() / denom);
    }
    worst
}
