//! Weighted partial likelihood with Breslow or Efron ties, evaluated by one
//! backward sweep over distinct event times.
//!
//! Rows enter the risk accumulators when the sweep passes their `stop` and
//! leave once it passes their `start`, so a row is at risk at `t` exactly
//! when `start < t <= stop`. Accumulation order is fixed by [`SweepOrder`],
//! which makes every result bit-reproducible.

use super::design::{RiskRows, SweepOrder};
use super::TieMethod;

pub(crate) struct Problem<'a> {
    pub rows: &'a RiskRows,
    pub order: &'a SweepOrder,
    /// Column means subtracted from `x` before exponentiation.
    pub center: &'a [f64],
    pub tie: TieMethod,
}

pub(crate) struct Evaluation {
    pub loglik: f64,
    pub score: Vec<f64>,
    /// Row-major `p x p`, negative Hessian.
    pub info: Vec<f64>,
}

/// Running sums `S0 = sum r`, `S1 = sum r x`, `S2 = sum r x x'`.
struct Moments {
    s0: f64,
    s1: Vec<f64>,
    s2: Vec<f64>,
}

impl Moments {
    fn new(p: usize) -> Self {
        Self {
            s0: 0.0,
            s1: vec![0.0; p],
            s2: vec![0.0; p * p],
        }
    }

    fn add(&mut self, sign: f64, r: f64, x: &[f64], second: bool) {
        let p = x.len();
        self.s0 += sign * r;
        for (j, &xj) in x.iter().enumerate() {
            let rx = sign * r * xj;
            self.s1[j] += rx;
            if second {
                for (s2, &xk) in self.s2[j * p..=j * p + j].iter_mut().zip(x) {
                    *s2 += rx * xk;
                }
            }
        }
    }
}

impl Problem<'_> {
    fn centered(&self, i: usize, buf: &mut [f64]) {
        for ((b, x), c) in buf.iter_mut().zip(self.rows.row(i)).zip(self.center) {
            *b = x - c;
        }
    }

    fn risk_scores(&self, beta: &[f64]) -> Vec<f64> {
        let p = self.rows.p;
        let mut buf = vec![0.0; p];
        (0..self.rows.len())
            .map(|i| {
                self.centered(i, &mut buf);
                let eta: f64 = buf.iter().zip(beta).map(|(x, b)| x * b).sum();
                self.rows.weight[i] * eta.exp()
            })
            .collect()
    }

    /// Walks event times backwards, handing each tied group to `visit`
    /// together with the current risk-set moments.
    fn sweep(&self, beta: &[f64], second: bool, mut visit: impl FnMut(f64, &[usize], &Moments, &[f64])) {
        let rows = self.rows;
        let p = rows.p;
        let r = self.risk_scores(beta);
        let mut acc = Moments::new(p);
        let mut buf = vec![0.0; p];
        let (mut ip, mut is) = (0, 0);
        for (t, range) in &self.order.groups {
            let t = *t;
            while ip < rows.len() && rows.stop[self.order.by_stop_desc[ip]] >= t {
                let i = self.order.by_stop_desc[ip];
                self.centered(i, &mut buf);
                acc.add(1.0, r[i], &buf, second);
                ip += 1;
            }
            while is < rows.len() && rows.start[self.order.by_start_desc[is]] >= t {
                let i = self.order.by_start_desc[is];
                self.centered(i, &mut buf);
                acc.add(-1.0, r[i], &buf, second);
                is += 1;
            }
            visit(t, &self.order.events[range.clone()], &acc, &r);
        }
    }

    pub fn evaluate(&self, beta: &[f64], second: bool) -> Evaluation {
        let rows = self.rows;
        let p = rows.p;
        let mut loglik = 0.0;
        let mut score = vec![0.0; p];
        let mut info = vec![0.0; p * p];
        let mut buf = vec![0.0; p];
        let mut tied = Moments::new(p);
        let mut m1 = vec![0.0; p];
        let tie = self.tie;
        self.sweep(beta, second, |_, events, acc, r| {
            let d = events.len() as f64;
            let wsum: f64 = events.iter().map(|&i| rows.weight[i]).sum();
            tied = Moments::new(p);
            for &i in events {
                self.centered(i, &mut buf);
                let eta: f64 = buf.iter().zip(beta).map(|(x, b)| x * b).sum();
                loglik += rows.weight[i] * eta;
                for j in 0..p {
                    score[j] += rows.weight[i] * buf[j];
                }
                tied.add(1.0, r[i], &buf, second);
            }
            let (steps, mass) = match tie {
                TieMethod::Breslow => (1, wsum),
                TieMethod::Efron => (events.len(), wsum / d),
            };
            for k in 0..steps {
                let f = match tie {
                    TieMethod::Breslow => 0.0,
                    TieMethod::Efron => k as f64 / d,
                };
                let den = acc.s0 - f * tied.s0;
                loglik -= mass * den.ln();
                for j in 0..p {
                    m1[j] = (acc.s1[j] - f * tied.s1[j]) / den;
                    score[j] -= mass * m1[j];
                }
                if second {
                    for j in 0..p {
                        for l in 0..=j {
                            let m2 = (acc.s2[j * p + l] - f * tied.s2[j * p + l]) / den;
                            info[j * p + l] += mass * (m2 - m1[j] * m1[l]);
                        }
                    }
                }
            }
        });
        for j in 0..p {
            for l in 0..j {
                info[l * p + j] = info[j * p + l];
            }
        }
        Evaluation { loglik, score, info }
    }

    /// Baseline hazard increments at `x = center`, one per event time in
    /// increasing order.
    pub fn baseline_increments(&self, beta: &[f64]) -> Vec<(f64, f64)> {
        let rows = self.rows;
        let tie = self.tie;
        let mut out = Vec::with_capacity(self.order.groups.len());
        self.sweep(beta, false, |t, events, acc, r| {
            let d = events.len() as f64;
            let wsum: f64 = events.iter().map(|&i| rows.weight[i]).sum();
            let dh = match tie {
                TieMethod::Breslow => wsum / acc.s0,
                TieMethod::Efron => {
                    let e0: f64 = events.iter().map(|&i| r[i]).sum();
                    (0..events.len())
                        .map(|k| (wsum / d) / (acc.s0 - (k as f64 / d) * e0))
                        .sum()
                }
            };
            out.push((t, dh));
        });
        out.reverse();
        out
    }

    /// Covariate minus its risk-set weighted mean, per event row (tie-method
    /// adjusted), in increasing time order.
    pub fn schoenfeld(&self, beta: &[f64]) -> Vec<(usize, Vec<f64>)> {
        let rows = self.rows;
        let p = rows.p;
        let tie = self.tie;
        let mut out = Vec::new();
        let mut buf = vec![0.0; p];
        self.sweep(beta, false, |_, events, acc, r| {
            let d = events.len() as f64;
            let mut tied = Moments::new(p);
            for &i in events {
                self.centered(i, &mut buf);
                tied.add(1.0, r[i], &buf, false);
            }
            let steps = match tie {
                TieMethod::Breslow => 1,
                TieMethod::Efron => events.len(),
            };
            let mut mean = vec![0.0; p];
            for k in 0..steps {
                let f = if steps == 1 { 0.0 } else { k as f64 / d };
                let den = acc.s0 - f * tied.s0;
                for ((m, a), t) in mean.iter_mut().zip(&acc.s1).zip(&tied.s1) {
                    *m += (a - f * t) / den / steps as f64;
                }
            }
            // events come in decreasing time; collect in reverse later
            for &i in events.iter().rev() {
                self.centered(i, &mut buf);
                out.push((i, buf.iter().zip(&mean).map(|(x, m)| x - m).collect()));
            }
        });
        out.reverse();
        out
    }
}
