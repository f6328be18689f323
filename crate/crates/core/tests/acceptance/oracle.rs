//! Numeric minimizer for `rate·⟨μ, c⟩ + Σ_x w_x Σ_a μ(x,a) log(π(a|x)/π̂(a|x))`
//! over the treeplex, by damped Newton on per-infoset softmax logits with
//! finite-difference derivatives.

use nalgebra::{DMatrix, DVector};
use safe_olm::PlayerTree;

pub struct Problem<'a> {
    pub tree: &'a PlayerTree,
    /// Prior policy `π̂`, one row per infoset.
    pub prior: Vec<f64>,
    pub cost: Vec<f64>,
    pub rate: f64,
    /// Divergence weight of each infoset.
    pub weight: Vec<f64>,
}

impl Problem<'_> {
    fn n_params(&self) -> usize {
        (0..self.tree.num_infosets())
            .map(|x| self.tree.num_actions[x] - 1)
            .sum()
    }

    /// Log-policy from logits; the first action of every infoset has logit 0.
    fn log_policy(&self, theta: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.tree.num_sequences];
        let mut k = 0;
        for x in 0..self.tree.num_infosets() {
            let base = self.tree.offset[x];
            let na = self.tree.num_actions[x];
            let mut logits = vec![0.0; na];
            for logit in logits.iter_mut().skip(1) {
                *logit = theta[k];
                k += 1;
            }
            let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + logits.iter().map(|l| (l - m).exp()).sum::<f64>().ln();
            for a in 0..na {
                out[base + a] = logits[a] - lse;
            }
        }
        out
    }

    /// Realization weights from a log-policy, walking parents before children.
    pub fn realization(&self, logp: &[f64]) -> Vec<f64> {
        let mut mu = vec![0.0; self.tree.num_sequences];
        let mut done = vec![false; self.tree.num_infosets()];
        let mut remaining = self.tree.num_infosets();
        while remaining > 0 {
            for x in 0..self.tree.num_infosets() {
                if done[x] {
                    continue;
                }
                let reach = match self.tree.parent[x] {
                    None => 1.0,
                    Some(p) if done[self.infoset_of(p)] => mu[p],
                    Some(_) => continue,
                };
                for s in self.tree.offset[x]..self.tree.offset[x] + self.tree.num_actions[x] {
                    mu[s] = reach * logp[s].exp();
                }
                done[x] = true;
                remaining -= 1;
            }
        }
        mu
    }

    fn infoset_of(&self, s: usize) -> usize {
        (0..self.tree.num_infosets())
            .find(|&x| s >= self.tree.offset[x] && s < self.tree.offset[x] + self.tree.num_actions[x])
            .expect("sequence belongs to an infoset")
    }

    fn objective(&self, theta: &[f64]) -> f64 {
        let logp = self.log_policy(theta);
        let mu = self.realization(&logp);
        let mut f = 0.0;
        for x in 0..self.tree.num_infosets() {
            for s in self.tree.offset[x]..self.tree.offset[x] + self.tree.num_actions[x] {
                f += self.rate * mu[s] * self.cost[s];
                f += self.weight[x] * mu[s] * (logp[s] - self.prior[s].ln());
            }
        }
        f
    }

    fn gradient(&self, theta: &[f64], h: f64) -> DVector<f64> {
        let n = theta.len();
        let mut g = DVector::zeros(n);
        let mut th = theta.to_vec();
        for i in 0..n {
            th[i] = theta[i] + h;
            let up = self.objective(&th);
            th[i] = theta[i] - h;
            let down = self.objective(&th);
            th[i] = theta[i];
            g[i] = (up - down) / (2.0 * h);
        }
        g
    }

    fn hessian(&self, theta: &[f64]) -> DMatrix<f64> {
        let n = theta.len();
        let h = 1e-4;
        let mut m = DMatrix::zeros(n, n);
        let mut th = theta.to_vec();
        for j in 0..n {
            th[j] = theta[j] + h;
            let up = self.gradient(&th, 1e-5);
            th[j] = theta[j] - h;
            let down = self.gradient(&th, 1e-5);
            th[j] = theta[j];
            m.set_column(j, &((up - down) / (2.0 * h)));
        }
        (&m + m.transpose()) / 2.0
    }

    /// Minimizer in realization weights.
    pub fn solve(&self) -> Vec<f64> {
        let mut theta = Vec::with_capacity(self.n_params());
        for x in 0..self.tree.num_infosets() {
            let base = self.tree.offset[x];
            for a in 1..self.tree.num_actions[x] {
                theta.push(self.prior[base + a].ln() - self.prior[base].ln());
            }
        }
        for _ in 0..100 {
            let g = self.gradient(&theta, 1e-6);
            if g.amax() < 1e-11 {
                break;
            }
            let hess = self.hessian(&theta);
            let n = theta.len();
            let mut lambda = 0.0;
            let dir = loop {
                let shifted = &hess + DMatrix::identity(n, n) * lambda;
                if let Some(ch) = shifted.cholesky() {
                    break -ch.solve(&g);
                }
                lambda = if lambda == 0.0 { 1e-8 } else { lambda * 10.0 };
            };
            let f0 = self.objective(&theta);
            let slope = g.dot(&dir);
            let mut step = 1.0;
            let mut moved = false;
            for _ in 0..60 {
                let cand: Vec<f64> = theta.iter().zip(dir.iter()).map(|(t, d)| t + step * d).collect();
                if self.objective(&cand) <= f0 + 1e-4 * step * slope {
                    theta = cand;
                    moved = true;
                    break;
                }
                step /= 2.0;
            }
            if !moved || step * dir.amax() < 1e-14 {
                break;
            }
        }
        self.realization(&self.log_policy(&theta))
    }
}
