//! Independent-parameter tree-structured Parzen estimator.
//!
//! Feasible completed trials are ranked by loss; the best `floor(γ·n)` form the
//! good set, everything else (including infeasible and failed trials) the bad
//! set. Each active parameter is sampled from its good-set density and the
//! candidate with the largest `l(x)/g(x)` wins.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::space::{sample_param, sample_random_with, to_axis, to_value, Assignment, Domain, Param, Space};
use super::study::{Direction, Trial};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TpeConfig {
    pub gamma: f64,
    pub n_startup: usize,
    pub n_ei: usize,
}

impl Default for TpeConfig {
    fn default() -> Self {
        TpeConfig { gamma: 0.25, n_startup: 10, n_ei: 24 }
    }
}

/// How a TPE draw was produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TpeMode {
    Model,
    /// Fewer than `n_startup` feasible trials.
    Startup,
    /// The γ split left one side empty.
    EmptySplit,
}

pub fn sample_tpe(space: &Space, history: &[Trial], direction: Direction, seed: u64) -> Assignment {
    sample_tpe_with(space, history, direction, seed, &TpeConfig::default()).0
}

pub fn sample_tpe_with(space: &Space, history: &[Trial], direction: Direction, seed: u64, cfg: &TpeConfig) -> (Assignment, TpeMode) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ranked: Vec<(f64, &Trial)> = history
        .iter()
        .filter(|t| t.is_usable())
        .map(|t| (direction.loss(t.objective.expect("usable trials have objectives")), t))
        .collect();
    if ranked.len() < cfg.n_startup.max(1) {
        return (sample_random_with(space, &mut rng), TpeMode::Startup);
    }
    // Stable on ties: lower trial id ranks first.
    ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.id.cmp(&b.1.id)));
    let n_good = (cfg.gamma * ranked.len() as f64).floor() as usize;
    if n_good == 0 || n_good == ranked.len() {
        return (sample_random_with(space, &mut rng), TpeMode::EmptySplit);
    }
    let good: Vec<&Assignment> = ranked[..n_good].iter().map(|(_, t)| &t.assignment).collect();
    let mut bad: Vec<&Assignment> = ranked[n_good..].iter().map(|(_, t)| &t.assignment).collect();
    bad.extend(history.iter().filter(|t| !t.is_usable()).map(|t| &t.assignment));

    let mut out = Assignment::new();
    for p in &space.params {
        if !Space::is_active(p, &out) {
            continue;
        }
        let l: Vec<&Value> = good.iter().filter_map(|a| a.get(&p.name)).collect();
        let g: Vec<&Value> = bad.iter().filter_map(|a| a.get(&p.name)).collect();
        let v = if l.is_empty() {
            sample_param(p, &out, &mut rng)
        } else {
            match &p.domain {
                Domain::Categorical { choices } => pick_categorical(choices, &l, &g, cfg.n_ei, &mut rng),
                _ => {
                    let (lo, hi) = Space::bounds(p, &out).expect("numeric");
                    pick_numeric(p, lo, hi, &l, &g, cfg.n_ei, &mut rng)
                }
            }
        };
        out.insert(p.name.clone(), v);
    }
    (out, TpeMode::Model)
}

/// Add-one smoothed frequencies.
fn smoothed(choices: &[Value], obs: &[&Value]) -> Vec<f64> {
    let mut counts = vec![1.0; choices.len()];
    for o in obs {
        if let Some(i) = choices.iter().position(|c| c == *o) {
            counts[i] += 1.0;
        }
    }
    let total: f64 = counts.iter().sum();
    counts.iter().map(|c| c / total).collect()
}

fn pick_categorical<R: Rng>(choices: &[Value], l: &[&Value], g: &[&Value], n_ei: usize, rng: &mut R) -> Value {
    let pl = smoothed(choices, l);
    let pg = smoothed(choices, g);
    let mut best: Option<(f64, usize)> = None;
    for _ in 0..n_ei.max(1) {
        let mut u: f64 = rng.random();
        let mut i = 0;
        while i + 1 < pl.len() && u >= pl[i] {
            u -= pl[i];
            i += 1;
        }
        let score = pl[i].ln() - pg[i].ln();
        if best.is_none_or(|(s, _)| score > s) {
            best = Some((score, i));
        }
    }
    choices[best.expect("n_ei >= 1").1].clone()
}

/// Gaussian mixture on the working axis, plus a broad prior component.
pub(crate) struct Parzen {
    mus: Vec<f64>,
    sigmas: Vec<f64>,
    lo: f64,
    hi: f64,
}

impl Parzen {
    pub(crate) fn fit(points: &[f64], lo: f64, hi: f64) -> Self {
        let width = (hi - lo).max(f64::EPSILON);
        let n = points.len() as f64;
        let mean = points.iter().sum::<f64>() / n.max(1.0);
        let var = if points.len() > 1 { points.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
        // Scott's rule, floored at 1e-3 of the width and at width/min(n+1, 100).
        // The second floor keeps the good set from collapsing onto repeated draws.
        let h = (var.sqrt() * n.powf(-0.2)).max(1e-3 * width).max(width / (n + 1.0).min(100.0));
        let mut mus = points.to_vec();
        let mut sigmas = vec![h; points.len()];
        mus.push((lo + hi) / 2.0);
        sigmas.push(width);
        Parzen { mus, sigmas, lo, hi }
    }

    pub(crate) fn log_pdf(&self, x: f64) -> f64 {
        let k = self.mus.len() as f64;
        let p: f64 = self
            .mus
            .iter()
            .zip(&self.sigmas)
            .map(|(m, s)| (-0.5 * ((x - m) / s).powi(2)).exp() / (s * (2.0 * std::f64::consts::PI).sqrt()))
            .sum::<f64>()
            / k;
        p.max(1e-300).ln()
    }

    pub(crate) fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        let i = rng.random_range(0..self.mus.len());
        let normal = Normal::new(self.mus[i], self.sigmas[i]).expect("positive sigma");
        for _ in 0..32 {
            let x = normal.sample(rng);
            if (self.lo..=self.hi).contains(&x) {
                return x;
            }
        }
        self.mus[i].clamp(self.lo, self.hi)
    }
}

fn pick_numeric<R: Rng>(p: &Param, lo: f64, hi: f64, l: &[&Value], g: &[&Value], n_ei: usize, rng: &mut R) -> Value {
    let is_int = matches!(p.domain, Domain::Int { .. });
    // Integers get half-unit padding so the end points are as likely as interior values.
    let (alo, ahi) = if is_int { (to_axis(p, lo - 0.5 + 1e-9), to_axis(p, hi + 0.5 - 1e-9)) } else { (to_axis(p, lo), to_axis(p, hi)) };
    let axis = |vs: &[&Value]| -> Vec<f64> { vs.iter().filter_map(|v| v.as_f64()).map(|x| to_axis(p, x.clamp(lo, hi))).collect() };
    let lk = Parzen::fit(&axis(l), alo, ahi);
    let gp = axis(g);
    let gk = (!gp.is_empty()).then(|| Parzen::fit(&gp, alo, ahi));
    let mut best: Option<(f64, Value)> = None;
    for _ in 0..n_ei.max(1) {
        let y = lk.sample(rng);
        let v = to_value(p, y, lo, hi);
        let at = to_axis(p, v.as_f64().expect("numeric value"));
        let lg = gk.as_ref().map_or(-(ahi - alo).max(f64::EPSILON).ln(), |k| k.log_pdf(at));
        let score = lk.log_pdf(at) - lg;
        if best.as_ref().is_none_or(|(s, _)| score > *s) {
            best = Some((score, v));
        }
    }
    best.expect("n_ei >= 1").1
}
