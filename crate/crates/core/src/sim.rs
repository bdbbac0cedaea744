//! Synthetic panels for tests, benchmarks and Monte Carlo checks.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::contrast::Propensities;
use crate::panel::{Cohort, Panel};

fn normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

/// Six units over 2000-2005: five initiate in 2002, one never does.
///
/// Outcomes are `10 + unit + 0.5 (year - 2000)` plus an effect of
/// `1 + 0.5 l` at lag `l >= 0`; covariate `x` is the unit's index.
pub fn toy_panel() -> Panel {
    let cohorts = vec![Cohort::At(2); 5].into_iter().chain([Cohort::Never]).collect::<Vec<_>>();
    let mut y = Vec::with_capacity(36);
    let mut x = Vec::with_capacity(36);
    for (u, g) in cohorts.iter().enumerate() {
        for t in 0..6 {
            let mut v = 10.0 + u as f64 + 0.5 * t as f64;
            if let Some(l) = g.relative_time(t).filter(|l| *l >= 0) {
                v += 1.0 + 0.5 * l as f64;
            }
            y.push(v);
            x.push(u as f64);
        }
    }
    Panel::from_dense(
        (1..=6).map(|i| format!("u{i}")).collect(),
        (2000..2006).collect(),
        cohorts,
        y,
        vec!["x".into()],
        x,
    )
    .expect("toy panel is valid")
}

/// Shape of a random staggered panel.
#[derive(Clone, Copy, Debug)]
pub struct RandomPanelSpec {
    pub units: usize,
    pub times: usize,
    pub covariates: usize,
    /// Share of never-treated units (at least one is always present).
    pub never_share: f64,
}

/// Random staggered panel with heterogeneous dynamic effects and noise.
///
/// At least one unit is never treated and at least one initiates within
/// the window; initiation times lie in `1..times`.
pub fn random_panel<R: Rng + ?Sized>(rng: &mut R, spec: RandomPanelSpec) -> Panel {
    let (n, t_n, k) = (spec.units.max(2), spec.times.max(2), spec.covariates);
    let mut cohorts: Vec<Cohort> = (0..n)
        .map(|_| if rng.gen::<f64>() < spec.never_share { Cohort::Never } else { Cohort::At(rng.gen_range(1..t_n)) })
        .collect();
    cohorts[0] = Cohort::Never;
    if cohorts.iter().all(|c| c.is_never()) {
        cohorts[n - 1] = Cohort::At(rng.gen_range(1..t_n));
    }
    let alpha: Vec<f64> = (0..n).map(|_| normal(rng)).collect();
    let gamma: Vec<f64> = (0..t_n).map(|_| normal(rng)).collect();
    let beta: Vec<f64> = (0..k).map(|_| normal(rng)).collect();
    let mut y = Vec::with_capacity(n * t_n);
    let mut x = Vec::with_capacity(n * t_n * k);
    for u in 0..n {
        for t in 0..t_n {
            let xs: Vec<f64> = (0..k).map(|_| alpha[u] * 0.5 + normal(rng)).collect();
            let mut v = alpha[u] + gamma[t] + xs.iter().zip(&beta).map(|(a, b)| a * b).sum::<f64>() + 0.5 * normal(rng);
            if let Some(l) = cohorts[u].relative_time(t).filter(|l| *l >= 0) {
                v += 1.0 + 0.3 * l as f64 + 0.2 * alpha[u];
            }
            y.push(v);
            x.extend(xs);
        }
    }
    Panel::from_dense(
        (0..n).map(|i| format!("u{i}")).collect(),
        (0..t_n as i64).collect(),
        cohorts,
        y,
        (0..k).map(|j| format!("x{}", j + 1)).collect(),
        x,
    )
    .expect("random panel is valid")
}

/// Additive panel `y = alpha_i + gamma_t + tau(t - G_i)` without noise;
/// `tau` is applied at every finite relative time.
pub fn noiseless_panel(cohorts: Vec<Cohort>, times: usize, tau: impl Fn(i64) -> f64) -> Panel {
    let n = cohorts.len();
    let mut y = Vec::with_capacity(n * times);
    for (u, g) in cohorts.iter().enumerate() {
        for t in 0..times {
            let base = 0.7 * u as f64 - 0.2 * (t as f64).powi(2);
            y.push(base + g.relative_time(t).map_or(0.0, &tau));
        }
    }
    Panel::from_dense(
        (0..n).map(|i| format!("u{i}")).collect(),
        (0..times as i64).collect(),
        cohorts,
        y,
        vec![],
        vec![],
    )
    .expect("noiseless panel is valid")
}

/// One draw of the confounded two-cohort design used for Monte Carlo checks.
///
/// Three periods; units initiate at period 1 with probability
/// `logistic(-0.3 + 0.8 x)` and never otherwise. Outcomes are linear in `x`
/// with effect `1 + 0.5 x` from initiation on, so the population effect at
/// period 2 is exactly 1.
pub struct ConfoundedDraw {
    pub panel: Panel,
    pub propensities: Propensities,
}

pub const CONFOUNDED_ATE: f64 = 1.0;

pub fn confounded_draw<R: Rng + ?Sized>(rng: &mut R, n: usize) -> ConfoundedDraw {
    let times = 3;
    let mut cohorts = Vec::with_capacity(n);
    let mut probs = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n * times);
    let mut xs = Vec::with_capacity(n * times);
    for _ in 0..n {
        let x: f64 = normal(rng);
        let p = 1.0 / (1.0 + (0.3 - 0.8 * x).exp());
        let g = if rng.gen::<f64>() < p { Cohort::At(1) } else { Cohort::Never };
        cohorts.push(g);
        probs.push(vec![p, 1.0 - p]);
        for t in 0..times {
            let mut v = 1.0 + 2.0 * x + 0.5 * t as f64 + normal(rng);
            if g.treated_at(t) {
                v += 1.0 + 0.5 * x;
            }
            y.push(v);
            xs.push(x);
        }
    }
    // Guarantee both arms are present.
    if !cohorts.iter().any(|c| c.is_never()) {
        cohorts[0] = Cohort::Never;
    }
    if cohorts.iter().all(|c| c.is_never()) {
        cohorts[0] = Cohort::At(1);
    }
    let panel = Panel::from_dense(
        (0..n).map(|i| format!("u{i}")).collect(),
        vec![0, 1, 2],
        cohorts,
        y,
        vec!["x".into()],
        xs,
    )
    .expect("simulated panel is valid");
    ConfoundedDraw { panel, propensities: Propensities { cohorts: vec![Cohort::At(1), Cohort::Never], probs } }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn random_panels_have_both_arms() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let p = random_panel(&mut rng, RandomPanelSpec { units: 4, times: 4, covariates: 1, never_share: 0.0 });
            assert!(p.cohorts().iter().any(|c| c.is_never()));
            assert!(p.cohorts().iter().any(|c| !c.is_never()));
        }
    }

    #[test]
    fn toy_panel_shape() {
        let p = toy_panel();
        assert_eq!((p.n_units(), p.n_times()), (6, 6));
        assert_eq!(p.cohorts().iter().filter(|c| c.is_never()).count(), 1);
    }
}
