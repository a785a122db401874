use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::data::Dataset;
use super::train::{train, EvalReport, Experiment, TrainOutcome, Trained};
use crate::encoders::LayoutKind;
use crate::error::{Error, Result};
use crate::trees::TreeLayout;

#[derive(Debug, Clone)]
pub struct SeedRun {
    pub seed: u64,
    pub outcome: TrainOutcome,
    /// Evaluation of the selected checkpoint on the test split (dev when
    /// there is no test split).
    pub report: EvalReport,
}

/// Trains once per seed, overriding the experiment seed.
pub fn run_seeds(exp: &Experiment, data: &Dataset, seeds: &[u64]) -> Result<Vec<SeedRun>> {
    let split = if data.test.is_empty() { &data.dev } else { &data.test };
    if split.is_empty() {
        return Err(Error::invalid("seed runs need a dev or test split to report"));
    }
    seeds
        .iter()
        .map(|&seed| {
            let mut e = exp.clone();
            e.train.seed = seed;
            let outcome = train(&e, data)?;
            let report = Trained::from_checkpoint(&outcome.checkpoint)?.evaluate(split)?;
            Ok(SeedRun { seed, outcome, report })
        })
        .collect()
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Middle value (mean of the two middle values for even counts).
pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub rho: f64,
    /// Mean leaf depth of ρ-random layouts over the reported split's lengths.
    pub mean_depth: f64,
    pub metric: &'static str,
    pub per_seed: Vec<f64>,
    pub mean: f64,
    pub median: f64,
}

/// Mean leaf depth of `TreeLayout::random(n, rho)` averaged over `lengths`,
/// one fresh layout per length and seed.
pub fn mean_random_depth(lengths: &[usize], rho: f64, seeds: &[u64]) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0usize;
    for &seed in seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for &n in lengths {
            total += TreeLayout::random(n, rho, &mut rng)?.depth_stats().mean_leaf_depth;
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::invalid("no lengths to sample depths for"));
    }
    Ok(total / count as f64)
}

/// Trains a ρ-random tree encoder per grid point and seed. Layouts are drawn
/// afresh for every sentence at every step from the run's seeded generator.
pub fn rho_sweep(base: &Experiment, grid: &[f64], data: &Dataset, seeds: &[u64]) -> Result<Vec<SweepRow>> {
    if let Some(r) = grid.iter().find(|r| !(0.0..=1.0).contains(*r)) {
        return Err(Error::invalid(format!("ρ = {r} lies outside [0, 1]")));
    }
    if seeds.is_empty() {
        return Err(Error::invalid("at least one seed is required"));
    }
    let split = if data.test.is_empty() { &data.dev } else { &data.test };
    let lengths: Vec<usize> = split.iter().map(|e| e.text.len()).collect();
    grid.iter()
        .map(|&rho| {
            let mut exp = base.clone();
            exp.model.encoder.layout = LayoutKind::Random(rho);
            let runs = run_seeds(&exp, data, seeds)?;
            let per_seed: Vec<f64> = runs.iter().map(|r| r.report.value).collect();
            Ok(SweepRow {
                rho,
                mean_depth: mean_random_depth(&lengths, rho, seeds)?,
                metric: runs[0].report.metric,
                mean: mean(&per_seed),
                median: median(&per_seed),
                per_seed,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_and_mean() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert_eq!(mean(&[1.0, 2.0]), 1.5);
    }

    #[test]
    fn endpoint_depths_match_the_degenerate_layouts() {
        let lengths = [5, 9, 16, 23];
        let left = mean(
            &lengths
                .iter()
                .map(|&n| TreeLayout::left_branching(n).unwrap().depth_stats().mean_leaf_depth)
                .collect::<Vec<_>>(),
        );
        let bal = mean(
            &lengths
                .iter()
                .map(|&n| TreeLayout::balanced(n).unwrap().depth_stats().mean_leaf_depth)
                .collect::<Vec<_>>(),
        );
        assert!((mean_random_depth(&lengths, 0.0, &[1, 2]).unwrap() - left).abs() < 1e-12);
        assert!((mean_random_depth(&lengths, 1.0, &[1, 2]).unwrap() - bal).abs() < 1e-12);
        let mid = mean_random_depth(&lengths, 0.5, &[1, 2, 3, 4, 5]).unwrap();
        assert!(bal < mid && mid < left);
    }

    #[test]
    fn grid_outside_the_unit_interval_is_rejected() {
        let data = Dataset {
            task: crate::model::TaskKind::Seq2Seq,
            train: vec![],
            dev: vec![],
            test: vec![],
        };
        assert!(rho_sweep(&Experiment::default(), &[0.0, 2.0], &data, &[1]).is_err());
    }
}
