//! Sparsity, overlap and value-accuracy measurements.

use crate::control::{FeatureMap, LinearQ, Probe};
use crate::env::{Domain, Episodic, Policy};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::network::MlpParams;
use crate::seed::child_rng;

/// Percentage of live units active for each instance.
///
/// A unit is live if it is active (above `threshold`) for at least one row;
/// units that never fire are left out of the denominator. With no live
/// units every percentage is zero.
pub fn instance_sparsity(reps: &Matrix, threshold: f64) -> Vec<f64> {
    let live: Vec<usize> = (0..reps.cols())
        .filter(|&j| reps.iter_rows().any(|r| r[j] > threshold))
        .collect();
    if live.is_empty() {
        return vec![0.0; reps.rows()];
    }
    reps.iter_rows()
        .map(|r| live.iter().filter(|&&j| r[j] > threshold).count() as f64 / live.len() as f64 * 100.0)
        .collect()
}

/// Counts of sparsity percentages in `bins` equal-width buckets over
/// `[0, 100]`; 100 falls in the last bucket.
pub fn sparsity_histogram(percentages: &[f64], bins: usize) -> Vec<usize> {
    let mut counts = vec![0; bins];
    if bins == 0 {
        return counts;
    }
    for &p in percentages {
        let b = ((p / 100.0 * bins as f64) as usize).min(bins - 1);
        counts[b] += 1;
    }
    counts
}

/// Number of units active in both representations.
pub fn activation_overlap(a: &[f64], b: &[f64], threshold: f64) -> Result<usize> {
    if a.len() != b.len() {
        return Err(Error::shape("activation_overlap", a.len(), b.len()));
    }
    Ok(a.iter().zip(b).filter(|(&x, &y)| x > threshold && y > threshold).count())
}

/// Overlap of every unordered pair `(i, j)` with `i < j`, in row-major order.
pub fn pairwise_overlaps(reps: &[Vec<f64>], threshold: f64) -> Result<Vec<(usize, usize, usize)>> {
    let mut out = Vec::new();
    for i in 0..reps.len() {
        for j in i + 1..reps.len() {
            out.push((i, j, activation_overlap(&reps[i], &reps[j], threshold)?));
        }
    }
    Ok(out)
}

pub fn mean_pairwise_overlap(reps: &[Vec<f64>], threshold: f64) -> Result<f64> {
    if reps.len() < 2 {
        return Err(Error::invalid("overlap needs at least two representations"));
    }
    let pairs = pairwise_overlaps(reps, threshold)?;
    Ok(pairs.iter().map(|p| p.2 as f64).sum::<f64>() / pairs.len() as f64)
}

/// Named state-action pairs used in the overlap and value analyses.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbeSet {
    pub domain: Domain,
    pub label: String,
    pub probes: Vec<Probe>,
}

impl ProbeSet {
    /// Five spread-out states: four near the corners of the first two
    /// dimensions plus the centre, or a diagonal for higher dimensions.
    pub fn default_for(domain: Domain) -> Self {
        let points: Vec<Vec<f64>> = match domain.obs_dim() {
            2 => vec![
                vec![0.1, 0.1],
                vec![0.1, 0.9],
                vec![0.5, 0.5],
                vec![0.9, 0.1],
                vec![0.85, 0.85],
            ],
            d => [0.1, 0.3, 0.5, 0.7, 0.9].iter().map(|&v| vec![v; d]).collect(),
        };
        ProbeSet {
            domain,
            label: "default".into(),
            probes: points.into_iter().map(|obs| Probe { obs, action: 0 }).collect(),
        }
    }

    pub fn observations(&self) -> Vec<Vec<f64>> {
        self.probes.iter().map(|p| p.obs.clone()).collect()
    }
}

/// One unit's activation over a square grid of the normalized state space.
#[derive(Clone, Debug, PartialEq)]
pub struct HeatmapGrid {
    pub unit: usize,
    pub resolution: usize,
    /// `values.get(i, j)` is the activation at `(i / (r - 1), j / (r - 1))`.
    pub values: Matrix,
}

/// Evaluates the chosen representation units on an `r x r` grid.
pub fn heatmap(params: &MlpParams, domain: Domain, units: &[usize], resolution: usize) -> Result<Vec<HeatmapGrid>> {
    if domain.obs_dim() != 2 {
        return Err(Error::invalid(format!("heatmaps need a 2-d domain, {domain} has {} dims", domain.obs_dim())));
    }
    if params.input_dim() != 2 {
        return Err(Error::shape("heatmap network input", 2, params.input_dim()));
    }
    if resolution < 2 {
        return Err(Error::invalid("heatmap resolution must be at least 2"));
    }
    if let Some(&u) = units.iter().find(|&&u| u >= params.width()) {
        return Err(Error::invalid(format!("unit {u} out of range")));
    }
    let r = resolution;
    let step = 1.0 / (r - 1) as f64;
    let mut grid = Vec::with_capacity(r * r * 2);
    for i in 0..r {
        for j in 0..r {
            grid.push(i as f64 * step);
            grid.push(j as f64 * step);
        }
    }
    let reps = params.represent_batch(&Matrix::from_vec(r * r, 2, grid)?)?;
    Ok(units
        .iter()
        .map(|&u| HeatmapGrid {
            unit: u,
            resolution: r,
            values: Matrix::from_vec(r, r, reps.column(u)).expect("r * r values"),
        })
        .collect())
}

/// Sample mean and its standard error.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Estimate {
    pub mean: f64,
    pub std_error: f64,
    pub samples: usize,
}

impl Estimate {
    pub fn from_samples(xs: &[f64]) -> Self {
        let n = xs.len();
        let mean = xs.iter().sum::<f64>() / n.max(1) as f64;
        let std_error = if n > 1 {
            let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
            (var / n as f64).sqrt()
        } else {
            0.0
        };
        Estimate {
            mean,
            std_error,
            samples: n,
        }
    }
}

/// Undiscounted return of rollouts that take `action` in `start` and then
/// follow `policy`, each truncated after `max_steps`. Rollout `i` uses its
/// own random stream derived from `seed`.
pub fn monte_carlo_value<E, P>(
    env: &E,
    policy: &P,
    start: &E::State,
    action: usize,
    rollouts: usize,
    max_steps: usize,
    seed: u64,
) -> Result<Estimate>
where
    E: Episodic,
    P: Policy<E::State>,
{
    if rollouts == 0 {
        return Err(Error::invalid("need at least one rollout"));
    }
    if action >= env.num_actions() {
        return Err(Error::invalid(format!("action {action} out of range")));
    }
    let mut returns = Vec::with_capacity(rollouts);
    for i in 0..rollouts {
        let mut rng = child_rng(seed, "rollout", i as u64);
        let mut state = start.clone();
        let mut a = action;
        let mut total = 0.0;
        for _ in 0..max_steps {
            let (r, next, over) = env.transition(&state, a, &mut rng)?;
            total += r;
            if over {
                break;
            }
            state = next;
            a = policy.act(&state, &mut rng)?;
        }
        returns.push(total);
    }
    Ok(Estimate::from_samples(&returns))
}

/// [`monte_carlo_value`] for several start states, each with its own seed.
pub fn monte_carlo_values<E, P>(
    env: &E,
    policy: &P,
    starts: &[(E::State, usize)],
    rollouts: usize,
    max_steps: usize,
    seed: u64,
) -> Result<Vec<Estimate>>
where
    E: Episodic,
    P: Policy<E::State>,
{
    starts
        .iter()
        .enumerate()
        .map(|(k, (s, a))| monte_carlo_value(env, policy, s, *a, rollouts, max_steps, crate::seed::child_seed(seed, "probe", k as u64)))
        .collect()
}

/// Exponential moving average: `y_0 = x_0`, `y_t = (1 - s) y_{t-1} + s x_t`.
pub fn ema_smooth(series: &[f64], smoothing: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(series.len());
    let mut y = match series.first() {
        Some(&x) => x,
        None => return out,
    };
    for &x in series {
        y = (1.0 - smoothing) * y + smoothing * x;
        out.push(y);
    }
    out
}

/// Action values of each probe under `q`.
pub fn probe_q_values(q: &LinearQ, features: &dyn FeatureMap, probes: &[Probe]) -> Result<Vec<f64>> {
    probes
        .iter()
        .map(|p| q.q(&features.features(&p.obs)?, p.action))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{he_init, Activation};
    use crate::seed::{rng_from_seed, SimRng};
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn instance_sparsity_examples() {
        let m = Matrix::from_rows(&[[1.0, 0.0], [0.0, 0.0]]).unwrap();
        assert_eq!(instance_sparsity(&m, 0.0), vec![100.0, 0.0]);
        let m = Matrix::from_rows(&[[1.0, 0.0, 2.0], [0.0, 0.0, 3.0], [1.0, 0.0, 0.0]]).unwrap();
        assert_eq!(instance_sparsity(&m, 0.0), vec![100.0, 50.0, 50.0]);
        assert_eq!(instance_sparsity(&Matrix::filled(3, 4, 0.2), 0.0), vec![100.0; 3]);
        assert_eq!(instance_sparsity(&Matrix::zeros(2, 4), 0.0), vec![0.0; 2]);
    }

    #[test]
    fn histogram_counts_everything() {
        let h = sparsity_histogram(&[0.0, 5.0, 10.0, 55.0, 100.0, 99.9], 10);
        assert_eq!(h.iter().sum::<usize>(), 6);
        assert_eq!(h[0], 2);
        assert_eq!(h[1], 1);
        assert_eq!(h[9], 2);
    }

    #[test]
    fn overlap_examples() {
        assert_eq!(activation_overlap(&[1.0, 0.0, 2.0], &[3.0, 0.0, 0.0], 0.0).unwrap(), 1);
        assert_eq!(activation_overlap(&[1.0, 0.0], &[0.0, 1.0], 0.0).unwrap(), 0);
        assert_eq!(activation_overlap(&[1.0; 4], &[1.0; 4], 0.0).unwrap(), 4);
        assert!(activation_overlap(&[1.0], &[1.0, 2.0], 0.0).is_err());
        assert_eq!(mean_pairwise_overlap(&[vec![1.0; 10], vec![1.0; 10]], 0.0).unwrap(), 10.0);
        // pairwise overlaps 2, 4, 6
        let a = vec![1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 0.0, 0.0];
        let b = vec![1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 1.0];
        let c = vec![1.0, 1.0, 1.0, 1.0, 0.0, 0.0, 1.0, 1.0];
        let pairs = pairwise_overlaps(&[a.clone(), b.clone(), c.clone()], 0.0).unwrap();
        assert_eq!(pairs, vec![(0, 1, 2), (0, 2, 4), (1, 2, 4)]);
        let one_hot: Vec<Vec<f64>> = (0..4).map(|i| (0..4).map(|j| (i == j) as u8 as f64).collect()).collect();
        assert_eq!(mean_pairwise_overlap(&one_hot, 0.0).unwrap(), 0.0);
        assert!(mean_pairwise_overlap(&[a], 0.0).is_err());
    }

    #[test]
    fn mean_of_listed_overlaps() {
        let reps = vec![
            vec![1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0],
            vec![1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0],
            vec![1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0],
        ];
        // overlaps 2, 6, 6
        assert!((mean_pairwise_overlap(&reps, 0.0).unwrap() - 14.0 / 3.0).abs() < 1e-12);
    }

    fn random_matrix(rng: &mut SimRng, r: usize, c: usize) -> Matrix {
        let data = (0..r * c).map(|_| (rng.random::<f64>() - 0.6).max(0.0)).collect();
        Matrix::from_vec(r, c, data).unwrap()
    }

    proptest! {
        #[test]
        fn sparsity_is_permutation_invariant(seed in 0u64..500, shift in 1usize..7) {
            let mut rng = rng_from_seed(seed);
            let m = random_matrix(&mut rng, 6, 7);
            let base = instance_sparsity(&m, 0.0);
            let cols: Vec<usize> = (0..7).map(|j| (j + shift) % 7).collect();
            let mut permuted = Matrix::zeros(6, 7);
            for r in 0..6 {
                for (j, &c) in cols.iter().enumerate() {
                    permuted.set((r + shift) % 6, j, m.get(r, c));
                }
            }
            let p = instance_sparsity(&permuted, 0.0);
            for r in 0..6 {
                prop_assert_eq!(base[r], p[(r + shift) % 6]);
            }
        }

        #[test]
        fn overlap_properties(seed in 0u64..500) {
            let mut rng = rng_from_seed(seed);
            let m = random_matrix(&mut rng, 2, 12);
            let (a, b) = (m.row(0), m.row(1));
            let active = |v: &[f64]| v.iter().filter(|&&x| x > 0.0).count();
            prop_assert_eq!(activation_overlap(a, a, 0.0).unwrap(), active(a));
            prop_assert_eq!(activation_overlap(a, b, 0.0).unwrap(), activation_overlap(b, a, 0.0).unwrap());
            prop_assert!(activation_overlap(a, b, 0.0).unwrap() <= active(a).min(active(b)));
        }
    }

    #[test]
    fn heatmap_matches_pointwise_evaluation() {
        let mut rng = rng_from_seed(3);
        let params = he_init(&[2, 6, 8], Activation::Relu, &mut rng).unwrap();
        let maps = heatmap(&params, Domain::PuddleWorld, &[0, 5], 11).unwrap();
        assert_eq!(maps.len(), 2);
        assert_eq!(maps[0].values.shape(), (11, 11));
        for _ in 0..10 {
            let (i, j) = (rng.random_range(0..11), rng.random_range(0..11));
            let direct = params.represent(&[i as f64 / 10.0, j as f64 / 10.0]).unwrap();
            assert!((maps[1].values.get(i, j) - direct[5]).abs() < 1e-12);
        }
        let mut zero = params.clone();
        for s in zero.slices_mut() {
            s.fill(0.0);
        }
        let maps = heatmap(&zero, Domain::MountainCar, &[1], 4).unwrap();
        assert!(maps[0].values.as_slice().iter().all(|&v| v == 0.0));
        assert!(heatmap(&params, Domain::Acrobot, &[0], 4).is_err());
        assert!(heatmap(&params, Domain::PuddleWorld, &[8], 4).is_err());
    }

    #[test]
    fn ema_examples() {
        assert_eq!(ema_smooth(&[3.0; 5], 0.1), vec![3.0; 5]);
        assert_eq!(ema_smooth(&[0.0, 10.0], 0.1), vec![0.0, 1.0]);
        let mut step = vec![0.0];
        step.extend(vec![1.0; 44]);
        let s = ema_smooth(&step, 0.1);
        assert!((s[44] - 1.0).abs() < 0.01);
        assert!(ema_smooth(&[], 0.1).is_empty());
    }

    /// Walk right along 0..len; reaching `len` ends the episode.
    struct Line {
        len: usize,
        noisy: bool,
    }

    impl Episodic for Line {
        type State = usize;

        fn num_actions(&self) -> usize {
            2
        }

        fn transition(&self, s: &usize, a: usize, rng: &mut SimRng) -> Result<(f64, usize, bool)> {
            let slip = self.noisy && rng.random::<f64>() < 0.5;
            let next = if a == 1 && !slip { s + 1 } else { *s };
            Ok((-1.0, next, next >= self.len))
        }
    }

    struct Right;

    impl Policy<usize> for Right {
        fn act(&self, _: &usize, _: &mut SimRng) -> Result<usize> {
            Ok(1)
        }
    }

    #[test]
    fn monte_carlo_on_deterministic_chain() {
        let env = Line { len: 3, noisy: false };
        let est = monte_carlo_value(&env, &Right, &0, 1, 20, 1000, 1).unwrap();
        assert_eq!(est.mean, -3.0);
        assert_eq!(est.std_error, 0.0);
        let est = monte_carlo_value(&env, &Right, &0, 0, 5, 1000, 1).unwrap();
        assert_eq!(est.mean, -4.0);
        assert!(monte_carlo_value(&env, &Right, &0, 1, 0, 1000, 1).is_err());
        let capped = monte_carlo_value(&env, &Right, &0, 0, 1, 2, 1).unwrap();
        assert_eq!(capped.mean, -2.0);
    }

    #[test]
    fn standard_error_shrinks_with_rollouts() {
        let env = Line { len: 5, noisy: true };
        let small = monte_carlo_value(&env, &Right, &0, 1, 4000, 1000, 9).unwrap();
        let large = monte_carlo_value(&env, &Right, &0, 1, 8000, 1000, 9).unwrap();
        let ratio = large.std_error / small.std_error;
        assert!((ratio - 0.5f64.sqrt()).abs() < 0.05, "ratio {ratio}");
        // geometric number of attempts per step: mean 2 * len steps
        assert!((large.mean + 10.0).abs() < 4.0 * large.std_error);
    }
}
