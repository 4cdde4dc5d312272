//! Ensembled inference and post-hoc analysis passes.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::graphstore::{multi_source_bfs, Dataset};
use crate::losses::ProbabilityMatrix;
use crate::models::{predict_proba, Model};
use crate::numerics::GradTensor;
use crate::rng::substream_rng;
use crate::sampler::{sample_blocks, BlockStack, FanoutSpec};

fn view_blocks(
    ds: &Dataset,
    targets: &[usize],
    fanouts: &FanoutSpec,
    seed: u64,
    view: u64,
) -> Result<BlockStack> {
    sample_blocks(&ds.graph, targets, fanouts, &mut substream_rng(seed, "se-view", &[view]))
}

fn view_probabilities(model: &Model, ds: &Dataset, blocks: &BlockStack) -> Result<Array2<f64>> {
    let logits = model.forward_detached(blocks, &ds.features)?;
    Ok(predict_proba(&GradTensor::constant(logits))?.values().to_owned())
}

/// Averages class probabilities over `n_views` independently sampled
/// neighborhoods of the same model. Row `i` belongs to `targets[i]`.
pub fn self_ensemble_predict(
    model: &Model,
    ds: &Dataset,
    targets: &[usize],
    fanouts: &FanoutSpec,
    n_views: usize,
    seed: u64,
) -> Result<ProbabilityMatrix> {
    if n_views == 0 {
        return Err(Error::Config("n_views must be >= 1".into()));
    }
    let mut mean: Option<Array2<f64>> = None;
    for v in 0..n_views {
        let blocks = view_blocks(ds, targets, fanouts, seed, v as u64)?;
        let probs = view_probabilities(model, ds, &blocks)?;
        mean = Some(match mean {
            None => probs,
            Some(acc) => acc + probs,
        });
    }
    let mean = mean.expect("n_views >= 1") / n_views as f64;
    ProbabilityMatrix::new(GradTensor::constant(mean))
}

/// Fraction of rows whose argmax matches `labels`. Empty input counts as 0.
pub fn accuracy(probs: &ProbabilityMatrix, labels: &[i64]) -> f64 {
    let pred = probs.argmax_rows();
    if pred.len() != labels.len() || labels.is_empty() {
        return 0.0;
    }
    let hits = pred.iter().zip(labels).filter(|(p, l)| **p as i64 == **l).count();
    hits as f64 / labels.len() as f64
}

/// Accuracy for every `(model count, view count)` combination.
///
/// Cell `[i][j]` (1-based counts `i+1` models, `j+1` views) ensembles the
/// first `i+1` models over the first `j+1` views. All models score the
/// same sampled neighborhoods: view `v` uses one shared block stack, so
/// the comparison isolates ensembling from sampling noise.
pub fn grid_evaluate(
    models: &[Model],
    ds: &Dataset,
    targets: &[usize],
    fanouts: &FanoutSpec,
    max_views: usize,
    seed: u64,
) -> Result<Array2<f64>> {
    if models.is_empty() {
        return Err(Error::Config("grid_evaluate needs at least one model".into()));
    }
    if max_views == 0 {
        return Err(Error::Config("max_views must be >= 1".into()));
    }
    let labels: Vec<i64> = targets.iter().map(|&v| ds.labels[v]).collect();
    // probs[m][v]: model m's probabilities on shared view v.
    let mut probs: Vec<Vec<Array2<f64>>> = vec![Vec::with_capacity(max_views); models.len()];
    for v in 0..max_views {
        let blocks = view_blocks(ds, targets, fanouts, seed, v as u64)?;
        for (m, model) in models.iter().enumerate() {
            probs[m].push(view_probabilities(model, ds, &blocks)?);
        }
    }
    let mut grid = Array2::zeros((models.len(), max_views));
    for m in 0..models.len() {
        // Sum over models 0..=m and views 0..=v, extended one view at a time.
        let mut acc = Array2::zeros(probs[0][0].dim());
        for v in 0..max_views {
            for model_probs in probs.iter().take(m + 1) {
                acc = acc + &model_probs[v];
            }
            let mean = &acc / ((m + 1) * (v + 1)) as f64;
            let pm = ProbabilityMatrix::new(GradTensor::constant(mean))?;
            grid[[m, v]] = accuracy(&pm, &labels);
        }
    }
    Ok(grid)
}

/// Accuracy bucketed by BFS hop distance from the training set.
#[derive(Clone, Debug, PartialEq)]
pub struct DistanceBucket {
    /// Hops from the nearest training node; `None` means unreachable.
    pub distance: Option<usize>,
    pub count: usize,
    pub accuracy: f64,
}

/// Buckets `predictions` (aligned with `ds.split.test`) by hop distance
/// from the training set. Buckets are sorted ascending, unreachable last.
pub fn accuracy_by_distance(
    predictions: &ProbabilityMatrix,
    ds: &Dataset,
) -> Result<Vec<DistanceBucket>> {
    let test = &ds.split.test;
    if predictions.dim().0 != test.len() {
        return Err(Error::Shape(format!(
            "{} prediction rows for {} test nodes",
            predictions.dim().0,
            test.len()
        )));
    }
    let dist = multi_source_bfs(&ds.graph, &ds.split.train)?;
    let pred = predictions.argmax_rows();
    use std::collections::BTreeMap;
    // Option<usize> ordering puts None first; map it to a sortable key with
    // unreachable (None) last.
    let mut hits: BTreeMap<(bool, usize), (usize, usize)> = BTreeMap::new();
    for (row, &node) in test.iter().enumerate() {
        let key = match dist[node] {
            Some(d) => (false, d),
            None => (true, 0),
        };
        let entry = hits.entry(key).or_insert((0, 0));
        entry.0 += 1;
        if pred[row] as i64 == ds.labels[node] {
            entry.1 += 1;
        }
    }
    Ok(hits
        .into_iter()
        .map(|((unreachable, d), (count, correct))| DistanceBucket {
            distance: if unreachable { None } else { Some(d) },
            count,
            accuracy: correct as f64 / count as f64,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::tests::{base_train_cfg, gcn2, two_clique_dataset};
    use crate::engine::train;
    use crate::graphstore::{build_csr, Dataset, Split};
    use crate::numerics::GradTensor;
    use crate::rng::substream_seed;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn trained_pair(seed: u64) -> (Model, Dataset, FanoutSpec) {
        let ds = two_clique_dataset(seed);
        let cfg = base_train_cfg(seed);
        let (model, _) = train(&ds, &gcn2(), &cfg, "t").unwrap();
        (model, ds, cfg.fanouts)
    }

    #[test]
    fn self_ensemble_rows_are_probability_rows() {
        let (model, ds, fanouts) = trained_pair(21);
        let pm = self_ensemble_predict(&model, &ds, &ds.split.test, &fanouts, 3, 99).unwrap();
        assert_eq!(pm.dim(), (ds.split.test.len(), 2));
        for row in pm.values().rows() {
            let sum: f64 = row.sum();
            assert_abs_diff_eq!(sum, 1.0, epsilon = 1e-9);
            assert!(row.iter().all(|&p| p >= 0.0));
        }
    }

    #[test]
    fn covering_fanout_views_collapse_to_full_graph_prediction() {
        // With fanouts >= max degree every view sees the whole neighborhood,
        // so (x + x) / 2 == x bitwise and n_views stops mattering.
        let (model, ds, _) = trained_pair(22);
        let covering = FanoutSpec::all(2);
        let one = self_ensemble_predict(&model, &ds, &ds.split.test, &covering, 1, 7).unwrap();
        let four = self_ensemble_predict(&model, &ds, &ds.split.test, &covering, 4, 7).unwrap();
        for (a, b) in one.values().iter().zip(four.values().iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn self_ensemble_is_seed_deterministic() {
        let (model, ds, fanouts) = trained_pair(23);
        let a = self_ensemble_predict(&model, &ds, &ds.split.test, &fanouts, 2, 5).unwrap();
        let b = self_ensemble_predict(&model, &ds, &ds.split.test, &fanouts, 2, 5).unwrap();
        assert_eq!(a.values(), b.values());
        let c = self_ensemble_predict(&model, &ds, &ds.split.test, &fanouts, 2, 6).unwrap();
        assert_ne!(a.values(), c.values(), "different seeds must sample different views");
    }

    #[test]
    fn self_ensemble_rejects_zero_views() {
        let (model, ds, fanouts) = trained_pair(24);
        assert!(matches!(
            self_ensemble_predict(&model, &ds, &ds.split.test, &fanouts, 0, 5),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn grid_corner_matches_single_prediction() {
        // Cell (1 model, 1 view) and self_ensemble_predict(n = 1) draw the
        // same "se-view" substream, so their accuracies agree exactly.
        let (model, ds, fanouts) = trained_pair(25);
        let grid =
            grid_evaluate(std::slice::from_ref(&model), &ds, &ds.split.test, &fanouts, 3, 11)
                .unwrap();
        let single = self_ensemble_predict(&model, &ds, &ds.split.test, &fanouts, 1, 11).unwrap();
        let labels: Vec<i64> = ds.split.test.iter().map(|&v| ds.labels[v]).collect();
        assert_eq!(grid[[0, 0]], accuracy(&single, &labels));
        assert_eq!(grid.dim(), (1, 3));
    }

    #[test]
    fn grid_is_deterministic_and_in_range() {
        let ds = two_clique_dataset(26);
        let cfg = base_train_cfg(26);
        let mut models = Vec::new();
        for s in 0..2u64 {
            let mut c = cfg.clone();
            c.seed = substream_seed(26, "model-seed", &[s]);
            models.push(train(&ds, &gcn2(), &c, "m").unwrap().0);
        }
        let g1 = grid_evaluate(&models, &ds, &ds.split.test, &cfg.fanouts, 2, 3).unwrap();
        let g2 = grid_evaluate(&models, &ds, &ds.split.test, &cfg.fanouts, 2, 3).unwrap();
        assert_eq!(g1, g2);
        assert!(g1.iter().all(|a| (0.0..=1.0).contains(a)));
        assert_eq!(g1.dim(), (2, 2));
    }

    #[test]
    fn grid_rejects_empty_inputs() {
        let (model, ds, fanouts) = trained_pair(27);
        assert!(matches!(
            grid_evaluate(&[], &ds, &ds.split.test, &fanouts, 2, 3),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            grid_evaluate(std::slice::from_ref(&model), &ds, &ds.split.test, &fanouts, 0, 3),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn accuracy_counts_argmax_hits() {
        let pm = ProbabilityMatrix::new(GradTensor::constant(array![
            [0.9, 0.1],
            [0.2, 0.8],
            [0.6, 0.4]
        ]))
        .unwrap();
        assert_abs_diff_eq!(accuracy(&pm, &[0, 1, 1]), 2.0 / 3.0, epsilon = 1e-15);
        assert_eq!(accuracy(&pm, &[0, 1]), 0.0, "length mismatch scores zero");
    }

    fn path_dataset() -> Dataset {
        // 0 - 1 - 2 - 3, node 4 isolated. Train {0}; test {1, 2, 3, 4}.
        let graph = build_csr(5, &[(0, 1), (1, 2), (2, 3)], true).unwrap();
        let features = Array2::zeros((5, 1));
        let labels = vec![0i64, 0, 1, 1, 0];
        let split = Split { train: vec![0], val: vec![], test: vec![1, 2, 3, 4] };
        Dataset::new(graph, features, labels, 2, split).unwrap()
    }

    #[test]
    fn distance_buckets_follow_bfs_hops() {
        let ds = path_dataset();
        // Predictions: node 1 -> 0 (hit), 2 -> 0 (miss), 3 -> 1 (hit),
        // 4 -> 1 (miss).
        let pm = ProbabilityMatrix::new(GradTensor::constant(array![
            [0.9, 0.1],
            [0.8, 0.2],
            [0.3, 0.7],
            [0.4, 0.6]
        ]))
        .unwrap();
        let buckets = accuracy_by_distance(&pm, &ds).unwrap();
        assert_eq!(buckets.len(), 4);
        assert_eq!(buckets[0], DistanceBucket { distance: Some(1), count: 1, accuracy: 1.0 });
        assert_eq!(buckets[1], DistanceBucket { distance: Some(2), count: 1, accuracy: 0.0 });
        assert_eq!(buckets[2], DistanceBucket { distance: Some(3), count: 1, accuracy: 1.0 });
        assert_eq!(buckets[3], DistanceBucket { distance: None, count: 1, accuracy: 0.0 });
        let total: usize = buckets.iter().map(|b| b.count).sum();
        assert_eq!(total, ds.split.test.len(), "buckets partition the test set");
    }

    #[test]
    fn distance_rejects_misaligned_predictions() {
        let ds = path_dataset();
        let pm = ProbabilityMatrix::new(GradTensor::constant(array![[0.9, 0.1]])).unwrap();
        assert!(matches!(accuracy_by_distance(&pm, &ds), Err(Error::Shape(_))));
    }
}
