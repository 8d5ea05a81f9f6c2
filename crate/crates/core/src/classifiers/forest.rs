use super::FitSet;
use crate::numerics::Rng;

pub(crate) const DEFAULT_TREES: usize = 100;
pub(crate) const LEAF: u32 = u32::MAX;

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct ForestConfig {
    pub trees: usize,
    /// Candidate features drawn per node.
    pub candidates: usize,
    /// Smallest sample count either child of a split may have.
    pub min_leaf: usize,
    pub seed: u64,
}

/// Extremely randomized trees, every tree grown on the full sample.
///
/// Nodes of all trees live in flat arrays. A leaf has `feature == LEAF` and
/// `left` pointing at its class distribution in `leaf_dist`.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Forest {
    pub n_classes: usize,
    pub roots: Vec<usize>,
    pub feature: Vec<u32>,
    pub threshold: Vec<f64>,
    pub left: Vec<usize>,
    pub right: Vec<usize>,
    pub leaf_dist: Vec<f64>,
}

fn gini(counts: &[usize], n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let n = n as f64;
    1.0 - counts.iter().map(|&c| (c as f64 / n).powi(2)).sum::<f64>()
}

impl Forest {
    pub fn fit(set: &FitSet, config: ForestConfig) -> Self {
        let mut forest = Forest {
            n_classes: set.n_slots,
            roots: Vec::with_capacity(config.trees),
            feature: Vec::new(),
            threshold: Vec::new(),
            left: Vec::new(),
            right: Vec::new(),
            leaf_dist: Vec::new(),
        };
        for t in 0..config.trees {
            let mut rng = Rng::derived(config.seed, t as u64);
            let root = forest.grow(set, &config, &mut rng);
            forest.roots.push(root);
        }
        forest
    }

    fn push_node(&mut self) -> usize {
        self.feature.push(LEAF);
        self.threshold.push(0.0);
        self.left.push(0);
        self.right.push(0);
        self.feature.len() - 1
    }

    fn make_leaf(&mut self, node: usize, counts: &[usize], n: usize) {
        self.feature[node] = LEAF;
        self.left[node] = self.leaf_dist.len();
        self.leaf_dist
            .extend(counts.iter().map(|&c| c as f64 / n as f64));
    }

    fn grow(&mut self, set: &FitSet, config: &ForestConfig, rng: &mut Rng) -> usize {
        let dim = set.xs.first().map_or(0, Vec::len);
        let root = self.push_node();
        let mut work = vec![(root, (0..set.xs.len()).collect::<Vec<usize>>())];
        while let Some((node, idx)) = work.pop() {
            let mut counts = vec![0usize; self.n_classes];
            for &i in &idx {
                counts[set.slots[i]] += 1;
            }
            let pure = counts.iter().filter(|&&c| c > 0).count() <= 1;
            if pure || idx.len() < 2 * config.min_leaf {
                self.make_leaf(node, &counts, idx.len());
                continue;
            }
            let varying: Vec<(usize, f64, f64)> = (0..dim)
                .filter_map(|f| {
                    let (lo, hi) = idx
                        .iter()
                        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &i| {
                            (lo.min(set.xs[i][f]), hi.max(set.xs[i][f]))
                        });
                    (hi > lo).then_some((f, lo, hi))
                })
                .collect();
            if varying.is_empty() {
                self.make_leaf(node, &counts, idx.len());
                continue;
            }
            let parent = gini(&counts, idx.len());
            let mut best: Option<(f64, usize, f64)> = None;
            for pick in rng.sample_indices(varying.len(), config.candidates.min(varying.len())) {
                let (f, lo, hi) = varying[pick];
                let cut = rng.uniform_in(lo, hi);
                let mut left_counts = vec![0usize; self.n_classes];
                let mut n_left = 0;
                for &i in &idx {
                    if set.xs[i][f] <= cut {
                        left_counts[set.slots[i]] += 1;
                        n_left += 1;
                    }
                }
                let n_right = idx.len() - n_left;
                if n_left < config.min_leaf || n_right < config.min_leaf {
                    continue;
                }
                let right_counts: Vec<usize> = counts
                    .iter()
                    .zip(&left_counts)
                    .map(|(a, b)| a - b)
                    .collect();
                let n = idx.len() as f64;
                let gain = parent
                    - n_left as f64 / n * gini(&left_counts, n_left)
                    - n_right as f64 / n * gini(&right_counts, n_right);
                if best.is_none_or(|(g, _, _)| gain > g) {
                    best = Some((gain, f, cut));
                }
            }
            let Some((_, f, cut)) = best else {
                self.make_leaf(node, &counts, idx.len());
                continue;
            };
            let (l_idx, r_idx): (Vec<usize>, Vec<usize>) =
                idx.iter().partition(|&&i| set.xs[i][f] <= cut);
            let (l, r) = (self.push_node(), self.push_node());
            self.feature[node] = f as u32;
            self.threshold[node] = cut;
            self.left[node] = l;
            self.right[node] = r;
            work.push((r, r_idx));
            work.push((l, l_idx));
        }
        root
    }

    /// Leaf class distribution averaged over trees.
    pub fn scores(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n_classes];
        for &root in &self.roots {
            let mut node = root;
            while self.feature[node] != LEAF {
                node = if x[self.feature[node] as usize] <= self.threshold[node] {
                    self.left[node]
                } else {
                    self.right[node]
                };
            }
            let dist = &self.leaf_dist[self.left[node]..self.left[node] + self.n_classes];
            out.iter_mut().zip(dist).for_each(|(o, d)| *o += d);
        }
        let m = self.roots.len() as f64;
        out.iter_mut().for_each(|o| *o /= m);
        out
    }
}
