//! Randomized split selection.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Dataset;

/// Score used to rank the K random candidate splits at a node.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitScore {
    /// Reduction in Shannon entropy of the class labels.
    #[default]
    InformationGain,
    /// Information gain divided by the mean of the split entropy and the
    /// class entropy.
    NormalizedGain,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Split {
    pub feature: usize,
    pub cut: f64,
    /// Value of the configured score.
    pub score: f64,
    /// Weighted entropy decrease, `n * H(S) - n_l * H(S_l) - n_r * H(S_r)`.
    pub impurity_decrease: f64,
}

/// Node-level stopping and candidate settings.
#[derive(Clone, Copy, Debug)]
pub struct SplitRule {
    pub k_features: usize,
    pub n_min: usize,
    pub score: SplitScore,
}

impl SplitRule {
    /// Purity stops growth only when splits look at labels. With K = 1 the
    /// tree shape must not depend on labels at all, so it is grown until
    /// `n_min` or constant features.
    fn stops_on_purity(&self) -> bool {
        self.k_features > 1
    }
}

fn entropy(pos: usize, n: usize) -> f64 {
    if n == 0 || pos == 0 || pos == n {
        return 0.0;
    }
    let p = pos as f64 / n as f64;
    let q = 1.0 - p;
    -(p * p.log2() + q * q.log2())
}

/// Draws a cut strictly inside `(lo, hi)`.
fn draw_cut<R: Rng + ?Sized>(lo: f64, hi: f64, rng: &mut R) -> f64 {
    loop {
        let u: f64 = rng.random();
        let cut = lo + u * (hi - lo);
        if cut > lo && cut < hi {
            return cut;
        }
    }
}

/// Picks a random split for the node holding rows `idx`, or `None` for a leaf.
///
/// K distinct candidate features are drawn uniformly among those that are
/// non-constant in the node (all of them when fewer than K remain), each gets
/// one uniform cut-point in its `(min, max)`, and the best-scoring candidate
/// wins. Ties go to the lowest feature index, then the smaller cut. A row goes
/// left when its value is `< cut`.
pub fn pick_split<R: Rng + ?Sized>(data: &Dataset, idx: &[u32], rule: &SplitRule, rng: &mut R) -> Option<Split> {
    let n = idx.len();
    if n == 0 || n < rule.n_min {
        return None;
    }
    let pos = idx.iter().filter(|&&i| data.labels[i as usize] == 1).count();
    if rule.stops_on_purity() && (pos == 0 || pos == n) {
        return None;
    }

    let mut candidates: Vec<(usize, f64, f64)> = Vec::with_capacity(data.n_features());
    for (f, column) in data.columns.iter().enumerate() {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for &i in idx {
            let v = column[i as usize];
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if lo < hi {
            candidates.push((f, lo, hi));
        }
    }
    if candidates.is_empty() {
        return None;
    }

    let k = rule.k_features.min(candidates.len());
    // Partial Fisher-Yates: the first k slots become a uniform k-subset.
    for j in 0..k {
        let pick = rng.random_range(j..candidates.len());
        candidates.swap(j, pick);
    }
    let chosen = &candidates[..k];

    let parent_h = entropy(pos, n);
    let mut best: Option<Split> = None;
    for &(feature, lo, hi) in chosen {
        let cut = draw_cut(lo, hi, rng);
        let column = &data.columns[feature];
        let (mut n_left, mut pos_left) = (0usize, 0usize);
        for &i in idx {
            if column[i as usize] < cut {
                n_left += 1;
                pos_left += data.labels[i as usize] as usize;
            }
        }
        let (n_right, pos_right) = (n - n_left, pos - pos_left);
        let decrease = n as f64 * parent_h
            - n_left as f64 * entropy(pos_left, n_left)
            - n_right as f64 * entropy(pos_right, n_right);
        let gain = decrease / n as f64;
        let score = match rule.score {
            SplitScore::InformationGain => gain,
            SplitScore::NormalizedGain => {
                let split_h = entropy(n_left, n);
                let denom = split_h + parent_h;
                if denom > 0.0 {
                    2.0 * gain / denom
                } else {
                    0.0
                }
            }
        };
        let candidate = Split { feature, cut, score, impurity_decrease: decrease };
        best = match best {
            None => Some(candidate),
            Some(b) => {
                let better = score > b.score
                    || (score == b.score
                        && (feature < b.feature || (feature == b.feature && cut < b.cut)));
                Some(if better { candidate } else { b })
            }
        };
    }
    best
}
