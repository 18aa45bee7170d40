//! Train/val/test splitting and stratified label subsampling.

use rand::seq::SliceRandom;

use super::types::{Corpus, LabeledTask};
use crate::error::{Error, Result};
use crate::seeding::rng_for;

/// A named partition of user ids.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitSpec {
    pub name: String,
    pub seed: u64,
    pub train: Vec<u64>,
    pub val: Vec<u64>,
    pub test: Vec<u64>,
}

impl SplitSpec {
    pub fn len(&self) -> usize {
        self.train.len() + self.val.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Split ratios as integer weights, e.g. `(8, 1, 1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitRatios {
    pub unlabeled: (usize, usize, usize),
    pub labeled: (usize, usize, usize),
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self { unlabeled: (8, 1, 1), labeled: (1, 1, 1) }
    }
}

/// The two populations are split separately: users without labels feed
/// pretraining, labeled users feed the probes.
#[derive(Debug, Clone, PartialEq)]
pub struct Splits {
    pub unlabeled: SplitSpec,
    pub labeled: SplitSpec,
}

/// Exact proportional part sizes: floor each share, then hand out the
/// remainder to parts in order. `(10, (8,1,1))` gives `{8, 1, 1}` and
/// `(12, (1,1,1))` gives `{4, 4, 4}`.
fn part_sizes(n: usize, ratio: (usize, usize, usize)) -> Result<[usize; 3]> {
    let weights = [ratio.0, ratio.1, ratio.2];
    let total: usize = weights.iter().sum();
    if total == 0 {
        return Err(Error::Split("ratio weights sum to zero".into()));
    }
    let mut sizes = [0usize; 3];
    for (i, w) in weights.iter().enumerate() {
        sizes[i] = n * w / total;
    }
    let mut rem = n - sizes.iter().sum::<usize>();
    let mut i = 0;
    while rem > 0 {
        sizes[i % 3] += 1;
        rem -= 1;
        i += 1;
    }
    Ok(sizes)
}

fn split_ids(name: &str, mut ids: Vec<u64>, ratio: (usize, usize, usize), seed: u64) -> Result<SplitSpec> {
    let sizes = part_sizes(ids.len(), ratio)?;
    if sizes.iter().any(|&s| s == 0) {
        return Err(Error::Split(format!(
            "{name}: {} users cannot fill ratio {ratio:?} without an empty part",
            ids.len()
        )));
    }
    let mut rng = rng_for(seed, "split", &[name.len() as u64]);
    ids.shuffle(&mut rng);
    let mut train: Vec<u64> = ids[..sizes[0]].to_vec();
    let mut val: Vec<u64> = ids[sizes[0]..sizes[0] + sizes[1]].to_vec();
    let mut test: Vec<u64> = ids[sizes[0] + sizes[1]..].to_vec();
    train.sort_unstable();
    val.sort_unstable();
    test.sort_unstable();
    Ok(SplitSpec { name: name.to_string(), seed, train, val, test })
}

/// Partition corpus users into unlabeled and labeled splits.
///
/// A user is "labeled" when any task labels them. The two populations are
/// disjoint by construction and each is shuffled and cut to exact ratio
/// sizes.
pub fn split(corpus: &Corpus, tasks: &[LabeledTask], ratios: SplitRatios, seed: u64) -> Result<Splits> {
    let mut labeled_ids: Vec<u64> = Vec::new();
    for task in tasks {
        labeled_ids.extend(task.labels.keys().copied());
    }
    labeled_ids.sort_unstable();
    labeled_ids.dedup();

    let all_known: std::collections::BTreeSet<u64> = corpus.users.iter().map(|u| u.user_id).collect();
    if let Some(stranger) = labeled_ids.iter().find(|id| !all_known.contains(id)) {
        return Err(Error::Split(format!("labeled user {stranger} is not in the corpus")));
    }

    let labeled_set: std::collections::BTreeSet<u64> = labeled_ids.iter().copied().collect();
    let unlabeled_ids: Vec<u64> =
        corpus.users.iter().map(|u| u.user_id).filter(|id| !labeled_set.contains(id)).collect();

    Ok(Splits {
        unlabeled: split_ids("unlabeled", unlabeled_ids, ratios.unlabeled, seed)?,
        labeled: split_ids("labeled", labeled_ids, ratios.labeled, seed)?,
    })
}

/// Keep a stratified fraction of a task's labels.
///
/// Selection is per class and nested: the set kept at a smaller fraction is
/// a subset of the set kept at any larger fraction (with the same seed),
/// and no class present in the input ever empties.
pub fn subsample_labels(task: &LabeledTask, fraction: f64, seed: u64) -> Result<LabeledTask> {
    if !(0.0 < fraction && fraction <= 1.0) {
        return Err(Error::Validation(format!("fraction {fraction} outside (0, 1]")));
    }
    let mut by_class: Vec<Vec<u64>> = vec![Vec::new(); task.classes];
    for (&user, &label) in &task.labels {
        by_class[label].push(user);
    }
    let mut kept = std::collections::BTreeMap::new();
    for (class, mut ids) in by_class.into_iter().enumerate() {
        if ids.is_empty() {
            continue;
        }
        // A fixed shuffle per (task, class) gives each id a stable priority;
        // taking a prefix makes smaller fractions nest inside larger ones.
        let mut rng = rng_for(seed, &format!("subsample:{}", task.name), &[class as u64]);
        ids.shuffle(&mut rng);
        let keep = ((ids.len() as f64 * fraction).round() as usize).clamp(1, ids.len());
        for &id in &ids[..keep] {
            kept.insert(id, class);
        }
    }
    Ok(LabeledTask { name: task.name.clone(), classes: task.classes, labels: kept })
}
