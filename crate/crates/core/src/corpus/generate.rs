//! Synthetic corpus generator.
//!
//! Commands follow a Zipf popularity law, modulated per user by archetype
//! affinities (which archetypes a user works in) and an experience level
//! that widens the reachable vocabulary. Events arrive in bursts: dense
//! runs of activity separated by idle gaps at least an order of magnitude
//! longer than any within-burst gap, so burst membership is the ground
//! truth for session segmentation.
//!
//! All draws flow through a per-user RNG derived from `(seed, "user", id)`,
//! making output independent of iteration order and bit-reproducible.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::types::{CommandEvent, Corpus, LabeledTask, SessionTruth, UserSequence};
use crate::error::{Error, Result};
use crate::seeding::rng_for;

#[derive(Debug, Clone, PartialEq)]
pub struct GenConfig {
    pub n_users: usize,
    pub vocab_size: usize,
    /// Number of archetypes; command `c` belongs to archetype `c % archetype_count`.
    pub archetype_count: usize,
    /// Zipf exponent for base command popularity.
    pub zipf_exponent: f64,
    /// Fraction of users that receive task labels.
    pub labeled_fraction: f64,
    /// Mean bursts per user; two bursts are always guaranteed.
    pub bursts_per_user: f64,
    /// Mean events per burst (each burst keeps at least 3).
    pub events_per_burst: f64,
    /// Every user history is topped up to at least this many events.
    pub min_events: usize,
    /// Uniform bounds on the gap between consecutive events in a burst (s).
    pub intra_burst_gap: (f64, f64),
    /// Uniform bounds on the idle gap between bursts (s).
    pub inter_burst_gap: (f64, f64),
    /// Multiplier applied to commands of archetypes the user works in.
    pub archetype_boost: f64,
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            n_users: 2000,
            vocab_size: 200,
            archetype_count: 6,
            zipf_exponent: 1.1,
            labeled_fraction: 0.3,
            bursts_per_user: 5.0,
            events_per_burst: 14.0,
            min_events: 50,
            intra_burst_gap: (1.0, 3.0),
            inter_burst_gap: (120.0, 300.0),
            archetype_boost: 8.0,
            seed: 0,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_users == 0 || self.vocab_size == 0 || self.archetype_count == 0 {
            return Err(Error::Config("n_users, vocab_size, archetype_count must be positive".into()));
        }
        if self.archetype_count > self.vocab_size {
            return Err(Error::Config("more archetypes than commands".into()));
        }
        if !(0.0..=1.0).contains(&self.labeled_fraction) {
            return Err(Error::Config("labeled_fraction must lie in [0, 1]".into()));
        }
        let (ilo, ihi) = self.intra_burst_gap;
        let (blo, bhi) = self.inter_burst_gap;
        if !(0.0 < ilo && ilo <= ihi && 0.0 < blo && blo <= bhi) {
            return Err(Error::Config("gap bounds must be positive and ordered".into()));
        }
        // Bursts must be unambiguous: idle gaps dominate in-burst gaps.
        if blo < 10.0 * ihi {
            return Err(Error::Config(format!(
                "inter-burst gap lower bound {blo} must be at least 10x the intra-burst upper bound {ihi}"
            )));
        }
        if self.bursts_per_user < 2.0 {
            return Err(Error::Config("bursts_per_user must be at least 2".into()));
        }
        Ok(())
    }
}

/// Generator output: the corpus, its labeling tasks, and the burst
/// boundaries that segmentation is expected to recover.
#[derive(Debug, Clone, PartialEq)]
pub struct Generated {
    pub corpus: Corpus,
    pub tasks: Vec<LabeledTask>,
    pub truth: SessionTruth,
}

/// Working style of one user with respect to one archetype.
#[derive(Clone, Copy, PartialEq)]
enum Affinity {
    NotUsed,
    PlannedOnly,
    Used,
}

impl Affinity {
    fn label(self) -> usize {
        match self {
            Affinity::NotUsed => 0,
            Affinity::PlannedOnly => 1,
            Affinity::Used => 2,
        }
    }
}

fn poisson(rng: &mut ChaCha8Rng, lambda: f64) -> usize {
    if lambda <= 0.0 {
        return 0;
    }
    let limit = (-lambda).exp();
    let mut k = 0usize;
    let mut p = 1.0f64;
    loop {
        p *= rng.random::<f64>();
        if p <= limit {
            return k;
        }
        k += 1;
    }
}

/// Vocabulary share reachable at a given experience level (of 8).
fn breadth_cutoff(vocab_size: usize, experience: usize) -> usize {
    let frac = 0.40 + 0.60 * (experience as f64 + 1.0) / 8.0;
    ((vocab_size as f64 * frac).ceil() as usize).min(vocab_size)
}

pub fn generate_synthetic(config: &GenConfig) -> Result<Generated> {
    config.validate()?;
    let v = config.vocab_size;
    let k = config.archetype_count;

    // Base popularity: command id doubles as popularity rank.
    let zipf: Vec<f64> =
        (0..v).map(|r| 1.0 / ((r + 1) as f64).powf(config.zipf_exponent)).collect();

    let width = v.saturating_sub(1).to_string().len().max(3);
    let vocab: Vec<String> = (0..v).map(|i| format!("c{i:0width$}")).collect();

    let mut users = Vec::with_capacity(config.n_users);
    let mut truth = SessionTruth::default();
    let mut experience_labels: BTreeMap<u64, usize> = BTreeMap::new();
    let mut archetype_labels: Vec<BTreeMap<u64, usize>> = vec![BTreeMap::new(); k];

    for user_id in 0..config.n_users as u64 {
        let mut rng = rng_for(config.seed, "user", &[user_id]);

        let labeled = rng.random::<f64>() < config.labeled_fraction;
        let experience = rng.random_range(0..8usize);
        let primary = rng.random_range(0..k);

        // Affinity and usage weight per archetype. Both draws always happen
        // so the stream layout does not depend on the branch taken.
        let mut affinity = vec![Affinity::NotUsed; k];
        let mut usage = vec![0.0f64; k];
        for a in 0..k {
            let branch = rng.random::<f64>();
            let strength = rng.random::<f64>();
            if a == primary {
                affinity[a] = Affinity::Used;
                usage[a] = 0.5 + 0.5 * strength;
            } else if branch < 0.25 {
                affinity[a] = Affinity::Used;
                usage[a] = 0.3 + 0.7 * strength;
            } else if branch < 0.5 {
                // A toe in the water: barely-there usage marks intent.
                affinity[a] = Affinity::PlannedOnly;
                usage[a] = 0.04 + 0.06 * strength;
            }
        }

        let cutoff = breadth_cutoff(v, experience);
        let mut cumulative = Vec::with_capacity(cutoff);
        let mut total = 0.0f64;
        for c in 0..cutoff {
            let mult = 0.05 + config.archetype_boost * usage[c % k];
            total += zipf[c] * mult;
            cumulative.push(total);
        }

        let bursts = 2 + poisson(&mut rng, config.bursts_per_user - 2.0);
        let mut burst_sizes: Vec<usize> =
            (0..bursts).map(|_| poisson(&mut rng, config.events_per_burst).max(3)).collect();
        let mut deficit = config.min_events.saturating_sub(burst_sizes.iter().sum());
        let mut i = 0;
        while deficit > 0 {
            burst_sizes[i % bursts] += 1;
            deficit -= 1;
            i += 1;
        }

        let mut events = Vec::with_capacity(burst_sizes.iter().sum());
        let mut starts = Vec::with_capacity(bursts);
        let mut t = rng.random_range(0.0..100.0);
        for (b, &size) in burst_sizes.iter().enumerate() {
            if b > 0 {
                t += rng.random_range(config.inter_burst_gap.0..config.inter_burst_gap.1);
            }
            starts.push(events.len());
            for e in 0..size {
                if e > 0 {
                    t += rng.random_range(config.intra_burst_gap.0..config.intra_burst_gap.1);
                }
                let draw: f64 = rng.random::<f64>() * total;
                let command_id = cumulative.partition_point(|&c| c <= draw).min(cutoff - 1) as u32;
                events.push(CommandEvent { command_id, timestamp: t });
            }
        }

        if labeled {
            experience_labels.insert(user_id, experience);
            for a in 0..k {
                archetype_labels[a].insert(user_id, affinity[a].label());
            }
        }
        truth.starts.insert(user_id, starts);
        users.push(UserSequence { user_id, events });
    }

    let mut tasks = vec![LabeledTask { name: "experience".into(), classes: 8, labels: experience_labels }];
    for (a, labels) in archetype_labels.into_iter().enumerate() {
        tasks.push(LabeledTask { name: format!("archetype_{a}"), classes: 3, labels });
    }

    let corpus = Corpus { users, vocab };
    corpus.validate()?;
    Ok(Generated { corpus, tasks, truth })
}
