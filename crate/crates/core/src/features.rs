//! Command-frequency features.
//!
//! Sessions and whole histories are summarized as L1-normalized command
//! frequency vectors. For baselines, frequencies can be reweighted by
//! inverse user frequency: commands that everyone touches carry little
//! identity, rare ones carry a lot.

use crate::corpus::{CommandEvent, UserSequence};
use crate::error::{Error, Result};

/// L1-normalized command frequencies; entries sum to 1.
#[derive(Debug, Clone, PartialEq)]
pub struct FreqVector {
    pub values: Vec<f64>,
}

impl FreqVector {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Frequency vector of one event slice (typically a session).
pub fn session_features(events: &[CommandEvent], vocab_size: usize) -> Result<FreqVector> {
    if events.is_empty() {
        return Err(Error::Feature("cannot featurize zero events".into()));
    }
    let mut values = vec![0.0f64; vocab_size];
    for ev in events {
        let c = ev.command_id as usize;
        if c >= vocab_size {
            return Err(Error::Feature(format!(
                "command id {c} outside vocabulary of {vocab_size}"
            )));
        }
        values[c] += 1.0;
    }
    let total = events.len() as f64;
    for v in &mut values {
        *v /= total;
    }
    Ok(FreqVector { values })
}

/// Frequency vector of a user's entire history — the bag-of-words view.
pub fn user_features(user: &UserSequence, vocab_size: usize) -> Result<FreqVector> {
    session_features(&user.events, vocab_size)
}

/// Inverse-user-frequency weights fitted on a set of users.
///
/// Fit these on training users only; applying weights fitted elsewhere
/// leaks split information into evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct IufWeights {
    pub values: Vec<f64>,
    pub fitted_users: usize,
}

/// w_c = ln(N / n_c) where n_c counts users whose history contains command
/// c, floored at 1 so unseen commands get the maximum finite weight.
pub fn fit_iuf(users: &[&UserSequence], vocab_size: usize) -> Result<IufWeights> {
    if users.is_empty() {
        return Err(Error::Feature("cannot fit inverse user frequency on zero users".into()));
    }
    let n = users.len() as f64;
    let mut user_counts = vec![0usize; vocab_size];
    for user in users {
        let mut seen = vec![false; vocab_size];
        for ev in &user.events {
            let c = ev.command_id as usize;
            if c >= vocab_size {
                return Err(Error::Feature(format!(
                    "command id {c} outside vocabulary of {vocab_size}"
                )));
            }
            seen[c] = true;
        }
        for (c, s) in seen.iter().enumerate() {
            if *s {
                user_counts[c] += 1;
            }
        }
    }
    let values = user_counts.iter().map(|&c| (n / (c.max(1) as f64)).ln()).collect();
    Ok(IufWeights { values, fitted_users: users.len() })
}

/// Frequency × inverse-user-frequency features for one user.
pub fn cf_iuf(user: &UserSequence, weights: &IufWeights) -> Result<Vec<f64>> {
    let freq = user_features(user, weights.values.len())?;
    Ok(freq.values.iter().zip(&weights.values).map(|(f, w)| f * w).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn events_of(ids: &[u32]) -> Vec<CommandEvent> {
        ids.iter()
            .enumerate()
            .map(|(i, &command_id)| CommandEvent { command_id, timestamp: i as f64 })
            .collect()
    }

    fn user_of(user_id: u64, ids: &[u32]) -> UserSequence {
        UserSequence { user_id, events: events_of(ids) }
    }

    #[test]
    fn frequencies_are_l1_normalized() {
        let f = session_features(&events_of(&[0, 0, 1, 2]), 4).unwrap();
        assert_eq!(f.values, vec![0.5, 0.25, 0.25, 0.0]);
        assert!((f.values.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn empty_and_out_of_vocab_rejected() {
        assert!(session_features(&[], 4).is_err());
        assert!(session_features(&events_of(&[9]), 4).is_err());
    }

    #[test]
    fn iuf_floors_unseen_commands() {
        let users = [user_of(0, &[0, 1]), user_of(1, &[0]), user_of(2, &[0, 0, 1])];
        let refs: Vec<&UserSequence> = users.iter().collect();
        let w = fit_iuf(&refs, 3).unwrap();
        // Command 0 in all three users, command 1 in two, command 2 in none.
        assert!((w.values[0] - 0.0).abs() < 1e-12);
        assert!((w.values[1] - (3.0f64 / 2.0).ln()).abs() < 1e-12);
        assert!((w.values[2] - 3.0f64.ln()).abs() < 1e-12, "unseen command gets ln(N)");
        assert_eq!(w.fitted_users, 3);
    }

    #[test]
    fn cf_iuf_is_elementwise_product() {
        let users = [user_of(0, &[0, 1]), user_of(1, &[0])];
        let refs: Vec<&UserSequence> = users.iter().collect();
        let w = fit_iuf(&refs, 3).unwrap();
        let target = user_of(9, &[1, 1, 0, 2]);
        let got = cf_iuf(&target, &w).unwrap();
        let freq = user_features(&target, 3).unwrap();
        for c in 0..3 {
            assert!((got[c] - freq.values[c] * w.values[c]).abs() < 1e-12);
        }
    }

    #[test]
    fn bow_equals_whole_history_frequencies() {
        let user = user_of(1, &[2, 2, 0]);
        let bow = user_features(&user, 3).unwrap();
        let direct = session_features(&user.events, 3).unwrap();
        assert_eq!(bow, direct);
    }
}
