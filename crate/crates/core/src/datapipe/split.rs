use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::dataset::TrialEntry;

/// Trials per (participant, label) group in the full dataset.
pub const GROUP_SIZE: usize = 10;
pub const TEST_PER_GROUP: usize = 2;

/// Indices into the entry list.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Holds out 2 of every 10 trials per participant and label. Groups of
/// another size are split 80/20 with a warning.
pub fn split(entries: &[TrialEntry], seed: u64) -> Split {
    let mut groups: BTreeMap<(&str, usize), Vec<usize>> = BTreeMap::new();
    for (i, e) in entries.iter().enumerate() {
        groups.entry((e.participant.as_str(), e.label)).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for ((participant, label), mut members) in groups {
        members.sort_by(|&a, &b| entries[a].trial.cmp(&entries[b].trial));
        members.shuffle(&mut rng);
        let n_test = if members.len() == GROUP_SIZE {
            TEST_PER_GROUP
        } else {
            let n = (members.len() as f64 * 0.2).round() as usize;
            log::warn!(
                "participant {participant} label {label} has {} trials instead of {GROUP_SIZE}; holding out {n}",
                members.len()
            );
            n
        };
        test.extend_from_slice(&members[..n_test]);
        train.extend_from_slice(&members[n_test..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Split { train, test }
}
