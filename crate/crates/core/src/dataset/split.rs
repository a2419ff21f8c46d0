use serde::{Deserialize, Serialize};

use super::InteractionDataset;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitKind {
    Train,
    Validation,
    Test,
}

impl SplitKind {
    pub const ALL: [SplitKind; 3] = [SplitKind::Train, SplitKind::Validation, SplitKind::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            SplitKind::Train => "train",
            SplitKind::Validation => "validation",
            SplitKind::Test => "test",
        }
    }
}

impl std::fmt::Display for SplitKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A (truncated prefix, next item) pair for one user.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitExample {
    pub user: u32,
    /// Position of the target in the user's full sequence (0-based).
    pub target_position: u32,
    pub prefix: Vec<u32>,
    pub target: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitView {
    pub kind: SplitKind,
    pub examples: Vec<SplitExample>,
}

impl SplitView {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Splits {
    pub train: SplitView,
    pub validation: SplitView,
    pub test: SplitView,
    pub max_seq_len: usize,
}

impl Splits {
    pub fn get(&self, kind: SplitKind) -> &SplitView {
        match kind {
            SplitKind::Train => &self.train,
            SplitKind::Validation => &self.validation,
            SplitKind::Test => &self.test,
        }
    }
}

fn example(seq: &[u32], user: usize, target_pos: usize, max_seq_len: usize) -> SplitExample {
    let start = target_pos.saturating_sub(max_seq_len);
    SplitExample {
        user: user as u32,
        target_position: target_pos as u32,
        prefix: seq[start..target_pos].to_vec(),
        target: seq[target_pos],
    }
}

/// Leave-one-out split: the last item of each sequence is the test target,
/// the second-to-last the validation target, and every earlier position
/// after the first is a training target.
pub fn leave_one_out_split(dataset: &InteractionDataset, max_seq_len: usize) -> Splits {
    assert!(max_seq_len >= 1, "max_seq_len must be positive");
    let mut train = Vec::new();
    let mut validation = Vec::new();
    let mut test = Vec::new();
    for (user, seq) in dataset.sequences().iter().enumerate() {
        let n = seq.len();
        if n >= 2 {
            test.push(example(seq, user, n - 1, max_seq_len));
        }
        if n >= 3 {
            validation.push(example(seq, user, n - 2, max_seq_len));
        }
        for pos in 1..n.saturating_sub(2) {
            train.push(example(seq, user, pos, max_seq_len));
        }
    }
    Splits {
        train: SplitView {
            kind: SplitKind::Train,
            examples: train,
        },
        validation: SplitView {
            kind: SplitKind::Validation,
            examples: validation,
        },
        test: SplitView {
            kind: SplitKind::Test,
            examples: test,
        },
        max_seq_len,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn ds(seqs: Vec<Vec<u32>>) -> InteractionDataset {
        let n_items = seqs.iter().flatten().max().map_or(0, |&m| m as usize + 1);
        InteractionDataset::from_sequences(
            (0..n_items).map(|i| format!("i{i}")).collect(),
            (0..seqs.len()).map(|u| format!("u{u}")).collect(),
            seqs,
        )
        .unwrap()
    }

    #[test]
    fn abcde() {
        let s = leave_one_out_split(&ds(vec![vec![0, 1, 2, 3, 4]]), 20);
        assert_eq!(s.test.examples[0].prefix, vec![0, 1, 2, 3]);
        assert_eq!(s.test.examples[0].target, 4);
        assert_eq!(s.validation.examples[0].prefix, vec![0, 1, 2]);
        assert_eq!(s.validation.examples[0].target, 3);
        let train: Vec<_> = s.train.examples.iter().map(|e| (e.prefix.clone(), e.target)).collect();
        assert_eq!(train, vec![(vec![0], 1), (vec![0, 1], 2)]);
    }

    #[test]
    fn truncation_keeps_most_recent() {
        let s = leave_one_out_split(&ds(vec![vec![0, 1, 2, 3, 4]]), 2);
        assert_eq!(s.test.examples[0].prefix, vec![2, 3]);
    }

    #[test]
    fn two_users() {
        let s = leave_one_out_split(&ds(vec![vec![0, 1, 2, 3, 4], vec![4, 3, 2, 1, 0, 1]]), 20);
        assert_eq!(s.test.len(), 2);
        assert_eq!(s.validation.len(), 2);
        assert_eq!(s.train.len(), 2 + 3);
    }

    #[test]
    fn positions_partition_each_sequence() {
        let seqs: Vec<Vec<u32>> = (0..30).map(|u| (0..(5 + u % 7)).map(|i| (i * 3 + u) % 11).collect()).collect();
        let d = ds(seqs);
        let s = leave_one_out_split(&d, 4);
        let mut seen: HashSet<(u32, u32)> = HashSet::new();
        for kind in SplitKind::ALL {
            for e in &s.get(kind).examples {
                assert!(seen.insert((e.user, e.target_position)), "overlap");
                assert!(e.prefix.len() <= 4 && !e.prefix.is_empty());
                let seq = d.sequence(e.user as usize);
                assert_eq!(seq[e.target_position as usize], e.target);
                assert_eq!(e.prefix.last(), Some(&seq[e.target_position as usize - 1]));
            }
        }
        for (u, seq) in d.sequences().iter().enumerate() {
            for p in 1..seq.len() {
                assert!(seen.contains(&(u as u32, p as u32)));
            }
            assert!(!seen.contains(&(u as u32, 0)));
        }
    }
}
