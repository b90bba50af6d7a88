use std::collections::BTreeMap;

use super::Recording;
use crate::error::{Error, Result};

/// One cross-validation fold: indices into the dataset it was built from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fold {
    /// The held-out group.
    pub cage_id: String,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Leave-one-group-out folds, one per distinct group, in sorted group order.
pub fn split_by_group<S: AsRef<str>>(groups: &[S]) -> Result<Vec<Fold>> {
    let mut members: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, g) in groups.iter().enumerate() {
        members.entry(g.as_ref()).or_default().push(i);
    }
    if members.len() < 2 {
        return Err(Error::Config(format!(
            "leave-one-cage-out needs at least 2 cages, found {}",
            members.len()
        )));
    }
    Ok(members
        .iter()
        .map(|(&cage, test)| Fold {
            cage_id: cage.to_string(),
            train: (0..groups.len()).filter(|i| groups[*i].as_ref() != cage).collect(),
            test: test.clone(),
        })
        .collect())
}

/// Holds out every recording of one physical cage (both sessions) per fold.
pub fn split_loco(recordings: &[Recording]) -> Result<Vec<Fold>> {
    let cages: Vec<&str> = recordings.iter().map(|r| r.cage_id.as_str()).collect();
    split_by_group(&cages)
}
