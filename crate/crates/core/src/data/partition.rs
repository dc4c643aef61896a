use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Subset count of the reference chromosome-style grouping.
pub const REFERENCE_SUBSETS: usize = 23;

/// Assignment of each feature of one view to one of `n_subsets` disjoint,
/// non-empty subsets.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubsetPartition {
    pub view_id: String,
    pub assignment: Vec<usize>,
    pub n_subsets: usize,
}

impl SubsetPartition {
    /// `n_subsets` is one past the largest id; every id below it must be used.
    pub fn new(view_id: impl Into<String>, assignment: Vec<usize>) -> Result<Self> {
        let view_id = view_id.into();
        let n_subsets = assignment.iter().max().map_or(0, |m| m + 1);
        if n_subsets == 0 {
            return Err(Error::Data(format!("partition for view {view_id} is empty")));
        }
        let mut used = vec![false; n_subsets];
        for &s in &assignment {
            used[s] = true;
        }
        if let Some(empty) = used.iter().position(|u| !u) {
            return Err(Error::Data(format!("subset {empty} empty")));
        }
        Ok(Self {
            view_id,
            assignment,
            n_subsets,
        })
    }

    pub fn n_features(&self) -> usize {
        self.assignment.len()
    }

    /// Feature indices of every subset, ascending.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.n_subsets];
        for (j, &s) in self.assignment.iter().enumerate() {
            out[s].push(j);
        }
        out
    }
}

/// Contiguous blocks whose sizes differ by at most one; the larger blocks come first.
pub fn partition_uniform(view_id: &str, n_features: usize, k: usize) -> Result<SubsetPartition> {
    if k == 0 || k > n_features {
        return Err(Error::Config(format!(
            "cannot split {n_features} features into {k} subsets"
        )));
    }
    let base = n_features / k;
    let extra = n_features % k;
    let mut assignment = Vec::with_capacity(n_features);
    for s in 0..k {
        let size = base + usize::from(s < extra);
        assignment.extend(std::iter::repeat(s).take(size));
    }
    SubsetPartition::new(view_id, assignment)
}
