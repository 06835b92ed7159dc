use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// One leave-one-out fold.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<String>,
    pub test: String,
}

/// One fold per subject; training ids keep the input order.
pub fn leave_one_out_splits(subjects: &[String]) -> Result<Vec<Split>> {
    if subjects.len() < 2 {
        return Err(Error::config(
            "subjects",
            format!("leave-one-out needs at least 2 subjects, got {}", subjects.len()),
        ));
    }
    let mut seen = HashSet::new();
    for s in subjects {
        if !seen.insert(s) {
            return Err(Error::Validation(format!("duplicate subject id `{s}`")));
        }
    }
    Ok(subjects
        .iter()
        .enumerate()
        .map(|(k, test)| Split {
            train: subjects
                .iter()
                .enumerate()
                .filter(|&(i, _)| i != k)
                .map(|(_, s)| s.clone())
                .collect(),
            test: test.clone(),
        })
        .collect())
}
