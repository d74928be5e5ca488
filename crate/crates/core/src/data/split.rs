use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSpec {
    pub train: f64,
    pub val: f64,
    pub test: f64,
    pub seed: u64,
    pub group_by_participant: bool,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            train: 0.70,
            val: 0.15,
            test: 0.15,
            seed: 0,
            group_by_participant: false,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        let f = [self.train, self.val, self.test];
        if f.iter().any(|v| !(0.0..=1.0).contains(v)) || (f.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::config(format!(
                "split fractions {f:?} must lie in [0, 1] and sum to 1"
            )));
        }
        Ok(())
    }
}

/// Sample indices per split, each in ascending order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Splits {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
}

/// Share of `n` items for a fraction, rounded down.
fn share(n: usize, frac: f64) -> usize {
    ((n as f64 * frac) + 1e-9).floor() as usize
}

/// Seeded shuffle, then validation and test take their rounded-down shares
/// and train takes the rest. In grouped mode the shuffle and the shares are
/// over participants.
pub fn split_indices(d: &Dataset, s: &SplitSpec) -> Result<SplitIndices> {
    s.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
    let mut out = SplitIndices {
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
    };
    if s.group_by_participant {
        let ids = d
            .participants()
            .ok_or_else(|| Error::config("grouped split needs participant ids"))?;
        let mut groups: Vec<u32> = ids.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
        groups.shuffle(&mut rng);
        let (nv, nt) = (share(groups.len(), s.val), share(groups.len(), s.test));
        let val: BTreeSet<u32> = groups[..nv].iter().copied().collect();
        let test: BTreeSet<u32> = groups[nv..nv + nt].iter().copied().collect();
        for (i, id) in ids.iter().enumerate() {
            if val.contains(id) {
                out.val.push(i);
            } else if test.contains(id) {
                out.test.push(i);
            } else {
                out.train.push(i);
            }
        }
    } else {
        let mut order: Vec<usize> = (0..d.len()).collect();
        order.shuffle(&mut rng);
        let (nv, nt) = (share(d.len(), s.val), share(d.len(), s.test));
        out.val = order[..nv].to_vec();
        out.test = order[nv..nv + nt].to_vec();
        out.train = order[nv + nt..].to_vec();
        for part in [&mut out.train, &mut out.val, &mut out.test] {
            part.sort_unstable();
        }
    }
    Ok(out)
}

pub fn split(d: &Dataset, s: &SplitSpec) -> Result<Splits> {
    let idx = split_indices(d, s)?;
    Ok(Splits {
        train: d.subset(&idx.train),
        val: d.subset(&idx.val),
        test: d.subset(&idx.test),
    })
}
