use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

/// Shuffles the (sorted) ids with `seed` and cuts them into train / val /
/// test. Sizes use the largest-remainder rule; ties go to the earlier split.
pub fn split_dataset(ids: &[String], ratios: [f64; 3], seed: u64) -> Result<SplitAssignment> {
    if ratios.iter().any(|r| !(*r >= 0.0)) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("split ratios {ratios:?} must be nonnegative and sum to 1")));
    }
    let n = ids.len();
    let exact: Vec<f64> = ratios.iter().map(|r| r * n as f64).collect();
    let mut sizes: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())).then(a.cmp(&b)));
    let mut missing = n.saturating_sub(sizes.iter().sum());
    for &i in order.iter().cycle() {
        if missing == 0 {
            break;
        }
        sizes[i] += 1;
        missing -= 1;
    }
    let mut shuffled = ids.to_vec();
    shuffled.sort();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let test = shuffled.split_off(sizes[0] + sizes[1]);
    let val = shuffled.split_off(sizes[0]);
    Ok(SplitAssignment {
        train: shuffled,
        val,
        test,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("case_{i:04}")).collect()
    }

    #[test]
    fn ten_ids_split_8_1_1() {
        let s = split_dataset(&ids(10), [0.8, 0.1, 0.1], 0).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (8, 1, 1));
    }

    #[test]
    fn largest_remainder() {
        // 7 × (0.5, 0.25, 0.25) = 3.5, 1.75, 1.75 → floors 3,1,1; two extra go to val and test
        let s = split_dataset(&ids(7), [0.5, 0.25, 0.25], 1).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (3, 2, 2));
    }

    #[test]
    fn empty_and_bad_ratios() {
        assert_eq!(split_dataset(&[], [0.8, 0.1, 0.1], 0).unwrap(), SplitAssignment::default());
        assert!(split_dataset(&ids(3), [0.8, 0.3, 0.1], 0).is_err());
    }

    proptest! {
        #[test]
        fn partition_is_exact_and_deterministic(n in 0usize..200, a in 0.0f64..1.0, b in 0.0f64..1.0, seed: u64) {
            let (r0, r1) = (a, (1.0 - a) * b);
            let ratios = [r0, r1, 1.0 - r0 - r1];
            let list = ids(n);
            let s = split_dataset(&list, ratios, seed).unwrap();
            prop_assert_eq!(&s, &split_dataset(&list, ratios, seed).unwrap());
            let mut all: Vec<String> = s.train.iter().chain(&s.val).chain(&s.test).cloned().collect();
            all.sort();
            prop_assert_eq!(all, list);
            for (size, r) in [s.train.len(), s.val.len(), s.test.len()].iter().zip(ratios) {
                prop_assert!((*size as f64 - r * n as f64).abs() < 1.0 + 1e-9);
            }
        }
    }
}
