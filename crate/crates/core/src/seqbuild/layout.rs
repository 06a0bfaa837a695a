use super::{AttentionMask, Scheme};
use crate::error::{Error, Result};

/// Position index of every token.
///
/// Naive sequences use `0..T`. Proposed sequences give the `i`-th token
/// (1-indexed) the position `2 * floor((i - 1) / 3) + (i - 1) mod 3`, so a
/// query shares its position with the next context example.
pub fn position_indices(scheme: Scheme, t: usize) -> Result<Vec<u32>> {
    match scheme {
        Scheme::Naive => Ok((0..t as u32).collect()),
        Scheme::Proposed => {
            if !t.is_multiple_of(3) {
                return Err(Error::Shape(format!("proposed sequence length {t} is not a multiple of 3")));
            }
            Ok((0..t).map(|k| (2 * (k / 3) + k % 3) as u32).collect())
        }
    }
}

/// Attention mask of a sequence of `t` tokens.
///
/// Naive: causal. Proposed (1-indexed `i` attends to `j`): blocked when
/// `i < j`, blocked when `i > j` and `j` is a query (`j mod 3 == 0`),
/// allowed otherwise. A query therefore sees every earlier context token
/// and itself, and nothing sees a query.
pub fn attention_mask(scheme: Scheme, t: usize) -> Result<AttentionMask> {
    match scheme {
        Scheme::Naive => Ok(AttentionMask::from_fn(t, |i, j| j <= i)),
        Scheme::Proposed => {
            if !t.is_multiple_of(3) {
                return Err(Error::Shape(format!("proposed sequence length {t} is not a multiple of 3")));
            }
            Ok(AttentionMask::from_fn(t, |i, j| {
                let (i1, j1) = (i + 1, j + 1);
                !(i1 < j1 || (i1 > j1 && j1 % 3 == 0))
            }))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn proposed_positions() {
        assert_eq!(position_indices(Scheme::Proposed, 6).unwrap(), vec![0, 1, 2, 2, 3, 4]);
        assert_eq!(position_indices(Scheme::Proposed, 9).unwrap(), vec![0, 1, 2, 2, 3, 4, 4, 5, 6]);
        for n in 1..20 {
            let p = position_indices(Scheme::Proposed, 3 * n).unwrap();
            assert_eq!(*p.last().unwrap() as usize, 2 * n);
        }
        assert!(position_indices(Scheme::Proposed, 7).is_err());
    }

    #[test]
    fn naive_positions() {
        assert_eq!(position_indices(Scheme::Naive, 5).unwrap(), vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn proposed_mask_cases() {
        let m = attention_mask(Scheme::Proposed, 6).unwrap();
        // 1-indexed (5, 3): earlier query is blocked
        assert!(!m.allows(4, 2));
        // (6, 6): query attends to itself
        assert!(m.allows(5, 5));
        // (2, 5): causality
        assert!(!m.allows(1, 4));
        // (6, 5): query sees the preceding annotation
        assert!(m.allows(5, 4));
    }

    #[test]
    fn naive_mask_is_causal() {
        let m = attention_mask(Scheme::Naive, 7).unwrap();
        for i in 0..7 {
            for j in 0..7 {
                assert_eq!(m.allows(i, j), j <= i);
            }
        }
    }
}
