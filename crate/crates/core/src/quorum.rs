//! Quorum thresholds shared by every protocol in the crate.
//!
//! All arithmetic is exact integer ceiling/floor. Each protocol instance
//! computes its [`ThresholdSet`] once at construction and keeps it.

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParamsError {
    #[error("invalid parameters: n = {n} < 3f + 1 = {}", 3 * f + 1)]
    TooFewParties { n: usize, f: usize },
    #[error("invalid parameters: f must be at least 1")]
    ZeroFaults,
    #[error("invalid parameters: n = {0} exceeds the supported maximum of 255")]
    TooManyParties(usize),
}

/// System size `n` and fault bound `f`, with `n >= 3f + 1` and `f >= 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SystemParams {
    n: usize,
    f: usize,
}

impl SystemParams {
    pub fn new(n: usize, f: usize) -> Result<Self, ParamsError> {
        if f == 0 {
            return Err(ParamsError::ZeroFaults);
        }
        if n < 3 * f + 1 {
            return Err(ParamsError::TooFewParties { n, f });
        }
        if n > 255 {
            return Err(ParamsError::TooManyParties(n));
        }
        Ok(SystemParams { n, f })
    }

    /// Largest `f` tolerated by `n` parties.
    pub fn with_max_faults(n: usize) -> Result<Self, ParamsError> {
        Self::new(n, n.saturating_sub(1) / 3)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn f(&self) -> usize {
        self.f
    }
}

/// Per-protocol quorum sizes.
///
/// For the RBC variants the echo and vote counts are over non-broadcaster
/// parties; ready counts are over all parties. For AVID every count is over
/// the `n` servers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ThresholdSet {
    pub opt_commit: usize,
    pub vote: usize,
    pub ready_from_echo: usize,
    pub ready_from_vote: usize,
    pub ready_amplify: usize,
    pub commit: usize,
    pub decode_k: usize,
}

fn ceil_div(a: usize, b: usize) -> usize {
    a.div_ceil(b)
}

/// RS reconstruction threshold `⌈(n − f + 1)/2⌉`.
pub fn decode_threshold(p: SystemParams) -> usize {
    ceil_div(p.n - p.f + 1, 2)
}

pub fn rbc_thresholds(p: SystemParams) -> ThresholdSet {
    let (n, f) = (p.n, p.f);
    let ready = ceil_div(n + f - 1, 2);
    ThresholdSet {
        opt_commit: ceil_div(n + 2 * f - 2, 2),
        vote: ceil_div(n, 2),
        ready_from_echo: ready,
        ready_from_vote: ready,
        ready_amplify: f + 1,
        commit: 2 * f + 1,
        decode_k: decode_threshold(p),
    }
}

pub fn avid_thresholds(p: SystemParams) -> ThresholdSet {
    let (n, f) = (p.n, p.f);
    let ready = ceil_div(n + f + 1, 2);
    ThresholdSet {
        opt_commit: ceil_div(n + 2 * f + 1, 2),
        vote: ceil_div(n + 1, 2),
        ready_from_echo: ready,
        ready_from_vote: ready,
        ready_amplify: f + 1,
        commit: 2 * f + 1,
        decode_k: decode_threshold(p),
    }
}

/// Maximum number of silent non-broadcaster faults that still leaves the
/// two-step commit reachable: `⌊(n − 2f)/2⌋`.
pub fn max_opt_faults(p: SystemParams) -> usize {
    (p.n - 2 * p.f) / 2
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn params(n: usize, f: usize) -> SystemParams {
        SystemParams::new(n, f).unwrap()
    }

    #[test]
    fn rbc_examples() {
        let t = rbc_thresholds(params(4, 1));
        assert_eq!(
            (t.opt_commit, t.vote, t.ready_from_echo, t.ready_amplify, t.commit, t.decode_k),
            (2, 2, 2, 2, 3, 2)
        );
        let t = rbc_thresholds(params(7, 2));
        assert_eq!(
            (t.opt_commit, t.vote, t.ready_from_echo, t.ready_amplify, t.commit, t.decode_k),
            (5, 4, 4, 3, 5, 3)
        );
        let t = rbc_thresholds(params(10, 3));
        assert_eq!(
            (t.opt_commit, t.vote, t.ready_from_echo, t.ready_amplify, t.commit, t.decode_k),
            (7, 5, 6, 4, 7, 4)
        );
    }

    #[test]
    fn avid_examples() {
        let t = avid_thresholds(params(4, 1));
        assert_eq!((t.opt_commit, t.vote, t.ready_from_echo, t.commit, t.decode_k), (4, 3, 3, 3, 2));
        let t = avid_thresholds(params(7, 2));
        assert_eq!((t.opt_commit, t.vote, t.ready_from_echo, t.commit, t.decode_k), (6, 4, 5, 5, 3));
        let t = avid_thresholds(params(10, 3));
        assert_eq!((t.opt_commit, t.vote, t.ready_from_echo, t.commit, t.decode_k), (9, 6, 7, 7, 4));
    }

    #[test]
    fn opt_fault_examples() {
        assert_eq!(max_opt_faults(params(7, 2)), 1);
        assert_eq!(max_opt_faults(params(4, 1)), 1);
        assert_eq!(max_opt_faults(params(10, 3)), 2);
    }

    #[test]
    fn rejects_bad_params() {
        assert_eq!(SystemParams::new(6, 2), Err(ParamsError::TooFewParties { n: 6, f: 2 }));
        assert_eq!(SystemParams::new(4, 0), Err(ParamsError::ZeroFaults));
        assert!(SystemParams::new(300, 2).is_err());
        assert_eq!(SystemParams::with_max_faults(16).unwrap().f(), 5);
    }

    fn valid_params() -> impl Strategy<Value = SystemParams> {
        (1usize..=40).prop_flat_map(|f| (3 * f + 1..=(3 * f + 1 + 60).min(255)).prop_map(move |n| (n, f)))
            .prop_map(|(n, f)| params(n, f))
    }

    proptest! {
        #[test]
        fn opt_commit_matches_fault_boundary(p in valid_params()) {
            let t = rbc_thresholds(p);
            prop_assert_eq!(p.n() - 1 - max_opt_faults(p), t.opt_commit);
        }

        #[test]
        fn opt_commit_forces_vote_quorum(p in valid_params()) {
            let t = rbc_thresholds(p);
            prop_assert!(t.opt_commit - (p.f() - 1) >= t.vote);
        }

        #[test]
        fn threshold_ordering(p in valid_params()) {
            let t = rbc_thresholds(p);
            prop_assert!(t.vote <= t.ready_from_echo);
            prop_assert!(t.ready_from_echo <= t.opt_commit);
            prop_assert!(t.opt_commit < p.n());
            prop_assert!(t.decode_k <= t.vote);
            let a = avid_thresholds(p);
            prop_assert!(a.vote <= a.ready_from_echo && a.ready_from_echo <= a.opt_commit);
            prop_assert!(a.opt_commit <= p.n());
            prop_assert!(a.decode_k > p.f());
        }

        #[test]
        fn conflicting_vote_quorums_share_an_honest_echo(p in valid_params()) {
            // A Byzantine broadcaster leaves at most f-1 faulty non-broadcasters.
            // An optimistic commit on m forces `vote` honest echoes for m; a vote on
            // m' needs `vote - (f-1)` honest echoes for m'. Both come from the
            // n - f honest parties, so the two sets must overlap.
            let t = rbc_thresholds(p);
            let honest_for_m = t.opt_commit - (p.f() - 1);
            let honest_for_other = t.vote - (p.f() - 1);
            prop_assert!(honest_for_m + honest_for_other > p.n() - p.f());
        }
    }
}
